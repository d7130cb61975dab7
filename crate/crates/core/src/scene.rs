//! Scene data model and the seeded synthetic scene generator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::Box3D;
pub use crate::camera::{validate_rig, CameraRig, CameraView, RigViolation};
use crate::decoder::project_box_to_image_roi;
use crate::error::{Error, Result};
use crate::feature::{unit_to_u8, write_pgm, FeatureMap};
use crate::rng::DetRng;

/// One LiDAR return in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance in `[0, 1]`.
    pub intensity: f64,
}

impl Point3D {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3D>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3D>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    #[serde(flatten)]
    pub bbox: Box3D,
    pub class: usize,
}

/// Camera ring: `num_views` horizontal cameras at the origin, evenly spaced in
/// heading starting at +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigLayout {
    pub num_views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub mount_height: f64,
}

impl Default for RigLayout {
    fn default() -> Self {
        Self {
            num_views: 2,
            width: 96,
            height: 64,
            focal: 40.0,
            mount_height: 1.8,
        }
    }
}

impl RigLayout {
    pub fn build(&self) -> CameraRig {
        CameraRig::new(
            (0..self.num_views)
                .map(|k| {
                    let yaw = std::f64::consts::TAU * k as f64 / self.num_views as f64;
                    CameraView::looking_at_heading([0.0, 0.0, self.mount_height], yaw, self.focal, self.width, self.height)
                })
                .collect(),
        )
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub num_objects: usize,
    /// Per-axis lower bound on `(l, w, h)`, meters.
    pub size_min: [f64; 3],
    /// Per-axis upper bound on `(l, w, h)`, meters.
    pub size_max: [f64; 3],
    pub points_per_object: usize,
    /// Ground returns scattered over `[-clutter_extent, clutter_extent]^2`.
    pub clutter_points: usize,
    pub clutter_extent: f64,
    /// Object centers are placed at a ground distance in `[min, max)` from the origin.
    pub placement_radius: [f64; 2],
    pub max_speed: f64,
    pub num_classes: usize,
    pub rig: RigLayout,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_objects: 3,
            size_min: [1.5, 1.0, 1.0],
            size_max: [3.0, 2.0, 2.0],
            points_per_object: 250,
            clutter_points: 250,
            clutter_extent: 15.0,
            placement_radius: [4.0, 12.0],
            max_speed: 2.0,
            num_classes: 3,
            rig: RigLayout::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let rig = &self.rig;
        if rig.num_views == 0 {
            return Err(Error::config("scene rig needs at least one view"));
        }
        if rig.width == 0 || rig.height == 0 {
            return Err(Error::config("scene image dimensions must be positive"));
        }
        if !(rig.focal > 0.0) || !rig.mount_height.is_finite() {
            return Err(Error::config("scene rig focal length must be positive"));
        }
        for k in 0..3 {
            if !(self.size_min[k] > 0.0) || !(self.size_max[k] >= self.size_min[k]) || !self.size_max[k].is_finite() {
                return Err(Error::config(format!("invalid object size range on axis {k}")));
            }
        }
        let [r0, r1] = self.placement_radius;
        if !(r0 >= 0.0) || !(r1 >= r0) || !r1.is_finite() {
            return Err(Error::config("invalid placement radius range"));
        }
        if !(self.clutter_extent > 0.0) || !self.clutter_extent.is_finite() {
            return Err(Error::config("clutter extent must be positive"));
        }
        if !(self.max_speed >= 0.0) {
            return Err(Error::config("max speed must be non-negative"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("need at least one class"));
        }
        Ok(())
    }
}

/// Everything the pipeline consumes for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    /// One `H×W×3` image per view, intensities in `[0, 1]`.
    pub images: Vec<FeatureMap>,
    pub rig: CameraRig,
    pub boxes: Vec<GtBox>,
}

/// Draw a point uniformly over the surface of `b`.
fn sample_surface(b: &Box3D, rng: &mut DetRng) -> [f64; 3] {
    let [l, w, h] = b.dims;
    // Face pairs normal to x, y, z; choose a pair by area, then a side.
    let areas = [w * h, l * h, l * w];
    let total: f64 = areas.iter().sum();
    let pick = rng.unit() * total;
    let axis = if pick < areas[0] {
        0
    } else if pick < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let side = if rng.unit() < 0.5 { -0.5 } else { 0.5 };
    let mut local = [0.0; 3];
    for k in 0..3 {
        local[k] = if k == axis {
            side * b.dims[k]
        } else {
            rng.uniform(-0.5, 0.5) * b.dims[k]
        };
    }
    b.to_world(local)
}

/// Paint axis-aligned blobs: for every view, the pixels whose centers fall in
/// the object's projected-corner rectangle take the per-channel max of the
/// current value and the object's color.
fn render_images(rig: &CameraRig, boxes: &[GtBox], colors: &[[f64; 3]]) -> Vec<FeatureMap> {
    rig.views
        .iter()
        .map(|view| {
            let mut img = FeatureMap::zeros(view.height, view.width, 3);
            for (b, color) in boxes.iter().zip(colors) {
                let Some(rect) = project_box_to_image_roi(&b.bbox, view) else {
                    continue;
                };
                let r0 = (rect.y0 - 0.5).ceil().max(0.0) as usize;
                let c0 = (rect.x0 - 0.5).ceil().max(0.0) as usize;
                let r1 = ((rect.y1 - 0.5).floor() as isize).min(view.height as isize - 1);
                let c1 = ((rect.x1 - 0.5).floor() as isize).min(view.width as isize - 1);
                for r in r0 as isize..=r1 {
                    for c in c0 as isize..=c1 {
                        let px = img.at_mut(r as usize, c as usize);
                        for k in 0..3 {
                            px[k] = px[k].max(color[k]);
                        }
                    }
                }
            }
            img
        })
        .collect()
}

/// Generate a reproducible scene: objects resting on the ground plane with
/// LiDAR returns sampled uniformly over their surfaces, ground clutter, and
/// one rendered image per view.
///
/// Identical `(spec, seed)` pairs produce bit-identical scenes.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = DetRng::new(seed);
    let rig = spec.rig.build();

    let mut boxes = Vec::with_capacity(spec.num_objects);
    let mut colors = Vec::with_capacity(spec.num_objects);
    for _ in 0..spec.num_objects {
        let mut dims = [0.0; 3];
        for k in 0..3 {
            dims[k] = rng.uniform(spec.size_min[k], spec.size_max[k]);
        }
        let radius = rng.uniform(spec.placement_radius[0], spec.placement_radius[1]);
        let bearing = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
        let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
        let mut bbox = Box3D::new([radius * bearing.cos(), radius * bearing.sin(), 0.5 * dims[2]], dims, yaw);
        bbox.velocity = [
            rng.uniform(-spec.max_speed, spec.max_speed),
            rng.uniform(-spec.max_speed, spec.max_speed),
        ];
        let class = rng.below(spec.num_classes as u64) as usize;
        boxes.push(GtBox { bbox, class });
        colors.push([rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)]);
    }

    let mut points = Vec::with_capacity(spec.num_objects * spec.points_per_object + spec.clutter_points);
    for gt in &boxes {
        for _ in 0..spec.points_per_object {
            let [x, y, z] = sample_surface(&gt.bbox, &mut rng);
            points.push(Point3D::new(x, y, z, rng.uniform(0.4, 1.0)));
        }
    }
    let e = spec.clutter_extent;
    for _ in 0..spec.clutter_points {
        let x = rng.uniform(-e, e);
        let y = rng.uniform(-e, e);
        let z = rng.uniform(0.0, 0.05);
        points.push(Point3D::new(x, y, z, rng.uniform(0.0, 0.3)));
    }

    let images = render_images(&rig, &boxes, &colors);
    Ok(Scene {
        cloud: PointCloud::new(points),
        images,
        rig,
        boxes,
    })
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    points: Vec<[f64; 4]>,
    views: Vec<CameraView>,
    boxes: Vec<GtBox>,
    /// Optional; missing images load as all-zero maps.
    #[serde(default)]
    images: Vec<ImageRecord>,
}

/// One image as row-major `height x width x channels` values.
#[derive(Serialize, Deserialize)]
struct ImageRecord {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Scene {
    /// JSON layout: `{points: [[x,y,z,i],...], views: [{K, T, w, h}], boxes: [...],
    /// images: [{height, width, channels, data}]}`.
    pub fn to_json(&self) -> Result<String> {
        let rec = SceneRecord {
            points: self.cloud.points.iter().map(|p| [p.x, p.y, p.z, p.intensity]).collect(),
            views: self.rig.views.clone(),
            boxes: self.boxes.clone(),
            images: self
                .images
                .iter()
                .map(|m| ImageRecord {
                    height: m.height(),
                    width: m.width(),
                    channels: m.channels(),
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&rec)?)
    }

    /// Parse the JSON layout. Without `images`, each view gets an all-zero
    /// 3-channel image.
    pub fn from_json(s: &str) -> Result<Self> {
        let rec: SceneRecord = serde_json::from_str(s)?;
        let points: Vec<Point3D> = rec.points.iter().map(|p| Point3D::new(p[0], p[1], p[2], p[3])).collect();
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("scene contains non-finite point coordinates".into()));
        }
        let images = if rec.images.is_empty() {
            rec.views.iter().map(|v| FeatureMap::zeros(v.height, v.width, 3)).collect()
        } else {
            if rec.images.len() != rec.views.len() {
                return Err(Error::config(format!("{} images for {} views", rec.images.len(), rec.views.len())));
            }
            let mut maps = Vec::with_capacity(rec.images.len());
            for (img, v) in rec.images.into_iter().zip(&rec.views) {
                if (img.height, img.width) != (v.height, v.width) {
                    return Err(Error::config("image size does not match its view"));
                }
                maps.push(FeatureMap::from_vec(img.height, img.width, img.channels, img.data)?);
            }
            maps
        };
        Ok(Scene {
            cloud: PointCloud::new(points),
            images,
            rig: CameraRig::new(rec.views),
            boxes: rec.boxes,
        })
    }

    /// Write `view{v}_c{ch}.pgm` for every view and channel; returns the paths.
    pub fn write_images(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut out = Vec::new();
        for (v, img) in self.images.iter().enumerate() {
            for ch in 0..img.channels() {
                let path = dir.join(format!("view{v}_c{ch}.pgm"));
                write_pgm(&path, img.width(), img.height(), &unit_to_u8(&img.channel_plane(ch)))?;
                out.push(path);
            }
        }
        Ok(out)
    }
}

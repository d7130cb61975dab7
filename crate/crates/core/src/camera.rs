//! Pinhole cameras and multi-view rigs.
//!
//! Camera frame convention: +x right, +y down, +z along the optical axis.
//! Continuous pixel coordinates put the top-left corner of pixel `(row, col)`
//! at `(u, v) = (col, row)`, so its center is at `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

/// One calibrated view: intrinsics `K`, world-to-camera transform `T`, and
/// the image size in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ViewRecord", into = "ViewRecord")]
pub struct CameraView {
    pub intrinsics: Matrix3<f64>,
    pub extrinsics: Matrix4<f64>,
    pub width: usize,
    pub height: usize,
}

/// JSON record: `K` and `T` as row-major float lists.
#[derive(Serialize, Deserialize)]
struct ViewRecord {
    #[serde(rename = "K")]
    k: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<f64>,
    w: usize,
    h: usize,
}

impl TryFrom<ViewRecord> for CameraView {
    type Error = String;

    fn try_from(r: ViewRecord) -> Result<Self, String> {
        if r.k.len() != 9 || r.t.len() != 16 {
            return Err(format!(
                "view expects 9 intrinsics and 16 extrinsics values, got {} and {}",
                r.k.len(),
                r.t.len()
            ));
        }
        Ok(CameraView {
            intrinsics: Matrix3::from_row_slice(&r.k),
            extrinsics: Matrix4::from_row_slice(&r.t),
            width: r.w,
            height: r.h,
        })
    }
}

impl From<CameraView> for ViewRecord {
    fn from(v: CameraView) -> Self {
        ViewRecord {
            k: v.intrinsics.transpose().iter().copied().collect(),
            t: v.extrinsics.transpose().iter().copied().collect(),
            w: v.width,
            h: v.height,
        }
    }
}

impl CameraView {
    pub fn new(intrinsics: Matrix3<f64>, extrinsics: Matrix4<f64>, width: usize, height: usize) -> Self {
        Self {
            intrinsics,
            extrinsics,
            width,
            height,
        }
    }

    /// Camera at `position` looking horizontally along heading `yaw` (radians
    /// about world +z), with focal length `focal` and centered principal point.
    pub fn looking_at_heading(position: [f64; 3], yaw: f64, focal: f64, width: usize, height: usize) -> Self {
        let (s, c) = yaw.sin_cos();
        // Rows: camera right, down, forward, expressed in world axes.
        let rot = Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
        let t = -(rot * Vector3::from(position));
        let mut ext = Matrix4::identity();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        ext.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, ext, width, height)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.extrinsics.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.extrinsics.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// The same camera observing a grid downsampled by `stride`: focal lengths
    /// and principal point divide by `stride`, sizes round up.
    pub fn downsampled(&self, stride: usize) -> Self {
        let s = stride as f64;
        let mut k = self.intrinsics;
        for c in 0..3 {
            k[(0, c)] /= s;
            k[(1, c)] /= s;
        }
        Self {
            intrinsics: k,
            extrinsics: self.extrinsics,
            width: self.width.div_ceil(stride),
            height: self.height.div_ceil(stride),
        }
    }

    /// Whether a continuous pixel coordinate lies inside the image.
    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// An ordered set of views; view ids are indices into `views`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub views: Vec<CameraView>,
}

impl CameraRig {
    pub fn new(views: Vec<CameraView>) -> Self {
        Self { views }
    }

    pub fn downsampled(&self, stride: usize) -> Self {
        Self {
            views: self.views.iter().map(|v| v.downsampled(stride)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// A single invariant violated by a rig.
#[derive(Debug, Clone, PartialEq)]
pub enum RigViolation {
    NoViews,
    NonFinite { view: usize },
    NonPositiveSize { view: usize },
    NotUpperTriangular { view: usize },
    NonPositiveFocal { view: usize, fx: f64, fy: f64 },
    IntrinsicsScale { view: usize, k22: f64 },
    NonOrthonormalRotation { view: usize, deviation: f64 },
    ReflectedRotation { view: usize, det: f64 },
    BadHomogeneousRow { view: usize },
}

impl std::fmt::Display for RigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RigViolation::NoViews => write!(f, "rig has no views"),
            RigViolation::NonFinite { view } => write!(f, "view {view}: non-finite calibration entry"),
            RigViolation::NonPositiveSize { view } => write!(f, "view {view}: image size must be positive"),
            RigViolation::NotUpperTriangular { view } => write!(f, "view {view}: intrinsics not upper-triangular"),
            RigViolation::NonPositiveFocal { view, fx, fy } => {
                write!(f, "view {view}: focal lengths must be positive (fx={fx}, fy={fy})")
            }
            RigViolation::IntrinsicsScale { view, k22 } => write!(f, "view {view}: K[2][2] must be 1, got {k22}"),
            RigViolation::NonOrthonormalRotation { view, deviation } => {
                write!(f, "view {view}: rotation not orthonormal (|R^T R - I|_inf = {deviation:e})")
            }
            RigViolation::ReflectedRotation { view, det } => write!(f, "view {view}: rotation determinant {det} != +1"),
            RigViolation::BadHomogeneousRow { view } => write!(f, "view {view}: extrinsics bottom row must be [0 0 0 1]"),
        }
    }
}

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Check every rig invariant; an empty report means the rig is valid.
pub fn validate_rig(rig: &CameraRig) -> Vec<RigViolation> {
    let mut out = Vec::new();
    if rig.views.is_empty() {
        out.push(RigViolation::NoViews);
    }
    for (i, v) in rig.views.iter().enumerate() {
        let k = &v.intrinsics;
        if !k.iter().chain(v.extrinsics.iter()).all(|x| x.is_finite()) {
            out.push(RigViolation::NonFinite { view: i });
            continue;
        }
        if v.width == 0 || v.height == 0 {
            out.push(RigViolation::NonPositiveSize { view: i });
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            out.push(RigViolation::NotUpperTriangular { view: i });
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            out.push(RigViolation::NonPositiveFocal {
                view: i,
                fx: k[(0, 0)],
                fy: k[(1, 1)],
            });
        }
        if k[(2, 2)] != 1.0 {
            out.push(RigViolation::IntrinsicsScale { view: i, k22: k[(2, 2)] });
        }
        let r = v.rotation();
        let deviation = (r.transpose() * r - Matrix3::identity()).amax();
        if deviation >= ORTHONORMAL_TOL {
            out.push(RigViolation::NonOrthonormalRotation { view: i, deviation });
        }
        let det = r.determinant();
        if det <= 0.0 {
            out.push(RigViolation::ReflectedRotation { view: i, det });
        }
        let e = &v.extrinsics;
        if e[(3, 0)] != 0.0 || e[(3, 1)] != 0.0 || e[(3, 2)] != 0.0 || e[(3, 3)] != 1.0 {
            out.push(RigViolation::BadHomogeneousRow { view: i });
        }
    }
    out
}

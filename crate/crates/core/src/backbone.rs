//! Minimal convolutional stems producing the per-modality input features.
//!
//! Each stem is `conv3x3(stride 2) -> ReLU -> conv3x3(stride 1)`, so features
//! sit at half the input resolution. The BEV input is a 3-channel raster of
//! the point cloud (occupancy, top height, mean intensity, log density); the image input
//! is the rendered RGB view.

use crate::error::Result;
use crate::feature::FeatureMap;
use crate::geometry::{bev_index, BevGrid};
use crate::nn::{relu, visit_child, Conv3x3, ParamVisitor, Parameterized};
use crate::rng::DetRng;
use crate::scene::PointCloud;

/// Total downsampling of the stems.
pub const STEM_STRIDE: usize = 2;
/// Heights are divided by this before rasterization.
const HEIGHT_SCALE: f64 = 3.0;

/// Channels of [`rasterize_bev`].
pub const BEV_CHANNELS: usize = 4;
/// Point counts saturate at `e^4 - 1` (about 54) in the density channel.
const DENSITY_SCALE: f64 = 4.0;

/// Occupancy, max `z / 3` (clamped to `[0, 1]`), mean intensity and
/// `ln(1 + count) / 4` (clamped to 1) per cell.
pub fn rasterize_bev(cloud: &PointCloud, grid: &BevGrid) -> FeatureMap {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut out = FeatureMap::zeros(rows, cols, BEV_CHANNELS);
    let mut counts = vec![0u32; rows * cols];
    let mut intensity = vec![0.0; rows * cols];
    for p in &cloud.points {
        let Some(c) = bev_index(p.x, p.y, grid) else {
            continue;
        };
        let k = c.row * cols + c.col;
        counts[k] += 1;
        intensity[k] += p.intensity;
        let px = out.at_mut(c.row, c.col);
        px[0] = 1.0;
        px[1] = px[1].max((p.z / HEIGHT_SCALE).clamp(0.0, 1.0));
    }
    for k in 0..rows * cols {
        if counts[k] > 0 {
            let n = counts[k] as f64;
            let px = out.at_mut(k / cols, k % cols);
            px[2] = intensity[k] / n;
            px[3] = (n.ln_1p() / DENSITY_SCALE).min(1.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stem {
    pub down: Conv3x3,
    pub refine: Conv3x3,
}

impl Stem {
    pub fn random(input: usize, channels: usize, rng: &mut DetRng) -> Self {
        Self {
            down: Conv3x3::random(input, channels, STEM_STRIDE, rng),
            refine: Conv3x3::random(channels, channels, 1, rng),
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let mut h = self.down.forward(x)?;
        h.data_mut().iter_mut().for_each(|v| *v = relu(*v));
        self.refine.forward(&h)
    }
}

impl Parameterized for Stem {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        visit_child(&mut self.down, prefix, "down", f);
        visit_child(&mut self.refine, prefix, "refine", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point3D;

    #[test]
    fn raster_channels() {
        let grid = BevGrid::square(2.0, 1.0).unwrap();
        let cloud = PointCloud::new(vec![
            Point3D::new(0.5, 0.5, 1.5, 0.2),
            Point3D::new(0.6, 0.4, 0.3, 0.6),
            Point3D::new(9.0, 0.0, 0.0, 1.0),
        ]);
        let r = rasterize_bev(&cloud, &grid);
        let px = r.at(2, 2);
        assert_eq!(px[0], 1.0);
        assert!((px[1] - 0.5).abs() < 1e-15);
        assert!((px[2] - 0.4).abs() < 1e-15);
        assert!((px[3] - 3f64.ln() / 4.0).abs() < 1e-15);
        assert_eq!(r.data().iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn stem_halves_resolution() {
        let stem = Stem::random(3, 8, &mut DetRng::new(0));
        let y = stem.forward(&FeatureMap::zeros(64, 96, 3)).unwrap();
        assert_eq!(y.shape(), (32, 48, 8));
    }
}

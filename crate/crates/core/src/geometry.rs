//! Projective geometry, BEV quantization, pillarization and depth completion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::scene::{Point3D, PointCloud};

/// Camera-frame depth at or below which a point counts as behind the camera.
pub const BEHIND_CAMERA_EPS: f64 = 1e-6;

/// A point projected into a view: continuous pixel coordinates and depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl ImagePoint {
    /// Integer `(row, col)` of the pixel containing this point.
    pub fn pixel(&self) -> (usize, usize) {
        (self.v.floor() as usize, self.u.floor() as usize)
    }
}

/// Pinhole projection `K [R|t] p` with perspective divide. `None` means the
/// point is behind the camera (camera-frame depth `<= 1e-6` m). The returned
/// coordinates may lie outside the image.
pub fn world_to_image(p: Point3D, view: &CameraView) -> Option<ImagePoint> {
    project_xyz([p.x, p.y, p.z], view)
}

pub(crate) fn project_xyz(p: [f64; 3], view: &CameraView) -> Option<ImagePoint> {
    let cam = view.rotation() * Vector3::from(p) + view.translation();
    if cam.z <= BEHIND_CAMERA_EPS {
        return None;
    }
    let h = view.intrinsics * cam;
    Some(ImagePoint {
        u: h.x / cam.z,
        v: h.y / cam.z,
        depth: cam.z,
    })
}

/// Inverse of [`world_to_image`] for a given depth.
pub fn back_project(u: f64, v: f64, depth: f64, view: &CameraView) -> Result<Point3D> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::Domain(format!("back-projection depth must be positive, got {depth}")));
    }
    let k = &view.intrinsics;
    let yc = (v - k[(1, 2)]) / k[(1, 1)];
    let xc = (u - k[(0, 2)] - k[(0, 1)] * yc) / k[(0, 0)];
    let cam = Vector3::new(xc * depth, yc * depth, depth);
    let world = view.rotation().transpose() * (cam - view.translation());
    Ok(Point3D::new(world.x, world.y, world.z, 0.0))
}

/// Axis-aligned ground-plane grid. Rows follow +y, columns follow +x; cells
/// are half-open `[min, min + cell)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
}

/// Integer BEV cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BevCoord {
    pub row: usize,
    pub col: usize,
}

impl BevCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Snap quotients within a relative 1e-9 of an integer onto it, so exact
/// decimal ratios like 54 / 0.075 quantize as written.
pub(crate) fn snap(q: f64) -> f64 {
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        q
    }
}

impl BevGrid {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, cell: f64) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            y_min,
            y_max,
            cell,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square grid `[-half, half)^2`.
    pub fn square(half_extent: f64, cell: f64) -> Result<Self> {
        Self::new(-half_extent, half_extent, -half_extent, half_extent, cell)
    }

    /// Production layout: +-54 m at 0.075 m cells (1440 x 1440).
    pub fn full_scale() -> Self {
        Self {
            x_min: -54.0,
            x_max: 54.0,
            y_min: -54.0,
            y_max: 54.0,
            cell: 0.075,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.cell]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.x_max > self.x_min) || !(self.y_max > self.y_min) || !(self.cell > 0.0) {
            return Err(Error::config(format!("invalid BEV grid {self:?}")));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        snap((self.y_max - self.y_min) / self.cell).ceil() as usize
    }

    pub fn cols(&self) -> usize {
        snap((self.x_max - self.x_min) / self.cell).ceil() as usize
    }

    pub fn num_cells(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Same extent with cells `stride` times larger.
    pub fn coarsened(&self, stride: usize) -> Self {
        Self {
            cell: self.cell * stride as f64,
            ..*self
        }
    }

    /// Center of a cell in meters.
    pub fn cell_center(&self, c: BevCoord) -> (f64, f64) {
        (
            self.x_min + (c.col as f64 + 0.5) * self.cell,
            self.y_min + (c.row as f64 + 0.5) * self.cell,
        )
    }
}

/// Quantize a ground-plane position. `None` outside `[min, max)` on either axis.
pub fn bev_index(x: f64, y: f64, grid: &BevGrid) -> Option<BevCoord> {
    if !(x >= grid.x_min && x < grid.x_max && y >= grid.y_min && y < grid.y_max) {
        return None;
    }
    let col = snap((x - grid.x_min) / grid.cell).floor() as usize;
    let row = snap((y - grid.y_min) / grid.cell).floor() as usize;
    (row < grid.rows() && col < grid.cols()).then_some(BevCoord { row, col })
}

/// Per-pixel depth with an explicit invalid state. Stored as `0.0` when invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Build from raw values; any non-positive or non-finite entry is invalid.
    pub fn from_raw(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::config("depth buffer length does not match image size"));
        }
        for v in &mut values {
            if !(*v > 0.0 && v.is_finite()) {
                *v = 0.0;
            }
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let d = self.values[row * self.width + col];
        (d > 0.0).then_some(d)
    }

    pub fn set(&mut self, row: usize, col: usize, depth: f64) {
        debug_assert!(depth > 0.0 && depth.is_finite());
        self.values[row * self.width + col] = depth;
    }

    /// Raw row-major values, `0.0` marking invalid pixels.
    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn is_dense(&self) -> bool {
        self.valid_count() == self.values.len()
    }

    /// `(min, max)` over valid pixels.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values.iter().filter(|&&d| d > 0.0).fold(None, |acc, &d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
    }

    /// 8-bit rendering: invalid pixels are 0, valid depths scale into `[1, 255]`.
    pub fn to_pgm_pixels(&self) -> Vec<u8> {
        let Some((lo, hi)) = self.valid_range() else {
            return vec![0; self.values.len()];
        };
        let span = hi - lo;
        self.values
            .iter()
            .map(|&d| {
                if d <= 0.0 {
                    0
                } else if span > 0.0 {
                    (1.0 + (d - lo) / span * 254.0).round() as u8
                } else {
                    255
                }
            })
            .collect()
    }
}

/// Rasterize a cloud into one view: each point in front of the camera and
/// inside the image writes its depth at `(floor(v), floor(u))`; collisions keep
/// the nearest depth.
pub fn build_sparse_depth(cloud: &PointCloud, view: &CameraView) -> DepthMap {
    let mut map = DepthMap::invalid(view.width, view.height);
    for p in &cloud.points {
        let Some(ip) = world_to_image(*p, view) else {
            continue;
        };
        if !view.contains_pixel(ip.u, ip.v) {
            continue;
        }
        let (r, c) = ip.pixel();
        match map.get(r, c) {
            Some(d) if d <= ip.depth => {}
            _ => map.set(r, c, ip.depth),
        }
    }
    map
}

/// Fill every invalid pixel by repeated 3x3 dilation.
///
/// Each sweep reads the previous state: an invalid pixel with at least one
/// valid 8-neighbor takes the minimum of those neighbors' depths. Sweeps
/// repeat until no pixel is invalid. Valid input pixels never change, and
/// every output lies within the input's valid depth range.
pub fn complete_depth(sparse: &DepthMap) -> Result<DepthMap> {
    if sparse.valid_count() == 0 {
        return Err(Error::Domain("depth completion needs at least one valid pixel".into()));
    }
    let (w, h) = (sparse.width, sparse.height);
    let mut cur = sparse.values.clone();
    let mut remaining = cur.iter().filter(|&&d| d <= 0.0).count();
    while remaining > 0 {
        let prev = cur.clone();
        for r in 0..h {
            for c in 0..w {
                if prev[r * w + c] > 0.0 {
                    continue;
                }
                let mut best = f64::INFINITY;
                for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        let d = prev[rr * w + cc];
                        if d > 0.0 && d < best {
                            best = d;
                        }
                    }
                }
                if best.is_finite() {
                    cur[r * w + c] = best;
                    remaining -= 1;
                }
            }
        }
    }
    Ok(DepthMap {
        width: w,
        height: h,
        values: cur,
    })
}

/// Point indices grouped by the BEV cell whose vertical column contains them.
/// Stored as compressed rows: cell `k = row * cols + col` owns
/// `indices[offsets[k]..offsets[k + 1]]`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarIndex {
    rows: usize,
    cols: usize,
    offsets: Vec<u32>,
    indices: Vec<u32>,
}

impl PillarIndex {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn points_in(&self, c: BevCoord) -> &[u32] {
        let k = c.row * self.cols + c.col;
        &self.indices[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }

    /// Number of indexed (in-range) points.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Non-empty cells in row-major order with their point lists.
    pub fn occupied(&self) -> impl Iterator<Item = (BevCoord, &[u32])> + '_ {
        (0..self.rows * self.cols).filter_map(move |k| {
            let (a, b) = (self.offsets[k] as usize, self.offsets[k + 1] as usize);
            (a < b).then(|| (BevCoord::new(k / self.cols, k % self.cols), &self.indices[a..b]))
        })
    }

    /// JSON dump: grid size plus every occupied cell's point list.
    pub fn to_json(&self) -> serde_json::Value {
        let cells: Vec<_> = self
            .occupied()
            .map(|(c, pts)| serde_json::json!({ "cell": [c.row, c.col], "points": pts }))
            .collect();
        serde_json::json!({ "rows": self.rows, "cols": self.cols, "points": self.len(), "cells": cells })
    }
}

/// Group in-range points by BEV cell (a counting sort over cells).
pub fn pillarize(cloud: &PointCloud, grid: &BevGrid) -> PillarIndex {
    let (rows, cols) = (grid.rows(), grid.cols());
    let cells: Vec<Option<usize>> = cloud
        .points
        .iter()
        .map(|p| bev_index(p.x, p.y, grid).map(|c| c.row * cols + c.col))
        .collect();
    let mut offsets = vec![0u32; rows * cols + 1];
    for k in cells.iter().flatten() {
        offsets[k + 1] += 1;
    }
    for k in 0..rows * cols {
        offsets[k + 1] += offsets[k];
    }
    let mut cursor = offsets.clone();
    let mut indices = vec![0u32; offsets[rows * cols] as usize];
    for (i, k) in cells.iter().enumerate() {
        if let Some(k) = k {
            indices[cursor[*k] as usize] = i as u32;
            cursor[*k] += 1;
        }
    }
    PillarIndex {
        rows,
        cols,
        offsets,
        indices,
    }
}

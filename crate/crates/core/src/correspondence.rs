//! Bidirectional LiDAR-camera correspondence maps.
//!
//! `ImgToBevMap` assigns each image pixel the set of BEV cells reached by
//! back-projecting its `(2k+1)^2` neighborhood through the dense depth map.
//! `BevToImgMap` assigns each BEV cell the set of pixels hit by projecting the
//! points of its pillar into every view. Sets are stored sorted and
//! deduplicated; every location has an entry, possibly empty.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::geometry::{back_project, bev_index, world_to_image, BevCoord, BevGrid, DepthMap, PillarIndex};
use crate::scene::PointCloud;

/// A pixel in one view of a rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PixelCoord {
    pub view: usize,
    pub row: usize,
    pub col: usize,
}

impl PixelCoord {
    pub fn new(view: usize, row: usize, col: usize) -> Self {
        Self { view, row, col }
    }
}

/// Variable-length sets addressed by a dense integer key (compressed rows).
#[derive(Debug, Clone, PartialEq)]
pub struct SetTable<T> {
    offsets: Vec<usize>,
    items: Vec<T>,
}

impl<T: Copy> SetTable<T> {
    pub fn from_lists(lists: Vec<Vec<T>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let total = lists.iter().map(Vec::len).sum();
        let mut items = Vec::with_capacity(total);
        for l in lists {
            items.extend(l);
            offsets.push(items.len());
        }
        Self { offsets, items }
    }

    /// Bucket `(key, item)` pairs by key, preserving arrival order in each bucket.
    fn bucket(num_keys: usize, pairs: &[(usize, T)]) -> Self {
        let mut offsets = vec![0usize; num_keys + 1];
        for (k, _) in pairs {
            offsets[k + 1] += 1;
        }
        for k in 0..num_keys {
            offsets[k + 1] += offsets[k];
        }
        let mut cursor = offsets.clone();
        let mut items: Vec<Option<T>> = vec![None; pairs.len()];
        for &(k, t) in pairs {
            items[cursor[k]] = Some(t);
            cursor[k] += 1;
        }
        Self {
            offsets,
            items: items.into_iter().map(|t| t.expect("every slot filled")).collect(),
        }
    }

    pub fn get(&self, key: usize) -> &[T] {
        &self.items[self.offsets[key]..self.offsets[key + 1]]
    }

    pub fn num_keys(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        self.items.len()
    }

    /// Copy with the set at `key` replaced.
    pub fn with_replaced(&self, key: usize, set: Vec<T>) -> Self {
        let lists = (0..self.num_keys())
            .map(|k| if k == key { set.clone() } else { self.get(k).to_vec() })
            .collect();
        Self::from_lists(lists)
    }

    pub fn stats(&self) -> SetStats {
        let n = self.num_keys();
        let mut max = 0;
        let mut empty = 0;
        for k in 0..n {
            let len = self.offsets[k + 1] - self.offsets[k];
            max = max.max(len);
            empty += usize::from(len == 0);
        }
        SetStats {
            locations: n,
            entries: self.total(),
            mean_size: if n == 0 { 0.0 } else { self.total() as f64 / n as f64 },
            max_size: max,
            empty_fraction: if n == 0 { 0.0 } else { empty as f64 / n as f64 },
        }
    }
}

/// Summary of a correspondence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetStats {
    pub locations: usize,
    pub entries: usize,
    pub mean_size: f64,
    pub max_size: usize,
    pub empty_fraction: f64,
}

/// Pixel layout shared by all per-pixel tables: views in order, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLayout {
    sizes: Vec<(usize, usize)>,
    starts: Vec<usize>,
}

impl PixelLayout {
    pub fn of_rig(rig: &CameraRig) -> Self {
        let sizes: Vec<_> = rig.views.iter().map(|v| (v.height, v.width)).collect();
        let mut starts = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        starts.push(0);
        for (h, w) in &sizes {
            acc += h * w;
            starts.push(acc);
        }
        Self { sizes, starts }
    }

    pub fn num_views(&self) -> usize {
        self.sizes.len()
    }

    /// `(height, width)` of a view.
    pub fn size(&self, view: usize) -> (usize, usize) {
        self.sizes[view]
    }

    pub fn total(&self) -> usize {
        *self.starts.last().unwrap_or(&0)
    }

    pub fn key(&self, p: PixelCoord) -> usize {
        self.starts[p.view] + p.row * self.sizes[p.view].1 + p.col
    }

    pub fn coord(&self, key: usize) -> PixelCoord {
        let view = self.starts.partition_point(|&s| s <= key) - 1;
        let local = key - self.starts[view];
        let w = self.sizes[view].1;
        PixelCoord::new(view, local / w, local % w)
    }

    pub fn iter(&self) -> impl Iterator<Item = PixelCoord> + '_ {
        (0..self.total()).map(|k| self.coord(k))
    }
}

/// Image-to-BEV correspondence: per pixel, the BEV cells of its window.
#[derive(Debug, Clone, PartialEq)]
pub struct ImgToBevMap {
    /// Neighborhood radius; windows are `(2k+1) x (2k+1)`.
    pub k: usize,
    pub layout: PixelLayout,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub table: SetTable<BevCoord>,
}

impl ImgToBevMap {
    pub fn get(&self, p: PixelCoord) -> &[BevCoord] {
        self.table.get(self.layout.key(p))
    }

    /// Regroup by BEV target: for each cell, the pixels whose sets contain
    /// it, in ascending `(view, row, col)` order.
    pub fn invert(&self) -> BevSources {
        let mut pairs = Vec::with_capacity(self.table.total());
        for key in 0..self.table.num_keys() {
            let p = self.layout.coord(key);
            for c in self.table.get(key) {
                pairs.push((c.row * self.grid_cols + c.col, p));
            }
        }
        BevSources {
            rows: self.grid_rows,
            cols: self.grid_cols,
            table: SetTable::bucket(self.grid_rows * self.grid_cols, &pairs),
        }
    }

    /// JSON lines `{"target":[view,row,col],"sources":[[row,col],...]}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for key in 0..self.table.num_keys() {
            let p = self.layout.coord(key);
            let sources: Vec<[usize; 2]> = self.table.get(key).iter().map(|c| [c.row, c.col]).collect();
            let line = serde_json::json!({ "target": [p.view, p.row, p.col], "sources": sources });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// BEV-to-image correspondence: per cell, the pixels hit by its pillar.
#[derive(Debug, Clone, PartialEq)]
pub struct BevToImgMap {
    pub rows: usize,
    pub cols: usize,
    pub layout: PixelLayout,
    pub table: SetTable<PixelCoord>,
}

impl BevToImgMap {
    pub fn get(&self, c: BevCoord) -> &[PixelCoord] {
        self.table.get(c.row * self.cols + c.col)
    }

    /// Regroup by pixel target: for each pixel, the cells whose sets contain
    /// it, in ascending `(row, col)` order.
    pub fn transpose(&self) -> PixelSources {
        let mut pairs = Vec::with_capacity(self.table.total());
        for key in 0..self.table.num_keys() {
            let c = BevCoord::new(key / self.cols, key % self.cols);
            for p in self.table.get(key) {
                pairs.push((self.layout.key(*p), c));
            }
        }
        PixelSources {
            layout: self.layout.clone(),
            table: SetTable::bucket(self.layout.total(), &pairs),
        }
    }

    /// JSON lines `{"target":[row,col],"sources":[[view,row,col],...]}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for key in 0..self.table.num_keys() {
            let sources: Vec<[usize; 3]> = self.table.get(key).iter().map(|p| [p.view, p.row, p.col]).collect();
            let line = serde_json::json!({ "target": [key / self.cols, key % self.cols], "sources": sources });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// For each BEV cell, the image pixels that gather into it.
#[derive(Debug, Clone, PartialEq)]
pub struct BevSources {
    pub rows: usize,
    pub cols: usize,
    pub table: SetTable<PixelCoord>,
}

impl BevSources {
    pub fn get(&self, c: BevCoord) -> &[PixelCoord] {
        self.table.get(c.row * self.cols + c.col)
    }
}

/// For each image pixel, the BEV cells that gather into it.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSources {
    pub layout: PixelLayout,
    pub table: SetTable<BevCoord>,
}

impl PixelSources {
    pub fn get(&self, p: PixelCoord) -> &[BevCoord] {
        self.table.get(self.layout.key(p))
    }
}

/// `T(view, row, col)`: back-project the pixel center at its dense depth and
/// quantize the ground-plane position. `Ok(None)` when it leaves the grid.
pub fn pixel_to_bev(
    view: usize,
    row: usize,
    col: usize,
    depth: &DepthMap,
    rig: &CameraRig,
    grid: &BevGrid,
) -> Result<Option<BevCoord>> {
    let cam = rig
        .views
        .get(view)
        .ok_or_else(|| Error::Precondition(format!("view {view} not in rig")))?;
    if row >= depth.height() || col >= depth.width() {
        return Err(Error::Precondition(format!("pixel ({row}, {col}) outside depth map")));
    }
    let d = depth
        .get(row, col)
        .ok_or_else(|| Error::Precondition(format!("no valid depth at view {view} pixel ({row}, {col})")))?;
    let p = back_project(col as f64 + 0.5, row as f64 + 0.5, d, cam)?;
    Ok(bev_index(p.x, p.y, grid))
}

fn check_depths(depths: &[Option<&DepthMap>], rig: &CameraRig) -> Result<()> {
    if depths.len() != rig.len() {
        return Err(Error::config(format!(
            "{} depth maps for a {}-view rig",
            depths.len(),
            rig.len()
        )));
    }
    for (v, (d, cam)) in depths.iter().zip(&rig.views).enumerate() {
        let Some(d) = d else { continue };
        if d.width() != cam.width || d.height() != cam.height {
            return Err(Error::config(format!("depth map {v} size does not match its view")));
        }
    }
    Ok(())
}

/// Build `M_{c->p}` over every pixel of every view.
pub fn build_img_to_bev(depths: &[DepthMap], rig: &CameraRig, grid: &BevGrid, k: usize) -> Result<ImgToBevMap> {
    let depths: Vec<Option<&DepthMap>> = depths.iter().map(Some).collect();
    build_img_to_bev_partial(&depths, rig, grid, k)
}

/// As [`build_img_to_bev`], but views without a depth map (no LiDAR
/// returns landed in them) contribute empty sets.
pub fn build_img_to_bev_partial(
    depths: &[Option<&DepthMap>],
    rig: &CameraRig,
    grid: &BevGrid,
    k: usize,
) -> Result<ImgToBevMap> {
    check_depths(depths, rig)?;
    let layout = PixelLayout::of_rig(rig);
    // T for every pixel, computed once.
    let t: Vec<Option<BevCoord>> = (0..layout.total())
        .into_par_iter()
        .map(|key| {
            let p = layout.coord(key);
            match depths[p.view] {
                Some(d) => pixel_to_bev(p.view, p.row, p.col, d, rig, grid),
                None => Ok(None),
            }
        })
        .collect::<Result<_>>()?;
    let lists: Vec<Vec<BevCoord>> = (0..layout.total())
        .into_par_iter()
        .map(|key| {
            let p = layout.coord(key);
            let (h, w) = layout.size(p.view);
            let base = key - p.row * w - p.col;
            let mut set = Vec::with_capacity((2 * k + 1) * (2 * k + 1));
            for r in p.row.saturating_sub(k)..=(p.row + k).min(h - 1) {
                for c in p.col.saturating_sub(k)..=(p.col + k).min(w - 1) {
                    if let Some(cell) = t[base + r * w + c] {
                        set.push(cell);
                    }
                }
            }
            set.sort_unstable();
            set.dedup();
            set
        })
        .collect();
    Ok(ImgToBevMap {
        k,
        layout,
        grid_rows: grid.rows(),
        grid_cols: grid.cols(),
        table: SetTable::from_lists(lists),
    })
}

/// Build `M_{p->c}` by projecting every pillar's points into every view.
pub fn build_bev_to_img(pillars: &PillarIndex, cloud: &PointCloud, rig: &CameraRig) -> Result<BevToImgMap> {
    let layout = PixelLayout::of_rig(rig);
    let (rows, cols) = (pillars.rows(), pillars.cols());
    if let Some((_, pts)) = pillars.occupied().find(|(_, pts)| pts.iter().any(|&i| i as usize >= cloud.len())) {
        return Err(Error::Precondition(format!(
            "pillar index references point {} but the cloud has {} points",
            pts.iter().max().copied().unwrap_or(0),
            cloud.len()
        )));
    }
    let lists: Vec<Vec<PixelCoord>> = (0..rows * cols)
        .into_par_iter()
        .map(|key| {
            let cell = BevCoord::new(key / cols, key % cols);
            let mut set = Vec::new();
            for &i in pillars.points_in(cell) {
                let p = cloud.points[i as usize];
                for (v, view) in rig.views.iter().enumerate() {
                    if let Some(ip) = world_to_image(p, view) {
                        if view.contains_pixel(ip.u, ip.v) {
                            let (r, c) = ip.pixel();
                            set.push(PixelCoord::new(v, r, c));
                        }
                    }
                }
            }
            set.sort_unstable();
            set.dedup();
            set
        })
        .collect();
    Ok(BevToImgMap {
        rows,
        cols,
        layout,
        table: SetTable::from_lists(lists),
    })
}

//! Predictive interaction decoder.
//!
//! Queries start at heatmap peaks of the BEV features. Layer `l` (1-based)
//! crops an RoI for every query from the image features when `l` is odd and
//! from the BEV features when `l` is even, lets the query generate two 1x1
//! convolutions that it applies to its own RoI, folds the result back into
//! the embedding and refines the box with a prediction head.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::boxes::Box3D;
use crate::boxes::wrap_angle;
use crate::camera::{CameraRig, CameraView};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::geometry::{project_xyz, snap, BevCoord, BevGrid};
use crate::nn::{relu, sigmoid, visit_child, Ffn, Linear, Matrix, ParamVisitor, Parameterized};
use crate::rng::DetRng;

/// Box deltas emitted by the head after the class logits:
/// `dx, dy, dz, dl, dw, dh, sin, cos, vx, vy`.
pub const BOX_OUTPUTS: usize = 10;
const COS_SLOT: usize = 7;
/// Log-scale size deltas are clamped to `+-LOG_DIM_CLAMP` so dims stay finite and positive.
pub const LOG_DIM_CLAMP: f64 = 10.0;
/// Box size given to freshly initialized queries `(l, w, h)`.
pub const DEFAULT_QUERY_DIMS: [f64; 3] = [4.0, 2.0, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Cascaded layers (5 in the base configuration).
    pub num_layers: usize,
    /// Object queries `N` (200 in the base configuration).
    pub num_queries: usize,
    /// RoI lattice side `S`.
    pub roi_size: usize,
    /// BEV footprint enlargement before RoI cropping.
    pub bev_enlarge: f64,
    pub num_classes: usize,
    /// Dynamic convolution bottleneck width; `None` means `max(C / 4, 1)`.
    pub reduced_channels: Option<usize>,
    /// Hidden width of the query update and prediction FFNs.
    pub ffn_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            num_queries: 16,
            roi_size: 7,
            bev_enlarge: 2.0,
            num_classes: 3,
            reduced_channels: None,
            ffn_hidden: 32,
        }
    }
}

impl DecoderConfig {
    pub fn reduced(&self, channels: usize) -> usize {
        self.reduced_channels.unwrap_or((channels / 4).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_queries == 0 || self.roi_size == 0 {
            return Err(Error::config("decoder needs at least one layer, query and RoI cell"));
        }
        if self.num_classes == 0 || self.ffn_hidden == 0 || self.reduced_channels == Some(0) {
            return Err(Error::config("decoder widths must be positive"));
        }
        if !(self.bev_enlarge >= 1.0) || !self.bev_enlarge.is_finite() {
            return Err(Error::config("bev_enlarge must be a finite factor >= 1"));
        }
        Ok(())
    }
}

/// Object query: embedding plus its current box hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub embedding: Vec<f64>,
    pub bbox: Box3D,
}

/// One prediction: refined box and per-class scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: Box3D,
    pub scores: Vec<f64>,
}

impl Detection {
    /// `(class, score)` of the highest score; lowest class id wins ties.
    pub fn best(&self) -> (usize, f64) {
        self.scores
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc })
    }
}

/// Class-agnostic per-cell objectness: `sigmoid(h . w + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapHead {
    pub linear: Linear,
}

impl HeatmapHead {
    pub fn random(channels: usize, rng: &mut DetRng) -> Self {
        Self {
            linear: Linear::random(channels, 1, rng),
        }
    }

    /// Pre-sigmoid scores, row-major over the map.
    pub fn logits(&self, h: &FeatureMap) -> Result<Vec<f64>> {
        if h.channels() != self.linear.input_dim() {
            return Err(Error::config("heatmap head channel mismatch"));
        }
        Ok(h.data().chunks(h.channels()).map(|x| self.linear.forward(x)[0]).collect())
    }

    pub fn heatmap(&self, h: &FeatureMap) -> Result<Vec<f64>> {
        Ok(self.logits(h)?.into_iter().map(sigmoid).collect())
    }
}

impl Parameterized for HeatmapHead {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        visit_child(&mut self.linear, prefix, "linear", f);
    }
}

/// Cells that are `>=` every 8-neighbor, sorted by value descending then
/// `(row, col)` ascending.
pub fn local_maxima(values: &[f64], rows: usize, cols: usize) -> Vec<BevCoord> {
    let mut peaks = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let mut is_peak = true;
            'scan: for rr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    if values[rr * cols + cc] > v {
                        is_peak = false;
                        break 'scan;
                    }
                }
            }
            if is_peak {
                peaks.push(BevCoord::new(r, c));
            }
        }
    }
    sort_by_score(&mut peaks, values, cols);
    peaks
}

fn sort_by_score(cells: &mut [BevCoord], values: &[f64], cols: usize) {
    cells.sort_by(|a, b| {
        let va = values[a.row * cols + a.col];
        let vb = values[b.row * cols + b.col];
        vb.total_cmp(&va).then(a.cmp(b))
    });
}

/// Seed `n` queries at the strongest heatmap peaks of `h_p`.
///
/// Peaks are cells not exceeded by any 8-neighbor. If there are fewer than
/// `n`, the remaining queries take the best non-peak cells in the same order.
/// Each query's embedding is the feature vector at its cell; its box sits at
/// the cell center on the ground plane with [`DEFAULT_QUERY_DIMS`], zero yaw
/// and zero velocity.
pub fn init_queries(h_p: &FeatureMap, grid: &BevGrid, n: usize, head: &HeatmapHead) -> Result<Vec<Query>> {
    let (rows, cols) = (h_p.height(), h_p.width());
    if (rows, cols) != (grid.rows(), grid.cols()) {
        return Err(Error::config("BEV features do not match the grid"));
    }
    if n > rows * cols {
        return Err(Error::config(format!("{n} queries requested but the BEV grid has {} cells", rows * cols)));
    }
    let heat = head.heatmap(h_p)?;
    let mut cells = local_maxima(&heat, rows, cols);
    if cells.len() < n {
        let mut is_peak = vec![false; rows * cols];
        for c in &cells {
            is_peak[c.row * cols + c.col] = true;
        }
        let mut rest: Vec<BevCoord> = (0..rows * cols)
            .filter(|&k| !is_peak[k])
            .map(|k| BevCoord::new(k / cols, k % cols))
            .collect();
        sort_by_score(&mut rest, &heat, cols);
        cells.extend(rest);
    }
    Ok(cells
        .into_iter()
        .take(n)
        .map(|c| {
            let (x, y) = grid.cell_center(c);
            Query {
                embedding: h_p.at(c.row, c.col).to_vec(),
                bbox: Box3D::new([x, y, 0.0], DEFAULT_QUERY_DIMS, 0.0),
            }
        })
        .collect())
}

/// Axis-aligned rectangle in continuous map units (`x` = column, `y` = row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Circumscribed rectangle of the projected box, clipped to the image.
///
/// Corners behind the camera are ignored. `None` when every corner is behind
/// the camera or nothing remains after clipping. A degenerate (zero-area)
/// rectangle inside the image is returned as is.
pub fn project_box_to_image_roi(bbox: &Box3D, view: &CameraView) -> Option<Rect> {
    let mut r = Rect {
        x0: f64::INFINITY,
        y0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y1: f64::NEG_INFINITY,
    };
    let mut any = false;
    for c in bbox.corners() {
        if let Some(ip) = project_xyz(c, view) {
            any = true;
            r.x0 = r.x0.min(ip.u);
            r.x1 = r.x1.max(ip.u);
            r.y0 = r.y0.min(ip.v);
            r.y1 = r.y1.max(ip.v);
        }
    }
    if !any {
        return None;
    }
    let (w, h) = (view.width as f64, view.height as f64);
    let clipped = Rect {
        x0: r.x0.clamp(0.0, w),
        y0: r.y0.clamp(0.0, h),
        x1: r.x1.clamp(0.0, w),
        y1: r.y1.clamp(0.0, h),
    };
    // Entirely off one side collapses onto the border: treat as empty.
    let off = r.x1 < 0.0 || r.y1 < 0.0 || r.x0 > w || r.y0 > h;
    (!off && clipped.x1 >= clipped.x0 && clipped.y1 >= clipped.y0).then_some(clipped)
}

/// Pick the view with the largest clipped RoI (lowest view id on ties).
pub fn select_image_roi(bbox: &Box3D, rig: &CameraRig) -> Option<(usize, Rect)> {
    let mut best: Option<(usize, Rect)> = None;
    for (v, view) in rig.views.iter().enumerate() {
        if let Some(r) = project_box_to_image_roi(bbox, view) {
            if best.is_none_or(|(_, b)| r.area() > b.area()) {
                best = Some((v, r));
            }
        }
    }
    best
}

/// Inclusive range of BEV cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl CellRect {
    pub fn contains(&self, other: &CellRect) -> bool {
        self.row0 <= other.row0 && self.col0 <= other.col0 && self.row1 >= other.row1 && self.col1 >= other.col1
    }

    /// Continuous extent in cell units, `[col0, col1 + 1) x [row0, row1 + 1)`.
    pub fn to_rect(&self) -> Rect {
        Rect {
            x0: self.col0 as f64,
            y0: self.row0 as f64,
            x1: (self.col1 + 1) as f64,
            y1: (self.row1 + 1) as f64,
        }
    }
}

/// BEV RoI: metric footprint bounds of the enlarged box and the cells covering them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BevRoi {
    /// `[x_min, x_max, y_min, y_max]` of the rotated, enlarged footprint (meters, unclipped).
    pub extent: [f64; 4],
    pub cells: CellRect,
}

/// Scale the footprint's length and width by `enlarge`, then take the
/// smallest block of cells covering its axis-aligned bounds, clipped to the
/// grid. `None` if the bounds miss the grid.
pub fn project_box_to_bev_roi(bbox: &Box3D, grid: &BevGrid, enlarge: f64) -> Option<BevRoi> {
    let fp = bbox.footprint(enlarge);
    let xs = fp.iter().map(|p| p[0]);
    let ys = fp.iter().map(|p| p[1]);
    let x0 = xs.clone().fold(f64::INFINITY, f64::min);
    let x1 = xs.fold(f64::NEG_INFINITY, f64::max);
    let y0 = ys.clone().fold(f64::INFINITY, f64::min);
    let y1 = ys.fold(f64::NEG_INFINITY, f64::max);
    if x1 <= grid.x_min || x0 >= grid.x_max || y1 <= grid.y_min || y0 >= grid.y_max {
        return None;
    }
    let (rows, cols) = (grid.rows() as f64, grid.cols() as f64);
    let lo = |v: f64, min: f64, n: f64| snap((v - min) / grid.cell).floor().clamp(0.0, n - 1.0) as usize;
    let hi = |v: f64, min: f64, n: f64| (snap((v - min) / grid.cell).ceil() - 1.0).clamp(0.0, n - 1.0) as usize;
    let cells = CellRect {
        col0: lo(x0, grid.x_min, cols),
        col1: hi(x1, grid.x_min, cols).max(lo(x0, grid.x_min, cols)),
        row0: lo(y0, grid.y_min, rows),
        row1: hi(y1, grid.y_min, rows).max(lo(y0, grid.y_min, rows)),
    };
    Some(BevRoi {
        extent: [x0, x1, y0, y1],
        cells,
    })
}

/// Bilinear read at continuous coordinates; pixel `(r, c)` is centered at
/// `(c + 0.5, r + 0.5)` and coordinates clamp to the outermost centers.
pub fn bilinear(map: &FeatureMap, x: f64, y: f64, out: &mut [f64]) {
    let (h, w) = (map.height(), map.width());
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (c0, r0) = (fx.floor() as usize, fy.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
    let (ax, ay) = (fx - c0 as f64, fy - r0 as f64);
    let (f00, f01, f10, f11) = (map.at(r0, c0), map.at(r0, c1), map.at(r1, c0), map.at(r1, c1));
    for k in 0..out.len() {
        let top = (1.0 - ax) * f00[k] + ax * f01[k];
        let bottom = (1.0 - ax) * f10[k] + ax * f11[k];
        out[k] = (1.0 - ay) * top + ay * bottom;
    }
}

/// Crop an `S x S x C` block by bilinear sampling at the centers of an
/// `S x S` partition of `rect` (sample `a` along an axis sits at fraction
/// `(a + 0.5) / S`). Rectangles thinner than one unit are widened to one
/// unit about their center. `None` yields an all-zero block.
pub fn extract_roi(map: &FeatureMap, rect: Option<Rect>, s: usize) -> FeatureMap {
    let c = map.channels();
    let mut block = FeatureMap::zeros(s, s, c);
    let Some(mut r) = rect else {
        return block;
    };
    if map.height() == 0 || map.width() == 0 {
        return block;
    }
    for (lo, hi) in [(&mut r.x0, &mut r.x1), (&mut r.y0, &mut r.y1)] {
        if *hi - *lo < 1.0 {
            let mid = 0.5 * (*lo + *hi);
            *lo = mid - 0.5;
            *hi = mid + 0.5;
        }
    }
    let (rw, rh) = (r.width(), r.height());
    for a in 0..s {
        let y = r.y0 + rh * (a as f64 + 0.5) / s as f64;
        for b in 0..s {
            let x = r.x0 + rw * (b as f64 + 0.5) / s as f64;
            bilinear(map, x, y, block.at_mut(a, b));
        }
    }
    block
}

/// Parameters of one decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    /// Embedding -> flattened `P1 (C x C_r)` followed by `P2 (C_r x C_r)`.
    pub generator: Linear,
    /// Flattened `S*S*C_r` interaction output -> embedding.
    pub roi_proj: Linear,
    /// Residual query update.
    pub update: Ffn,
    /// Embedding -> class logits and [`BOX_OUTPUTS`] box terms.
    pub head: Ffn,
    pub channels: usize,
    pub reduced: usize,
    pub roi_size: usize,
    pub num_classes: usize,
}

impl DecoderLayerParams {
    pub fn random(channels: usize, cfg: &DecoderConfig, rng: &mut DetRng) -> Self {
        let cr = cfg.reduced(channels);
        let s = cfg.roi_size;
        let mut head = Ffn::random(channels, cfg.ffn_hidden, cfg.num_classes + BOX_OUTPUTS, rng);
        head.output.bias[cfg.num_classes + COS_SLOT] = 1.0;
        Self {
            generator: Linear::random(channels, channels * cr + cr * cr, rng),
            roi_proj: Linear::random(s * s * cr, channels, rng),
            update: Ffn::random(channels, cfg.ffn_hidden, channels, rng),
            head,
            channels,
            reduced: cr,
            roi_size: s,
            num_classes: cfg.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, cr, s) = (self.channels, self.reduced, self.roi_size);
        let ok = self.generator.input_dim() == c
            && self.generator.output_dim() == c * cr + cr * cr
            && self.roi_proj.input_dim() == s * s * cr
            && self.roi_proj.output_dim() == c
            && self.update.input_dim() == c
            && self.update.output_dim() == c
            && self.head.input_dim() == c
            && self.head.output_dim() == self.num_classes + BOX_OUTPUTS;
        if !ok {
            return Err(Error::config("decoder layer parameters have inconsistent shapes"));
        }
        Ok(())
    }
}

impl Parameterized for DecoderLayerParams {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        visit_child(&mut self.generator, prefix, "generator", f);
        visit_child(&mut self.roi_proj, prefix, "roi_proj", f);
        visit_child(&mut self.update, prefix, "update", f);
        visit_child(&mut self.head, prefix, "head", f);
    }
}

/// Query-conditioned 1x1 convolutions over the RoI, folded into the embedding.
///
/// The generator output splits into `P1` (`C x C_r`, row-major) then `P2`
/// (`C_r x C_r`). Each RoI position `x` becomes `relu(relu(x P1) P2)`; the
/// positions are flattened row-major and projected back to `C`, giving
/// `e = q + proj(flat)`. The result is `e + update(e)`.
pub fn dynamic_interaction(query: &Query, roi: &FeatureMap, params: &DecoderLayerParams) -> Result<Vec<f64>> {
    params.validate()?;
    let (c, cr, s) = (params.channels, params.reduced, params.roi_size);
    if query.embedding.len() != c || roi.shape() != (s, s, c) {
        return Err(Error::config("query or RoI shape does not match the decoder layer"));
    }
    let gen = params.generator.forward(&query.embedding);
    let p1 = Matrix {
        rows: c,
        cols: cr,
        data: gen[..c * cr].to_vec(),
    };
    let p2 = Matrix {
        rows: cr,
        cols: cr,
        data: gen[c * cr..].to_vec(),
    };
    let mut flat = vec![0.0; s * s * cr];
    let mut mid = vec![0.0; cr];
    for (pos, x) in roi.data().chunks(c).enumerate() {
        p1.apply_into(x, &mut mid);
        mid.iter_mut().for_each(|v| *v = relu(*v));
        let out = &mut flat[pos * cr..(pos + 1) * cr];
        p2.apply_into(&mid, out);
        out.iter_mut().for_each(|v| *v = relu(*v));
    }
    let proj = params.roi_proj.forward(&flat);
    let e: Vec<f64> = query.embedding.iter().zip(&proj).map(|(a, b)| a + b).collect();
    let upd = params.update.forward(&e);
    Ok(e.iter().zip(&upd).map(|(a, b)| a + b).collect())
}

/// Refine the query's box with the prediction head.
///
/// Center moves by `(dx, dy, dz)`, dims scale by `exp(dl, dw, dh)` (deltas
/// clamped to `+-LOG_DIM_CLAMP`), yaw becomes `atan2(sin, cos)` wrapped to
/// `(-pi, pi]`, velocity is set directly and scores are `sigmoid(logits)`.
pub fn predict(query: &Query, params: &DecoderLayerParams) -> Result<Detection> {
    params.validate()?;
    if query.embedding.len() != params.channels {
        return Err(Error::config("query embedding width does not match the head"));
    }
    let out = params.head.forward(&query.embedding);
    let k = params.num_classes;
    let scores = out[..k].iter().map(|&l| sigmoid(l)).collect();
    let d = &out[k..];
    let b = &query.bbox;
    let mut bbox = *b;
    for i in 0..3 {
        bbox.center[i] = b.center[i] + d[i];
        bbox.dims[i] = b.dims[i] * d[3 + i].clamp(-LOG_DIM_CLAMP, LOG_DIM_CLAMP).exp();
    }
    bbox.yaw = wrap_angle(d[6].atan2(d[7]));
    bbox.velocity = [d[8], d[9]];
    Ok(Detection { bbox, scores })
}

/// Feature source of a decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Bev,
}

impl Modality {
    /// Odd layers read the image features, even layers the BEV features.
    pub fn for_layer(layer: usize) -> Self {
        if layer % 2 == 1 {
            Modality::Image
        } else {
            Modality::Bev
        }
    }
}

/// Where a query's RoI came from in one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RoiSource {
    View { view: usize, rect: Rect },
    Bev(CellRect),
    NotVisible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    /// 1-based layer index.
    pub layer: usize,
    pub modality: Modality,
    pub rois: Vec<RoiSource>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    pub layers: Vec<LayerOutput>,
    /// Queries after the last layer.
    pub queries: Vec<Query>,
}

impl DecoderOutput {
    pub fn modality_trace(&self) -> Vec<Modality> {
        self.layers.iter().map(|l| l.modality).collect()
    }

    /// JSON lines `{layer, query, box: [x,y,z,l,w,h,yaw,vx,vy], scores}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for l in &self.layers {
            for (q, d) in l.detections.iter().enumerate() {
                let line = serde_json::json!({
                    "layer": l.layer,
                    "query": q,
                    "box": d.bbox.to_array(),
                    "scores": d.scores,
                });
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Crop the RoI one query sees in a layer of the given modality.
pub fn query_roi(
    bbox: &Box3D,
    modality: Modality,
    h_p: &FeatureMap,
    h_c: &[FeatureMap],
    rig: &CameraRig,
    grid: &BevGrid,
    config: &DecoderConfig,
) -> (RoiSource, FeatureMap) {
    let s = config.roi_size;
    match modality {
        Modality::Image => match select_image_roi(bbox, rig) {
            Some((view, rect)) => (RoiSource::View { view, rect }, extract_roi(&h_c[view], Some(rect), s)),
            None => (RoiSource::NotVisible, extract_roi(h_p, None, s)),
        },
        Modality::Bev => match project_box_to_bev_roi(bbox, grid, config.bev_enlarge) {
            Some(roi) => (RoiSource::Bev(roi.cells), extract_roi(h_p, Some(roi.cells.to_rect()), s)),
            None => (RoiSource::NotVisible, extract_roi(h_p, None, s)),
        },
    }
}

/// Run all decoder layers. `rig` and `grid` must describe the feature maps'
/// resolution (one view per image map).
#[allow(clippy::too_many_arguments)]
pub fn decoder_forward(
    queries: &[Query],
    h_p: &FeatureMap,
    h_c: &[FeatureMap],
    rig: &CameraRig,
    grid: &BevGrid,
    config: &DecoderConfig,
    layers: &[DecoderLayerParams],
) -> Result<DecoderOutput> {
    config.validate()?;
    if layers.len() != config.num_layers {
        return Err(Error::config(format!(
            "{} decoder layer parameter sets for num_layers = {}",
            layers.len(),
            config.num_layers
        )));
    }
    if h_c.len() != rig.len()
        || h_c.iter().zip(&rig.views).any(|(m, v)| (m.height(), m.width()) != (v.height, v.width))
    {
        return Err(Error::config("image features do not match the rig"));
    }
    if (h_p.height(), h_p.width()) != (grid.rows(), grid.cols()) {
        return Err(Error::config("BEV features do not match the grid"));
    }
    let mut current = queries.to_vec();
    let mut outputs = Vec::with_capacity(layers.len());
    for (i, params) in layers.iter().enumerate() {
        let layer = i + 1;
        let modality = Modality::for_layer(layer);
        let results: Vec<(RoiSource, Query, Detection)> = current
            .par_iter()
            .map(|q| {
                let (src, roi) = query_roi(&q.bbox, modality, h_p, h_c, rig, grid, config);
                let embedding = dynamic_interaction(q, &roi, params)?;
                let updated = Query {
                    embedding,
                    bbox: q.bbox,
                };
                let det = predict(&updated, params)?;
                Ok((src, Query { bbox: det.bbox, ..updated }, det))
            })
            .collect::<Result<_>>()?;
        let mut rois = Vec::with_capacity(results.len());
        let mut dets = Vec::with_capacity(results.len());
        current.clear();
        for (src, q, d) in results {
            rois.push(src);
            current.push(q);
            dets.push(d);
        }
        outputs.push(LayerOutput {
            layer,
            modality,
            rois,
            detections: dets,
        });
    }
    Ok(DecoderOutput {
        layers: outputs,
        queries: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Matrix4};
    use std::f64::consts::PI;

    fn small_cfg(c: usize) -> (DecoderConfig, DecoderLayerParams) {
        let cfg = DecoderConfig {
            num_layers: 1,
            num_queries: 1,
            roi_size: 2,
            num_classes: 2,
            ffn_hidden: 4,
            ..DecoderConfig::default()
        };
        let p = DecoderLayerParams::random(c, &cfg, &mut DetRng::new(4));
        (cfg, p)
    }

    #[test]
    fn parity_rule() {
        let trace: Vec<_> = (1..=5).map(Modality::for_layer).collect();
        use Modality::*;
        assert_eq!(trace, vec![Image, Bev, Image, Bev, Image]);
    }

    #[test]
    fn zero_head_keeps_box_and_zero_yaw() {
        let (_, mut p) = small_cfg(4);
        for l in [&mut p.head.hidden, &mut p.head.output] {
            l.weight.data.fill(0.0);
            l.bias.fill(0.0);
        }
        p.head.output.bias[2 + COS_SLOT] = 1.0;
        let q = Query {
            embedding: vec![1.0, -2.0, 0.5, 3.0],
            bbox: Box3D::new([1.0, 2.0, 0.0], [4.0, 2.0, 1.5], 0.3),
        };
        let d = predict(&q, &p).unwrap();
        assert_eq!(d.bbox.center, q.bbox.center);
        assert_eq!(d.bbox.dims, q.bbox.dims);
        assert_eq!(d.bbox.yaw, 0.0);
        assert_eq!(d.scores, vec![0.5, 0.5]);
    }

    #[test]
    fn log_two_doubles_length() {
        let (_, mut p) = small_cfg(4);
        for l in [&mut p.head.hidden, &mut p.head.output] {
            l.weight.data.fill(0.0);
        }
        p.head.output.bias[2 + 3] = std::f64::consts::LN_2;
        let q = Query {
            embedding: vec![0.0; 4],
            bbox: Box3D::new([0.0; 3], [4.0, 2.0, 1.5], 0.0),
        };
        assert!((predict(&q, &p).unwrap().bbox.dims[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn huge_size_delta_stays_finite() {
        let (_, mut p) = small_cfg(4);
        p.head.output.bias[2 + 4] = 1e6;
        p.head.output.bias[2 + 5] = -1e6;
        let q = Query {
            embedding: vec![0.1; 4],
            bbox: Box3D::new([0.0; 3], [4.0, 2.0, 1.5], 0.0),
        };
        let d = predict(&q, &p).unwrap();
        assert!(d.bbox.is_valid());
    }

    #[test]
    fn single_peak_query_at_cell_center() {
        let grid = BevGrid::square(4.0, 1.0).unwrap();
        let mut h = FeatureMap::zeros(8, 8, 2);
        h.at_mut(5, 2)[0] = 3.0;
        let mut head = HeatmapHead::random(2, &mut DetRng::new(0));
        head.linear.weight.data = vec![1.0, 0.0];
        let q = init_queries(&h, &grid, 1, &head).unwrap();
        assert_eq!(q[0].bbox.center, [-1.5, 1.5, 0.0]);
        assert_eq!(q[0].embedding, vec![3.0, 0.0]);
        assert_eq!(q[0].bbox.dims, DEFAULT_QUERY_DIMS);
    }

    #[test]
    fn equal_peaks_break_ties_lexicographically() {
        let grid = BevGrid::square(4.0, 1.0).unwrap();
        let mut h = FeatureMap::zeros(8, 8, 1);
        h.at_mut(6, 1)[0] = 2.0;
        h.at_mut(1, 6)[0] = 2.0;
        let mut head = HeatmapHead::random(1, &mut DetRng::new(0));
        head.linear.weight.data = vec![1.0];
        let q = init_queries(&h, &grid, 2, &head).unwrap();
        let first = grid.cell_center(BevCoord::new(1, 6));
        assert_eq!((q[0].bbox.center[0], q[0].bbox.center[1]), first);
    }

    #[test]
    fn too_many_queries_rejected() {
        let grid = BevGrid::square(1.0, 1.0).unwrap();
        let head = HeatmapHead::random(1, &mut DetRng::new(0));
        let h = FeatureMap::zeros(2, 2, 1);
        assert!(matches!(init_queries(&h, &grid, 5, &head), Err(Error::Config(_))));
    }

    #[test]
    fn behind_box_not_visible() {
        let k = Matrix3::new(50.0, 0.0, 50.0, 0.0, 50.0, 50.0, 0.0, 0.0, 1.0);
        let view = CameraView::new(k, Matrix4::identity(), 100, 100);
        let b = Box3D::new([0.0, 0.0, -5.0], [1.0, 1.0, 1.0], 0.0);
        assert!(project_box_to_image_roi(&b, &view).is_none());
    }

    #[test]
    fn bev_roi_reference_example() {
        let grid = BevGrid::square(8.0, 0.5).unwrap();
        let b = Box3D::new([0.0, 0.0, 0.0], [4.0, 4.0, 1.0], 0.0);
        let roi = project_box_to_bev_roi(&b, &grid, 2.0).unwrap();
        assert_eq!(
            roi.cells,
            CellRect {
                row0: 8,
                col0: 8,
                row1: 23,
                col1: 23
            }
        );
    }

    #[test]
    fn bev_roi_quarter_turn_swaps_axes() {
        let grid = BevGrid::square(8.0, 0.5).unwrap();
        let a = Box3D::new([0.3, -0.2, 0.0], [3.0, 1.3, 1.0], 0.0);
        let b = Box3D::new([0.3, -0.2, 0.0], [1.3, 3.0, 1.0], PI / 2.0);
        assert_eq!(
            project_box_to_bev_roi(&a, &grid, 2.0).unwrap().cells,
            project_box_to_bev_roi(&b, &grid, 2.0).unwrap().cells
        );
    }

    #[test]
    fn bev_roi_diagonal_grows_by_sqrt2() {
        let grid = BevGrid::square(50.0, 0.5).unwrap();
        let a = Box3D::new([0.0; 3], [2.0, 2.0, 1.0], 0.0);
        let b = Box3D::new([0.0; 3], [2.0, 2.0, 1.0], PI / 4.0);
        let ea = project_box_to_bev_roi(&a, &grid, 2.0).unwrap().extent;
        let eb = project_box_to_bev_roi(&b, &grid, 2.0).unwrap().extent;
        assert!(((eb[1] - eb[0]) / (ea[1] - ea[0]) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bev_roi_outside_grid() {
        let grid = BevGrid::square(8.0, 0.5).unwrap();
        let b = Box3D::new([30.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        assert!(project_box_to_bev_roi(&b, &grid, 2.0).is_none());
    }

    #[test]
    fn extract_constant_and_invisible() {
        let m = FeatureMap::filled(5, 6, 3, 1.25);
        let r = Rect {
            x0: 0.3,
            y0: 1.1,
            x1: 4.7,
            y1: 3.9,
        };
        let block = extract_roi(&m, Some(r), 4);
        assert!(block.data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
        assert!(extract_roi(&m, None, 4).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_roi_reduces_to_residual_update() {
        let (_, mut p) = small_cfg(4);
        p.roi_proj.bias.fill(0.0);
        let q = Query {
            embedding: vec![0.5, -1.0, 2.0, 0.0],
            bbox: Box3D::new([0.0; 3], [1.0; 3], 0.0),
        };
        let out = dynamic_interaction(&q, &FeatureMap::zeros(2, 2, 4), &p).unwrap();
        let upd = p.update.forward(&q.embedding);
        let expect: Vec<f64> = q.embedding.iter().zip(&upd).map(|(a, b)| a + b).collect();
        assert_eq!(out, expect);
    }
}

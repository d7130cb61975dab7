//! Representational interaction encoder.
//!
//! Each layer runs four local attentions and merges them per modality:
//!
//! - image-to-BEV: every BEV cell queries the image pixels whose
//!   correspondence windows reach it;
//! - BEV-to-image: every pixel queries the BEV cells whose pillars project
//!   onto it;
//! - intra-modal: every location queries its `k_iml x k_iml` window;
//! - integration: `h' = FFN(Concat(FFN(Concat(h_intra, h_cross)), h))`,
//!   followed by a per-location layer norm.
//!
//! # Attention arithmetic
//!
//! For a query `x` and neighbors `n_1..n_m` (in the order given):
//!
//! 1. `q = x W_q`, `k_i = n_i W_k`, `v_i = n_i W_v`;
//! 2. `l_i = (q . k_i) / sqrt(d)`, dot products accumulated in ascending index;
//! 3. `e_i = exp(l_i - max_j l_j)`, `Z = sum_i e_i` (ascending), `w_i = e_i / Z`;
//! 4. `ctx = sum_i w_i v_i` (ascending `i`), output `ctx W_o`.
//!
//! An empty neighbor set yields the zero vector. Cross-modal neighbors are
//! visited in ascending source coordinate: `(view, row, col)` for pixels,
//! `(row, col)` for cells. The gathered paths project every source location
//! once and reuse the result; the arithmetic is the same as calling
//! [`local_attention`] per location, so both agree bit-for-bit.

use rayon::prelude::*;

use crate::correspondence::{BevSources, PixelCoord, PixelSources};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::geometry::BevCoord;
use crate::nn::{visit_child, Ffn, LayerNorm, Matrix, ParamVisitor, Parameterized};
use crate::rng::DetRng;

/// Single-head projections: `W_q, W_k, W_v` are `C x d`, `W_o` is `d x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

impl AttentionParams {
    pub fn random(channels: usize, dim: usize, rng: &mut DetRng) -> Self {
        Self {
            w_q: Matrix::random(channels, dim, rng),
            w_k: Matrix::random(channels, dim, rng),
            w_v: Matrix::random(channels, dim, rng),
            w_o: Matrix::random(dim, channels, rng),
        }
    }

    /// All four projections the identity (`d = C`).
    pub fn identity(channels: usize) -> Self {
        Self {
            w_q: Matrix::identity(channels),
            w_k: Matrix::identity(channels),
            w_v: Matrix::identity(channels),
            w_o: Matrix::identity(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.w_q.rows
    }

    pub fn dim(&self) -> usize {
        self.w_q.cols
    }

    pub fn validate(&self) -> Result<()> {
        let (c, d) = (self.channels(), self.dim());
        let ok = d >= 1
            && (self.w_k.rows, self.w_k.cols) == (c, d)
            && (self.w_v.rows, self.w_v.cols) == (c, d)
            && (self.w_o.rows, self.w_o.cols) == (d, c);
        if !ok {
            return Err(Error::config("attention projections have inconsistent shapes"));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        (self.dim() as f64).sqrt()
    }
}

impl Parameterized for AttentionParams {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        visit_child(&mut self.w_q, prefix, "w_q", f);
        visit_child(&mut self.w_k, prefix, "w_k", f);
        visit_child(&mut self.w_v, prefix, "w_v", f);
        visit_child(&mut self.w_o, prefix, "w_o", f);
    }
}

/// Numerically stable softmax.
pub fn attention_weights(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Attend with an already projected query over projected keys/values.
fn attend_projected<'a>(
    q: &[f64],
    kv: impl Iterator<Item = (&'a [f64], &'a [f64])> + Clone,
    params: &AttentionParams,
    out: &mut [f64],
) {
    let scale = params.scale();
    let logits: Vec<f64> = kv.clone().map(|(k, _)| dot(q, k) / scale).collect();
    if logits.is_empty() {
        out.fill(0.0);
        return;
    }
    let w = attention_weights(&logits);
    let mut ctx = vec![0.0; params.dim()];
    for (wi, (_, v)) in w.iter().zip(kv) {
        for (c, vj) in ctx.iter_mut().zip(v) {
            *c += wi * vj;
        }
    }
    params.w_o.apply_into(&ctx, out);
}

/// Local attention of one query over an explicit neighbor list.
pub fn local_attention(query: &[f64], neighbors: &[&[f64]], params: &AttentionParams) -> Result<Vec<f64>> {
    params.validate()?;
    let c = params.channels();
    if query.len() != c || neighbors.iter().any(|n| n.len() != c) {
        return Err(Error::config(format!("attention expects {c}-channel features")));
    }
    let q = params.w_q.apply(query);
    let keys: Vec<Vec<f64>> = neighbors.iter().map(|n| params.w_k.apply(n)).collect();
    let values: Vec<Vec<f64>> = neighbors.iter().map(|n| params.w_v.apply(n)).collect();
    let mut out = vec![0.0; c];
    attend_projected(
        &q,
        keys.iter().map(Vec::as_slice).zip(values.iter().map(Vec::as_slice)),
        params,
        &mut out,
    );
    Ok(out)
}

/// Keys and values for every location of a map (`d` channels each).
struct ProjectedMap {
    keys: FeatureMap,
    values: FeatureMap,
}

fn project(map: &FeatureMap, params: &AttentionParams) -> ProjectedMap {
    let d = params.dim();
    let (h, w, c) = map.shape();
    let mut keys = FeatureMap::zeros(h, w, d);
    let mut values = FeatureMap::zeros(h, w, d);
    keys.data_mut()
        .par_chunks_mut(d)
        .zip(values.data_mut().par_chunks_mut(d))
        .zip(map.data().par_chunks(c))
        .for_each(|((k, v), x)| {
            params.w_k.apply_into(x, k);
            params.w_v.apply_into(x, v);
        });
    ProjectedMap { keys, values }
}

fn check_channels(params: &AttentionParams, maps: &[&FeatureMap]) -> Result<()> {
    params.validate()?;
    for m in maps {
        if m.channels() != params.channels() {
            return Err(Error::config(format!(
                "feature map has {} channels, attention expects {}",
                m.channels(),
                params.channels()
            )));
        }
    }
    Ok(())
}

/// Image-to-BEV interaction: output has the shape of `h_p`.
pub fn mmri_image_to_lidar(
    h_c: &[FeatureMap],
    h_p: &FeatureMap,
    sources: &BevSources,
    params: &AttentionParams,
) -> Result<FeatureMap> {
    let all: Vec<&FeatureMap> = h_c.iter().chain(std::iter::once(h_p)).collect();
    check_channels(params, &all)?;
    if (sources.rows, sources.cols) != (h_p.height(), h_p.width()) {
        return Err(Error::config("BEV correspondence does not match the BEV feature map"));
    }
    let projected: Vec<ProjectedMap> = h_c.iter().map(|m| project(m, params)).collect();
    let (h, w, c) = h_p.shape();
    let mut out = FeatureMap::zeros(h, w, c);
    let bad = std::sync::atomic::AtomicBool::new(false);
    out.data_mut().par_chunks_mut(c).enumerate().for_each(|(key, slot)| {
        let cell = BevCoord::new(key / w, key % w);
        let srcs = sources.get(cell);
        if srcs.iter().any(|p| p.view >= projected.len() || p.row >= projected[p.view].keys.height() || p.col >= projected[p.view].keys.width()) {
            bad.store(true, std::sync::atomic::Ordering::Relaxed);
            return;
        }
        let q = params.w_q.apply(h_p.at(cell.row, cell.col));
        let kv = srcs.iter().map(|p: &PixelCoord| {
            let pm = &projected[p.view];
            (pm.keys.at(p.row, p.col), pm.values.at(p.row, p.col))
        });
        attend_projected(&q, kv, params, slot);
    });
    if bad.into_inner() {
        return Err(Error::config("correspondence references a pixel outside the image features"));
    }
    Ok(out)
}

/// BEV-to-image interaction: one output per view, shaped like `h_c`.
pub fn mmri_lidar_to_image(
    h_p: &FeatureMap,
    h_c: &[FeatureMap],
    sources: &PixelSources,
    params: &AttentionParams,
) -> Result<Vec<FeatureMap>> {
    let all: Vec<&FeatureMap> = h_c.iter().chain(std::iter::once(h_p)).collect();
    check_channels(params, &all)?;
    if sources.layout.num_views() != h_c.len()
        || h_c
            .iter()
            .enumerate()
            .any(|(v, m)| sources.layout.size(v) != (m.height(), m.width()))
    {
        return Err(Error::config("pixel correspondence does not match the image feature maps"));
    }
    let pm = project(h_p, params);
    let mut outs = Vec::with_capacity(h_c.len());
    for (view, img) in h_c.iter().enumerate() {
        let (h, w, c) = img.shape();
        let mut out = FeatureMap::zeros(h, w, c);
        let bad = std::sync::atomic::AtomicBool::new(false);
        out.data_mut().par_chunks_mut(c).enumerate().for_each(|(key, slot)| {
            let (row, col) = (key / w, key % w);
            let srcs = sources.get(PixelCoord::new(view, row, col));
            if srcs.iter().any(|b| b.row >= pm.keys.height() || b.col >= pm.keys.width()) {
                bad.store(true, std::sync::atomic::Ordering::Relaxed);
                return;
            }
            let q = params.w_q.apply(img.at(row, col));
            let kv = srcs.iter().map(|b| (pm.keys.at(b.row, b.col), pm.values.at(b.row, b.col)));
            attend_projected(&q, kv, params, slot);
        });
        if bad.into_inner() {
            return Err(Error::config("correspondence references a cell outside the BEV features"));
        }
        outs.push(out);
    }
    Ok(outs)
}

/// Rows/cols of the clipped `window x window` neighborhood around `(r, c)`.
pub fn window_bounds(r: usize, c: usize, h: usize, w: usize, window: usize) -> (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>) {
    let half = window / 2;
    (
        r.saturating_sub(half)..=(r + half).min(h - 1),
        c.saturating_sub(half)..=(c + half).min(w - 1),
    )
}

/// Intra-modal window attention; `window` must be odd.
pub fn iml(h: &FeatureMap, params: &AttentionParams, window: usize) -> Result<FeatureMap> {
    if window.is_multiple_of(2) {
        return Err(Error::config(format!("intra-modal window must be odd, got {window}")));
    }
    check_channels(params, &[h])?;
    let pm = project(h, params);
    let (hh, ww, c) = h.shape();
    let mut out = FeatureMap::zeros(hh, ww, c);
    out.data_mut().par_chunks_mut(c).enumerate().for_each(|(key, slot)| {
        let (r, col) = (key / ww, key % ww);
        let (rows, cols) = window_bounds(r, col, hh, ww, window);
        let q = params.w_q.apply(h.at(r, col));
        let kv = rows.flat_map(|rr| cols.clone().map(move |cc| (rr, cc))).map(|(rr, cc)| (pm.keys.at(rr, cc), pm.values.at(rr, cc)));
        attend_projected(&q, kv, params, slot);
    });
    Ok(out)
}

/// The two feed-forward networks of the integration step, both `2C -> C`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationParams {
    /// Applied to `Concat(h_intra, h_cross)`.
    pub inner: Ffn,
    /// Applied to `Concat(inner_out, h)`.
    pub outer: Ffn,
}

impl IntegrationParams {
    pub fn random(channels: usize, hidden: usize, rng: &mut DetRng) -> Self {
        Self {
            inner: Ffn::random(2 * channels, hidden, channels, rng),
            outer: Ffn::random(2 * channels, hidden, channels, rng),
        }
    }
}

impl Parameterized for IntegrationParams {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        visit_child(&mut self.inner, prefix, "inner", f);
        visit_child(&mut self.outer, prefix, "outer", f);
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// `h' = outer(Concat(inner(Concat(h_intra, h_cross)), h))`, per location.
pub fn integrate(h: &FeatureMap, intra: &FeatureMap, cross: &FeatureMap, params: &IntegrationParams) -> Result<FeatureMap> {
    if h.shape() != intra.shape() || h.shape() != cross.shape() {
        return Err(Error::config(format!(
            "integration inputs differ in shape: {:?}, {:?}, {:?}",
            h.shape(),
            intra.shape(),
            cross.shape()
        )));
    }
    let c = h.channels();
    if params.inner.input_dim() != 2 * c
        || params.inner.output_dim() != c
        || params.outer.input_dim() != 2 * c
        || params.outer.output_dim() != c
    {
        return Err(Error::config("integration FFNs must map 2C -> C"));
    }
    let mut out = FeatureMap::zeros(h.height(), h.width(), c);
    out.data_mut()
        .par_chunks_mut(c)
        .zip(h.data().par_chunks(c))
        .zip(intra.data().par_chunks(c).zip(cross.data().par_chunks(c)))
        .for_each(|((slot, x), (a, b))| {
            let inner = params.inner.forward(&concat(a, b));
            slot.copy_from_slice(&params.outer.forward(&concat(&inner, x)));
        });
    Ok(out)
}

/// Encoder hyper-parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Stacked interaction layers (2 in the base configuration).
    pub num_layers: usize,
    /// Image-side correspondence window radius; windows are `(2k+1)^2`.
    pub k_corr: usize,
    /// Odd intra-modal window side.
    pub k_iml: usize,
    /// Feature channels `C`, shared by both modalities and the decoder.
    pub channels: usize,
    /// Attention key/query width `d`.
    pub attn_dim: usize,
    /// Hidden width of the integration FFNs.
    pub ffn_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            k_corr: 2,
            k_iml: 3,
            channels: 16,
            attn_dim: 16,
            ffn_hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_iml.is_multiple_of(2) {
            return Err(Error::config("k_iml must be odd"));
        }
        if self.channels == 0 || self.attn_dim == 0 || self.ffn_hidden == 0 {
            return Err(Error::config("encoder widths must be positive"));
        }
        Ok(())
    }
}

/// Parameters of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub image_to_lidar: AttentionParams,
    pub lidar_to_image: AttentionParams,
    pub image_intra: AttentionParams,
    pub lidar_intra: AttentionParams,
    pub lidar_integrate: IntegrationParams,
    pub image_integrate: IntegrationParams,
    pub lidar_norm: LayerNorm,
    pub image_norm: LayerNorm,
}

impl EncoderLayerParams {
    pub fn random(cfg: &EncoderConfig, rng: &mut DetRng) -> Self {
        let (c, d, hid) = (cfg.channels, cfg.attn_dim, cfg.ffn_hidden);
        Self {
            image_to_lidar: AttentionParams::random(c, d, rng),
            lidar_to_image: AttentionParams::random(c, d, rng),
            image_intra: AttentionParams::random(c, d, rng),
            lidar_intra: AttentionParams::random(c, d, rng),
            lidar_integrate: IntegrationParams::random(c, hid, rng),
            image_integrate: IntegrationParams::random(c, hid, rng),
            lidar_norm: LayerNorm::new(c),
            image_norm: LayerNorm::new(c),
        }
    }
}

impl Parameterized for EncoderLayerParams {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        visit_child(&mut self.image_to_lidar, prefix, "image_to_lidar", f);
        visit_child(&mut self.lidar_to_image, prefix, "lidar_to_image", f);
        visit_child(&mut self.image_intra, prefix, "image_intra", f);
        visit_child(&mut self.lidar_intra, prefix, "lidar_intra", f);
        visit_child(&mut self.lidar_integrate, prefix, "lidar_integrate", f);
        visit_child(&mut self.image_integrate, prefix, "image_integrate", f);
        visit_child(&mut self.lidar_norm, prefix, "lidar_norm", f);
        visit_child(&mut self.image_norm, prefix, "image_norm", f);
    }
}

/// Static per-scene correspondence, computed once and shared by all layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGeometry {
    /// Image pixels gathered by each BEV cell.
    pub bev_sources: BevSources,
    /// BEV cells gathered by each pixel.
    pub pixel_sources: PixelSources,
}

fn normalized(mut m: FeatureMap, norm: &LayerNorm) -> FeatureMap {
    let c = m.channels();
    m.data_mut().par_chunks_mut(c).for_each(|x| norm.apply(x));
    m
}

/// One encoder layer; both modalities update from the layer's inputs.
pub fn encoder_layer(
    h_p: &FeatureMap,
    h_c: &[FeatureMap],
    geom: &EncoderGeometry,
    k_iml: usize,
    params: &EncoderLayerParams,
) -> Result<(FeatureMap, Vec<FeatureMap>)> {
    let cross_p = mmri_image_to_lidar(h_c, h_p, &geom.bev_sources, &params.image_to_lidar)?;
    let cross_c = mmri_lidar_to_image(h_p, h_c, &geom.pixel_sources, &params.lidar_to_image)?;
    let intra_p = iml(h_p, &params.lidar_intra, k_iml)?;
    let new_p = normalized(integrate(h_p, &intra_p, &cross_p, &params.lidar_integrate)?, &params.lidar_norm);
    let mut new_c = Vec::with_capacity(h_c.len());
    for (img, cross) in h_c.iter().zip(&cross_c) {
        let intra = iml(img, &params.image_intra, k_iml)?;
        new_c.push(normalized(integrate(img, &intra, cross, &params.image_integrate)?, &params.image_norm));
    }
    Ok((new_p, new_c))
}

/// Run `layers.len()` encoder layers (zero layers is the identity).
pub fn encoder_forward(
    h_p: &FeatureMap,
    h_c: &[FeatureMap],
    geom: &EncoderGeometry,
    config: &EncoderConfig,
    layers: &[EncoderLayerParams],
) -> Result<(FeatureMap, Vec<FeatureMap>)> {
    config.validate()?;
    if layers.len() != config.num_layers {
        return Err(Error::config(format!(
            "{} encoder layer parameter sets for num_layers = {}",
            layers.len(),
            config.num_layers
        )));
    }
    let mut p = h_p.clone();
    let mut c = h_c.to_vec();
    for layer in layers {
        let (np, nc) = encoder_layer(&p, &c, geom, config.k_iml, layer)?;
        p = np;
        c = nc;
    }
    Ok((p, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_identity_returns_neighbor() {
        let p = AttentionParams::identity(3);
        let n = [0.5, -1.0, 2.0];
        let out = local_attention(&[9.0, 9.0, 9.0], &[&n], &p).unwrap();
        assert_eq!(out, n.to_vec());
    }

    #[test]
    fn identical_keys_average_values() {
        let mut p = AttentionParams::identity(2);
        p.w_k = Matrix::zeros(2, 2);
        let a = [1.0, 0.0];
        let b = [0.0, 3.0];
        let c = [2.0, 3.0];
        let out = local_attention(&[1.0, 1.0], &[&a, &b, &c], &p).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_neighbors_give_zero() {
        let p = AttentionParams::identity(2);
        assert_eq!(local_attention(&[1.0, 2.0], &[], &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let p = AttentionParams::identity(2);
        assert!(matches!(local_attention(&[1.0], &[], &p), Err(Error::Config(_))));
        let mut bad = AttentionParams::identity(2);
        bad.w_o = Matrix::zeros(3, 2);
        assert!(local_attention(&[1.0, 2.0], &[], &bad).is_err());
    }

    #[test]
    fn iml_rejects_even_window() {
        let p = AttentionParams::identity(1);
        assert!(iml(&FeatureMap::zeros(2, 2, 1), &p, 2).is_err());
    }

    #[test]
    fn iml_window_one_is_value_projection() {
        let mut rng = DetRng::new(2);
        let mut p = AttentionParams::random(2, 3, &mut rng);
        p.w_o = Matrix::random(3, 2, &mut rng);
        let h = FeatureMap::from_vec(2, 2, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 2.0, 2.0]).unwrap();
        let out = iml(&h, &p, 1).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let v = p.w_v.apply(h.at(r, c));
                assert_eq!(out.at(r, c), p.w_o.apply(&v).as_slice());
            }
        }
    }

    #[test]
    fn iml_constant_map_is_constant() {
        let mut rng = DetRng::new(3);
        let p = AttentionParams::random(3, 4, &mut rng);
        let h = FeatureMap::filled(5, 6, 3, 0.7);
        let out = iml(&h, &p, 3).unwrap();
        let first = out.at(0, 0).to_vec();
        for r in 0..5 {
            for c in 0..6 {
                for (a, b) in out.at(r, c).iter().zip(&first) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn integrate_rejects_shape_mismatch() {
        let mut rng = DetRng::new(0);
        let p = IntegrationParams::random(2, 4, &mut rng);
        let a = FeatureMap::zeros(2, 2, 2);
        let b = FeatureMap::zeros(2, 3, 2);
        assert!(matches!(integrate(&a, &a, &b, &p), Err(Error::Config(_))));
    }

    #[test]
    fn integrate_zero_in_zero_out() {
        let mut p = IntegrationParams::random(2, 4, &mut DetRng::new(9));
        for f in [&mut p.inner, &mut p.outer] {
            f.hidden.bias.fill(0.0);
            f.output.bias.fill(0.0);
        }
        let z = FeatureMap::zeros(3, 3, 2);
        assert_eq!(integrate(&z, &z, &z, &p).unwrap(), z);
    }
}

//! Brute-force reference implementations checked against the fast paths.
//!
//! Each check recomputes a stage with plain loops over its definition and
//! compares the result exactly (sets) or bit-for-bit (features). The suite is
//! only meant for small scenes; [`run_oracle_suite`] refuses larger inputs.

use serde::Serialize;

use crate::correspondence::PixelCoord;
use crate::decoder::{decoder_forward, dynamic_interaction, init_queries, predict, query_roi, DecoderOutput, Modality, Query};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::geometry::{back_project, bev_index, world_to_image, BevCoord};
use crate::interaction::{local_attention, window_bounds, AttentionParams};
use crate::model::Model;
use crate::pipeline::{build_model, encode_scene, load_or_generate_scene, prepare_scene, Encoded, PipelineConfig, PreparedScene};

/// Largest raw BEV raster the suite accepts.
pub const MAX_ORACLE_CELLS: usize = 64 * 64;
/// Largest point cloud the suite accepts.
pub const MAX_ORACLE_POINTS: usize = 5000;
/// Projection round-trip tolerance in meters.
pub const ROUND_TRIP_TOL: f64 = 1e-6;

/// Fault injection for exercising the checks.
#[derive(Debug, Clone, Default)]
pub struct OracleHooks {
    /// Replace the cell-to-pixel set of this cell after it is built.
    pub corrupt_bev_to_img: Option<(BevCoord, Vec<PixelCoord>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    /// Number of elements (points, sets, locations, queries) compared.
    pub compared: usize,
    /// First mismatch, when there is one.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
    pub notes: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &OracleCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, compared: usize, mismatch: Option<String>) {
        self.checks.push(OracleCheck {
            name: name.to_string(),
            passed: mismatch.is_none(),
            compared,
            detail: mismatch,
        });
    }
}

/// Load the configured scene and run every check on it.
pub fn run_oracle_suite(config: &PipelineConfig) -> Result<OracleReport> {
    run_oracle_suite_with(config, &OracleHooks::default())
}

pub fn run_oracle_suite_with(config: &PipelineConfig, hooks: &OracleHooks) -> Result<OracleReport> {
    config.validate()?;
    let scene = load_or_generate_scene(config).map_err(|e| e.in_stage("scene"))?;
    let cells = config.grid.num_cells();
    let points = scene.cloud.len();
    if cells > MAX_ORACLE_CELLS || points > MAX_ORACLE_POINTS {
        return Err(Error::config(format!(
            "oracle suite limited to {MAX_ORACLE_CELLS} cells and {MAX_ORACLE_POINTS} points; \
             this input has {} x {} = {cells} cells and {points} points",
            config.grid.rows(),
            config.grid.cols()
        )));
    }
    let model = build_model(config).map_err(|e| e.in_stage("model"))?;
    let prepared = prepare_scene(scene, &config.grid, config.encoder.k_corr, hooks)?;
    let mut report = run_checks(config, &model, &prepared, None);
    if points == 0 {
        report.notes.insert(0, "empty point cloud: geometry and correspondence checks pass vacuously".into());
    }
    Ok(report)
}

/// Run all checks on a prepared scene. `computed` supplies the encoder,
/// query and decoder results of a forward run to check; without it they are
/// computed here.
pub fn run_checks(
    config: &PipelineConfig,
    model: &Model,
    prepared: &PreparedScene,
    computed: Option<(&Encoded, &[Query], &DecoderOutput)>,
) -> OracleReport {
    let mut report = OracleReport::default();
    check_projection(prepared, &mut report);
    check_pillars(prepared, &mut report);
    check_img_to_bev(prepared, config.encoder.k_corr, &mut report);
    check_bev_to_img(prepared, &mut report);

    let owned;
    let (enc, queries, dec) = match computed {
        Some(c) => c,
        None => match forward_rest(config, model, prepared) {
            Ok(v) => {
                owned = v;
                (&owned.0, &owned.1[..], &owned.2)
            }
            Err(e) => {
                report.push("forward pass", 0, Some(e.to_string()));
                return report;
            }
        },
    };
    if let Some(layer) = model.encoder.first() {
        check_attention(prepared, enc, layer.image_to_lidar.clone(), layer.lidar_to_image.clone(), &mut report);
        check_iml(enc, &layer.lidar_intra, &layer.image_intra, config.encoder.k_iml, &mut report);
    } else {
        report.notes.push("no encoder layers: attention checks skipped".into());
    }
    check_decoder(config, model, prepared, enc, queries, dec, &mut report);
    report
}

fn forward_rest(config: &PipelineConfig, model: &Model, prepared: &PreparedScene) -> Result<(Encoded, Vec<Query>, DecoderOutput)> {
    let enc = encode_scene(model, prepared, config)?;
    let queries = init_queries(&enc.h_p_out, &prepared.feature_grid, config.decoder.num_queries, &model.heatmap)?;
    let dec = decoder_forward(
        &queries,
        &enc.h_p_out,
        &enc.h_c_out,
        &prepared.feature_rig,
        &prepared.feature_grid,
        &config.decoder,
        &model.decoder,
    )?;
    Ok((enc, queries, dec))
}

fn check_projection(prepared: &PreparedScene, report: &mut OracleReport) {
    let mut compared = 0;
    let mut mismatch = None;
    'outer: for (i, p) in prepared.scene.cloud.points.iter().enumerate() {
        for (v, view) in prepared.scene.rig.views.iter().enumerate() {
            let Some(ip) = world_to_image(*p, view) else { continue };
            if !view.contains_pixel(ip.u, ip.v) {
                continue;
            }
            compared += 1;
            let err = match back_project(ip.u, ip.v, ip.depth, view) {
                Ok(q) => ((q.x - p.x).powi(2) + (q.y - p.y).powi(2) + (q.z - p.z).powi(2)).sqrt(),
                Err(e) => {
                    mismatch = Some(format!("point {i} view {v}: {e}"));
                    break 'outer;
                }
            };
            if err >= ROUND_TRIP_TOL {
                mismatch = Some(format!("point {i} view {v}: round-trip error {err:e} m"));
                break 'outer;
            }
        }
    }
    report.push("projection round trip", compared, mismatch);
}

fn check_pillars(prepared: &PreparedScene, report: &mut OracleReport) {
    let grid = &prepared.feature_grid;
    let points = &prepared.scene.cloud.points;
    let pillars = &prepared.pillars;
    let mut mismatch = None;
    let mut total = 0;
    'cells: for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let cell = BevCoord::new(row, col);
            let mut expect = Vec::new();
            for (i, p) in points.iter().enumerate() {
                if bev_index(p.x, p.y, grid) == Some(cell) {
                    expect.push(i as u32);
                }
            }
            total += expect.len();
            let got = pillars.points_in(cell);
            if got != expect.as_slice() {
                mismatch = Some(format!("cell ({row}, {col}): index {got:?}, scan {expect:?}"));
                break 'cells;
            }
        }
    }
    if mismatch.is_none() && pillars.len() != total {
        mismatch = Some(format!("index holds {} points, scan found {total}", pillars.len()));
    }
    report.push("pillar partition", grid.num_cells(), mismatch);
}

fn check_img_to_bev(prepared: &PreparedScene, k: usize, report: &mut OracleReport) {
    let rig = &prepared.feature_rig;
    let map = &prepared.img_to_bev;
    let mut compared = 0;
    let mut mismatch = None;
    'views: for (v, view) in rig.views.iter().enumerate() {
        let depth = prepared.dense_depths[v].as_ref();
        for row in 0..view.height {
            for col in 0..view.width {
                let mut expect = Vec::new();
                if let Some(d) = depth {
                    for r in row.saturating_sub(k)..=(row + k).min(view.height - 1) {
                        for c in col.saturating_sub(k)..=(col + k).min(view.width - 1) {
                            let u = c as f64 + 0.5;
                            let vv = r as f64 + 0.5;
                            let Some(z) = d.get(r, c) else { continue };
                            let Ok(p) = back_project(u, vv, z, view) else { continue };
                            if let Some(cell) = bev_index(p.x, p.y, &prepared.feature_grid) {
                                if !expect.contains(&cell) {
                                    expect.push(cell);
                                }
                            }
                        }
                    }
                }
                expect.sort();
                compared += 1;
                let got = map.get(PixelCoord::new(v, row, col));
                if got != expect.as_slice() {
                    mismatch = Some(format!("pixel ({v}, {row}, {col}): map {got:?}, reference {expect:?}"));
                    break 'views;
                }
            }
        }
    }
    report.push("image-to-BEV correspondence", compared, mismatch);
}

fn check_bev_to_img(prepared: &PreparedScene, report: &mut OracleReport) {
    let grid = &prepared.feature_grid;
    let rig = &prepared.feature_rig;
    let points = &prepared.scene.cloud.points;
    let cell_of: Vec<Option<BevCoord>> = points.iter().map(|p| bev_index(p.x, p.y, grid)).collect();
    let mut mismatch = None;
    'cells: for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let cell = BevCoord::new(row, col);
            let mut expect = Vec::new();
            for (p, c) in points.iter().zip(&cell_of) {
                if *c != Some(cell) {
                    continue;
                }
                for (v, view) in rig.views.iter().enumerate() {
                    let Some(ip) = world_to_image(*p, view) else { continue };
                    if ip.u >= 0.0 && ip.v >= 0.0 && ip.u < view.width as f64 && ip.v < view.height as f64 {
                        let px = PixelCoord::new(v, ip.v.floor() as usize, ip.u.floor() as usize);
                        if !expect.contains(&px) {
                            expect.push(px);
                        }
                    }
                }
            }
            expect.sort();
            let got = prepared.bev_to_img.get(cell);
            if got != expect.as_slice() {
                mismatch = Some(format!("cell ({row}, {col}): map {got:?}, reference {expect:?}"));
                break 'cells;
            }
        }
    }
    report.push("BEV-to-image correspondence", grid.num_cells(), mismatch);
}

/// First position where two maps differ in any bit.
fn first_difference(a: &FeatureMap, b: &FeatureMap) -> Option<String> {
    if a.shape() != b.shape() {
        return Some(format!("shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    let c = a.channels();
    a.data()
        .iter()
        .zip(b.data())
        .position(|(x, y)| x.to_bits() != y.to_bits())
        .map(|i| {
            let loc = i / c;
            format!(
                "location ({}, {}) channel {}: {} vs {}",
                loc / a.width(),
                loc % a.width(),
                i % c,
                a.data()[i],
                b.data()[i]
            )
        })
}

fn check_attention(
    prepared: &PreparedScene,
    enc: &Encoded,
    to_lidar: AttentionParams,
    to_image: AttentionParams,
    report: &mut OracleReport,
) {
    let (h_p, h_c) = (&enc.h_p, &enc.h_c);
    let fast_p = crate::interaction::mmri_image_to_lidar(h_c, h_p, &prepared.geometry.bev_sources, &to_lidar);
    let fast_c = crate::interaction::mmri_lidar_to_image(h_p, h_c, &prepared.geometry.pixel_sources, &to_image);

    // Image to BEV: each cell scans every pixel's correspondence set.
    let (rows, cols, ch) = h_p.shape();
    let mut slow_p = FeatureMap::zeros(rows, cols, ch);
    let pixels: Vec<PixelCoord> = prepared.img_to_bev.layout.iter().collect();
    let mut err = None;
    for row in 0..rows {
        for col in 0..cols {
            let cell = BevCoord::new(row, col);
            let neighbors: Vec<&[f64]> = pixels
                .iter()
                .filter(|p| prepared.img_to_bev.get(**p).contains(&cell))
                .map(|p| h_c[p.view].at(p.row, p.col))
                .collect();
            match local_attention(h_p.at(row, col), &neighbors, &to_lidar) {
                Ok(v) => slow_p.at_mut(row, col).copy_from_slice(&v),
                Err(e) => err = Some(e.to_string()),
            }
        }
    }
    let mismatch = match (&fast_p, err) {
        (Err(e), _) => Some(format!("fast path failed: {e}")),
        (_, Some(e)) => Some(format!("reference failed: {e}")),
        (Ok(f), None) => first_difference(f, &slow_p),
    };
    report.push("image-to-BEV attention", rows * cols, mismatch);

    // BEV to image: each pixel scans every cell's correspondence set.
    let mut mismatch = fast_c.as_ref().err().map(|e| format!("fast path failed: {e}"));
    let mut compared = 0;
    if let Ok(fast_c) = &fast_c {
        'views: for (v, img) in h_c.iter().enumerate() {
            let (h, w, c) = img.shape();
            let mut slow = FeatureMap::zeros(h, w, c);
            for row in 0..h {
                for col in 0..w {
                    let px = PixelCoord::new(v, row, col);
                    let mut neighbors: Vec<&[f64]> = Vec::new();
                    for r in 0..rows {
                        for cc in 0..cols {
                            if prepared.bev_to_img.get(BevCoord::new(r, cc)).contains(&px) {
                                neighbors.push(h_p.at(r, cc));
                            }
                        }
                    }
                    match local_attention(img.at(row, col), &neighbors, &to_image) {
                        Ok(o) => slow.at_mut(row, col).copy_from_slice(&o),
                        Err(e) => {
                            mismatch = Some(format!("reference failed: {e}"));
                            break 'views;
                        }
                    }
                    compared += 1;
                }
            }
            if let Some(d) = first_difference(&fast_c[v], &slow) {
                mismatch = Some(format!("view {v} {d}"));
                break;
            }
        }
    }
    report.push("BEV-to-image attention", compared, mismatch);
}

fn iml_reference(h: &FeatureMap, params: &AttentionParams, window: usize) -> Result<FeatureMap> {
    let (rows, cols, c) = h.shape();
    let mut out = FeatureMap::zeros(rows, cols, c);
    for r in 0..rows {
        for col in 0..cols {
            let (rr, cc) = window_bounds(r, col, rows, cols, window);
            let mut neighbors = Vec::new();
            for a in rr {
                for b in cc.clone() {
                    neighbors.push(h.at(a, b));
                }
            }
            out.at_mut(r, col).copy_from_slice(&local_attention(h.at(r, col), &neighbors, params)?);
        }
    }
    Ok(out)
}

fn check_iml(enc: &Encoded, lidar: &AttentionParams, image: &AttentionParams, window: usize, report: &mut OracleReport) {
    let mut compared = 0;
    let mut mismatch = None;
    let maps = std::iter::once((&enc.h_p, lidar, "BEV".to_string()))
        .chain(enc.h_c.iter().enumerate().map(|(v, m)| (m, image, format!("view {v}"))));
    for (m, p, label) in maps {
        compared += m.height() * m.width();
        let d = match (crate::interaction::iml(m, p, window), iml_reference(m, p, window)) {
            (Ok(f), Ok(s)) => first_difference(&f, &s),
            (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        };
        if let Some(d) = d {
            mismatch = Some(format!("{label} {d}"));
            break;
        }
    }
    report.push("intra-modal window attention", compared, mismatch);
}

#[allow(clippy::too_many_arguments)]
fn check_decoder(
    config: &PipelineConfig,
    model: &Model,
    prepared: &PreparedScene,
    enc: &Encoded,
    queries: &[Query],
    dec: &DecoderOutput,
    report: &mut OracleReport,
) {
    let mut current = queries.to_vec();
    let mut mismatch = None;
    let mut compared = 0;
    'layers: for (i, params) in model.decoder.iter().enumerate() {
        let layer = i + 1;
        let modality = if layer % 2 == 1 { Modality::Image } else { Modality::Bev };
        let Some(out) = dec.layers.get(i) else {
            mismatch = Some(format!("decoder produced {} layers, expected {}", dec.layers.len(), model.decoder.len()));
            break;
        };
        if out.modality != modality {
            mismatch = Some(format!("layer {layer} used {:?}", out.modality));
            break;
        }
        for (qi, q) in current.iter_mut().enumerate() {
            let (src, roi) = query_roi(
                &q.bbox,
                modality,
                &enc.h_p_out,
                &enc.h_c_out,
                &prepared.feature_rig,
                &prepared.feature_grid,
                &config.decoder,
            );
            let det = dynamic_interaction(q, &roi, params).and_then(|e| {
                q.embedding = e;
                predict(q, params)
            });
            let det = match det {
                Ok(d) => d,
                Err(e) => {
                    mismatch = Some(format!("layer {layer} query {qi}: {e}"));
                    break 'layers;
                }
            };
            q.bbox = det.bbox;
            compared += 1;
            if out.rois.get(qi) != Some(&src) || out.detections.get(qi) != Some(&det) {
                mismatch = Some(format!("layer {layer} query {qi}: decoder output differs from step-by-step composition"));
                break 'layers;
            }
        }
    }
    if mismatch.is_none() && current != dec.queries {
        mismatch = Some("final queries differ".into());
    }
    report.push("decoder composition", compared, mismatch);
}

//! End-to-end orchestration: configuration, forward runs, heatmap dumps and
//! the file artifacts they produce.
//!
//! Stage order: scene, geometry, correspondence, backbone, encoder, decoder.
//! Correspondence and features live at the stem's output resolution: the BEV
//! grid coarsened by [`STEM_STRIDE`] and every camera downsampled by it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{rasterize_bev, STEM_STRIDE};
use crate::camera::{validate_rig, CameraRig};
use crate::checkpoint;
use crate::correspondence::{
    build_bev_to_img, build_img_to_bev_partial, BevToImgMap, ImgToBevMap, SetStats,
};
use crate::decoder::{decoder_forward, init_queries, DecoderConfig, DecoderOutput, HeatmapHead, Modality};
use crate::error::{Error, Result};
use crate::feature::{normalize_to_u8, write_pgm, FeatureMap};
use crate::geometry::{bev_index, build_sparse_depth, complete_depth, pillarize, BevCoord, BevGrid, DepthMap, PillarIndex};
use crate::interaction::{encoder_forward, EncoderConfig, EncoderGeometry};
use crate::model::Model;
use crate::nn::Parameterized;
use crate::oracle::{run_checks, OracleHooks, OracleReport};
use crate::rng::DetRng;
use crate::scene::{generate_synthetic_scene, Scene, SceneSpec};

/// Random-search calibration of the heatmap head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Search steps; 0 keeps the initialized head.
    pub steps: usize,
    /// Single-object scenes generated for calibration (seeds follow the run seed).
    pub scenes: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { steps: 0, scenes: 16 }
    }
}

/// Full run configuration. Every field has a default, so a partial JSON
/// object is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Input BEV raster. Default: +-16 m at 0.5 m (64 x 64); features run at half that.
    pub grid: BevGrid,
    pub scene: SceneSpec,
    /// Load the scene from this JSON file instead of generating it.
    pub scene_path: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Cross-check fast paths against brute-force references during `forward`.
    pub oracle: bool,
    /// Load weights from a checkpoint instead of seeded initialization.
    pub params_path: Option<PathBuf>,
    pub calibration: CalibrationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: BevGrid {
                x_min: -16.0,
                x_max: 16.0,
                y_min: -16.0,
                y_max: 16.0,
                cell: 0.5,
            },
            scene: SceneSpec::default(),
            scene_path: None,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            oracle: false,
            params_path: None,
            calibration: CalibrationConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Base-model constants: +-54 m at 0.075 m, 6 cameras at 1600 x 900,
    /// 2 encoder layers, 5 decoder layers, 200 queries, 10 classes.
    pub fn production() -> Self {
        let mut c = Self {
            grid: BevGrid::full_scale(),
            ..Self::default()
        };
        c.scene.rig.num_views = 6;
        c.scene.rig.width = 1600;
        c.scene.rig.height = 900;
        c.scene.rig.focal = 1260.0;
        c.scene.num_classes = 10;
        c.scene.clutter_extent = 50.0;
        c.decoder.num_queries = 200;
        c.decoder.num_classes = 10;
        c
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn feature_grid(&self) -> BevGrid {
        self.grid.coarsened(STEM_STRIDE)
    }

    /// Reject shape-inconsistent configurations before any heavy work.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.scene_path.is_none() {
            self.scene.validate()?;
        }
        self.encoder.validate()?;
        self.decoder.validate()?;
        let cells = self.feature_grid().num_cells();
        if self.decoder.num_queries > cells {
            return Err(Error::config(format!(
                "{} queries exceed the {cells} feature cells",
                self.decoder.num_queries
            )));
        }
        Ok(())
    }
}

/// Scene plus all geometry derived from it at feature resolution.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: Scene,
    pub feature_grid: BevGrid,
    pub feature_rig: CameraRig,
    pub sparse_depths: Vec<DepthMap>,
    /// `None` for views that received no LiDAR return.
    pub dense_depths: Vec<Option<DepthMap>>,
    pub pillars: PillarIndex,
    pub img_to_bev: ImgToBevMap,
    pub bev_to_img: BevToImgMap,
    pub geometry: EncoderGeometry,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

pub fn load_or_generate_scene(config: &PipelineConfig) -> Result<Scene> {
    match &config.scene_path {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Scene::from_json(&s)
        }
        None => generate_synthetic_scene(&config.scene, config.seed),
    }
}

/// Geometry and correspondence for a scene.
pub fn prepare_scene(scene: Scene, grid: &BevGrid, k_corr: usize, hooks: &OracleHooks) -> Result<PreparedScene> {
    let violations = validate_rig(&scene.rig);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::config(msg.join("; ")).in_stage("geometry"));
    }
    if let Some(p) = scene.cloud.points.iter().find(|p| !p.is_finite()) {
        return Err(Error::Domain(format!("non-finite point {p:?}")).in_stage("geometry"));
    }
    let feature_grid = grid.coarsened(STEM_STRIDE);
    let feature_rig = scene.rig.downsampled(STEM_STRIDE);
    let sparse_depths: Vec<DepthMap> = feature_rig.views.iter().map(|v| build_sparse_depth(&scene.cloud, v)).collect();
    let dense_depths = sparse_depths
        .iter()
        .map(|d| if d.valid_count() == 0 { Ok(None) } else { complete_depth(d).map(Some) })
        .collect::<Result<Vec<_>>>();
    let dense_depths = staged("geometry", dense_depths)?;
    let pillars = pillarize(&scene.cloud, &feature_grid);

    let refs: Vec<Option<&DepthMap>> = dense_depths.iter().map(Option::as_ref).collect();
    let img_to_bev = staged("correspondence", build_img_to_bev_partial(&refs, &feature_rig, &feature_grid, k_corr))?;
    let mut bev_to_img = staged("correspondence", build_bev_to_img(&pillars, &scene.cloud, &feature_rig))?;
    if let Some((cell, set)) = &hooks.corrupt_bev_to_img {
        let key = cell.row * bev_to_img.cols + cell.col;
        bev_to_img.table = bev_to_img.table.with_replaced(key, set.clone());
    }
    let geometry = EncoderGeometry {
        bev_sources: img_to_bev.invert(),
        pixel_sources: bev_to_img.transpose(),
    };
    Ok(PreparedScene {
        scene,
        feature_grid,
        feature_rig,
        sparse_depths,
        dense_depths,
        pillars,
        img_to_bev,
        bev_to_img,
        geometry,
    })
}

/// Stem outputs for both modalities.
pub fn backbone_features(model: &Model, prepared: &PreparedScene, grid: &BevGrid) -> Result<(FeatureMap, Vec<FeatureMap>)> {
    let raster = rasterize_bev(&prepared.scene.cloud, grid);
    let h_p = model.bev_stem.forward(&raster)?;
    let h_c = prepared
        .scene
        .images
        .iter()
        .map(|img| model.image_stem.forward(img))
        .collect::<Result<Vec<_>>>()?;
    if (h_p.height(), h_p.width()) != (prepared.feature_grid.rows(), prepared.feature_grid.cols()) {
        return Err(Error::config("BEV stem output does not match the feature grid"));
    }
    for (m, v) in h_c.iter().zip(&prepared.feature_rig.views) {
        if (m.height(), m.width()) != (v.height, v.width) {
            return Err(Error::config("image stem output does not match its downsampled view"));
        }
    }
    Ok((h_p, h_c))
}

/// Encoder inputs and outputs for one scene.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub h_p: FeatureMap,
    pub h_c: Vec<FeatureMap>,
    pub h_p_out: FeatureMap,
    pub h_c_out: Vec<FeatureMap>,
}

pub fn encode_scene(model: &Model, prepared: &PreparedScene, config: &PipelineConfig) -> Result<Encoded> {
    let (h_p, h_c) = staged("backbone", backbone_features(model, prepared, &config.grid))?;
    let (h_p_out, h_c_out) = staged(
        "encoder",
        encoder_forward(&h_p, &h_c, &prepared.geometry, &config.encoder, &model.encoder),
    )?;
    Ok(Encoded {
        h_p,
        h_c,
        h_p_out,
        h_c_out,
    })
}

/// Model for a config: checkpoint if given, seeded init otherwise, then
/// heatmap calibration when enabled.
pub fn build_model(config: &PipelineConfig) -> Result<Model> {
    let mut model = Model::init(&config.encoder, &config.decoder, config.seed);
    if let Some(p) = &config.params_path {
        checkpoint::load_into(p, &mut model)?;
    }
    if config.calibration.steps > 0 {
        let samples = calibration_samples(&model, config, config.calibration.scenes, config.seed.wrapping_add(1))?;
        model.heatmap = calibrate_heatmap(&model.heatmap, &samples, config.calibration.steps, config.seed);
    }
    Ok(model)
}

/// Post-encoder BEV features and the ground-truth cell of the first object,
/// for `count` single-object scenes with consecutive seeds from `first_seed`.
pub fn calibration_samples(model: &Model, config: &PipelineConfig, count: usize, first_seed: u64) -> Result<Vec<(FeatureMap, BevCoord)>> {
    let spec = SceneSpec {
        num_objects: 1,
        ..config.scene.clone()
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let scene = generate_synthetic_scene(&spec, first_seed.wrapping_add(i))?;
        let c = scene.boxes[0].bbox.center;
        let prepared = prepare_scene(scene, &config.grid, config.encoder.k_corr, &OracleHooks::default())?;
        let Some(cell) = bev_index(c[0], c[1], &prepared.feature_grid) else {
            continue;
        };
        let enc = encode_scene(model, &prepared, config)?;
        out.push((enc.h_p_out, cell));
    }
    Ok(out)
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean log-probability (softmax over cells) of the 3x3 block around each
/// sample's target cell.
pub fn calibration_objective(head: &HeatmapHead, samples: &[(FeatureMap, BevCoord)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|(h, t)| {
            let logits = head.logits(h).expect("calibration features match head width");
            let (rows, cols) = (h.height(), h.width());
            let near = (t.row.saturating_sub(1)..=(t.row + 1).min(rows - 1))
                .flat_map(|r| (t.col.saturating_sub(1)..=(t.col + 1).min(cols - 1)).map(move |c| (r, c)))
                .map(|(r, c)| logits[r * cols + c]);
            log_sum_exp(near) - log_sum_exp(logits.iter().copied())
        })
        .sum();
    total / samples.len() as f64
}

/// `(1+1)` random search over the head's weights and bias: each step adds
/// Gaussian noise of scale `sigma` to every parameter and keeps the proposal
/// if the objective improves. `sigma` starts at 0.5, grows by 1.5 on success
/// and shrinks by 0.9 on failure.
pub fn calibrate_heatmap(head: &HeatmapHead, samples: &[(FeatureMap, BevCoord)], steps: usize, seed: u64) -> HeatmapHead {
    let mut rng = DetRng::derived(seed, 0x43_414C_4942); // "CALIB"
    let mut best = head.clone();
    let mut best_score = calibration_objective(&best, samples);
    let mut sigma = 0.5;
    for _ in 0..steps {
        let mut cand = best.clone();
        cand.visit_params("", &mut |_, _, v| {
            for x in v.iter_mut() {
                *x += sigma * rng.normal();
            }
        });
        let score = calibration_objective(&cand, samples);
        if score > best_score {
            best = cand;
            best_score = score;
            sigma *= 1.5;
        } else {
            sigma *= 0.9;
        }
    }
    best
}

/// Row-major argmax; ties resolve to the first cell.
pub fn argmax_cell(values: &[f64], cols: usize) -> BevCoord {
    let k = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    BevCoord::new(k / cols, k % cols)
}

/// Encoder, query seeding and decoder for an already loaded scene, with no
/// file output.
pub fn detect(config: &PipelineConfig, model: &Model, scene: Scene) -> Result<DecoderOutput> {
    config.validate()?;
    let prepared = prepare_scene(scene, &config.grid, config.encoder.k_corr, &OracleHooks::default())?;
    let enc = encode_scene(model, &prepared, config)?;
    let queries = staged(
        "decoder",
        init_queries(&enc.h_p_out, &prepared.feature_grid, config.decoder.num_queries, &model.heatmap),
    )?;
    staged(
        "decoder",
        decoder_forward(
            &queries,
            &enc.h_p_out,
            &enc.h_c_out,
            &prepared.feature_rig,
            &prepared.feature_grid,
            &config.decoder,
            &model.decoder,
        ),
    )
}

/// One named check recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrespondenceStats {
    pub img_to_bev: SetStats,
    pub bev_to_img: SetStats,
}

/// Outcome of a forward run. Timings are kept out of the written report so
/// that every emitted file is reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    #[serde(skip)]
    pub timings_ms: Vec<(&'static str, f64)>,
    pub correspondence: CorrespondenceStats,
    pub modality_trace: Vec<Modality>,
    pub detections_per_layer: Vec<usize>,
    pub invariants: Vec<InvariantCheck>,
    pub oracle: Option<OracleReport>,
    /// Every file written except `report.json` itself.
    pub files: Vec<FileDigest>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed) && self.oracle.as_ref().is_none_or(|o| o.passed())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<FileDigest>) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    files.push(FileDigest {
        file: name.to_string(),
        sha256: sha256_hex(bytes),
    });
    Ok(path)
}

fn heatmap_pgm(head: &HeatmapHead, h: &FeatureMap) -> Result<Vec<u8>> {
    let heat = head.heatmap(h)?;
    Ok(crate::feature::encode_pgm(h.width(), h.height(), &normalize_to_u8(&heat)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Run the whole pipeline and write its artifacts to `config.out_dir`:
/// `scene.json`, `detections.jsonl`, `heatmap_before.pgm`,
/// `heatmap_after.pgm`, `params.bin`, `params.json` and `report.json`.
pub fn run_forward(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64() * 1e3));
        clock = Instant::now();
    };

    let model = staged("model", build_model(config))?;
    lap("model", &mut timings);
    let scene = staged("scene", load_or_generate_scene(config))?;
    lap("scene", &mut timings);
    let prepared = prepare_scene(scene, &config.grid, config.encoder.k_corr, &OracleHooks::default())?;
    lap("geometry+correspondence", &mut timings);
    let enc = encode_scene(&model, &prepared, config)?;
    lap("backbone+encoder", &mut timings);
    let queries = staged(
        "decoder",
        init_queries(&enc.h_p_out, &prepared.feature_grid, config.decoder.num_queries, &model.heatmap),
    )?;
    let dec = staged(
        "decoder",
        decoder_forward(
            &queries,
            &enc.h_p_out,
            &enc.h_c_out,
            &prepared.feature_rig,
            &prepared.feature_grid,
            &config.decoder,
            &model.decoder,
        ),
    )?;
    lap("decoder", &mut timings);

    let oracle = if config.oracle {
        let r = run_checks(config, &model, &prepared, Some((&enc, &queries[..], &dec)));
        lap("oracle", &mut timings);
        Some(r)
    } else {
        None
    };

    let invariants = forward_invariants(config, &enc, &dec);
    let out = &config.out_dir;
    ensure_dir(out)?;
    let mut files = Vec::new();
    write_file(out, "scene.json", staged("output", prepared.scene.to_json())?.as_bytes(), &mut files)?;
    let mut det = Vec::new();
    dec.write_jsonl(&mut det).map_err(|e| Error::io(out.join("detections.jsonl"), e))?;
    write_file(out, "detections.jsonl", &det, &mut files)?;
    write_file(out, "heatmap_before.pgm", &heatmap_pgm(&model.heatmap, &enc.h_p)?, &mut files)?;
    write_file(out, "heatmap_after.pgm", &heatmap_pgm(&model.heatmap, &enc.h_p_out)?, &mut files)?;
    let (bin, manifest) = checkpoint::encode(&model);
    write_file(out, "params.bin", &bin, &mut files)?;
    write_file(out, "params.json", serde_json::to_string_pretty(&manifest)?.as_bytes(), &mut files)?;
    lap("write", &mut timings);

    let report = RunReport {
        timings_ms: timings,
        correspondence: CorrespondenceStats {
            img_to_bev: prepared.img_to_bev.table.stats(),
            bev_to_img: prepared.bev_to_img.table.stats(),
        },
        modality_trace: dec.modality_trace(),
        detections_per_layer: dec.layers.iter().map(|l| l.detections.len()).collect(),
        invariants,
        oracle,
        files,
        out_dir: out.clone(),
    };
    let path = out.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn forward_invariants(config: &PipelineConfig, enc: &Encoded, dec: &DecoderOutput) -> Vec<InvariantCheck> {
    let check = |name: &str, passed: bool| InvariantCheck {
        name: name.to_string(),
        passed,
    };
    let n = config.decoder.num_queries;
    vec![
        check(
            "encoder preserves shapes",
            enc.h_p_out.shape() == enc.h_p.shape()
                && enc.h_c_out.iter().zip(&enc.h_c).all(|(a, b)| a.shape() == b.shape()),
        ),
        check(
            "encoder outputs finite",
            enc.h_p_out.is_finite() && enc.h_c_out.iter().all(FeatureMap::is_finite),
        ),
        check("every layer emits N detections", dec.layers.iter().all(|l| l.detections.len() == n)),
        check(
            "boxes valid (dims > 0, yaw in (-pi, pi])",
            dec.layers.iter().flat_map(|l| &l.detections).all(|d| d.bbox.is_valid()),
        ),
        check(
            "scores in [0, 1]",
            dec.layers
                .iter()
                .flat_map(|l| &l.detections)
                .all(|d| d.scores.iter().all(|s| (0.0..=1.0).contains(s))),
        ),
        check(
            "odd layers image, even layers BEV",
            dec.layers.iter().all(|l| l.modality == Modality::for_layer(l.layer)),
        ),
    ]
}

/// Which heatmaps [`dump_heatmaps`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapWhich {
    Before,
    After,
    Both,
}

/// Render the class-agnostic heatmap of the BEV features before and/or
/// after the encoder as min-max normalized PGMs in `config.out_dir`.
pub fn dump_heatmaps(config: &PipelineConfig, which: HeatmapWhich) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let model = staged("model", build_model(config))?;
    let scene = staged("scene", load_or_generate_scene(config))?;
    let prepared = prepare_scene(scene, &config.grid, config.encoder.k_corr, &OracleHooks::default())?;
    let enc = encode_scene(&model, &prepared, config)?;
    ensure_dir(&config.out_dir)?;
    let mut paths = Vec::new();
    let mut emit = |name: &str, h: &FeatureMap| -> Result<()> {
        let heat = model.heatmap.heatmap(h)?;
        let path = config.out_dir.join(name);
        write_pgm(&path, h.width(), h.height(), &normalize_to_u8(&heat))?;
        paths.push(path);
        Ok(())
    };
    if matches!(which, HeatmapWhich::Before | HeatmapWhich::Both) {
        emit("heatmap_before.pgm", &enc.h_p)?;
    }
    if matches!(which, HeatmapWhich::After | HeatmapWhich::Both) {
        emit("heatmap_after.pgm", &enc.h_p_out)?;
    }
    Ok(paths)
}

/// Write correspondence maps and their statistics to `config.out_dir`:
/// `img_to_bev.jsonl`, `bev_to_img.jsonl`, `pillars.json`, `depth_view{v}.pgm`
/// and `corr_stats.json`.
pub fn dump_correspondence(config: &PipelineConfig) -> Result<CorrespondenceStats> {
    config.validate()?;
    let scene = staged("scene", load_or_generate_scene(config))?;
    let prepared = prepare_scene(scene, &config.grid, config.encoder.k_corr, &OracleHooks::default())?;
    let out = &config.out_dir;
    ensure_dir(out)?;
    let io = |name: &str| {
        let p = out.join(name);
        move |e| Error::io(p, e)
    };
    let mut buf = Vec::new();
    prepared.img_to_bev.write_jsonl(&mut buf).map_err(io("img_to_bev.jsonl"))?;
    std::fs::write(out.join("img_to_bev.jsonl"), &buf).map_err(io("img_to_bev.jsonl"))?;
    buf.clear();
    prepared.bev_to_img.write_jsonl(&mut buf).map_err(io("bev_to_img.jsonl"))?;
    std::fs::write(out.join("bev_to_img.jsonl"), &buf).map_err(io("bev_to_img.jsonl"))?;
    std::fs::write(out.join("pillars.json"), prepared.pillars.to_json().to_string()).map_err(io("pillars.json"))?;
    for (v, d) in prepared.sparse_depths.iter().enumerate() {
        write_pgm(&out.join(format!("depth_view{v}.pgm")), d.width(), d.height(), &d.to_pgm_pixels())?;
    }
    let stats = CorrespondenceStats {
        img_to_bev: prepared.img_to_bev.table.stats(),
        bev_to_img: prepared.bev_to_img.table.stats(),
    };
    std::fs::write(out.join("corr_stats.json"), serde_json::to_string_pretty(&stats)?).map_err(io("corr_stats.json"))?;
    Ok(stats)
}

/// Generate (or load) the scene and write `scene.json` plus per-view,
/// per-channel image PGMs to `config.out_dir`.
pub fn dump_scene(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    if config.scene_path.is_none() {
        config.scene.validate()?;
    }
    let scene = staged("scene", load_or_generate_scene(config))?;
    let out = &config.out_dir;
    ensure_dir(out)?;
    let path = out.join("scene.json");
    std::fs::write(&path, scene.to_json()?).map_err(|e| Error::io(&path, e))?;
    let mut paths = vec![path];
    paths.extend(scene.write_images(out)?);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_sized() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.grid.rows(), c.grid.cols()), (64, 64));
        assert_eq!(c.feature_grid().num_cells(), 32 * 32);
    }

    #[test]
    fn production_constants_are_representable() {
        let c = PipelineConfig::production();
        assert_eq!((c.grid.rows(), c.grid.cols()), (1440, 1440));
        assert_eq!(c.encoder.num_layers, 2);
        assert_eq!(c.decoder.num_layers, 5);
        assert_eq!(c.decoder.num_queries, 200);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = PipelineConfig::from_json(r#"{"seed": 9, "decoder": {"num_queries": 4}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.decoder.num_queries, 4);
        assert_eq!(c.decoder.num_layers, 5);
    }

    #[test]
    fn inconsistent_config_rejected() {
        let mut c = PipelineConfig::default();
        c.decoder.num_queries = 5000;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = PipelineConfig::default();
        c.encoder.k_iml = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_cell(&[1.0, 3.0, 3.0, 0.0], 2), BevCoord::new(0, 1));
    }
}

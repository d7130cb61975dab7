//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.
//!
//! `cargo test -p fusiondet --test acceptance` (add `--release` for timings
//! representative of an optimized build).

use std::path::Path;
use std::time::{Duration, Instant};

use fusiondet::boxes::{wrap_angle, Box3D};
use fusiondet::camera::{CameraRig, CameraView};
use fusiondet::correspondence::{BevSources, PixelCoord, SetTable};
use fusiondet::decoder::{project_box_to_bev_roi, project_box_to_image_roi, Modality};
use fusiondet::feature::FeatureMap;
use fusiondet::geometry::{back_project, bev_index, complete_depth, world_to_image, BevCoord, BevGrid, DepthMap};
use fusiondet::interaction::{
    attention_weights, encoder_forward, integrate, local_attention, mmri_image_to_lidar, AttentionParams, EncoderConfig,
    EncoderLayerParams, IntegrationParams,
};
use fusiondet::model::Model;
use fusiondet::nn::Linear;
use fusiondet::oracle::OracleHooks;
use fusiondet::pipeline::{
    argmax_cell, calibrate_heatmap, calibration_samples, detect, encode_scene, prepare_scene, run_forward, sha256_hex,
    PipelineConfig,
};
use fusiondet::rng::DetRng;
use fusiondet::scene::{generate_synthetic_scene, Point3D, SceneSpec};
use nalgebra::{DMatrix, Vector3};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

// 1. Projection round trip.

fn criterion_projection() -> Outcome {
    let rig = SceneSpec::default().rig.build();
    let mut rng = DetRng::new(1);
    // Points are generated from pixel + depth with independent inverse math.
    let points: Vec<(usize, Point3D)> = (0..10_000)
        .map(|i| {
            let v = i % rig.len();
            let cam = &rig.views[v];
            let (u, vv) = (rng.uniform(0.0, cam.width as f64), rng.uniform(0.0, cam.height as f64));
            let z = rng.uniform(0.5, 80.0);
            let k_inv = cam.intrinsics.try_inverse().unwrap();
            let pc = k_inv * Vector3::new(u, vv, 1.0) * z;
            let pw = cam.rotation().transpose() * (pc - cam.translation());
            (v, Point3D::new(pw.x, pw.y, pw.z, 0.0))
        })
        .collect();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (v, p) in &points {
        let cam = &rig.views[*v];
        let ip = world_to_image(*p, cam).ok_or("in-frustum point reported behind the camera")?;
        let q = back_project(ip.u, ip.v, ip.depth, cam).map_err(|e| e.to_string())?;
        worst = worst.max(((q.x - p.x).powi(2) + (q.y - p.y).powi(2) + (q.z - p.z).powi(2)).sqrt());
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-6, || format!("max error {worst:e} m"))?;
    within(elapsed, 1.0)?;
    Ok(format!("10000 points, max error {worst:.2e} m, {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

// 2. Correspondence against brute-force composition.

fn brute_img_to_bev(depths: &[Option<DepthMap>], rig: &CameraRig, grid: &BevGrid, k: usize) -> Vec<Vec<BevCoord>> {
    let mut out = Vec::new();
    for (v, cam) in rig.views.iter().enumerate() {
        for row in 0..cam.height {
            for col in 0..cam.width {
                let mut set = Vec::new();
                if let Some(d) = &depths[v] {
                    for r in row.saturating_sub(k)..=(row + k).min(cam.height - 1) {
                        for c in col.saturating_sub(k)..=(col + k).min(cam.width - 1) {
                            let p = back_project(c as f64 + 0.5, r as f64 + 0.5, d.get(r, c).unwrap(), cam).unwrap();
                            if let Some(cell) = bev_index(p.x, p.y, grid) {
                                set.push(cell);
                            }
                        }
                    }
                }
                set.sort();
                set.dedup();
                out.push(set);
            }
        }
    }
    out
}

fn brute_bev_to_img(points: &[Point3D], rig: &CameraRig, grid: &BevGrid) -> Vec<Vec<PixelCoord>> {
    let mut out = Vec::new();
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let mut set = Vec::new();
            for p in points {
                // Half-open cell test written out directly.
                let x0 = grid.x_min + col as f64 * grid.cell;
                let y0 = grid.y_min + row as f64 * grid.cell;
                if bev_index(p.x, p.y, grid) != Some(BevCoord::new(row, col)) {
                    continue;
                }
                debug_assert!(p.x >= x0 - 1e-9 && p.y >= y0 - 1e-9);
                for (v, cam) in rig.views.iter().enumerate() {
                    let pc = cam.rotation() * Vector3::new(p.x, p.y, p.z) + cam.translation();
                    if pc.z <= 1e-6 {
                        continue;
                    }
                    let uvw = cam.intrinsics * pc;
                    let (u, vv) = (uvw.x / uvw.z, uvw.y / uvw.z);
                    if u >= 0.0 && vv >= 0.0 && u < cam.width as f64 && vv < cam.height as f64 {
                        set.push(PixelCoord::new(v, vv.floor() as usize, u.floor() as usize));
                    }
                }
            }
            set.sort();
            set.dedup();
            out.push(set);
        }
    }
    out
}

fn criterion_correspondence() -> Outcome {
    let config = PipelineConfig::default();
    let start = Instant::now();
    let mut sets = 0usize;
    for seed in 0..20 {
        let scene = generate_synthetic_scene(&config.scene, 100 + seed).map_err(|e| e.to_string())?;
        ensure(scene.cloud.len() <= 1000, || format!("scene has {} points", scene.cloud.len()))?;
        let bev_expect = {
            let fg = config.feature_grid();
            let fr = scene.rig.downsampled(2);
            brute_bev_to_img(&scene.cloud.points, &fr, &fg)
        };
        for k in 0..=2 {
            let prep = prepare_scene(scene.clone(), &config.grid, k, &OracleHooks::default()).map_err(|e| e.to_string())?;
            ensure((prep.feature_grid.rows(), prep.feature_grid.cols()) == (32, 32), || "feature grid is not 32x32".into())?;
            ensure(prep.feature_rig.views.iter().all(|v| (v.width, v.height) == (48, 32)), || "views are not 48x32".into())?;
            let expect = brute_img_to_bev(&prep.dense_depths, &prep.feature_rig, &prep.feature_grid, k);
            for (key, want) in expect.iter().enumerate() {
                let p = prep.img_to_bev.layout.coord(key);
                ensure(prep.img_to_bev.get(p) == want.as_slice(), || format!("seed {seed} k {k} pixel {p:?} differs"))?;
            }
            sets += expect.len();
            if k == 0 {
                for (key, want) in bev_expect.iter().enumerate() {
                    let cell = BevCoord::new(key / 32, key % 32);
                    ensure(prep.bev_to_img.get(cell) == want.as_slice(), || format!("seed {seed} cell {cell:?} differs"))?;
                }
                sets += bev_expect.len();
            }
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, 30.0)?;
    Ok(format!("20 scenes, {sets} sets equal, {:.1} s", elapsed.as_secs_f64()))
}

// 3. Attention kernel.

fn matvec(x: &[f64], w: &fusiondet::nn::Matrix) -> Vec<f64> {
    (0..w.cols)
        .map(|j| {
            let mut acc = 0.0;
            for (i, xi) in x.iter().enumerate() {
                acc += xi * w.data[i * w.cols + j];
            }
            acc
        })
        .collect()
}

/// Attention written as a plain loop in the mandated order.
fn naive_attention(query: &[f64], neighbors: &[Vec<f64>], p: &AttentionParams) -> Vec<f64> {
    if neighbors.is_empty() {
        return vec![0.0; query.len()];
    }
    let d = p.w_q.cols;
    let q = matvec(query, &p.w_q);
    let mut logits = Vec::new();
    for n in neighbors {
        let k = matvec(n, &p.w_k);
        let mut s = 0.0;
        for j in 0..d {
            s += q[j] * k[j];
        }
        logits.push(s / (d as f64).sqrt());
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let mut z = 0.0;
    for x in &e {
        z += x;
    }
    let mut ctx = vec![0.0; d];
    for (n, ei) in neighbors.iter().zip(&e) {
        let v = matvec(n, &p.w_v);
        for j in 0..d {
            ctx[j] += (ei / z) * v[j];
        }
    }
    matvec(&ctx, &p.w_o)
}

fn criterion_attention() -> Outcome {
    let mut rng = DetRng::new(3);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    for inst in 0..1000 {
        let c = 1 + rng.below(8) as usize;
        let d = 1 + rng.below(8) as usize;
        let n = rng.below(13) as usize;
        let params = AttentionParams::random(c, d, &mut rng);
        let scale = rng.uniform(0.1, 10.0);
        let query: Vec<f64> = (0..c).map(|_| scale * rng.normal()).collect();
        let neighbors: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| scale * rng.normal()).collect()).collect();
        let refs: Vec<&[f64]> = neighbors.iter().map(Vec::as_slice).collect();

        let logits: Vec<f64> = (0..n.max(1)).map(|_| rng.uniform(-30.0, 30.0)).collect();
        let w = attention_weights(&logits);
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        let shift = rng.uniform(-100.0, 100.0);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in w.iter().zip(attention_weights(&shifted)) {
            worst_shift = worst_shift.max((a - b).abs());
        }

        let out = local_attention(&query, &refs, &params).map_err(|e| e.to_string())?;
        let naive = naive_attention(&query, &neighbors, &params);
        ensure(out.iter().zip(&naive).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("instance {inst}: kernel {out:?} vs loop {naive:?}")
        })?;

        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let permuted: Vec<&[f64]> = order.iter().map(|&i| refs[i]).collect();
        let out_p = local_attention(&query, &permuted, &params).map_err(|e| e.to_string())?;
        for (a, b) in out.iter().zip(&out_p) {
            worst_perm = worst_perm.max((a - b).abs() / a.abs().max(1.0));
        }

        // Gathered path: the neighbors become pixels of a 1 x n image read by a single BEV cell.
        let width = n.max(1);
        let img = FeatureMap::from_vec(1, width, c, (0..width).flat_map(|i| neighbors.get(i).cloned().unwrap_or(vec![0.0; c])).collect())
            .unwrap();
        let bev = FeatureMap::from_vec(1, 1, c, query.clone()).unwrap();
        let sources = BevSources {
            rows: 1,
            cols: 1,
            table: SetTable::from_lists(vec![(0..n).map(|i| PixelCoord::new(0, 0, i)).collect()]),
        };
        let gathered = mmri_image_to_lidar(&[img], &bev, &sources, &params).map_err(|e| e.to_string())?;
        ensure(gathered.data().iter().zip(&naive).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("instance {inst}: gathered path differs from loop")
        })?;
    }
    ensure(worst_sum < 1e-9, || format!("weights sum off by {worst_sum:e}"))?;
    ensure(worst_shift < 1e-9, || format!("logit shift changed weights by {worst_shift:e}"))?;
    ensure(worst_perm < 1e-12, || format!("permutation changed output by {worst_perm:e}"))?;
    Ok(format!(
        "1000 instances, sum err {worst_sum:.1e}, shift err {worst_shift:.1e}, perm err {worst_perm:.1e}, bit-exact"
    ))
}

// 4. Integration step and encoder shapes.

fn random_map(h: usize, w: usize, c: usize, rng: &mut DetRng) -> FeatureMap {
    FeatureMap::from_vec(h, w, c, (0..h * w * c).map(|_| rng.normal()).collect()).unwrap()
}

fn dense(l: &Linear) -> (DMatrix<f64>, DMatrix<f64>) {
    let w = DMatrix::from_row_slice(l.weight.rows, l.weight.cols, &l.weight.data);
    let b = DMatrix::from_row_slice(1, l.bias.len(), &l.bias);
    (w, b)
}

fn dense_ffn(x: &DMatrix<f64>, ffn: &fusiondet::nn::Ffn) -> DMatrix<f64> {
    let (w1, b1) = dense(&ffn.hidden);
    let (w2, b2) = dense(&ffn.output);
    let ones = DMatrix::from_element(x.nrows(), 1, 1.0);
    let h = (x * w1 + &ones * b1).map(|v| v.max(0.0));
    h * w2 + ones * b2
}

fn criterion_integration() -> Outcome {
    let mut rng = DetRng::new(4);
    let (h, w, c) = (8, 8, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut params = IntegrationParams::random(c, 8, &mut rng);
        for l in [&mut params.inner.hidden, &mut params.inner.output, &mut params.outer.hidden, &mut params.outer.output] {
            l.bias.iter_mut().for_each(|b| *b = rng.normal());
        }
        let (x, a, b) = (random_map(h, w, c, &mut rng), random_map(h, w, c, &mut rng), random_map(h, w, c, &mut rng));
        let got = integrate(&x, &a, &b, &params).map_err(|e| e.to_string())?;
        let n = h * w;
        let xm = DMatrix::from_row_slice(n, c, x.data());
        let am = DMatrix::from_row_slice(n, c, a.data());
        let bm = DMatrix::from_row_slice(n, c, b.data());
        let mut ab = DMatrix::zeros(n, 2 * c);
        ab.columns_mut(0, c).copy_from(&am);
        ab.columns_mut(c, c).copy_from(&bm);
        let inner = dense_ffn(&ab, &params.inner);
        let mut ix = DMatrix::zeros(n, 2 * c);
        ix.columns_mut(0, c).copy_from(&inner);
        ix.columns_mut(c, c).copy_from(&xm);
        let want = dense_ffn(&ix, &params.outer);
        for i in 0..n {
            for j in 0..c {
                worst = worst.max((got.data()[i * c + j] - want[(i, j)]).abs());
            }
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;

    let cfg = EncoderConfig::default();
    ensure(cfg.num_layers == 2, || "default encoder depth is not 2".into())?;
    let config = PipelineConfig::default();
    let model = Model::init(&config.encoder, &config.decoder, 5);
    let scene = generate_synthetic_scene(&config.scene, 5).map_err(|e| e.to_string())?;
    let prep = prepare_scene(scene, &config.grid, cfg.k_corr, &OracleHooks::default()).map_err(|e| e.to_string())?;
    let enc = encode_scene(&model, &prep, &config).map_err(|e| e.to_string())?;
    ensure(enc.h_p_out.shape() == enc.h_p.shape(), || "BEV shape changed".into())?;
    ensure(enc.h_c_out.len() == enc.h_c.len(), || "view count changed".into())?;
    ensure(enc.h_c_out.iter().zip(&enc.h_c).all(|(a, b)| a.shape() == b.shape()), || "image shape changed".into())?;
    // Independent re-run of the stacked layers from the stem outputs.
    let layers: Vec<EncoderLayerParams> = model.encoder.clone();
    let again = encoder_forward(&enc.h_p, &enc.h_c, &prep.geometry, &cfg, &layers).map_err(|e| e.to_string())?;
    ensure(again.0 == enc.h_p_out, || "encoder not reproducible".into())?;
    Ok(format!(
        "max deviation {worst:.1e} over 10 draws; 2 layers keep BEV {:?} and {} views {:?}",
        enc.h_p_out.shape(),
        enc.h_c_out.len(),
        enc.h_c_out[0].shape()
    ))
}

// 5. Decoder structure.

fn criterion_decoder() -> Outcome {
    let expected = [Modality::Image, Modality::Bev, Modality::Image, Modality::Bev, Modality::Image];
    let mut boxes = 0;
    for n in [1usize, 16, 200] {
        let mut config = PipelineConfig::default();
        config.decoder.num_queries = n;
        let model = Model::init(&config.encoder, &config.decoder, 6);
        let scene = generate_synthetic_scene(&config.scene, 6).map_err(|e| e.to_string())?;
        let out = detect(&config, &model, scene).map_err(|e| e.to_string())?;
        ensure(out.modality_trace() == expected, || format!("trace {:?}", out.modality_trace()))?;
        for l in &out.layers {
            ensure(l.detections.len() == n, || format!("layer {} emitted {} of {n}", l.layer, l.detections.len()))?;
            for d in &l.detections {
                let b = &d.bbox;
                ensure(b.dims.iter().all(|&x| x > 0.0 && x.is_finite()), || format!("bad dims {:?}", b.dims))?;
                ensure(b.yaw > -std::f64::consts::PI && b.yaw <= std::f64::consts::PI, || format!("yaw {}", b.yaw))?;
                boxes += 1;
            }
        }
    }
    Ok(format!("trace (img, bev, img, bev, img); N in {{1, 16, 200}}; {boxes} boxes valid"))
}

// 6. RoI geometry.

fn criterion_roi() -> Outcome {
    let grid = PipelineConfig::default().feature_grid();
    let mut rng = DetRng::new(7);
    let mut checked = 0;
    for i in 0..1000 {
        let b = Box3D::new(
            [rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0), rng.uniform(-1.0, 2.0)],
            [rng.uniform(0.05, 8.0), rng.uniform(0.05, 4.0), rng.uniform(0.05, 3.0)],
            wrap_angle(rng.uniform(-4.0, 4.0)),
        );
        let small = project_box_to_bev_roi(&b, &grid, 1.0);
        let big = project_box_to_bev_roi(&b, &grid, 2.0);
        if let Some(s) = small {
            let big = big.ok_or_else(|| format!("box {i}: enlarged RoI vanished"))?;
            ensure(big.cells.contains(&s.cells), || format!("box {i}: {:?} does not contain {:?}", big.cells, s.cells))?;
            checked += 1;
        }
    }

    let rig = SceneSpec::default().rig.build();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let v = i % rig.len();
        let cam: &CameraView = &rig.views[v];
        let (u, vv, z) = (rng.uniform(2.0, cam.width as f64 - 2.0), rng.uniform(2.0, cam.height as f64 - 2.0), rng.uniform(2.0, 30.0));
        let c = back_project(u, vv, z, cam).map_err(|e| e.to_string())?;
        let b = Box3D::new([c.x, c.y, c.z], [1e-4; 3], rng.uniform(-3.0, 3.0));
        let r = project_box_to_image_roi(&b, cam).ok_or_else(|| format!("tiny box {i} not visible"))?;
        let diam = (r.width().powi(2) + r.height().powi(2)).sqrt();
        ensure(r.x0 <= u && u <= r.x1 && r.y0 <= vv && vv <= r.y1, || format!("tiny box {i}: rect misses its center"))?;
        ensure(
            r.x0.floor() as i64 >= u.floor() as i64 - 1 && r.x1.floor() as i64 <= u.floor() as i64 + 1,
            || format!("tiny box {i}: rect leaves the center pixel's neighborhood"),
        )?;
        worst = worst.max(diam);
    }
    ensure(worst < 2.0, || format!("image RoI diameter {worst} px"))?;
    Ok(format!("{checked} BEV containments hold; max tiny-box RoI diameter {worst:.2e} px"))
}

// 7. Heatmap sanity after calibration.

fn criterion_heatmap() -> Outcome {
    let start = Instant::now();
    let config = PipelineConfig::default();
    let mut model = Model::init(&config.encoder, &config.decoder, 0);
    // Calibration scenes use seeds 1000.., evaluation scenes 0..10.
    let train = calibration_samples(&model, &config, 16, 1000).map_err(|e| e.to_string())?;
    model.heatmap = calibrate_heatmap(&model.heatmap, &train, 200, 0);
    let eval = calibration_samples(&model, &config, 10, 0).map_err(|e| e.to_string())?;
    ensure(eval.len() == 10, || format!("only {} evaluation objects inside the grid", eval.len()))?;
    let mut hits = 0;
    let mut misses = Vec::new();
    for (i, (h, target)) in eval.iter().enumerate() {
        let heat = model.heatmap.heatmap(h).map_err(|e| e.to_string())?;
        let got = argmax_cell(&heat, h.width());
        let cheb = got.row.abs_diff(target.row).max(got.col.abs_diff(target.col));
        if cheb <= 1 {
            hits += 1;
        } else {
            misses.push(format!("scene {i}: {cheb} cells"));
        }
    }
    let elapsed = start.elapsed();
    ensure(hits >= 9, || format!("{hits}/10 within one cell ({})", misses.join(", ")))?;
    within(elapsed, 60.0)?;
    Ok(format!("{hits}/10 argmax within one cell, {:.1} s", elapsed.as_secs_f64()))
}

// 8. Determinism.

fn digests(dir: &Path) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(e.path()).map_err(|e| e.to_string())?;
        out.push((e.file_name().to_string_lossy().into_owned(), sha256_hex(&bytes)));
    }
    out.sort();
    Ok(out)
}

fn criterion_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = PipelineConfig {
        seed: 8,
        ..PipelineConfig::default()
    };
    config.out_dir = a.path().to_path_buf();
    run_forward(&config).map_err(|e| e.to_string())?;
    config.out_dir = b.path().to_path_buf();
    run_forward(&config).map_err(|e| e.to_string())?;
    let (da, db) = (digests(a.path())?, digests(b.path())?);
    ensure(da.len() >= 7, || format!("only {} files written", da.len()))?;
    ensure(da == db, || {
        let diff: Vec<_> = da.iter().zip(&db).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
        format!("differing files: {diff:?}")
    })?;
    Ok(format!("{} files, identical SHA-256 across runs", da.len()))
}

// 9. Depth completion.

fn criterion_depth() -> Outcome {
    let mut rng = DetRng::new(9);
    for i in 0..100 {
        let (w, h) = (1 + rng.below(40) as usize, 1 + rng.below(30) as usize);
        let mut s = DepthMap::invalid(w, h);
        let n = 1 + rng.below((w * h).min(50) as u64) as usize;
        for _ in 0..n {
            s.set(rng.below(h as u64) as usize, rng.below(w as u64) as usize, rng.uniform(0.5, 80.0));
        }
        let (lo, hi) = s.valid_range().unwrap();
        let d = complete_depth(&s).map_err(|e| e.to_string())?;
        ensure(d.is_dense(), || format!("map {i} not dense"))?;
        ensure(d.raw().iter().all(|&x| x >= lo && x <= hi), || format!("map {i} leaves [{lo}, {hi}]"))?;
        for r in 0..h {
            for c in 0..w {
                if let Some(v) = s.get(r, c) {
                    ensure(d.get(r, c) == Some(v), || format!("map {i} changed a valid pixel"))?;
                }
            }
        }
        let again = complete_depth(&d).map_err(|e| e.to_string())?;
        ensure(again == d, || format!("map {i}: completion not idempotent"))?;
    }
    let mut s = DepthMap::invalid(48, 32);
    s.set(17, 5, 12.5);
    let d = complete_depth(&s).map_err(|e| e.to_string())?;
    ensure(d.raw().iter().all(|&x| x == 12.5), || "single-pixel input is not constant".into())?;
    Ok("100 maps dense, within hull, idempotent; single pixel gives a constant map".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("projection round trip", criterion_projection),
        ("correspondence oracle equivalence", criterion_correspondence),
        ("attention kernel", criterion_attention),
        ("integration and encoder shapes", criterion_integration),
        ("decoder structure", criterion_decoder),
        ("RoI geometry", criterion_roi),
        ("heatmap sanity", criterion_heatmap),
        ("determinism", criterion_determinism),
        ("depth completion", criterion_depth),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match r {
            Ok(msg) => println!("PASS {} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

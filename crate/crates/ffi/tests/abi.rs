use std::ffi::{CStr, CString};
use std::ptr;

use fusiondet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fd_last_error_message()) }.to_string_lossy().into_owned()
}

fn small_config() -> CString {
    CString::new(r#"{"decoder": {"num_queries": 6, "num_layers": 3}}"#).unwrap()
}

#[test]
fn generate_run_and_read_detections() {
    unsafe {
        let cfg = small_config();
        let mut p = ptr::null_mut();
        assert_eq!(fd_pipeline_new(cfg.as_ptr(), &mut p), FdStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(fd_scene_generate(p, 3, &mut s), FdStatus::Ok);
        assert!(fd_scene_point_count(s) > 0);
        assert_eq!(fd_scene_view_count(s), 2);

        let mut d = ptr::null_mut();
        assert_eq!(fd_pipeline_run(p, s, &mut d), FdStatus::Ok, "{}", last_error());
        assert_eq!(fd_detections_count(d), 6);
        let mut det = FdDetection {
            bbox: [0.0; 9],
            class_id: 99,
            score: -1.0,
        };
        assert_eq!(fd_detections_get(d, 5, &mut det), FdStatus::Ok);
        assert!(det.class_id < 3 && (0.0..=1.0).contains(&det.score));
        assert!(det.bbox[3] > 0.0 && det.bbox[4] > 0.0 && det.bbox[5] > 0.0);
        assert_eq!(fd_detections_get(d, 6, &mut det), FdStatus::OutOfRange);
        assert!(last_error().contains("detection 6"));

        fd_detections_free(d);
        fd_scene_free(s);
        fd_pipeline_free(p);
    }
}

#[test]
fn scene_json_round_trip_runs_identically() {
    unsafe {
        let cfg = small_config();
        let mut p = ptr::null_mut();
        assert_eq!(fd_pipeline_new(cfg.as_ptr(), &mut p), FdStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(fd_scene_generate(p, 11, &mut s), FdStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(fd_scene_to_json(s, &mut json), FdStatus::Ok);
        let mut s2 = ptr::null_mut();
        assert_eq!(fd_scene_from_json(json, &mut s2), FdStatus::Ok);
        fd_string_free(json);

        let get = |scene| {
            let mut d = ptr::null_mut();
            assert_eq!(fd_pipeline_run(p, scene, &mut d), FdStatus::Ok);
            let out: Vec<FdDetection> = (0..fd_detections_count(d))
                .map(|i| {
                    let mut det = FdDetection { bbox: [0.0; 9], class_id: 0, score: 0.0 };
                    fd_detections_get(d, i, &mut det);
                    det
                })
                .collect();
            fd_detections_free(d);
            out
        };
        assert_eq!(get(s), get(s2));
        fd_scene_free(s);
        fd_scene_free(s2);
        fd_pipeline_free(p);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut p = ptr::null_mut();
        let bad = CString::new(r#"{"encoder": {"k_iml": 4}}"#).unwrap();
        assert_eq!(fd_pipeline_new(bad.as_ptr(), &mut p), FdStatus::Config);
        assert!(p.is_null());
        assert!(!last_error().is_empty());

        let junk = CString::new("{not json").unwrap();
        assert_eq!(fd_pipeline_new(junk.as_ptr(), &mut p), FdStatus::Config);

        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(fd_pipeline_new(invalid.as_ptr().cast(), &mut p), FdStatus::InvalidUtf8);
        assert_eq!(fd_pipeline_new(ptr::null(), ptr::null_mut()), FdStatus::NullPointer);
        assert_eq!(fd_pipeline_run(ptr::null(), ptr::null(), ptr::null_mut()), FdStatus::NullPointer);
        assert_eq!(fd_detections_count(ptr::null()), 0);
        fd_pipeline_free(ptr::null_mut());
        fd_string_free(ptr::null_mut());
    }
}

#[test]
fn world_to_image_and_domain_error() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(fd_pipeline_new(ptr::null(), &mut p), FdStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(fd_scene_generate(p, 0, &mut s), FdStatus::Ok);
        let mut uvd = [0.0; 3];
        // View 0 looks along +x from 1.8 m up; a point ahead at mount height hits the principal row.
        assert_eq!(fd_world_to_image(s, 0, 10.0, 0.0, 1.8, uvd.as_mut_ptr()), FdStatus::Ok);
        assert!((uvd[0] - 48.0).abs() < 1e-9 && (uvd[1] - 32.0).abs() < 1e-9 && (uvd[2] - 10.0).abs() < 1e-9);
        assert_eq!(fd_world_to_image(s, 0, -10.0, 0.0, 1.8, uvd.as_mut_ptr()), FdStatus::Domain);
        assert_eq!(fd_world_to_image(s, 7, 10.0, 0.0, 1.8, uvd.as_mut_ptr()), FdStatus::OutOfRange);
        fd_scene_free(s);
        fd_pipeline_free(p);
    }
}

#[test]
fn default_config_json_parses() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(fd_config_default_json(&mut out), FdStatus::Ok);
        let text = CStr::from_ptr(out).to_str().unwrap().to_owned();
        fd_string_free(out);
        let mut p = ptr::null_mut();
        let c = CString::new(text).unwrap();
        assert_eq!(fd_pipeline_new(c.as_ptr(), &mut p), FdStatus::Ok);
        fd_pipeline_free(p);
    }
}

#[test]
fn forward_to_dir_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let cfg = small_config();
        let mut p = ptr::null_mut();
        assert_eq!(fd_pipeline_new(cfg.as_ptr(), &mut p), FdStatus::Ok);
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(fd_pipeline_forward_to_dir(p, d.as_ptr()), FdStatus::Ok, "{}", last_error());
        fd_pipeline_free(p);
    }
    for f in ["scene.json", "detections.jsonl", "report.json", "params.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fusiondet.h")).unwrap();
    for name in [
        "fd_last_error_message",
        "fd_string_free",
        "fd_config_default_json",
        "fd_pipeline_new",
        "fd_pipeline_free",
        "fd_scene_generate",
        "fd_scene_from_json",
        "fd_scene_free",
        "fd_scene_to_json",
        "fd_scene_point_count",
        "fd_scene_view_count",
        "fd_world_to_image",
        "fd_pipeline_run",
        "fd_pipeline_forward_to_dir",
        "fd_detections_count",
        "fd_detections_get",
        "fd_detections_free",
        "FD_STATUS_DOMAIN",
        "typedef struct FdPipeline FdPipeline",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

//! C ABI over the `fusiondet` pipeline.
//!
//! Objects are opaque heap handles created by `fd_*_new`/`fd_*_generate`
//! and released with the matching `fd_*_free`. Every fallible call returns
//! an [`FdStatus`]; on failure the message is available from
//! [`fd_last_error_message`] on the same thread. Panics never cross the
//! boundary; they are reported as `FD_STATUS_PANIC`.
//!
//! Strings returned through `char **` out-parameters are owned by the caller
//! and must be released with [`fd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fusiondet::decoder::DecoderOutput;
use fusiondet::geometry::world_to_image;
use fusiondet::model::Model;
use fusiondet::pipeline::{build_model, detect, run_forward, PipelineConfig};
use fusiondet::scene::{generate_synthetic_scene, Point3D, Scene};
use fusiondet::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Invalid configuration or inconsistent shapes.
    Config = 3,
    /// Input outside an operation's domain (e.g. a point behind the camera).
    Domain = 4,
    /// Index past the end of a collection.
    OutOfRange = 5,
    /// I/O, serialization or other runtime failure.
    Runtime = 6,
    Panic = 7,
}

/// One detection from the last decoder layer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdDetection {
    /// x, y, z, length, width, height, yaw, vx, vy.
    pub bbox: [f64; 9],
    pub class_id: u32,
    pub score: f64,
}

/// Configuration plus initialized weights.
pub struct FdPipeline {
    config: PipelineConfig,
    model: Model,
}

pub struct FdScene(Scene);

pub struct FdDetections(Vec<FdDetection>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> FdStatus {
    match e {
        Error::Stage { source, .. } => status_of(source),
        Error::Config(_) | Error::Json(_) | Error::Precondition(_) => FdStatus::Config,
        Error::Domain(_) => FdStatus::Domain,
        Error::Io { .. } | Error::Checkpoint(_) => FdStatus::Runtime,
    }
}

struct Fail(FdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FdStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {m}"));
            FdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(FdStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|e| Fail(FdStatus::Runtime, e.to_string()))?;
    write_out(out, c.into_raw())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `fd_*` call on this thread.
#[no_mangle]
pub extern "C" fn fd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration as pretty-printed JSON.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_config_default_json(out: *mut *mut c_char) -> FdStatus {
    guard(|| {
        let s = serde_json::to_string_pretty(&PipelineConfig::default()).map_err(Error::from)?;
        write_string(out, s)
    })
}

/// Validate a JSON config (null means defaults) and initialize the model.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_pipeline_new(config_json: *const c_char, out: *mut *mut FdPipeline) -> FdStatus {
    guard(|| {
        let config = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_json(read_str(config_json, "config_json")?)?
        };
        config.validate()?;
        let model = build_model(&config)?;
        write_out(out, Box::into_raw(Box::new(FdPipeline { config, model })))
    })
}

/// # Safety
/// `p` is null or a live handle from [`fd_pipeline_new`].
#[no_mangle]
pub unsafe extern "C" fn fd_pipeline_free(p: *mut FdPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Generate a synthetic scene from the pipeline's scene settings.
///
/// # Safety
/// `p` must be a live pipeline handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_scene_generate(p: *const FdPipeline, seed: u64, out: *mut *mut FdScene) -> FdStatus {
    guard(|| {
        let p = borrow(p, "pipeline")?;
        let scene = generate_synthetic_scene(&p.config.scene, seed)?;
        write_out(out, Box::into_raw(Box::new(FdScene(scene))))
    })
}

/// Parse a scene from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_scene_from_json(json: *const c_char, out: *mut *mut FdScene) -> FdStatus {
    guard(|| {
        let scene = Scene::from_json(read_str(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(FdScene(scene))))
    })
}

/// # Safety
/// `s` is null or a live scene handle.
#[no_mangle]
pub unsafe extern "C" fn fd_scene_free(s: *mut FdScene) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live scene handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_scene_to_json(s: *const FdScene, out: *mut *mut c_char) -> FdStatus {
    guard(|| {
        let s = borrow(s, "scene")?;
        write_string(out, s.0.to_json()?)
    })
}

/// Number of LiDAR points in a scene; 0 for a null handle.
///
/// # Safety
/// `s` is null or a live scene handle.
#[no_mangle]
pub unsafe extern "C" fn fd_scene_point_count(s: *const FdScene) -> usize {
    s.as_ref().map_or(0, |s| s.0.cloud.len())
}

/// Number of camera views in a scene; 0 for a null handle.
///
/// # Safety
/// `s` is null or a live scene handle.
#[no_mangle]
pub unsafe extern "C" fn fd_scene_view_count(s: *const FdScene) -> usize {
    s.as_ref().map_or(0, |s| s.0.rig.len())
}

/// Project a world point into view `view` of the scene's rig. Writes
/// `(u, v, depth)` to `out_uvd`; `FD_STATUS_DOMAIN` if the point is behind
/// the camera.
///
/// # Safety
/// `s` must be a live scene handle; `out_uvd` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_world_to_image(
    s: *const FdScene,
    view: usize,
    x: f64,
    y: f64,
    z: f64,
    out_uvd: *mut f64,
) -> FdStatus {
    guard(|| {
        let s = borrow(s, "scene")?;
        if out_uvd.is_null() {
            return Err(null("out_uvd"));
        }
        let cam = s.0.rig.views.get(view).ok_or_else(|| {
            Fail(FdStatus::OutOfRange, format!("view {view} of {}", s.0.rig.len()))
        })?;
        let ip = world_to_image(Point3D::new(x, y, z, 0.0), cam)
            .ok_or_else(|| Fail(FdStatus::Domain, "point is behind the camera".into()))?;
        ptr::copy_nonoverlapping([ip.u, ip.v, ip.depth].as_ptr(), out_uvd, 3);
        Ok(())
    })
}

fn last_layer(out: DecoderOutput) -> Vec<FdDetection> {
    out.layers
        .last()
        .map(|l| {
            l.detections
                .iter()
                .map(|d| {
                    let (class, score) = d.best();
                    FdDetection {
                        bbox: d.bbox.to_array(),
                        class_id: class as u32,
                        score,
                    }
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Run detection on a scene without writing files.
///
/// # Safety
/// `p` and `s` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_pipeline_run(p: *const FdPipeline, s: *const FdScene, out: *mut *mut FdDetections) -> FdStatus {
    guard(|| {
        let p = borrow(p, "pipeline")?;
        let s = borrow(s, "scene")?;
        let dec = detect(&p.config, &p.model, s.0.clone())?;
        write_out(out, Box::into_raw(Box::new(FdDetections(last_layer(dec)))))
    })
}

/// Full forward run writing all artifacts (scene, detections, heatmaps,
/// weights, report) to `out_dir`.
///
/// # Safety
/// `p` must be a live handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fd_pipeline_forward_to_dir(p: *const FdPipeline, out_dir: *const c_char) -> FdStatus {
    guard(|| {
        let p = borrow(p, "pipeline")?;
        let mut config = p.config.clone();
        config.out_dir = read_str(out_dir, "out_dir")?.into();
        let report = run_forward(&config)?;
        if report.all_passed() {
            Ok(())
        } else {
            Err(Fail(FdStatus::Runtime, "forward run failed an invariant or oracle check".into()))
        }
    })
}

/// Number of detections; 0 for a null handle.
///
/// # Safety
/// `d` is null or a live detections handle.
#[no_mangle]
pub unsafe extern "C" fn fd_detections_count(d: *const FdDetections) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// Copy detection `index` into `out`.
///
/// # Safety
/// `d` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_detections_get(d: *const FdDetections, index: usize, out: *mut FdDetection) -> FdStatus {
    guard(|| {
        let d = borrow(d, "detections")?;
        let det = d.0.get(index).ok_or_else(|| {
            Fail(FdStatus::OutOfRange, format!("detection {index} of {}", d.0.len()))
        })?;
        write_out(out, *det)
    })
}

/// # Safety
/// `d` is null or a live detections handle.
#[no_mangle]
pub unsafe extern "C" fn fd_detections_free(d: *mut FdDetections) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

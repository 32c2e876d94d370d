//! C ABI over `facekit`.
//!
//! Every fallible function returns an [`FkStatus`]. On failure the message is
//! kept per thread and can be read with [`fk_last_error_message`]. Objects are
//! opaque handles created by `*_load`, `*_build` or `fk_fit` style functions and
//! released with the matching `*_free`.

use facekit::camera::Camera;
use facekit::fit::{fit, FitConfig, FitResult, LandmarkSet};
use facekit::mesh::{load_obj, save_obj, TriMesh};
use facekit::morph::{load_model, MorphableModel};
use facekit::refine::refine_fit;
use facekit::rig::{
    build_model_rig, evaluate_rig_into, load_rig, load_rig_json, save_rig, save_rig_json,
    BlendshapeRig,
};
use facekit::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Result of every fallible call. Values 1 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkStatus {
    Ok = 0,
    Error = 1,
    MissingInput = 2,
    Invalid = 3,
    Numerical = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Orthographic camera.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FkCamera {
    pub width: u32,
    pub height: u32,
    pub pixels_per_unit: f64,
    pub d_cam: f64,
}

/// Coarse fitting options; see [`fk_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FkFitOptions {
    pub w_id: f64,
    pub w_exp: f64,
    pub w_tex: f64,
    pub max_iterations: u32,
    pub freeze_scale: bool,
}

pub struct FkModel(MorphableModel);

pub struct FkFit {
    result: FitResult,
    camera: Camera,
}

pub struct FkMesh(TriMesh);

pub struct FkRig {
    rig: BlendshapeRig,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FkStatus {
    match e.exit_code() {
        2 => FkStatus::MissingInput,
        3 => FkStatus::Invalid,
        4 => FkStatus::Numerical,
        _ => FkStatus::Error,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FkStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            FkStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FkStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(ptr: *const T, what: &'static str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(ptr: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    let s = reference(ptr, what)?;
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Error::Validation(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(
    ptr: *const T,
    len: usize,
    what: &'static str,
) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(reference(ptr, what)?, len))
}

unsafe fn slice_mut_arg<'a, T>(
    ptr: *mut T,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    ptr.as_mut().ok_or(Failure::Null(what))?;
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    let slot = out.as_mut().ok_or(Failure::Null("output handle"))?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(ptr: *mut T) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr));
    }
}

fn camera_from(c: &FkCamera) -> Result<Camera, Failure> {
    Ok(Camera::new(c.width, c.height, c.pixels_per_unit, c.d_cam)?)
}

unsafe fn landmarks_from(
    xy: *const f64,
    weights: *const f64,
    count: usize,
) -> Result<LandmarkSet, Failure> {
    let pts = slice_arg(xy, 2 * count, "landmarks")?;
    let pts = pts
        .chunks_exact(2)
        .map(|p| facekit::camera::Vec2::new(p[0], p[1]))
        .collect();
    if weights.is_null() {
        Ok(LandmarkSet::uniform(pts)?)
    } else {
        Ok(LandmarkSet::new(
            pts,
            slice_arg(weights, count, "weights")?.to_vec(),
        )?)
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn fk_fit_options_default() -> FkFitOptions {
    let c = FitConfig::default();
    FkFitOptions {
        w_id: c.w_id,
        w_exp: c.w_exp,
        w_tex: c.w_tex,
        max_iterations: c.max_outer_iters as u32,
        freeze_scale: c.freeze_scale,
    }
}

/// Loads a CFM1 model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_model_load(path: *const c_char, out: *mut *mut FkModel) -> FkStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, FkModel(load_model(path)?))
    })
}

/// # Safety
/// `model` must be null or a handle from [`fk_model_load`].
#[no_mangle]
pub unsafe extern "C" fn fk_model_free(model: *mut FkModel) {
    free(model)
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_model_landmark_count(model: *const FkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.landmark_count())
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_model_vertex_count(model: *const FkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.mean_mesh().vertex_count())
}

/// Coarse reconstruction from `count` landmarks given as interleaved pixel
/// coordinates `x0 y0 x1 y1 ...`. `weights` may be null for unit weights and
/// `options` null for the defaults.
///
/// # Safety
/// Arrays must hold `2 * count` and `count` doubles; pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fk_fit(
    model: *const FkModel,
    landmarks_xy: *const f64,
    weights: *const f64,
    count: usize,
    camera: *const FkCamera,
    options: *const FkFitOptions,
    out: *mut *mut FkFit,
) -> FkStatus {
    guard(|| {
        let model = &reference(model, "model")?.0;
        let camera = camera_from(reference(camera, "camera")?)?;
        let lm = landmarks_from(landmarks_xy, weights, count)?;
        let mut cfg = FitConfig::default();
        if let Some(o) = options.as_ref() {
            cfg.w_id = o.w_id;
            cfg.w_exp = o.w_exp;
            cfg.w_tex = o.w_tex;
            cfg.max_outer_iters = o.max_iterations as usize;
            cfg.freeze_scale = o.freeze_scale;
        }
        let result = fit(model, &lm, &camera, &cfg)?;
        put(out, FkFit { result, camera })
    })
}

/// # Safety
/// `f` must be null or a handle from [`fk_fit`].
#[no_mangle]
pub unsafe extern "C" fn fk_fit_free(f: *mut FkFit) {
    free(f)
}

/// Mean weighted squared landmark error of the fit in px^2, or NaN for a null handle.
///
/// # Safety
/// `f` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_fit_landmark_error(f: *const FkFit) -> f64 {
    f.as_ref().map_or(f64::NAN, |f| f.result.landmark_error)
}

/// Writes the row-major rotation, the translation and the scale of the fitted
/// pose.
///
/// # Safety
/// `rotation` must hold 9 doubles, `translation` 3, `scale` 1.
#[no_mangle]
pub unsafe extern "C" fn fk_fit_pose(
    f: *const FkFit,
    rotation: *mut f64,
    translation: *mut f64,
    scale: *mut f64,
) -> FkStatus {
    guard(|| {
        let pose = &reference(f, "fit")?.result.pose;
        let r = slice_mut_arg(rotation, 9, "rotation")?;
        for (i, x) in r.iter_mut().enumerate() {
            *x = pose.rotation()[(i / 3, i % 3)];
        }
        slice_mut_arg(translation, 3, "translation")?
            .copy_from_slice(pose.translation().as_slice());
        *scale.as_mut().ok_or(Failure::Null("scale"))? = pose.scale();
        Ok(())
    })
}

/// Laplacian refinement of a coarse fit toward the landmarks.
///
/// # Safety
/// As for [`fk_fit`].
#[no_mangle]
pub unsafe extern "C" fn fk_refine(
    model: *const FkModel,
    f: *const FkFit,
    landmarks_xy: *const f64,
    weights: *const f64,
    count: usize,
    lambda: f64,
    out: *mut *mut FkMesh,
) -> FkStatus {
    guard(|| {
        let model = &reference(model, "model")?.0;
        let f = reference(f, "fit")?;
        let lm = landmarks_from(landmarks_xy, weights, count)?;
        let mesh = refine_fit(model, &f.result, &lm, None, &f.camera, lambda)?;
        put(out, FkMesh(mesh))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_mesh_load_obj(path: *const c_char, out: *mut *mut FkMesh) -> FkStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, FkMesh(load_obj(path)?))
    })
}

/// # Safety
/// `mesh` must be a valid handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fk_mesh_save_obj(mesh: *const FkMesh, path: *const c_char) -> FkStatus {
    guard(|| {
        let mesh = &reference(mesh, "mesh")?.0;
        Ok(save_obj(mesh, path_arg(path, "path")?)?)
    })
}

/// # Safety
/// `mesh` must be null or a mesh handle.
#[no_mangle]
pub unsafe extern "C" fn fk_mesh_free(mesh: *mut FkMesh) {
    free(mesh)
}

/// # Safety
/// `mesh` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_mesh_vertex_count(mesh: *const FkMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertex_count())
}

/// # Safety
/// `mesh` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_mesh_face_count(mesh: *const FkMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.face_count())
}

/// Copies the vertex positions as `x y z` triples into `out`, which must hold
/// `3 * vertex_count` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fk_mesh_vertices(
    mesh: *const FkMesh,
    out: *mut f64,
    len: usize,
) -> FkStatus {
    guard(|| {
        let mesh = &reference(mesh, "mesh")?.0;
        let need = 3 * mesh.vertex_count();
        if len != need {
            return Err(Error::LengthMismatch {
                expected: need,
                got: len,
            }
            .into());
        }
        let out = slice_mut_arg(out, len, "out")?;
        for (o, v) in out.chunks_exact_mut(3).zip(mesh.vertices()) {
            o.copy_from_slice(v.as_slice());
        }
        Ok(())
    })
}

fn wrap_rig(rig: BlendshapeRig) -> FkRig {
    let names = rig
        .names()
        .iter()
        .map(|n| CString::new(n.replace('\0', " ")).expect("nul bytes removed"))
        .collect();
    FkRig { rig, names }
}

/// Transfers the standard expression templates of `model` onto `neutral`.
/// A negative `eyeball_inset` skips eyeball fitting.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_build(
    model: *const FkModel,
    neutral: *const FkMesh,
    eyeball_inset: f64,
    out: *mut *mut FkRig,
) -> FkStatus {
    guard(|| {
        let model = &reference(model, "model")?.0;
        let neutral = &reference(neutral, "neutral")?.0;
        let inset = (eyeball_inset >= 0.0).then_some(eyeball_inset);
        put(out, wrap_rig(build_model_rig(model, neutral, inset)?))
    })
}

/// Loads a rig from a CFR1 file, or from a JSON export when the path ends in
/// `.json`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_load(path: *const c_char, out: *mut *mut FkRig) -> FkStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let rig = if json {
            load_rig_json(&path)?
        } else {
            load_rig(&path)?
        };
        put(out, wrap_rig(rig))
    })
}

/// # Safety
/// `rig` must be a valid handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_save(rig: *const FkRig, path: *const c_char) -> FkStatus {
    guard(|| {
        Ok(save_rig(
            &reference(rig, "rig")?.rig,
            path_arg(path, "path")?,
        )?)
    })
}

/// Writes the JSON export; `texture` may be null.
///
/// # Safety
/// `rig` must be a valid handle; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_save_json(
    rig: *const FkRig,
    path: *const c_char,
    texture: *const c_char,
) -> FkStatus {
    guard(|| {
        let rig = &reference(rig, "rig")?.rig;
        let texture = if texture.is_null() {
            None
        } else {
            Some(
                CStr::from_ptr(texture)
                    .to_str()
                    .map_err(|_| Error::Validation("texture is not valid UTF-8".into()))?,
            )
        };
        Ok(save_rig_json(rig, texture, path_arg(path, "path")?)?)
    })
}

/// # Safety
/// `rig` must be null or a rig handle.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_free(rig: *mut FkRig) {
    free(rig)
}

/// # Safety
/// `rig` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_expression_count(rig: *const FkRig) -> usize {
    rig.as_ref().map_or(0, |r| r.rig.expression_count())
}

/// # Safety
/// `rig` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_vertex_count(rig: *const FkRig) -> usize {
    rig.as_ref().map_or(0, |r| r.rig.vertex_count())
}

/// Name of expression `i`, owned by the rig, or null when out of range.
///
/// # Safety
/// `rig` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_expression_name(rig: *const FkRig, i: usize) -> *const c_char {
    rig.as_ref()
        .and_then(|r| r.names.get(i))
        .map_or(std::ptr::null(), |n| n.as_ptr())
}

/// Evaluates `S_0 + sum_i beta_i B_i` into `out` (`3 * vertex_count` doubles).
///
/// # Safety
/// `beta` must hold `beta_len` doubles and `out` `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fk_rig_evaluate(
    rig: *const FkRig,
    beta: *const f64,
    beta_len: usize,
    out: *mut f64,
    out_len: usize,
) -> FkStatus {
    guard(|| {
        let rig = &reference(rig, "rig")?.rig;
        let beta = slice_arg(beta, beta_len, "beta")?;
        let out = slice_mut_arg(out, out_len, "out")?;
        Ok(evaluate_rig_into(rig, beta, out)?)
    })
}

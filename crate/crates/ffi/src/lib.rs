//! C ABI over `noisedesign`.
//!
//! Every fallible call returns an [`NdStatus`]; on failure the message is kept
//! per thread and can be copied out with [`nd_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `_free` function. Handles are not thread-safe; use each from one thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::rc::Rc;

use noisedesign::cli::{execute, ExperimentConfig};
use noisedesign::design::{binarization_metric, project, Generator};
use noisedesign::diffusion::NoiseSchedule;
use noisedesign::fem::{Homogenization, PlaneModel};
use noisedesign::nn::DenoiserParams;
use noisedesign::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NdStatus {
    NdOk = 0,
    /// A required pointer argument was null.
    NdErrNull = 1,
    /// Bad argument value, shape or file contents.
    NdErrInvalid = 2,
    NdErrNonFinite = 3,
    /// Linear or nonlinear solve failed.
    NdErrSolver = 4,
    NdErrConfig = 5,
    NdErrIo = 6,
    /// Output buffer too short; nothing was written.
    NdErrBuffer = 7,
    /// Rust panic caught at the boundary.
    NdErrPanic = 8,
}

/// Trained denoiser weights and architecture.
pub struct NdModel {
    params: Rc<DenoiserParams>,
}

/// η = 0 DDIM map from a noise input to a sample.
pub struct NdGenerator {
    inner: Generator,
}

/// Periodic unit cell on an `nx × ny` grid.
pub struct NdHomogenizer {
    inner: Homogenization,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NdStatus {
    match e {
        Error::Contract(_) | Error::Shape { .. } | Error::Structural { .. } | Error::Format { .. } => NdStatus::NdErrInvalid,
        Error::NonFinite(_) => NdStatus::NdErrNonFinite,
        Error::Solver(_) | Error::ElementInversion { .. } | Error::NonConvergence { .. } => NdStatus::NdErrSolver,
        Error::LoadStep { source, .. } | Error::Stage { source, .. } => status_of(source),
        Error::Config(_) => NdStatus::NdErrConfig,
        Error::Io { .. } => NdStatus::NdErrIo,
    }
}

/// Runs `f` with panics and errors turned into a status code.
fn guard(f: impl FnOnce() -> Result<(), NdStatus>) -> NdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NdStatus::NdOk
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            NdStatus::NdErrPanic
        }
    }
}

fn fail(e: Error) -> NdStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> NdStatus {
    set_error(&format!("`{what}` is null"));
    NdStatus::NdErrNull
}

fn invalid(msg: &str) -> NdStatus {
    set_error(msg);
    NdStatus::NdErrInvalid
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, NdStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], NdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, cap: usize, need: usize, what: &str) -> Result<&'a mut [f64], NdStatus> {
    if cap < need {
        set_error(&format!("`{what}` holds {cap} values, {need} needed"));
        return Err(NdStatus::NdErrBuffer);
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn put<T>(p: *mut T, v: T, what: &str) -> Result<(), NdStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nd_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `cap > 0`, truncated to fit). Returns the full
/// message length without the terminator.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nd_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_model_load(path: *const c_char, out: *mut *mut NdModel) -> NdStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = DenoiserParams::load(Path::new(path)).map_err(fail)?;
        put(out, Box::into_raw(Box::new(NdModel { params: Rc::new(params) })), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`nd_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nd_model_free(model: *mut NdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of values in one sample (`channels × side²` or the data dimension).
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nd_model_sample_len(model: *const NdModel, out: *mut usize) -> NdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        put(out, m.params.arch.sample_shape().iter().product(), "out")
    })
}

/// Deterministic sampler with `steps` uniformly spaced DDIM steps over a
/// linear schedule of `t_max` steps from `beta_start` to `beta_end`.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nd_generator_new(
    model: *const NdModel,
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
    steps: usize,
    out: *mut *mut NdGenerator,
) -> NdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = NoiseSchedule::linear(t_max, beta_start, beta_end).map_err(fail)?;
        let inner = Generator::new(m.params.clone(), s, steps).map_err(fail)?;
        put(out, Box::into_raw(Box::new(NdGenerator { inner })), "out")
    })
}

/// # Safety
/// `g` must be null or a handle from [`nd_generator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nd_generator_free(g: *mut NdGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Length of the noise input, equal to the sample length.
///
/// # Safety
/// `g` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nd_generator_dim(g: *const NdGenerator, out: *mut usize) -> NdStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("generator"))?;
        put(out, g.inner.dim(), "out")
    })
}

/// Maps the noise input `w` (`w_len` values) to a sample written to `out`.
///
/// # Safety
/// `w` must point to `w_len` readable doubles and `out` to `out_cap`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nd_generator_generate(
    g: *const NdGenerator,
    w: *const f64,
    w_len: usize,
    out: *mut f64,
    out_cap: usize,
) -> NdStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("generator"))?;
        let w = slice_arg(w, w_len, "w")?;
        if w.len() != g.inner.dim() {
            return Err(invalid(&format!("noise input has {} values, {} expected", w.len(), g.inner.dim())));
        }
        let x = g.inner.generate(w).map_err(fail)?;
        out_slice(out, out_cap, x.len(), "out")?.copy_from_slice(x.data());
        Ok(())
    })
}

/// Unit cell with `nx × ny` square elements and Poisson ratio `nu`
/// (`plane_strain` nonzero selects plane strain).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_homogenizer_new(nx: usize, ny: usize, nu: f64, plane_strain: i32, out: *mut *mut NdHomogenizer) -> NdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = if plane_strain != 0 { PlaneModel::Strain } else { PlaneModel::Stress };
        let inner = Homogenization::new(nx, ny, nu, model).map_err(fail)?;
        put(out, Box::into_raw(Box::new(NdHomogenizer { inner })), "out")
    })
}

/// # Safety
/// `h` must be null or a handle from [`nd_homogenizer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nd_homogenizer_free(h: *mut NdHomogenizer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Effective 3×3 Voigt stiffness, row-major into `c_out[9]`, for per-element
/// Young's moduli `theta` in element order (row `j` of elements is `y = j`).
///
/// # Safety
/// `theta` must point to `n` readable doubles, `c_out` to 9 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nd_homogenize(h: *const NdHomogenizer, theta: *const f64, n: usize, c_out: *mut f64) -> NdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("homogenizer"))?;
        let theta = slice_arg(theta, n, "theta")?;
        if theta.len() != h.inner.n_elems() {
            return Err(invalid(&format!("{} moduli for {} elements", theta.len(), h.inner.n_elems())));
        }
        let r = h.inner.homogenize(theta).map_err(fail)?;
        let c = out_slice(c_out, 9, 9, "c_out")?;
        for i in 0..3 {
            c[3 * i..3 * i + 3].copy_from_slice(&r.c_hom[i]);
        }
        Ok(())
    })
}

/// `out[i] = ½(tanh(γ x[i]) + 1)`. `out` may alias `x`.
///
/// # Safety
/// `x` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nd_project(x: *const f64, n: usize, gamma: f64, out: *mut f64) -> NdStatus {
    guard(|| {
        let xs = slice_arg(x, n, "x")?.to_vec();
        let p = project(&Tensor::from_vec(&[n], xs), gamma).map_err(fail)?;
        out_slice(out, n, n, "out")?.copy_from_slice(p.data());
        Ok(())
    })
}

/// Fraction of the `n` densities within `tau` of 0 or 1.
///
/// # Safety
/// `rho` must point to `n` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nd_binarization(rho: *const f64, n: usize, tau: f64, out: *mut f64) -> NdStatus {
    guard(|| {
        let rho = slice_arg(rho, n, "rho")?;
        put(out, binarization_metric(rho, tau), "out")
    })
}

/// Runs the command named in a TOML experiment config, writing the run
/// directory to `out_dir`. Same artifacts as the command-line binary.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn nd_run_config(config_toml: *const c_char, out_dir: *const c_char) -> NdStatus {
    guard(|| {
        let text = str_arg(config_toml, "config_toml")?;
        let dir = str_arg(out_dir, "out_dir")?;
        let mut cfg = ExperimentConfig::from_toml_str(text).map_err(fail)?;
        if cfg.command.is_empty() {
            return Err(fail(Error::Config(vec!["`command` is required".into()])));
        }
        cfg.out = dir.to_string();
        cfg.validate().map_err(fail)?;
        let command = cfg.command.clone();
        execute(&command, &cfg, Path::new(dir)).map(drop).map_err(fail)
    })
}

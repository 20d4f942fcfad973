//! C ABI for glsim.
//!
//! Every function returns a [`GlsimStatus`]; results go through out-pointers.
//! On failure, [`glsim_last_error_message`] describes the most recent error on
//! the calling thread. Simulators are opaque handles created by
//! [`glsim_simulator_new`] and released with [`glsim_simulator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use glsim::riccati::{halfinterval_bound, riccati_explicit, RiccatiInput};
use glsim::rng::{SeedStream, SimRng};
use glsim::stable::{is_admissible, mode_scales, StableSampler};
use glsim::{Error, SimConfig, Simulator, SpectralField};

/// Status codes returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlsimStatus {
    Ok = 0,
    NullPointer = 1,
    /// An argument violates a precondition (including inadmissible noise).
    InvalidParameter = 2,
    /// A step could not be completed even after the maximum number of halvings.
    StepRejected = 3,
    Estimation = 4,
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Simulation parameters, mirroring the CLI settings of the same names.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlsimConfig {
    /// Number of Fourier modes `K`.
    pub modes: usize,
    pub dt: f64,
    /// Horizon `T`.
    pub horizon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub p: f64,
    pub record_stride: usize,
    pub seed: u64,
    pub noise_scale: f64,
}

impl From<&SimConfig> for GlsimConfig {
    fn from(c: &SimConfig) -> Self {
        Self {
            modes: c.modes,
            dt: c.dt,
            horizon: c.horizon,
            alpha: c.alpha,
            beta: c.beta,
            delta: c.delta,
            p: c.p,
            record_stride: c.record_stride,
            seed: c.seed,
            noise_scale: c.noise_scale,
        }
    }
}

impl From<&GlsimConfig> for SimConfig {
    fn from(c: &GlsimConfig) -> Self {
        Self {
            modes: c.modes,
            dt: c.dt,
            horizon: c.horizon,
            alpha: c.alpha,
            beta: c.beta,
            delta: c.delta,
            p: c.p,
            record_stride: c.record_stride,
            seed: c.seed,
            noise_scale: c.noise_scale,
        }
    }
}

/// Norms of the current state.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GlsimNorms {
    /// `|X|_H`
    pub h: f64,
    /// `|X|_{H_delta}`
    pub hdelta: f64,
    /// `|Y|_H`
    pub y: f64,
    /// `|Z|_V`
    pub zv: f64,
}

/// One trajectory with its own random stream.
pub struct GlsimSimulator {
    sim: Simulator,
    rng: SimRng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GlsimStatus {
    match e {
        Error::Parameter(_) | Error::Usage(_) => GlsimStatus::InvalidParameter,
        Error::StepRejected { .. } | Error::Aborted { .. } => GlsimStatus::StepRejected,
        Error::Estimation(_) => GlsimStatus::Estimation,
        Error::Io(_) | Error::Json(_) => GlsimStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), GlsimStatus>) -> GlsimStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlsimStatus::Ok,
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            GlsimStatus::Panic
        }
    }
}

fn fail(e: Error) -> GlsimStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> GlsimStatus {
    set_error(&format!("{what} is NULL"));
    GlsimStatus::NullPointer
}

/// Message for the last non-OK status on this thread; empty after success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn glsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn glsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default configuration (K = 32, dt = 1e-3, T = 1, alpha = 1.8, beta = 0.8, ...).
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glsim_config_default(out: *mut GlsimConfig) -> GlsimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { out.write(GlsimConfig::from(&SimConfig::default())) };
        Ok(())
    })
}

/// `GLSIM_STATUS_OK` when `(alpha, beta)` is admissible, else `GLSIM_STATUS_INVALID_PARAMETER`
/// with the violated inequality in the error message.
#[no_mangle]
pub extern "C" fn glsim_check_admissible(alpha: f64, beta: f64) -> GlsimStatus {
    guard(|| {
        if is_admissible(alpha, beta) {
            return Ok(());
        }
        match mode_scales(alpha, beta, 1).and_then(|s| s.check_admissible()) {
            Err(e) => Err(fail(e)),
            Ok(()) => Ok(()),
        }
    })
}

/// Creates a simulator at `X_0 = x0`. `x0_cos` and `x0_sin` hold `modes`
/// coefficients each; pass NULL for both to start at zero. The random stream
/// is `(config.seed, stream_index)`.
///
/// # Safety
/// `config` and `out` must be valid; `x0_cos`/`x0_sin` must be NULL or point to `config.modes` doubles.
#[no_mangle]
pub unsafe extern "C" fn glsim_simulator_new(
    config: *const GlsimConfig,
    x0_cos: *const f64,
    x0_sin: *const f64,
    stream_index: u64,
    out: *mut *mut GlsimSimulator,
) -> GlsimStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SimConfig::from(unsafe { &*config });
        cfg.validate().map_err(fail)?;
        let x0 = match (x0_cos.is_null(), x0_sin.is_null()) {
            (true, true) => SpectralField::zeros(cfg.modes),
            (false, false) => {
                let c = unsafe { std::slice::from_raw_parts(x0_cos, cfg.modes) }.to_vec();
                let s = unsafe { std::slice::from_raw_parts(x0_sin, cfg.modes) }.to_vec();
                SpectralField::from_coeffs(c, s).map_err(fail)?
            }
            _ => return Err(null("one of x0_cos / x0_sin")),
        };
        let sim = Simulator::new(x0, &cfg).map_err(fail)?;
        let handle = Box::new(GlsimSimulator {
            sim,
            rng: SeedStream::new(cfg.seed, stream_index).rng(),
        });
        unsafe { out.write(Box::into_raw(handle)) };
        Ok(())
    })
}

/// Releases a simulator. NULL is ignored.
///
/// # Safety
/// `sim` must come from [`glsim_simulator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn glsim_simulator_free(sim: *mut GlsimSimulator) {
    if !sim.is_null() {
        drop(unsafe { Box::from_raw(sim) });
    }
}

/// Advances `n_steps` steps of size `dt`.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn glsim_simulator_step(sim: *mut GlsimSimulator, n_steps: u64) -> GlsimStatus {
    guard(|| {
        let s = unsafe { sim.as_mut() }.ok_or_else(|| null("sim"))?;
        for _ in 0..n_steps {
            s.sim.step(&mut s.rng).map_err(fail)?;
        }
        Ok(())
    })
}

/// Current time.
///
/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glsim_simulator_time(sim: *const GlsimSimulator, out: *mut f64) -> GlsimStatus {
    guard(|| {
        let s = unsafe { sim.as_ref() }.ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { out.write(s.sim.time()) };
        Ok(())
    })
}

/// Copies the coefficients of `X = Y + Z` into `cos_out` and `sin_out`,
/// each of length `len >= modes`.
///
/// # Safety
/// `sim` must be a live handle; the output buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn glsim_simulator_state(
    sim: *const GlsimSimulator,
    cos_out: *mut f64,
    sin_out: *mut f64,
    len: usize,
) -> GlsimStatus {
    guard(|| {
        let s = unsafe { sim.as_ref() }.ok_or_else(|| null("sim"))?;
        if cos_out.is_null() || sin_out.is_null() {
            return Err(null("output buffer"));
        }
        let x = s.sim.x();
        let k = x.modes();
        if len < k {
            return Err(fail(Error::Parameter(format!(
                "output buffers hold {len} values, state has {k} modes"
            ))));
        }
        unsafe {
            ptr::copy_nonoverlapping(x.cos().as_ptr(), cos_out, k);
            ptr::copy_nonoverlapping(x.sin().as_ptr(), sin_out, k);
        }
        Ok(())
    })
}

/// Norms of the current state.
///
/// # Safety
/// `sim` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glsim_simulator_norms(
    sim: *const GlsimSimulator,
    out: *mut GlsimNorms,
) -> GlsimStatus {
    guard(|| {
        let s = unsafe { sim.as_ref() }.ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = s.sim.norms();
        unsafe {
            out.write(GlsimNorms {
                h: n.h,
                hdelta: n.hdelta,
                y: n.y,
                zv: n.zv,
            })
        };
        Ok(())
    })
}

/// Draws `n` standard symmetric stable variables (characteristic function
/// `exp(-|t|^alpha)`) from stream `(seed, stream_index)`.
///
/// # Safety
/// `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn glsim_sample_stable(
    alpha: f64,
    seed: u64,
    stream_index: u64,
    n: usize,
    out: *mut f64,
) -> GlsimStatus {
    guard(|| {
        if out.is_null() && n > 0 {
            return Err(null("out"));
        }
        let sampler = StableSampler::new(alpha).map_err(fail)?;
        let mut rng = SeedStream::new(seed, stream_index).rng();
        for i in 0..n {
            unsafe { out.add(i).write(sampler.sample(&mut rng)) };
        }
        Ok(())
    })
}

/// Solution of `g' = -g^2 + kc^2`, `g(0) = g0`, at time `t` in `[0, horizon]`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glsim_riccati_explicit(
    g0: f64,
    kc: f64,
    horizon: f64,
    t: f64,
    out: *mut f64,
) -> GlsimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inp = RiccatiInput::new(g0, kc, horizon).map_err(fail)?;
        let g = riccati_explicit(&inp, t).map_err(fail)?;
        unsafe { out.write(g) };
        Ok(())
    })
}

/// `kc (1 + 2 / (e^horizon - 1))`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glsim_halfinterval_bound(kc: f64, horizon: f64, out: *mut f64) -> GlsimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let b = halfinterval_bound(kc, horizon).map_err(fail)?;
        unsafe { out.write(b) };
        Ok(())
    })
}

/// Fractional Sobolev norm `|A^sigma x|_H` of the field with the given coefficients.
///
/// # Safety
/// `cos` and `sin` must each hold `modes` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glsim_field_norm_sobolev(
    cos: *const f64,
    sin: *const f64,
    modes: usize,
    sigma: f64,
    out: *mut f64,
) -> GlsimStatus {
    guard(|| {
        if cos.is_null() || sin.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let c = unsafe { std::slice::from_raw_parts(cos, modes) }.to_vec();
        let s = unsafe { std::slice::from_raw_parts(sin, modes) }.to_vec();
        let x = SpectralField::from_coeffs(c, s).map_err(fail)?;
        let sigma = glsim::FractionalExponent::new(sigma).map_err(fail)?;
        unsafe { out.write(x.norm_sobolev(sigma)) };
        Ok(())
    })
}

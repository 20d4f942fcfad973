//! Time stepping of `dX + AX dt = (X - X^3) dt + dL_t` through the splitting
//! `X = Y + Z`.
//!
//! `Z` is the stable Ornstein-Uhlenbeck process, advanced exactly in law. `Y`
//! solves the random PDE `dY + AY dt = N(Y + Z) dt` with continuous paths and
//! is advanced by exponential Euler, `Y <- e^{-Ah} Y + phi_1(h) N(Y + Z)`, with
//! `Z` frozen at the left end of the step.
//!
//! The cubic makes the explicit part stiff for large states. A step whose
//! collocation values satisfy `h * max u^2 > 1/2` (or overflow) is rejected and
//! retried with half the step; the step grows back once the state has relaxed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gamma, sobolev_weights, FractionalExponent, Grid, SpectralField};
use crate::observable::{Observable, StateNorms};
use crate::ou::OuStepper;
use crate::riccati::halfinterval_bound;
use crate::stable::{mode_scales, NoiseSpectrum};

/// Deepest step halving before a trajectory is abandoned.
pub const MAX_HALVINGS: u32 = 60;

/// Largest accepted `h * max_xi u(xi)^2` for the explicit cubic.
const STABILITY_LIMIT: f64 = 0.5;

/// Simulation parameters shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "K")]
    pub modes: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub p: f64,
    pub record_stride: usize,
    pub seed: u64,
    /// Common factor on every mode scale `gamma_k^{-beta}`; 0 switches the noise off.
    pub noise_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            modes: 32,
            dt: 1e-3,
            horizon: 1.0,
            alpha: 1.8,
            beta: 0.8,
            delta: 0.25,
            p: 0.3,
            record_stride: 1,
            seed: 1,
            noise_scale: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::param("K must be >= 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::param(format!(
                "T must be >= dt, got T = {} and dt = {}",
                self.horizon, self.dt
            )));
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::param(format!(
                "alpha must satisfy 1 < alpha <= 2, got {}",
                self.alpha
            )));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::param(format!(
                "delta must satisfy 0 < delta < 1/2, got {}",
                self.delta
            )));
        }
        if !(self.p > 0.0 && self.p < self.alpha / 4.0) {
            return Err(Error::param(format!(
                "p must satisfy 0 < p < alpha/4 = {}, got {}",
                self.alpha / 4.0,
                self.p
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::param("record_stride must be >= 1"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::param(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }

    pub fn spectrum(&self) -> Result<NoiseSpectrum> {
        mode_scales(self.alpha, self.beta, self.modes)?.with_amplitude(self.noise_scale)
    }

    /// Fails with the violated inequality when `(alpha, beta)` is outside the admissible regime.
    pub fn check_admissible(&self) -> Result<()> {
        mode_scales(self.alpha, self.beta, self.modes)?.check_admissible()
    }

    pub fn delta_exponent(&self) -> FractionalExponent {
        FractionalExponent::new(self.delta).expect("validated delta")
    }

    /// Number of steps of size `dt` in `[0, T]`.
    pub fn n_steps(&self) -> u64 {
        steps_in(self.horizon, self.dt)
    }

    /// Steps per unit time, when `1/dt` is an integer.
    pub fn steps_per_unit(&self) -> Result<u64> {
        let n = (1.0 / self.dt).round();
        if n >= 1.0 && (n * self.dt - 1.0).abs() < 1e-9 {
            Ok(n as u64)
        } else {
            Err(Error::param(format!(
                "integer-time records need 1/dt to be an integer, got dt = {}",
                self.dt
            )))
        }
    }
}

pub(crate) fn steps_in(horizon: f64, dt: f64) -> u64 {
    ((horizon / dt + 1e-9).floor() as u64).max(1)
}

fn check_pair(y: &SpectralField, z: &SpectralField) -> Result<()> {
    if y.modes() != z.modes() {
        return Err(Error::param(format!(
            "Y and Z have different mode counts ({} vs {})",
            y.modes(),
            z.modes()
        )));
    }
    if !(y.is_finite() && z.is_finite()) {
        return Err(Error::param("Y and Z must be finite"));
    }
    Ok(())
}

/// Exponential-Euler coefficients for one step size.
#[derive(Debug, Clone)]
struct ExpEuler {
    h: f64,
    decay: Vec<f64>,
    phi: Vec<f64>,
}

impl ExpEuler {
    fn new(modes: usize, h: f64) -> Self {
        let (decay, phi) = (1..=modes)
            .map(|k| {
                let g = gamma(k);
                let em1 = (-g * h).exp_m1();
                (em1 + 1.0, -em1 / g)
            })
            .unzip();
        Self { h, decay, phi }
    }
}

/// Workspace for repeated `Y` steps.
struct YStepper {
    grid: Grid,
    main: ExpEuler,
    u: SpectralField,
    n: SpectralField,
}

enum Attempt {
    Accepted,
    Rejected,
}

impl YStepper {
    fn new(modes: usize, dt: f64) -> Self {
        Self {
            grid: Grid::new(modes),
            main: ExpEuler::new(modes, dt),
            u: SpectralField::zeros(modes),
            n: SpectralField::zeros(modes),
        }
    }

    /// Evaluates `N(y + z)`; returns `max u^2` or `None` on overflow.
    fn load(&mut self, y: &SpectralField, z: &SpectralField) -> Option<f64> {
        self.u.clone_from(y);
        self.u.axpy(1.0, z);
        self.grid.nonlinearity_into(&self.u, &mut self.n).ok()
    }

    fn apply(coef: &ExpEuler, n: &SpectralField, y: &mut SpectralField) -> bool {
        for k in 0..coef.decay.len() {
            let (d, p) = (coef.decay[k], coef.phi[k]);
            y.cos_mut()[k] = d * y.cos()[k] + p * n.cos()[k];
            y.sin_mut()[k] = d * y.sin()[k] + p * n.sin()[k];
        }
        y.is_finite()
    }

    fn attempt(&mut self, y: &mut SpectralField, z: &SpectralField, h: f64) -> Attempt {
        let Some(max_sq) = self.load(y, z) else {
            return Attempt::Rejected;
        };
        if h * max_sq > STABILITY_LIMIT {
            return Attempt::Rejected;
        }
        let saved = y.clone();
        let ok = if h == self.main.h {
            Self::apply(&self.main, &self.n, y)
        } else {
            Self::apply(&ExpEuler::new(y.modes(), h), &self.n, y)
        };
        if ok {
            Attempt::Accepted
        } else {
            *y = saved;
            Attempt::Rejected
        }
    }

    /// Advances `y` over one full step `dt` with `z` frozen, halving on rejection.
    /// Returns the deepest halving used.
    fn advance(&mut self, y: &mut SpectralField, z: &SpectralField, time: f64) -> Result<u32> {
        // Progress is counted in units of dt / 2^MAX_HALVINGS so alignment checks are exact.
        const FULL: u64 = 1 << MAX_HALVINGS;
        let dt = self.main.h;
        let mut covered = 0u64;
        let mut depth = 0u32;
        let mut deepest = 0u32;
        while covered < FULL {
            let h = dt / (1u64 << depth) as f64;
            match self.attempt(y, z, h) {
                Attempt::Accepted => {
                    covered += FULL >> depth;
                    // Grow back once aligned with the coarser step.
                    if depth > 0 && covered % (FULL >> (depth - 1)) == 0 {
                        depth -= 1;
                    }
                }
                Attempt::Rejected => {
                    if depth == MAX_HALVINGS {
                        return Err(Error::Aborted {
                            trajectory: None,
                            time: time + dt * covered as f64 / FULL as f64,
                            halvings: depth,
                        });
                    }
                    depth += 1;
                    deepest = deepest.max(depth);
                }
            }
        }
        Ok(deepest)
    }
}

/// One exponential-Euler step `Y <- e^{-Ah} Y + phi_1(h) N(Y + Z)`.
///
/// Fails with [`Error::StepRejected`] when the nonlinearity overflows.
pub fn step_y(y: &SpectralField, z: &SpectralField, h: f64) -> Result<SpectralField> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::param(format!("step must be > 0, got {h}")));
    }
    check_pair(y, z)?;
    let u = y + z;
    let n = crate::field::nonlinearity(&u)?;
    let mut out = y.clone();
    if !YStepper::apply(&ExpEuler::new(y.modes(), h), &n, &mut out) {
        return Err(Error::StepRejected {
            time: f64::NAN,
            reason: "non-finite Y after the step".into(),
        });
    }
    Ok(out)
}

/// Norms recorded at every stored time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    /// `|X|_H`
    pub h: f64,
    /// `|X|_{H_delta}`
    pub hdelta: f64,
    /// `|Y|_H`
    pub y: f64,
    /// `|Z|_V`
    pub zv: f64,
}

/// Stateful solver for one trajectory.
pub struct Simulator {
    hdelta_weights: Vec<f64>,
    v_weights: Vec<f64>,
    dt: f64,
    steps: u64,
    y: SpectralField,
    z: SpectralField,
    ou: OuStepper,
    ystep: YStepper,
    deepest_halving: u32,
}

impl Simulator {
    /// Starts at `Y_0 = x0`, `Z_0 = 0`.
    pub fn new(x0: SpectralField, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        if x0.modes() != cfg.modes {
            return Err(Error::param(format!(
                "initial state has {} modes, config has K = {}",
                x0.modes(),
                cfg.modes
            )));
        }
        if !x0.is_finite() {
            return Err(Error::param("initial state must be finite"));
        }
        let spectrum = cfg.spectrum()?;
        Ok(Self {
            hdelta_weights: sobolev_weights(cfg.modes, cfg.delta_exponent()),
            v_weights: sobolev_weights(cfg.modes, FractionalExponent::V),
            dt: cfg.dt,
            steps: 0,
            z: SpectralField::zeros(cfg.modes),
            y: x0,
            ou: OuStepper::new(&spectrum, cfg.dt)?,
            ystep: YStepper::new(cfg.modes, cfg.dt),
            deepest_halving: 0,
        })
    }

    /// One step of size `dt`: `Y` with left-endpoint `Z`, then the exact `Z` update.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let now = self.time();
        let depth = self.ystep.advance(&mut self.y, &self.z, now)?;
        self.deepest_halving = self.deepest_halving.max(depth);
        self.ou.advance(&mut self.z, rng);
        self.steps += 1;
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn y(&self) -> &SpectralField {
        &self.y
    }

    pub fn z(&self) -> &SpectralField {
        &self.z
    }

    pub fn x(&self) -> SpectralField {
        &self.y + &self.z
    }

    /// Deepest step halving needed so far.
    pub fn deepest_halving(&self) -> u32 {
        self.deepest_halving
    }

    pub fn norms(&self) -> Norms {
        let x = self.x();
        Norms {
            h: x.norm_h(),
            hdelta: x.norm_weighted(&self.hdelta_weights),
            y: self.y.norm_h(),
            zv: self.z.norm_weighted(&self.v_weights),
        }
    }

    /// `|X|_{H_delta}` without building the other norms.
    pub fn norm_hdelta(&self) -> f64 {
        self.x().norm_weighted(&self.hdelta_weights)
    }
}

/// One row of a trajectory's functional track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub time: f64,
    pub norms: Norms,
    pub functionals: Vec<f64>,
}

/// Recorded path of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub delta: f64,
    pub functional_names: Vec<String>,
    pub track: Vec<TrackRecord>,
    pub x_states: Option<Vec<SpectralField>>,
    pub y_states: Option<Vec<SpectralField>>,
    pub z_states: Option<Vec<SpectralField>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.track.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.track.iter().map(|r| r.time).collect()
    }

    /// CSV with header `time,normH,normHdelta,normY,normZV,f1,...`.
    pub fn to_csv(&self) -> String {
        use crate::report::fmt_f64;
        let mut out = String::from("time,normH,normHdelta,normY,normZV");
        for i in 1..=self.functional_names.len() {
            out.push_str(&format!(",f{i}"));
        }
        out.push('\n');
        for r in &self.track {
            let n = r.norms;
            let mut cols = vec![fmt_f64(r.time), fmt_f64(n.h), fmt_f64(n.hdelta), fmt_f64(n.y), fmt_f64(n.zv)];
            cols.extend(r.functionals.iter().map(|v| fmt_f64(*v)));
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

/// What [`simulate_with`] keeps besides the norm track.
#[derive(Debug, Clone)]
pub struct RecordOptions {
    pub store_states: bool,
    pub functionals: Vec<Observable>,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            store_states: true,
            functionals: Vec::new(),
        }
    }
}

/// Simulates `[0, T]` from `x0`, storing `X`, `Y`, `Z` every `record_stride` steps.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    x0: SpectralField,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate_with(x0, cfg, &RecordOptions::default(), rng)
}

pub fn simulate_with<R: Rng + ?Sized>(
    x0: SpectralField,
    cfg: &SimConfig,
    opts: &RecordOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut sim = Simulator::new(x0, cfg)?;
    let n = cfg.n_steps();
    let stride = cfg.record_stride as u64;
    let mut traj = Trajectory {
        delta: cfg.delta,
        functional_names: opts.functionals.iter().map(Observable::name).collect(),
        track: Vec::new(),
        x_states: opts.store_states.then(Vec::new),
        y_states: opts.store_states.then(Vec::new),
        z_states: opts.store_states.then(Vec::new),
    };
    let record = |sim: &Simulator, traj: &mut Trajectory| {
        let norms = sim.norms();
        let x = sim.x();
        let sn = StateNorms {
            h: norms.h,
            hdelta: norms.hdelta,
        };
        let functionals = opts.functionals.iter().map(|f| f.eval(&x, sn)).collect();
        traj.track.push(TrackRecord {
            time: sim.time(),
            norms,
            functionals,
        });
        if let Some(v) = traj.x_states.as_mut() {
            v.push(x);
        }
        if let Some(v) = traj.y_states.as_mut() {
            v.push(sim.y().clone());
        }
        if let Some(v) = traj.z_states.as_mut() {
            v.push(sim.z().clone());
        }
    };
    record(&sim, &mut traj);
    for i in 1..=n {
        sim.step(rng)?;
        if i % stride == 0 || i == n {
            record(&sim, &mut traj);
        }
    }
    Ok(traj)
}

/// Smallest `C* >= 0` with
/// `(h_{i+1} - h_i) / dt <= -h_{i+1}^2 + C* (1 + max(|Z_i|_V, |Z_{i+1}|_V)^4)`
/// over consecutive records, where `h = |Y|_H^2`.
pub fn dissipation_check(traj: &Trajectory) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::param("dissipation check needs at least two records"));
    }
    let mut c_star: f64 = 0.0;
    for w in traj.track.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.time - a.time;
        if dt <= 0.0 {
            continue;
        }
        let (ha, hb) = (a.norms.y * a.norms.y, b.norms.y * b.norms.y);
        let zmax = a.norms.zv.max(b.norms.zv);
        let need = ((hb - ha) / dt + hb * hb) / (1.0 + zmax.powi(4));
        c_star = c_star.max(need);
    }
    Ok(c_star)
}

/// Outcome of [`ybound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YBoundOutcome {
    pub holds: bool,
    /// `bound - sup_{[T/2, T]} |Y|_H^2`
    pub slack: f64,
    pub bound: f64,
    pub kc_hat: f64,
    pub c_star: f64,
    pub sup_y2: f64,
    pub sup_zv: f64,
}

/// `K_hat_T = max(sqrt(C* (1 + sup_{t <= T} |Z_t|_V^4)), 1)`.
pub fn kc_hat(c_star: f64, sup_zv: f64) -> f64 {
    (c_star * (1.0 + sup_zv.powi(4))).sqrt().max(1.0)
}

/// Checks `|Y_t|_H^2 <= K_hat_T (1 + 2 / (e^T - 1))` on `[T/2, T]`, with `C*` from
/// [`dissipation_check`] on the same trajectory.
pub fn ybound_check(traj: &Trajectory, horizon: f64) -> Result<YBoundOutcome> {
    let c_star = dissipation_check(traj)?;
    ybound_check_with(traj, horizon, c_star)
}

/// [`ybound_check`] with a supplied `C*`, so a family of runs can share one right-hand side.
pub fn ybound_check_with(traj: &Trajectory, horizon: f64, c_star: f64) -> Result<YBoundOutcome> {
    let tol = 1e-9 * horizon.max(1.0);
    let last = traj.track.last().map(|r| r.time).unwrap_or(f64::NAN);
    if !(last >= horizon - tol) {
        return Err(Error::param(format!(
            "trajectory ends at t = {last}, before T = {horizon}"
        )));
    }
    let within: Vec<&TrackRecord> = traj.track.iter().filter(|r| r.time <= horizon + tol).collect();
    let sup_zv = within.iter().map(|r| r.norms.zv).fold(0.0, f64::max);
    let sup_y2 = within
        .iter()
        .filter(|r| r.time >= 0.5 * horizon - tol)
        .map(|r| r.norms.y * r.norms.y)
        .fold(0.0, f64::max);
    let kc = kc_hat(c_star, sup_zv);
    let bound = halfinterval_bound(kc, horizon)?;
    Ok(YBoundOutcome {
        holds: sup_y2 <= bound,
        slack: bound - sup_y2,
        bound,
        kc_hat: kc,
        c_star,
        sup_y2,
        sup_zv,
    })
}

/// `(t, |Y_t|_H^2)` pairs for [`crate::riccati::comparison_verify`].
pub fn energy_trace(traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.track
        .iter()
        .map(|r| (r.time, r.norms.y * r.norms.y))
        .collect()
}

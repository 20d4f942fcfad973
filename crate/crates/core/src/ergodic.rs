//! Occupation measures, integer-time hitting times and their exponential
//! moments, uniform moment probes and deviation-probability probes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::integrator::{simulate_with, RecordOptions, SimConfig, Simulator, Trajectory};
use crate::observable::{Observable, StateNorms};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, SeedStream};
use crate::stats::{batch_means_stderr, linear_fit, quantile, wilson_interval, Moments};

/// Default censoring horizon, in integer time units.
pub const DEFAULT_HITTING_HORIZON: u64 = 200;

/// Tags separating the random streams used for different purposes.
const DIRECTION_TAG: u64 = 0x6469_7265;
const REFERENCE_TAG: u64 = 0x7265_6665;

fn values_of(traj: &Trajectory, f: &Observable) -> Result<Vec<f64>> {
    let name = f.name();
    if let Some(j) = traj.functional_names.iter().position(|n| *n == name) {
        return Ok(traj.track.iter().map(|r| r.functionals[j]).collect());
    }
    if f.from_norms(StateNorms { h: 0.0, hdelta: 0.0 }).is_some() {
        return Ok(traj
            .track
            .iter()
            .map(|r| {
                f.from_norms(StateNorms {
                    h: r.norms.h,
                    hdelta: r.norms.hdelta,
                })
                .expect("norm-only functional")
            })
            .collect());
    }
    let states = traj.x_states.as_ref().ok_or_else(|| {
        Error::param(format!(
            "functional `{name}` needs stored states or a recorded column"
        ))
    })?;
    Ok(states
        .iter()
        .zip(&traj.track)
        .map(|(x, r)| {
            f.eval(
                x,
                StateNorms {
                    h: r.norms.h,
                    hdelta: r.norms.hdelta,
                },
            )
        })
        .collect())
}

/// Time average with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAverage {
    pub value: f64,
    /// `None` when the record is too short for 20 batches.
    pub stderr: Option<f64>,
    pub horizon: f64,
}

const BATCHES: usize = 20;

/// `(1/T) integral_0^T f(X_s) ds` by the trapezoid rule on the record grid.
pub fn occupation_average(traj: &Trajectory, f: &Observable) -> Result<f64> {
    Ok(occupation_estimate(traj, f)?.value)
}

/// [`occupation_average`] together with a batch-means standard error.
pub fn occupation_estimate(traj: &Trajectory, f: &Observable) -> Result<TimeAverage> {
    if traj.is_empty() {
        return Err(Error::param("occupation average of an empty trajectory"));
    }
    let v = values_of(traj, f)?;
    let t = traj.times();
    if v.len() == 1 {
        return Ok(TimeAverage {
            value: v[0],
            stderr: None,
            horizon: 0.0,
        });
    }
    let span = t[t.len() - 1] - t[0];
    let mut integral = 0.0;
    let mut segments = Vec::with_capacity(v.len() - 1);
    for i in 0..v.len() - 1 {
        let mid = 0.5 * (v[i] + v[i + 1]);
        integral += mid * (t[i + 1] - t[i]);
        segments.push(mid);
    }
    // A constant functional must come back exactly.
    let value = if v.iter().all(|&x| x == v[0]) { v[0] } else { integral / span };
    Ok(TimeAverage {
        value,
        stderr: batch_means_stderr(&segments, BATCHES),
        horizon: span,
    })
}

/// Pooled, time-weighted histogram of `f` over a family of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Mass per bin `[e_i, e_{i+1})`; the last bin is closed on the right.
    pub masses: Vec<f64>,
    pub underflow: f64,
    pub overflow: f64,
    pub total_time: f64,
}

impl Histogram {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.underflow + self.overflow
    }

    /// Total variation distance to another histogram on the same edges.
    pub fn total_variation(&self, other: &Histogram) -> Result<f64> {
        if self.edges != other.edges {
            return Err(Error::param("histograms have different edges"));
        }
        let bins: f64 = self
            .masses
            .iter()
            .zip(&other.masses)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * (bins + (self.underflow - other.underflow).abs() + (self.overflow - other.overflow).abs()))
    }
}

/// Time averages and a histogram of the occupation measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRecord {
    pub horizon: f64,
    pub functional_averages: BTreeMap<String, f64>,
    pub histogram: Histogram,
}

/// Pushes the pooled occupation measure forward under `f` onto `edges`.
pub fn occupation_histogram(
    trajs: &[Trajectory],
    f: &Observable,
    edges: &[f64],
) -> Result<OccupationRecord> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("histogram edges must be strictly increasing, at least two"));
    }
    let first = trajs
        .first()
        .ok_or_else(|| Error::param("no trajectories for the histogram"))?;
    let grid = first.times();
    if grid.is_empty() {
        return Err(Error::param("empty trajectory in histogram"));
    }
    for t in trajs {
        if t.times() != grid {
            return Err(Error::param("trajectories are recorded on different time grids"));
        }
    }
    // Trapezoid weights; a single record carries unit weight.
    let mut w = vec![0.0; grid.len()];
    if grid.len() == 1 {
        w[0] = 1.0;
    }
    for i in 0..grid.len().saturating_sub(1) {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    let per_traj: f64 = w.iter().sum();
    let total = per_traj * trajs.len() as f64;
    let nbins = edges.len() - 1;
    let mut masses = vec![0.0; nbins];
    let (mut under, mut over) = (0.0, 0.0);
    let mut integral = 0.0;
    for t in trajs {
        for (v, wi) in values_of(t, f)?.into_iter().zip(&w) {
            let m = wi / total;
            integral += v * m;
            if v < edges[0] {
                under += m;
            } else if v > edges[nbins] {
                over += m;
            } else {
                let b = edges.partition_point(|e| *e <= v).clamp(1, nbins) - 1;
                masses[b] += m;
            }
        }
    }
    let mut functional_averages = BTreeMap::new();
    functional_averages.insert(f.name(), integral);
    Ok(OccupationRecord {
        horizon: grid[grid.len() - 1] - grid[0],
        functional_averages,
        histogram: Histogram {
            edges: edges.to_vec(),
            masses,
            underflow: under,
            overflow: over,
            total_time: total,
        },
    })
}

/// First integer time `k >= 1` with `|X_k|_{H_delta} <= M`, or censoring at `horizon_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingSample {
    /// `None` when censored.
    pub tau: Option<u64>,
    pub m: f64,
    pub delta: f64,
    pub horizon_n: u64,
}

impl HittingSample {
    pub fn censored(&self) -> bool {
        self.tau.is_none()
    }
}

/// Reads `tau_M` off the integer-time records of `traj`.
pub fn hitting_time(traj: &Trajectory, m: f64, delta: f64) -> Result<HittingSample> {
    if (traj.delta - delta).abs() > 1e-12 {
        return Err(Error::param(format!(
            "trajectory records H_delta with delta = {}, asked for {delta}",
            traj.delta
        )));
    }
    let mut norms = Vec::new();
    for r in &traj.track {
        let k = r.time.round();
        if k >= 1.0 && (r.time - k).abs() < 1e-9 {
            if k as usize != norms.len() + 1 {
                return Err(Error::param(format!(
                    "integer-time records must be consecutive from k = 1; found k = {k}"
                )));
            }
            norms.push(r.norms.hdelta);
        }
    }
    if norms.is_empty() {
        return Err(Error::param("trajectory has no records at integer times k >= 1"));
    }
    let tau = norms.iter().position(|&v| v <= m).map(|i| i as u64 + 1);
    Ok(HittingSample {
        tau,
        m,
        delta,
        horizon_n: norms.len() as u64,
    })
}

/// Simulates `n_traj` independent paths from `x0` and returns hitting samples for each `M`
/// (outer index: `M`, inner: trajectory). A path stops once every threshold is hit.
pub fn simulate_hitting(
    cfg: &SimConfig,
    x0_norm: f64,
    m_grid: &[f64],
    horizon_n: u64,
    n_traj: usize,
    workers: usize,
) -> Result<Vec<Vec<HittingSample>>> {
    cfg.validate()?;
    if m_grid.is_empty() || m_grid.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::param("M grid must be nonempty and positive"));
    }
    if horizon_n == 0 || n_traj == 0 {
        return Err(Error::param("horizon and trajectory count must be >= 1"));
    }
    let per_unit = cfg.steps_per_unit()?;
    let dir_seed = derive_seed(cfg.seed, DIRECTION_TAG);
    let runs: Vec<Result<Vec<Option<u64>>>> = map_indexed(workers, n_traj, |i| {
        let mut rng = SeedStream::new(cfg.seed, i as u64).rng();
        let mut dir = SeedStream::new(dir_seed, i as u64).rng();
        let x0 = SpectralField::random_direction(cfg.modes, x0_norm, &mut dir);
        let mut sim = Simulator::new(x0, cfg)?;
        let mut taus = vec![None; m_grid.len()];
        for k in 1..=horizon_n {
            for _ in 0..per_unit {
                sim.step(&mut rng).map_err(|e| e.with_trajectory(i))?;
            }
            let v = sim.norm_hdelta();
            for (tau, &m) in taus.iter_mut().zip(m_grid) {
                if tau.is_none() && v <= m {
                    *tau = Some(k);
                }
            }
            if taus.iter().all(Option::is_some) {
                break;
            }
        }
        Ok(taus)
    });
    let runs: Vec<Vec<Option<u64>>> = runs.into_iter().collect::<Result<_>>()?;
    Ok(m_grid
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            runs.iter()
                .map(|r| HittingSample {
                    tau: r[j],
                    m,
                    delta: cfg.delta,
                    horizon_n,
                })
                .collect()
        })
        .collect())
}

/// Empirical `P(tau > n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub n: u64,
    pub count: u64,
    pub survival: f64,
}

/// Geometric fit `P(tau > n) ~ rho^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub rho: Option<f64>,
    pub r_squared: Option<f64>,
    pub fit_ok: bool,
    pub points_used: usize,
    pub n_samples: usize,
    pub survival: Vec<SurvivalPoint>,
}

/// Least-squares fit of `log P(tau > n)` against `n` over the points with `P >= 10/N`.
pub fn geometric_tail_fit(samples: &[HittingSample]) -> TailFit {
    let n = samples.len();
    let horizon = samples.iter().map(|s| s.horizon_n).min().unwrap_or(0);
    let mut survival = Vec::with_capacity(horizon as usize + 1);
    if n > 0 {
        for k in 0..=horizon {
            let count = samples
                .iter()
                .filter(|s| s.tau.is_none_or(|t| t > k))
                .count() as u64;
            survival.push(SurvivalPoint {
                n: k,
                count,
                survival: count as f64 / n as f64,
            });
        }
    }
    let floor = 10.0 / n.max(1) as f64;
    let used: Vec<&SurvivalPoint> = survival
        .iter()
        .filter(|p| p.count > 0 && p.survival >= floor)
        .collect();
    let fit = if n >= 100 && used.len() >= 3 {
        let xs: Vec<f64> = used.iter().map(|p| p.n as f64).collect();
        let ys: Vec<f64> = used.iter().map(|p| p.survival.ln()).collect();
        linear_fit(&xs, &ys)
    } else {
        None
    };
    let rho = fit.map(|f| f.slope.exp());
    TailFit {
        fit_ok: rho.is_some_and(|r| r > 0.0 && r < 1.0),
        rho,
        r_squared: fit.map(|f| f.r_squared),
        points_used: used.len(),
        n_samples: n,
        survival,
    }
}

/// Survival curve as CSV with columns `n,count,survival`.
pub fn survival_csv(fit: &TailFit) -> String {
    let mut out = String::from("n,count,survival\n");
    for p in &fit.survival {
        out.push_str(&format!(
            "{},{},{}\n",
            p.n,
            p.count,
            crate::report::fmt_f64(p.survival)
        ));
    }
    out
}

/// Exponential-moment estimate of a hitting time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    pub lambda: f64,
    pub m: f64,
    pub n: usize,
    /// Mean of `e^{lambda tau}` over uncensored samples.
    pub raw_estimate: f64,
    pub raw_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Raw mean plus the geometric-tail upper bound for censored mass; `None`
    /// without a usable fit or when the tail sum diverges.
    pub completed_estimate: Option<f64>,
    /// Headline number: the raw mean when nothing is censored, else the completed one.
    pub estimate: Option<f64>,
    pub censored_fraction: f64,
    pub rho: Option<f64>,
    pub r_squared: Option<f64>,
    /// `rho e^lambda >= 1`: the fitted tail makes the moment infinite.
    pub divergence_risk: bool,
    /// `M > (C_hat e^lambda)^(1/p)`, when a calibrated `C_hat` was supplied.
    pub threshold_check: Option<bool>,
}

/// Mean and standard error of `e^{lambda tau}` with the geometric completion for censored samples.
pub fn exp_moment_estimate(samples: &[HittingSample], lambda: f64) -> Result<RecurrenceReport> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param(format!("lambda must be > 0, got {lambda}")));
    }
    let n = samples.len();
    let taus: Vec<u64> = samples.iter().filter_map(|s| s.tau).collect();
    if taus.is_empty() {
        return Err(Error::Estimation(format!(
            "all {n} hitting samples are censored; no exponential moment is reported"
        )));
    }
    let m = samples[0].m;
    let horizon = samples.iter().map(|s| s.horizon_n).min().expect("nonempty");
    // Shift by the smallest term so identical samples reproduce it exactly.
    let base = (lambda * *taus.iter().min().expect("nonempty") as f64).exp();
    let mut shifted = Moments::default();
    for &t in &taus {
        shifted.push((lambda * t as f64).exp() - base);
    }
    let raw = base + shifted.mean();
    let se = if taus.len() > 1 { shifted.stderr() } else { f64::NAN };
    let n_cens = n - taus.len();
    let censored_fraction = n_cens as f64 / n as f64;

    let fit = geometric_tail_fit(samples);
    let divergence_risk = fit.rho.is_some_and(|r| r * lambda.exp() >= 1.0);
    let completed = match fit.rho {
        _ if n_cens == 0 => (!divergence_risk).then_some(raw),
        Some(rho) if fit.fit_ok && !divergence_risk => {
            let tail = (lambda * (horizon + 1) as f64).exp() / (1.0 - rho * lambda.exp());
            Some(raw * taus.len() as f64 / n as f64 + censored_fraction * tail)
        }
        _ => None,
    };
    Ok(RecurrenceReport {
        lambda,
        m,
        n,
        raw_estimate: raw,
        raw_stderr: se,
        ci_low: raw - 1.96 * se,
        ci_high: raw + 1.96 * se,
        completed_estimate: completed,
        estimate: completed,
        censored_fraction,
        rho: fit.rho,
        r_squared: fit.r_squared,
        divergence_risk,
        threshold_check: None,
    })
}

impl RecurrenceReport {
    /// Fills in `threshold_check` from a calibrated moment bound `c_hat` of order `p`.
    pub fn with_threshold(mut self, c_hat: f64, p: f64) -> Self {
        self.threshold_check = Some(self.m > (c_hat * self.lambda.exp()).powf(1.0 / p));
        self
    }
}

/// Which part of the state [`uniform_moment_probe`] measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentTarget {
    /// `|X_T|_{H_delta}^p`
    X,
    /// `|Y_T|_{H_delta}^p`
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub initial_norm: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n_traj: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformMomentReport {
    pub rows: Vec<MomentRow>,
    /// Largest over smallest estimate; `None` if the smallest is zero.
    pub ratio: Option<f64>,
    /// Largest estimate, the calibrated bound used by the recurrence threshold.
    pub c_hat: f64,
}

/// Estimates `E_x |X_T|_{H_delta}^p` for each `|x|_H` in `initial_norms`.
///
/// Every cell uses the same noise streams, so differences between cells come
/// from the initial condition alone. The direction of `x` is random, drawn
/// once per cell from a fixed seed.
pub fn uniform_moment_probe(
    cfg: &SimConfig,
    initial_norms: &[f64],
    n_traj: usize,
    target: MomentTarget,
    workers: usize,
) -> Result<UniformMomentReport> {
    cfg.validate()?;
    if initial_norms.is_empty() || initial_norms.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::param("initial norms must be nonempty, finite and >= 0"));
    }
    if n_traj == 0 {
        return Err(Error::param("need at least one trajectory"));
    }
    let dir_seed = derive_seed(cfg.seed, DIRECTION_TAG);
    let delta = cfg.delta_exponent();
    let steps = cfg.n_steps();
    let mut rows = Vec::with_capacity(initial_norms.len());
    for (c, &norm) in initial_norms.iter().enumerate() {
        let mut dir = SeedStream::new(dir_seed, c as u64).rng();
        let x0 = SpectralField::random_direction(cfg.modes, norm, &mut dir);
        let vals: Vec<Result<f64>> = map_indexed(workers, n_traj, |i| {
            let mut rng = SeedStream::new(cfg.seed, i as u64).rng();
            let mut sim = Simulator::new(x0.clone(), cfg)?;
            for _ in 0..steps {
                sim.step(&mut rng).map_err(|e| e.with_trajectory(i))?;
            }
            let v = match target {
                MomentTarget::X => sim.norm_hdelta(),
                MomentTarget::Y => sim.y().norm_sobolev(delta),
            };
            Ok(v.powf(cfg.p))
        });
        let mut m = Moments::default();
        for v in vals {
            m.push(v?);
        }
        rows.push(MomentRow {
            initial_norm: norm,
            estimate: m.mean(),
            stderr: if n_traj > 1 { m.stderr() } else { f64::NAN },
            n_traj,
        });
    }
    let max = rows.iter().map(|r| r.estimate).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.estimate).fold(f64::INFINITY, f64::min);
    Ok(UniformMomentReport {
        ratio: (min > 0.0).then(|| max / min),
        c_hat: max,
        rows,
    })
}

/// Long-run estimate of `pi(f)` from one path started at zero, discarding a burn-in fraction.
pub fn reference_average(
    cfg: &SimConfig,
    f: &Observable,
    horizon: f64,
    burn_in: f64,
) -> Result<TimeAverage> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::param(format!("burn-in fraction must be in [0, 1), got {burn_in}")));
    }
    let run_cfg = SimConfig {
        horizon,
        ..cfg.clone()
    };
    run_cfg.validate()?;
    let mut rng = SeedStream::new(derive_seed(cfg.seed, REFERENCE_TAG), 0).rng();
    let opts = RecordOptions {
        store_states: false,
        functionals: vec![f.clone()],
    };
    let traj = simulate_with(SpectralField::zeros(cfg.modes), &run_cfg, &opts, &mut rng)?;
    let start = burn_in * horizon;
    let kept = Trajectory {
        track: traj
            .track
            .into_iter()
            .filter(|r| r.time >= start - 1e-12)
            .collect(),
        ..traj
    };
    occupation_estimate(&kept, f)
}

/// Parameters of [`ldp_decay_probe`] beyond the model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpOptions {
    /// Precomputed `pi(f)`; estimated from a long run when absent.
    pub pi_hat: Option<f64>,
    pub reference_horizon: f64,
    pub burn_in: f64,
    /// Count `|L_T(f) - pi(f)| > r` instead of the upper deviation only.
    pub two_sided: bool,
}

impl Default for LdpOptions {
    fn default() -> Self {
        Self {
            pi_hat: None,
            reference_horizon: 2000.0,
            burn_in: 0.1,
            two_sided: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub horizon: f64,
    pub events: u64,
    pub n_traj: usize,
    pub probability: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// `-(1/T) log P`; `None` when no deviation was observed.
    pub rate: Option<f64>,
    /// `-(1/T) log` of the upper Wilson limit: a lower bound on the rate.
    pub rate_lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpReport {
    pub functional: String,
    pub level: f64,
    pub pi_hat: f64,
    pub two_sided: bool,
    pub rows: Vec<LdpRow>,
    /// `|rate_last - rate_prev| / rate_prev` over the last two horizons, when both are point estimates.
    pub stabilization: Option<f64>,
}

/// Occupation averages `L_T(f)` at each horizon along `n_traj` paths started at zero.
pub fn occupation_samples(
    cfg: &SimConfig,
    f: &Observable,
    horizons: &[f64],
    n_traj: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if horizons.is_empty() || horizons[0] <= 0.0 || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("horizons must be positive and strictly increasing"));
    }
    if f.from_norms(StateNorms { h: 0.0, hdelta: 0.0 }).is_none() {
        return Err(Error::param("deviation probes need a norm-based functional"));
    }
    let marks: Vec<u64> = horizons
        .iter()
        .map(|&t| crate::integrator::steps_in(t, cfg.dt))
        .collect();
    let total = *marks.last().expect("nonempty");
    let runs: Vec<Result<Vec<f64>>> = map_indexed(workers, n_traj, |i| {
        let mut rng = SeedStream::new(seed, i as u64).rng();
        let mut sim = Simulator::new(SpectralField::zeros(cfg.modes), cfg)?;
        let eval = |sim: &Simulator| {
            let n = sim.norms();
            f.from_norms(StateNorms { h: n.h, hdelta: n.hdelta }).expect("norm-based")
        };
        let mut prev = eval(&sim);
        let mut integral = 0.0;
        let mut out = Vec::with_capacity(marks.len());
        let mut next = 0;
        for step in 1..=total {
            sim.step(&mut rng).map_err(|e| e.with_trajectory(i))?;
            let cur = eval(&sim);
            integral += 0.5 * (prev + cur) * cfg.dt;
            prev = cur;
            while next < marks.len() && marks[next] == step {
                out.push(integral / (step as f64 * cfg.dt));
                next += 1;
            }
        }
        Ok(out)
    });
    runs.into_iter().collect()
}

/// Monte Carlo estimates of `-(1/T) log P(L_T(f) - pi(f) > r)` for each horizon.
pub fn ldp_decay_probe(
    cfg: &SimConfig,
    f: &Observable,
    level: f64,
    horizons: &[f64],
    n_traj: usize,
    opts: &LdpOptions,
    workers: usize,
) -> Result<LdpReport> {
    if !(level.is_finite() && level > 0.0) {
        return Err(Error::param(format!("deviation level must be > 0, got {level}")));
    }
    if n_traj == 0 {
        return Err(Error::param("need at least one trajectory"));
    }
    let pi_hat = match opts.pi_hat {
        Some(v) => v,
        None => reference_average(cfg, f, opts.reference_horizon, opts.burn_in)?.value,
    };
    let samples = occupation_samples(cfg, f, horizons, n_traj, cfg.seed, workers)?;
    let rows: Vec<LdpRow> = horizons
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let events = samples
                .iter()
                .filter(|s| {
                    let d = s[j] - pi_hat;
                    if opts.two_sided { d.abs() > level } else { d > level }
                })
                .count() as u64;
            let (lo, hi) = wilson_interval(events, n_traj as u64, 1.96);
            let p = events as f64 / n_traj as f64;
            LdpRow {
                horizon: t,
                events,
                n_traj,
                probability: p,
                wilson_low: lo,
                wilson_high: hi,
                rate: (events > 0).then(|| -p.ln() / t),
                rate_lower_bound: -hi.ln() / t,
            }
        })
        .collect();
    let stabilization = match rows.as_slice() {
        [.., a, b] => match (a.rate, b.rate) {
            (Some(ra), Some(rb)) if ra != 0.0 => Some((rb - ra).abs() / ra.abs()),
            _ => None,
        },
        _ => None,
    };
    Ok(LdpReport {
        functional: f.name(),
        level,
        pi_hat,
        two_sided: opts.two_sided,
        rows,
        stabilization,
    })
}

/// `r` such that `L_T(f) - pi(f) > r` with empirical probability `1 - q` at horizon `T`.
pub fn deviation_level(samples: &[f64], pi_hat: f64, q: f64) -> Result<f64> {
    let devs: Vec<f64> = samples.iter().map(|v| v - pi_hat).collect();
    quantile(&devs, q).ok_or_else(|| Error::Estimation("no samples for the deviation level".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{Norms, TrackRecord};

    fn track(times: &[f64], hdelta: &[f64]) -> Trajectory {
        Trajectory {
            delta: 0.25,
            functional_names: vec![],
            track: times
                .iter()
                .zip(hdelta)
                .map(|(&t, &v)| TrackRecord {
                    time: t,
                    norms: Norms { h: v, hdelta: v, y: v, zv: 0.0 },
                    functionals: vec![],
                })
                .collect(),
            x_states: None,
            y_states: None,
            z_states: None,
        }
    }

    fn geometric(n: usize, rho: f64, seed: u64) -> Vec<HittingSample> {
        use rand::Rng;
        let mut rng = SeedStream::new(seed, 0).rng();
        (0..n)
            .map(|_| {
                let mut k = 1;
                while rng.random::<f64>() < rho && k < 200 {
                    k += 1;
                }
                HittingSample { tau: Some(k), m: 1.0, delta: 0.25, horizon_n: 200 }
            })
            .collect()
    }

    #[test]
    fn constant_functional_and_empty() {
        let t = track(&[0.0, 0.3, 1.0], &[1.0, 5.0, 2.0]);
        assert_eq!(occupation_average(&t, &Observable::Constant(0.7)).unwrap(), 0.7);
        assert_eq!(occupation_average(&t, &Observable::Constant(1.0)).unwrap(), 1.0);
        let empty = track(&[], &[]);
        assert!(occupation_average(&empty, &Observable::Constant(1.0)).is_err());
    }

    #[test]
    fn histogram_masses() {
        let t = track(&[0.0, 0.5, 1.0], &[0.1, 0.2, 0.3]);
        let rec = occupation_histogram(std::slice::from_ref(&t), &Observable::Constant(0.5), &[0.0, 0.4, 0.6, 1.0]).unwrap();
        assert_eq!(rec.histogram.masses, vec![0.0, 1.0, 0.0]);
        let rec = occupation_histogram(&[t.clone(), t.clone()], &Observable::TanhH2, &[0.0, 0.02, 0.05, 1.0]).unwrap();
        assert!((rec.histogram.total_mass() - 1.0).abs() < 1e-12);
        let other = track(&[0.0, 0.4, 1.0], &[0.1, 0.2, 0.3]);
        assert!(occupation_histogram(&[t, other], &Observable::TanhH2, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn hitting_cases() {
        let t = track(&[0.0, 0.5, 1.0, 1.5, 2.0, 3.0], &[9.0, 9.0, 0.5, 9.0, 9.0, 9.0]);
        assert_eq!(hitting_time(&t, 1.0, 0.25).unwrap().tau, Some(1));
        let s = hitting_time(&t, 0.1, 0.25).unwrap();
        assert!(s.censored());
        assert_eq!(s.horizon_n, 3);
        assert!(hitting_time(&t, 1.0, 0.3).is_err());
        let none = track(&[0.0, 0.5], &[1.0, 1.0]);
        assert!(hitting_time(&none, 1.0, 0.25).is_err());
    }

    #[test]
    fn geometric_fit_and_failure() {
        let fit = geometric_tail_fit(&geometric(100_000, 0.3, 1));
        let rho = fit.rho.unwrap();
        assert!(fit.fit_ok && (0.27..=0.33).contains(&rho), "{rho}");
        let ones: Vec<HittingSample> = (0..500)
            .map(|_| HittingSample { tau: Some(1), m: 1.0, delta: 0.25, horizon_n: 200 })
            .collect();
        let fit = geometric_tail_fit(&ones);
        assert!(!fit.fit_ok && fit.rho.is_none());
        assert!(survival_csv(&fit).starts_with("n,count,survival\n0,500,"));
    }

    #[test]
    fn exp_moment_cases() {
        let ones: Vec<HittingSample> = (0..37)
            .map(|_| HittingSample { tau: Some(1), m: 1.0, delta: 0.25, horizon_n: 200 })
            .collect();
        let r = exp_moment_estimate(&ones, 0.7).unwrap();
        assert_eq!(r.raw_estimate, 0.7f64.exp());
        assert_eq!(r.estimate, Some(0.7f64.exp()));

        let cens: Vec<HittingSample> = (0..10)
            .map(|_| HittingSample { tau: None, m: 1.0, delta: 0.25, horizon_n: 5 })
            .collect();
        assert!(matches!(exp_moment_estimate(&cens, 0.5), Err(Error::Estimation(_))));
        assert!(exp_moment_estimate(&ones, 0.0).is_err());

        let g = geometric(20_000, 0.5, 3);
        let r = exp_moment_estimate(&g, 1.0).unwrap();
        assert!(r.divergence_risk);
        assert!(r.estimate.is_none());
    }

    #[test]
    fn threshold_logic() {
        let ones: Vec<HittingSample> = (0..10)
            .map(|_| HittingSample { tau: Some(1), m: 8.0, delta: 0.25, horizon_n: 200 })
            .collect();
        let r = exp_moment_estimate(&ones, 1.0).unwrap();
        assert_eq!(r.clone().with_threshold(0.1, 0.3).threshold_check, Some(true));
        assert_eq!(r.with_threshold(2.0, 0.3).threshold_check, Some(false));
    }

    #[test]
    fn deviation_level_quantile() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert!((deviation_level(&xs, 0.5, 0.9).unwrap() - 0.4).abs() < 1e-12);
    }
}

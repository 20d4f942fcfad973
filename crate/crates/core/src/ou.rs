//! The alpha-stable Ornstein-Uhlenbeck process `dZ + AZ dt = dL_t`, `Z_0 = 0`.
//!
//! Each mode is updated exactly in law:
//! `z_k <- e^{-gamma_k h} z_k + beta_k sigma_k(h) S` with
//! `sigma_k(h) = ((1 - e^{-alpha gamma_k h}) / (alpha gamma_k))^{1/alpha}`,
//! because a stochastic integral of a deterministic kernel against a stable
//! Levy process is stable with scale `(integral of |kernel|^alpha)^{1/alpha}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gamma, FractionalExponent, SpectralField};
use crate::parallel::map_indexed;
use crate::rng::SeedStream;
use crate::stable::{NoiseSpectrum, StableSampler};
use crate::stats::{linear_fit, Moments};

/// Scale of the stochastic convolution of one unit-scale mode over a step `h`.
pub fn convolution_scale(alpha: f64, gamma_k: f64, h: f64) -> f64 {
    let rate = alpha * gamma_k;
    (-(-rate * h).exp_m1() / rate).powf(1.0 / alpha)
}

/// Precomputed exact one-step update for a fixed step size.
#[derive(Debug, Clone)]
pub struct OuStepper {
    h: f64,
    decay: Vec<f64>,
    noise: Vec<f64>,
    sampler: StableSampler,
}

impl OuStepper {
    pub fn new(spectrum: &NoiseSpectrum, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::param(format!("OU step must be > 0, got {h}")));
        }
        let alpha = spectrum.alpha;
        let decay = (1..=spectrum.modes()).map(|k| (-gamma(k) * h).exp()).collect();
        let noise = spectrum
            .scales
            .iter()
            .enumerate()
            .map(|(i, b)| b * convolution_scale(alpha, gamma(i + 1), h))
            .collect();
        Ok(Self {
            h,
            decay,
            noise,
            sampler: StableSampler::new(alpha)?,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn modes(&self) -> usize {
        self.decay.len()
    }

    /// Advances `z` by one step in place.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, z: &mut SpectralField, rng: &mut R) {
        debug_assert_eq!(z.modes(), self.modes());
        for k in 0..self.decay.len() {
            let (d, s) = (self.decay[k], self.noise[k]);
            let zc = self.sampler.sample(rng);
            let zs = self.sampler.sample(rng);
            z.cos_mut()[k] = d * z.cos()[k] + s * zc;
            z.sin_mut()[k] = d * z.sin()[k] + s * zs;
        }
    }
}

/// Current value of the OU process together with its forcing law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuState {
    pub time: f64,
    pub field: SpectralField,
    pub spectrum: NoiseSpectrum,
}

impl OuState {
    /// Fresh process at `t = 0` with `Z_0 = 0`.
    pub fn new(spectrum: NoiseSpectrum) -> Self {
        Self {
            time: 0.0,
            field: SpectralField::zeros(spectrum.modes()),
            spectrum,
        }
    }
}

/// One exact step of size `h`.
pub fn ou_step<R: Rng + ?Sized>(state: &OuState, h: f64, rng: &mut R) -> Result<OuState> {
    let stepper = OuStepper::new(&state.spectrum, h)?;
    let mut next = state.clone();
    stepper.advance(&mut next.field, rng);
    next.time += h;
    Ok(next)
}

fn check_theta(spectrum: &NoiseSpectrum, theta: FractionalExponent) -> Result<()> {
    let limit = spectrum.beta - 1.0 / (2.0 * spectrum.alpha);
    if theta.value() < limit {
        Ok(())
    } else {
        Err(Error::param(format!(
            "theta = {} violates 0 <= theta < beta - 1/(2 alpha) = {limit:.6}",
            theta.value()
        )))
    }
}

/// Number of grid steps covering `[0, horizon]`; at least one.
fn steps_for(horizon: f64, h: f64) -> usize {
    ((horizon / h + 1e-9).floor() as usize).max(1)
}

/// Maximum of `|A^theta Z_t|_H` over the grid `{0, h, .., T}` on one path.
pub fn ou_sup_norm<R: Rng + ?Sized>(
    spectrum: &NoiseSpectrum,
    theta: FractionalExponent,
    horizon: f64,
    h: f64,
    rng: &mut R,
) -> Result<f64> {
    check_theta(spectrum, theta)?;
    if !(horizon > 0.0) {
        return Err(Error::param(format!("horizon must be > 0, got {horizon}")));
    }
    let stepper = OuStepper::new(spectrum, h)?;
    let mut z = SpectralField::zeros(spectrum.modes());
    let mut sup: f64 = 0.0;
    for _ in 0..steps_for(horizon, h) {
        stepper.advance(&mut z, rng);
        sup = sup.max(z.norm_sobolev(theta));
    }
    Ok(sup)
}

/// One horizon of [`maximal_moment_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalMomentRow {
    pub theta: f64,
    pub p: f64,
    pub horizon: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n_traj: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalMomentReport {
    pub rows: Vec<MaximalMomentRow>,
    /// Least-squares slope of `log estimate` against `log T`; `None` when undefined.
    pub slope: Option<f64>,
    pub slope_defined: bool,
}

/// Monte Carlo estimates of `E[sup_{t <= T} |A^theta Z_t|_H^p]` for each horizon.
///
/// All horizons are read off the same path per trajectory, so estimates are
/// nondecreasing in `T` pathwise.
#[allow(clippy::too_many_arguments)]
pub fn maximal_moment_probe(
    spectrum: &NoiseSpectrum,
    theta: FractionalExponent,
    p: f64,
    horizons: &[f64],
    n_traj: usize,
    h: f64,
    master_seed: u64,
    workers: usize,
) -> Result<MaximalMomentReport> {
    check_theta(spectrum, theta)?;
    if !(p > 0.0 && p < spectrum.alpha) {
        return Err(Error::param(format!(
            "moment order must satisfy 0 < p < alpha = {}, got {p}",
            spectrum.alpha
        )));
    }
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] <= 0.0 {
        return Err(Error::param("horizons must be positive and strictly increasing"));
    }
    if n_traj == 0 {
        return Err(Error::param("need at least one trajectory"));
    }
    let stepper = OuStepper::new(spectrum, h)?;
    let marks: Vec<usize> = horizons.iter().map(|&t| steps_for(t, h)).collect();
    let total = *marks.last().expect("nonempty");

    let sups: Vec<Vec<f64>> = map_indexed(workers, n_traj, |i| {
        let mut rng = SeedStream::new(master_seed, i as u64).rng();
        let mut z = SpectralField::zeros(spectrum.modes());
        let mut sup: f64 = 0.0;
        let mut out = Vec::with_capacity(marks.len());
        let mut next = 0;
        for step in 1..=total {
            stepper.advance(&mut z, &mut rng);
            sup = sup.max(z.norm_sobolev(theta));
            while next < marks.len() && marks[next] == step {
                out.push(sup);
                next += 1;
            }
        }
        out
    });

    let rows: Vec<MaximalMomentRow> = horizons
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut m = Moments::default();
            sups.iter().for_each(|s| m.push(s[j].powf(p)));
            MaximalMomentRow {
                theta: theta.value(),
                p,
                horizon: t,
                estimate: m.mean(),
                stderr: if n_traj > 1 { m.stderr() } else { f64::NAN },
                n_traj,
            }
        })
        .collect();

    let slope = if n_traj >= 2 && rows.len() >= 2 && rows.iter().all(|r| r.estimate > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.horizon.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.estimate.ln()).collect();
        linear_fit(&xs, &ys).map(|f| f.slope)
    } else {
        None
    };
    Ok(MaximalMomentReport {
        rows,
        slope_defined: slope.is_some(),
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable::mode_scales;

    #[test]
    fn stationary_scale_limit() {
        let s = convolution_scale(1.8, gamma(1), 1e6);
        assert!((s - 0.0936085).abs() < 1e-6, "{s}");
    }

    #[test]
    fn scale_monotonicity() {
        for k in 1..10 {
            let a = convolution_scale(1.8, gamma(k), 1e-4);
            assert!(convolution_scale(1.8, gamma(k), 2e-4) > a);
            assert!(convolution_scale(1.8, gamma(k + 1), 1e-4) < a);
        }
    }

    #[test]
    fn zero_noise_decays_exactly() {
        let spec = mode_scales(1.8, 0.8, 3).unwrap().with_amplitude(0.0).unwrap();
        let mut state = OuState::new(spec);
        state.field.cos_mut()[0] = 1.0;
        state.field.sin_mut()[2] = -2.0;
        let mut rng = SeedStream::new(0, 0).rng();
        let next = ou_step(&state, 0.01, &mut rng).unwrap();
        assert_eq!(next.field.cos()[0], (-gamma(1) * 0.01).exp());
        assert_eq!(next.field.sin()[2], -2.0 * (-gamma(3) * 0.01).exp());
        assert_eq!(next.time, 0.01);
        assert!(ou_step(&state, 0.0, &mut rng).is_err());
    }

    #[test]
    fn theta_hypothesis() {
        let spec = mode_scales(1.8, 0.8, 8).unwrap();
        let mut rng = SeedStream::new(0, 0).rng();
        assert!(ou_sup_norm(&spec, FractionalExponent::V, 0.1, 0.01, &mut rng).is_ok());
        let bad = FractionalExponent::new(0.53).unwrap();
        assert!(ou_sup_norm(&spec, bad, 0.1, 0.01, &mut rng).is_err());
    }

    #[test]
    fn short_horizon_takes_one_step() {
        let spec = mode_scales(1.8, 0.8, 4).unwrap();
        let mut a = SeedStream::new(3, 0).rng();
        let mut b = SeedStream::new(3, 0).rng();
        let sup = ou_sup_norm(&spec, FractionalExponent::H, 0.001, 0.01, &mut a).unwrap();
        let one = ou_step(&OuState::new(spec), 0.01, &mut b).unwrap();
        assert_eq!(sup, one.field.norm_h());
    }

    #[test]
    fn probe_validation_and_degenerate_sample() {
        let spec = mode_scales(1.8, 0.8, 4).unwrap();
        let th = FractionalExponent::V;
        assert!(maximal_moment_probe(&spec, th, 1.9, &[1.0], 10, 0.01, 1, 1).is_err());
        assert!(maximal_moment_probe(&spec, th, 0.5, &[2.0, 1.0], 10, 0.01, 1, 1).is_err());
        let r = maximal_moment_probe(&spec, th, 0.5, &[0.1, 0.2], 1, 0.01, 1, 1).unwrap();
        assert!(!r.slope_defined && r.slope.is_none());
        assert!(r.rows[0].estimate > 0.0);
    }

    #[test]
    fn probe_is_monotone_in_horizon() {
        let spec = mode_scales(1.8, 0.8, 8).unwrap();
        let r = maximal_moment_probe(&spec, FractionalExponent::V, 0.5, &[0.1, 0.2, 0.4], 50, 0.01, 5, 2)
            .unwrap();
        assert!(r.rows.windows(2).all(|w| w[1].estimate >= w[0].estimate));
        assert!(r.slope.is_some());
    }
}

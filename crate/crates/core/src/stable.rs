//! Symmetric alpha-stable sampling and the spectral coloring of the forcing.
//!
//! Convention: the standard symmetric stable law has characteristic function
//! `exp(-|t|^alpha)`; a law with scale `s` has `exp(-s^alpha |t|^alpha)`.
//! At `alpha = 2` this is a centred Gaussian with variance `2 s^2`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::distr::Open01;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::gamma;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 1.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "stability index must satisfy 1 < alpha <= 2, got {alpha}"
        )))
    }
}

/// Parameters of a one-dimensional symmetric stable law. There is no skewness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    alpha: f64,
    scale: f64,
}

impl StableParams {
    pub fn new(alpha: f64, scale: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::param(format!("stable scale must be > 0, got {scale}")));
        }
        Ok(Self { alpha, scale })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Chambers-Mallows-Stuck map from `v ~ U(-pi/2, pi/2)` and `w ~ Exp(1)` to a
/// standard symmetric stable variate.
#[inline]
pub fn cms_transform(alpha: f64, v: f64, w: f64) -> f64 {
    let inv_alpha = 1.0 / alpha;
    let tail_exp = (1.0 - alpha) * inv_alpha;
    (alpha * v).sin() / v.cos().powf(inv_alpha) * ((v - alpha * v).cos() / w).powf(tail_exp)
}

/// Pre-validated CMS sampler for hot loops.
#[derive(Debug, Clone, Copy)]
pub struct StableSampler {
    alpha: f64,
    inv_alpha: f64,
}

impl StableSampler {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            inv_alpha: 1.0 / alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        let v = PI * u - FRAC_PI_2;
        let w: f64 = rng.sample(Exp1);
        let a = self.alpha;
        if a == 2.0 {
            return 2.0 * v.sin() * w.sqrt();
        }
        let (sv, cv) = v.sin_cos();
        let (sa, ca) = (a * v).sin_cos();
        // cos((1 - a) v) = cos(v - a v)
        let c1a = cv * ca + sv * sa;
        let log_mag = self.inv_alpha * ((1.0 - a) * (c1a / w).ln() - cv.ln());
        sa * log_mag.exp()
    }
}

/// One draw with characteristic function `exp(-|t|^alpha)`.
pub fn sample_standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    Ok(StableSampler::new(alpha)?.sample(rng))
}

/// Increment of a stable Levy process over a step `dt`: `scale * dt^(1/alpha) * S`.
pub fn stable_increment<R: Rng + ?Sized>(
    params: &StableParams,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param(format!("time step must be > 0, got {dt}")));
    }
    let s = sample_standard_stable(params.alpha, rng)?;
    Ok(params.scale * dt.powf(1.0 / params.alpha) * s)
}

/// Per-mode amplitudes of the cylindrical forcing, `amplitude * gamma_k^(-beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    pub alpha: f64,
    pub beta: f64,
    /// Common factor in front of `gamma_k^(-beta)`; 1 unless rescaled, 0 switches the noise off.
    pub amplitude: f64,
    pub scales: Vec<f64>,
    pub admissible: bool,
}

impl NoiseSpectrum {
    pub fn modes(&self) -> usize {
        self.scales.len()
    }

    /// Same spectrum with every mode scale multiplied by `amplitude`.
    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::param(format!(
                "noise amplitude must be >= 0, got {amplitude}"
            )));
        }
        let mut out = mode_scales(self.alpha, self.beta, self.modes())?;
        out.amplitude = amplitude;
        out.scales.iter_mut().for_each(|s| *s *= amplitude);
        Ok(out)
    }

    /// Checks `alpha in (3/2, 2)` and `1/2 + 1/(2 alpha) < beta < 3/2 - 1/alpha`.
    pub fn check_admissible(&self) -> Result<()> {
        admissibility(self.alpha, self.beta)
    }
}

/// Whether `(alpha, beta)` lies in the regime where the model is well posed and ergodic.
pub fn is_admissible(alpha: f64, beta: f64) -> bool {
    admissibility(alpha, beta).is_ok()
}

fn admissibility(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 1.5 && alpha < 2.0) {
        return Err(Error::param(format!(
            "inadmissible noise: alpha = {alpha} violates 3/2 < alpha < 2"
        )));
    }
    let lo = 0.5 + 0.5 / alpha;
    let hi = 1.5 - 1.0 / alpha;
    if !(beta > lo && beta < hi) {
        return Err(Error::param(format!(
            "inadmissible noise: beta = {beta} violates 1/2 + 1/(2 alpha) < beta < 3/2 - 1/alpha, \
             i.e. {lo:.4} < beta < {hi:.4} at alpha = {alpha}"
        )));
    }
    Ok(())
}

/// Builds the spectrum `beta_k = (4 pi^2 k^2)^(-beta)` for `k = 1..=modes`.
pub fn mode_scales(alpha: f64, beta: f64, modes: usize) -> Result<NoiseSpectrum> {
    check_alpha(alpha)?;
    if modes == 0 {
        return Err(Error::param("mode count must be >= 1"));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::param(format!("decay exponent must be > 0, got {beta}")));
    }
    let scales = (1..=modes).map(|k| gamma(k).powf(-beta)).collect();
    Ok(NoiseSpectrum {
        alpha,
        beta,
        amplitude: 1.0,
        scales,
        admissible: is_admissible(alpha, beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn cms_at_two_reduces_to_gaussian_form() {
        assert_eq!(cms_transform(2.0, 0.0, 1.3), 0.0);
        let (v, w) = (0.4_f64, 0.7_f64);
        let expected = 2.0 * v.sin() * w.sqrt();
        assert!((cms_transform(2.0, v, w) - expected).abs() < 1e-14);
    }

    #[test]
    fn fast_sampler_matches_cms_formula() {
        let s = StableSampler::new(1.7).unwrap();
        let mut a = SeedStream::new(1, 0).rng();
        let mut b = SeedStream::new(1, 0).rng();
        for _ in 0..1000 {
            let x = s.sample(&mut a);
            let u: f64 = b.sample(Open01);
            let w: f64 = b.sample(Exp1);
            let y = cms_transform(1.7, PI * u - FRAC_PI_2, w);
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn alpha_out_of_range() {
        let mut rng = SeedStream::new(1, 0).rng();
        assert!(sample_standard_stable(1.0, &mut rng).is_err());
        assert!(sample_standard_stable(2.1, &mut rng).is_err());
        assert!(StableParams::new(1.5, 0.0).is_err());
    }

    #[test]
    fn increment_rejects_nonpositive_step() {
        let p = StableParams::new(1.8, 1.0).unwrap();
        let mut rng = SeedStream::new(1, 0).rng();
        assert!(stable_increment(&p, 0.0, &mut rng).is_err());
        assert!(stable_increment(&p, -1.0, &mut rng).is_err());
    }

    #[test]
    fn gaussian_limit_variance() {
        let mut rng = SeedStream::new(11, 0).rng();
        let p = StableParams::new(2.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..200_000)
            .map(|_| stable_increment(&p, 1.0, &mut rng).unwrap())
            .collect();
        let var = crate::stats::Moments::from_slice(&xs).variance();
        assert!((var - 2.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn first_mode_scales() {
        let s = mode_scales(1.8, 1.0, 4).unwrap();
        assert!((s.scales[0] - 0.025330).abs() < 1e-6);
        let s = mode_scales(1.8, 0.8, 4).unwrap();
        assert!((s.scales[0] - 0.052834).abs() < 1e-6);
    }

    #[test]
    fn admissibility_flag() {
        assert!(mode_scales(1.8, 0.8, 1).unwrap().admissible);
        assert!(!mode_scales(1.8, 1.2, 1).unwrap().admissible);
        let err = mode_scales(1.8, 1.2, 1)
            .unwrap()
            .check_admissible()
            .unwrap_err();
        assert!(err
            .to_string()
            .contains("1/2 + 1/(2 alpha) < beta < 3/2 - 1/alpha"));
        assert!(!is_admissible(2.0, 0.8));
    }

    #[test]
    fn scale_ratio_and_monotonicity() {
        let beta = 0.83;
        let s = mode_scales(1.8, beta, 64).unwrap();
        assert!(s.scales.windows(2).all(|w| w[1] < w[0]));
        for k in 1..=32 {
            let ratio = s.scales[2 * k - 1] / s.scales[k - 1];
            assert!((ratio - 2f64.powf(-2.0 * beta)).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_amplitude_silences_noise() {
        let s = mode_scales(1.8, 0.8, 8)
            .unwrap()
            .with_amplitude(0.0)
            .unwrap();
        assert!(s.scales.iter().all(|&x| x == 0.0));
        assert!(mode_scales(1.8, 0.8, 8)
            .unwrap()
            .with_amplitude(-1.0)
            .is_err());
    }
}

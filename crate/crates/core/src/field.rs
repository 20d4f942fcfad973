//! Zero-mean real fields on the unit torus in a truncated real Fourier basis.
//!
//! A field with `K` modes is
//! `x(xi) = sum_{k=1..K} a_k sqrt(2) cos(2 pi k xi) + b_k sqrt(2) sin(2 pi k xi)`,
//! so that `|x|_H^2 = sum_k a_k^2 + b_k^2`. The Laplacian acts diagonally with
//! eigenvalues `gamma_k = 4 pi^2 k^2` on both the cosine and the sine mode.
//!
//! Pointwise operations (the cubic nonlinearity, `L^4` and `L^6` integrals) go
//! through a [`Grid`]: an FFT collocation grid with at least `4K + 1` points so
//! that products up to degree four are integrated exactly and the cubic is free
//! of aliasing on the retained band.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::ops::{Add, Sub};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue `4 pi^2 k^2` of `-Laplacian` on mode `k`.
#[inline]
pub fn gamma(k: usize) -> f64 {
    4.0 * PI * PI * (k * k) as f64
}

/// Squared-norm weights `gamma_k^(2 sigma)`, `k = 1..=modes`.
pub fn sobolev_weights(modes: usize, sigma: FractionalExponent) -> Vec<f64> {
    (1..=modes).map(|k| gamma(k).powf(2.0 * sigma.value())).collect()
}

/// Exponent `sigma >= 0` of the fractional power `A^sigma`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FractionalExponent(f64);

impl FractionalExponent {
    /// `sigma = 0`, the base space `H`.
    pub const H: FractionalExponent = FractionalExponent(0.0);
    /// `sigma = 1/2`, the energy space `V`.
    pub const V: FractionalExponent = FractionalExponent(0.5);

    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma >= 0.0 {
            Ok(Self(sigma))
        } else {
            Err(Error::param(format!("fractional exponent must be >= 0, got {sigma}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Truncated Fourier representation of a zero-mean real field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(modes: usize) -> Self {
        Self {
            cos: vec![0.0; modes],
            sin: vec![0.0; modes],
        }
    }

    pub fn from_coeffs(cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        if cos.len() != sin.len() || cos.is_empty() {
            return Err(Error::param(format!(
                "cosine and sine coefficient lists must be nonempty and equal in length ({} vs {})",
                cos.len(),
                sin.len()
            )));
        }
        if cos.iter().chain(&sin).any(|c| !c.is_finite()) {
            return Err(Error::param("field coefficients must be finite"));
        }
        Ok(Self { cos, sin })
    }

    /// Inverse of [`SpectralField::to_flat`]: `[a_1..a_K, b_1..b_K]`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::param("flat field must have even length"));
        }
        let k = flat.len() / 2;
        Self::from_coeffs(flat[..k].to_vec(), flat[k..].to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.cos.iter().chain(&self.sin).copied().collect()
    }

    /// Field in a uniformly random direction with `|x|_H = norm`.
    pub fn random_direction<R: Rng + ?Sized>(modes: usize, norm: f64, rng: &mut R) -> Self {
        let mut x = Self::zeros(modes);
        if norm == 0.0 {
            return x;
        }
        for c in x.cos.iter_mut().chain(x.sin.iter_mut()) {
            *c = rng.sample(StandardNormal);
        }
        let n = x.norm_h();
        x.scale(norm / n);
        x
    }

    pub fn modes(&self) -> usize {
        self.cos.len()
    }

    pub fn cos(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin(&self) -> &[f64] {
        &self.sin
    }

    pub fn cos_mut(&mut self) -> &mut [f64] {
        &mut self.cos
    }

    pub fn sin_mut(&mut self) -> &mut [f64] {
        &mut self.sin
    }

    pub fn is_finite(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|c| c.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.cos.iter_mut().chain(self.sin.iter_mut()).for_each(|c| *c *= factor);
    }

    /// Mode-wise energy `a_k^2 + b_k^2`, `k = 1..K`.
    fn mode_energy(&self) -> impl Iterator<Item = f64> + '_ {
        self.cos.iter().zip(&self.sin).map(|(a, b)| a * a + b * b)
    }

    pub fn norm_h(&self) -> f64 {
        self.mode_energy().sum::<f64>().sqrt()
    }

    pub fn norm_v(&self) -> f64 {
        self.norm_sobolev(FractionalExponent::V)
    }

    /// `|A^sigma x|_H = (sum_k gamma_k^(2 sigma) (a_k^2 + b_k^2))^(1/2)`.
    pub fn norm_sobolev(&self, sigma: FractionalExponent) -> f64 {
        let s = sigma.value();
        if s == 0.0 {
            return self.norm_h();
        }
        self.mode_energy()
            .enumerate()
            .map(|(i, e)| gamma(i + 1).powf(2.0 * s) * e)
            .sum::<f64>()
            .sqrt()
    }

    /// `(sum_k w_k (a_k^2 + b_k^2))^(1/2)` for weights from [`sobolev_weights`].
    pub fn norm_weighted(&self, weights: &[f64]) -> f64 {
        debug_assert_eq!(weights.len(), self.modes());
        self.mode_energy()
            .zip(weights)
            .map(|(e, w)| w * e)
            .sum::<f64>()
            .sqrt()
    }

    /// `(integral of x^4)^(1/4)`, exact for the trigonometric polynomial.
    pub fn norm_l4(&self) -> f64 {
        with_grid(self.modes(), 4, |g| g.norm_l4(self))
    }

    /// `e^{-At} x`.
    pub fn apply_semigroup(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::param(format!("semigroup time must be >= 0, got {t}")));
        }
        let mut out = self.clone();
        for k in 1..=self.modes() {
            let d = (-gamma(k) * t).exp();
            out.cos[k - 1] *= d;
            out.sin[k - 1] *= d;
        }
        Ok(out)
    }

    /// `A^sigma x`.
    pub fn apply_fractional(&self, sigma: FractionalExponent) -> Self {
        let mut out = self.clone();
        for k in 1..=self.modes() {
            let m = gamma(k).powf(sigma.value());
            out.cos[k - 1] *= m;
            out.sin[k - 1] *= m;
        }
        out
    }

    /// Translate by `c`: `x(. + c)`, a phase rotation of each mode.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for k in 1..=self.modes() {
            let (s, co) = (2.0 * PI * k as f64 * c).sin_cos();
            let (a, b) = (self.cos[k - 1], self.sin[k - 1]);
            out.cos[k - 1] = a * co + b * s;
            out.sin[k - 1] = b * co - a * s;
        }
        out
    }

    /// Pointwise value at `xi`, by direct summation.
    pub fn eval(&self, xi: f64) -> f64 {
        (1..=self.modes())
            .map(|k| {
                let (s, c) = (2.0 * PI * k as f64 * xi).sin_cos();
                SQRT_2 * (self.cos[k - 1] * c + self.sin[k - 1] * s)
            })
            .sum()
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &SpectralField) {
        debug_assert_eq!(self.modes(), other.modes());
        for (a, b) in self.cos.iter_mut().zip(&other.cos) {
            *a += factor * b;
        }
        for (a, b) in self.sin.iter_mut().zip(&other.sin) {
            *a += factor * b;
        }
    }

    pub fn to_csv_line(&self) -> String {
        self.to_flat()
            .iter()
            .map(|v| crate::report::fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let flat = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::param(format!("bad field value {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_flat(&flat)
    }

    pub fn to_json(&self) -> String {
        let values: Vec<serde_json::Value> = self.to_flat().into_iter().map(Into::into).collect();
        crate::report::to_json_string(&serde_json::Value::Array(values))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let flat: Vec<f64> = serde_json::from_str(text)?;
        Self::from_flat(&flat)
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;

    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;

    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

/// Smallest 5-smooth integer `>= n`; rustfft is fastest on such sizes.
fn smooth_size(n: usize) -> usize {
    (n..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("unbounded search")
}

/// FFT collocation workspace for fields with a fixed mode count.
pub struct Grid {
    modes: usize,
    points: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    values: Vec<f64>,
}

impl Grid {
    /// Grid exact for products of up to four fields (`>= 4K + 1` points).
    pub fn new(modes: usize) -> Self {
        Self::with_degree(modes, 4)
    }

    /// Grid with at least `degree * K + 1` points.
    pub fn with_degree(modes: usize, degree: usize) -> Self {
        assert!(modes >= 1, "a grid needs at least one mode");
        let points = smooth_size(degree * modes + 1);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(points);
        let inverse = planner.plan_fft_inverse(points);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            modes,
            points,
            forward,
            inverse,
            buf: vec![Complex::default(); points],
            scratch: vec![Complex::default(); scratch_len],
            values: vec![0.0; points],
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Point values `x(j / N)`, `j = 0..N`.
    pub fn to_grid(&mut self, x: &SpectralField) -> &[f64] {
        self.synthesize(x);
        &self.values
    }

    fn synthesize(&mut self, x: &SpectralField) {
        assert_eq!(x.modes(), self.modes, "field/grid mode count mismatch");
        let n = self.points;
        self.buf.iter_mut().for_each(|c| *c = Complex::default());
        for k in 1..=self.modes {
            let c = Complex::new(x.cos[k - 1], -x.sin[k - 1]) / SQRT_2;
            self.buf[k] = c;
            self.buf[n - k] = c.conj();
        }
        self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (v, c) in self.values.iter_mut().zip(&self.buf) {
            *v = c.re;
        }
    }

    /// Projects the current point values onto modes `1..=K`, dropping the mean.
    fn analyze_into(&mut self, out: &mut SpectralField) {
        for (c, v) in self.buf.iter_mut().zip(&self.values) {
            *c = Complex::new(*v, 0.0);
        }
        self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);
        let norm = SQRT_2 / self.points as f64;
        for k in 1..=self.modes {
            out.cos[k - 1] = self.buf[k].re * norm;
            out.sin[k - 1] = -self.buf[k].im * norm;
        }
    }

    /// Galerkin projection of a point-value array onto the retained modes.
    pub fn from_grid(&mut self, values: &[f64]) -> SpectralField {
        assert_eq!(values.len(), self.points);
        self.values.copy_from_slice(values);
        let mut out = SpectralField::zeros(self.modes);
        self.analyze_into(&mut out);
        out
    }

    /// Mean of `x^p` over the torus by the periodic trapezoid rule.
    pub fn mean_power(&mut self, x: &SpectralField, p: i32) -> f64 {
        self.synthesize(x);
        self.values.iter().map(|v| v.powi(p)).sum::<f64>() / self.points as f64
    }

    pub fn norm_l4(&mut self, x: &SpectralField) -> f64 {
        self.mean_power(x, 4).max(0.0).powf(0.25)
    }

    /// Writes `P_K(u - u^3)` into `out` (mean removed, truncated to `K` modes)
    /// and returns `max_j u_j^2` over the grid.
    ///
    /// Fails with [`Error::StepRejected`] if the point values overflow.
    pub fn nonlinearity_into(&mut self, u: &SpectralField, out: &mut SpectralField) -> Result<f64> {
        self.synthesize(u);
        let mut max_sq: f64 = 0.0;
        let mut finite = true;
        for v in self.values.iter_mut() {
            let sq = *v * *v;
            max_sq = max_sq.max(sq);
            *v -= sq * *v;
            finite &= v.is_finite();
        }
        if !finite || !max_sq.is_finite() {
            return Err(Error::StepRejected {
                time: f64::NAN,
                reason: "non-finite values in the cubic nonlinearity".into(),
            });
        }
        self.analyze_into(out);
        Ok(max_sq)
    }

    pub fn nonlinearity(&mut self, u: &SpectralField) -> Result<SpectralField> {
        let mut out = SpectralField::zeros(self.modes);
        self.nonlinearity_into(u, &mut out)?;
        Ok(out)
    }
}

thread_local! {
    static GRIDS: RefCell<HashMap<(usize, usize), Grid>> = RefCell::new(HashMap::new());
}

/// Runs `f` with a cached per-thread grid for `(modes, degree)`.
pub fn with_grid<T>(modes: usize, degree: usize, f: impl FnOnce(&mut Grid) -> T) -> T {
    GRIDS.with(|cell| {
        let mut grids = cell.borrow_mut();
        let grid = grids
            .entry((modes, degree))
            .or_insert_with(|| Grid::with_degree(modes, degree));
        f(grid)
    })
}

/// `P_K(u - u^3)` projected back onto the zero-mean modes `1..=K`.
pub fn nonlinearity(u: &SpectralField) -> Result<SpectralField> {
    with_grid(u.modes(), 4, |g| g.nonlinearity(u))
}

/// Both sides of the `L^4`/`V`/`H` embedding chain and the cubic ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    /// `|x|_{L4}^4 <= |x|_V^2 |x|_H^2`
    pub l4_holds: bool,
    pub l4_slack: f64,
    /// `|x|_V^2 |x|_H^2 <= |x|_V^4`
    pub vh_holds: bool,
    pub vh_slack: f64,
    /// `|x^3|_{L2} / (|A^{1/4} x|_H^2 |x|_H)`; finite for every nonzero field.
    pub cubic_ratio: f64,
    pub cubic_ratio_finite: bool,
}

/// Evaluates the embedding inequalities on a nonzero field.
pub fn verify_embedding_inequalities(x: &SpectralField) -> Result<EmbeddingReport> {
    let h = x.norm_h();
    if h == 0.0 {
        return Err(Error::param("embedding check needs a nonzero field"));
    }
    let v = x.norm_v();
    let l4_4 = with_grid(x.modes(), 4, |g| g.mean_power(x, 4));
    let cube_sq = with_grid(x.modes(), 6, |g| g.mean_power(x, 6));
    let quarter = x.norm_sobolev(FractionalExponent(0.25));
    let l4_slack = v * v * h * h - l4_4;
    let vh_slack = v.powi(4) - v * v * h * h;
    let cubic_ratio = cube_sq.sqrt() / (quarter * quarter * h);
    Ok(EmbeddingReport {
        l4_holds: l4_slack >= 0.0,
        l4_slack,
        vh_holds: vh_slack >= 0.0,
        vh_slack,
        cubic_ratio,
        cubic_ratio_finite: cubic_ratio.is_finite(),
    })
}

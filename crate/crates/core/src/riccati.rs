//! The comparison equation `g' = -g^2 + Kc^2`.
//!
//! Any energy `h` with `h' <= -h^2 + Kc^2` and `h(0) = g(0)` stays below `g`,
//! and `g` forgets its initial value: on `[T/2, T]` it is bounded by
//! `Kc (1 + 2 / (e^T - 1))` whatever `g(0) >= 0` was.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this relative distance from the equilibrium the linearised relaxation is used.
const SERIES_CUTOFF: f64 = 1e-8;

/// Initial value, equilibrium level and horizon of one comparison problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiInput {
    pub g0: f64,
    pub kc: f64,
    pub horizon: f64,
}

impl RiccatiInput {
    pub fn new(g0: f64, kc: f64, horizon: f64) -> Result<Self> {
        if !(g0.is_finite() && g0 >= 0.0) {
            return Err(Error::param(format!("g0 must be finite and >= 0, got {g0}")));
        }
        if !(kc.is_finite() && kc >= 1.0) {
            return Err(Error::param(format!("Kc must be >= 1, got {kc}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param(format!("horizon must be > 0, got {horizon}")));
        }
        Ok(Self { g0, kc, horizon })
    }
}

/// Closed-form solution at time `t >= 0`, without range checks.
///
/// Written as `Kc + 2 Kc d e^{-2 Kc t} / ((g0 + Kc) - d e^{-2 Kc t})` with
/// `d = g0 - Kc`, which neither overflows for large `t` nor loses the sign of `d`.
pub(crate) fn riccati_value(g0: f64, kc: f64, t: f64) -> f64 {
    let d = g0 - kc;
    let decay = (-2.0 * kc * t).exp();
    if d.abs() < SERIES_CUTOFF * kc {
        return kc + d * decay;
    }
    kc + 2.0 * kc * d * decay / ((g0 + kc) - d * decay)
}

/// `g(t)` for `0 <= t <= T`.
pub fn riccati_explicit(inp: &RiccatiInput, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= inp.horizon) {
        return Err(Error::param(format!(
            "t = {t} outside [0, {}]",
            inp.horizon
        )));
    }
    Ok(riccati_value(inp.g0, inp.kc, t))
}

fn rhs(g: f64, kc2: f64) -> f64 {
    kc2 - g * g
}

fn rk4_step(g: f64, kc2: f64, h: f64) -> f64 {
    let k1 = rhs(g, kc2);
    let k2 = rhs(g + 0.5 * h * k1, kc2);
    let k3 = rhs(g + 0.5 * h * k2, kc2);
    let k4 = rhs(g + h * k3, kc2);
    g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Classical RK4 integration from `g(0) = g0` to every time in `grid`.
///
/// Each interval is split so that `h * 2 max(g, Kc) <= 0.01`; this keeps RK4
/// accurate on the fast initial descent from large `g0`.
pub fn riccati_numeric(inp: &RiccatiInput, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.iter().any(|t| !(*t >= 0.0)) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("time grid must be nonnegative and nondecreasing"));
    }
    let kc2 = inp.kc * inp.kc;
    let mut g = inp.g0;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &target in grid {
        while t < target {
            let span = target - t;
            let stiff = 2.0 * g.max(inp.kc);
            let h = span.min(0.01 / stiff);
            g = rk4_step(g, kc2, h);
            t = if h == span { target } else { t + h };
        }
        out.push(g);
    }
    Ok(out)
}

/// `Kc (1 + 2 / (e^T - 1))`, the bound on `g` over `[T/2, T]` for every `g0 >= 0`.
pub fn halfinterval_bound(kc: f64, horizon: f64) -> Result<f64> {
    if !(kc.is_finite() && kc >= 1.0) {
        return Err(Error::param(format!("Kc must be >= 1, got {kc}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::param(format!("horizon must be > 0, got {horizon}")));
    }
    Ok(kc * (1.0 + 2.0 / horizon.exp_m1()))
}

/// Outcome of [`comparison_verify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub passed: bool,
    pub first_violation: Option<usize>,
    /// Largest `h / g - 1` over the trace; `<= 1e-6` when passed.
    pub worst_excess: f64,
}

/// Relative tolerance of [`comparison_verify`].
pub const COMPARISON_TOLERANCE: f64 = 1e-6;

/// Checks `h(t_i) <= g(t_i) (1 + 1e-6)` where `g` solves the comparison
/// equation from `g(t_0) = h(t_0)`.
pub fn comparison_verify(trace: &[(f64, f64)], kc: f64) -> Result<ComparisonOutcome> {
    let Some(&(t0, h0)) = trace.first() else {
        return Err(Error::param("comparison trace is empty"));
    };
    if !(kc.is_finite() && kc > 0.0) {
        return Err(Error::param(format!("Kc must be > 0, got {kc}")));
    }
    if trace.iter().any(|&(_, h)| !(h >= 0.0)) || trace.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::param(
            "comparison trace must be nonnegative and time-ordered",
        ));
    }
    let mut first_violation = None;
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, &(t, h)) in trace.iter().enumerate() {
        let g = riccati_value(h0, kc, t - t0);
        let excess = if g > 0.0 { h / g - 1.0 } else if h > 0.0 { f64::INFINITY } else { -1.0 };
        worst_excess = worst_excess.max(excess);
        if excess > COMPARISON_TOLERANCE && first_violation.is_none() {
            first_violation = Some(i);
        }
    }
    Ok(ComparisonOutcome {
        passed: first_violation.is_none(),
        first_violation,
        worst_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_is_fixed() {
        let inp = RiccatiInput::new(1.0, 1.0, 5.0).unwrap();
        for t in [0.0, 0.3, 5.0] {
            assert_eq!(riccati_explicit(&inp, t).unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_start_is_tanh() {
        let inp = RiccatiInput::new(0.0, 1.0, 30.0).unwrap();
        for t in [0.1, 1.0, 3.0] {
            assert!((riccati_explicit(&inp, t).unwrap() - t.tanh()).abs() < 1e-15);
        }
        assert!((riccati_explicit(&inp, 30.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn from_above() {
        let inp = RiccatiInput::new(2.0, 1.0, 1.0).unwrap();
        let e2 = 1f64.exp().powi(2);
        let expected = 1.0 + 2.0 / (3.0 * e2 - 1.0);
        assert!((riccati_explicit(&inp, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 1.09449).abs() < 1e-5);
    }

    #[test]
    fn out_of_range_time() {
        let inp = RiccatiInput::new(2.0, 1.0, 1.0).unwrap();
        assert!(riccati_explicit(&inp, 1.5).is_err());
        assert!(riccati_explicit(&inp, -0.1).is_err());
        assert!(RiccatiInput::new(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn series_branch_is_continuous() {
        let kc = 3.0;
        for t in [0.0, 0.01, 0.5] {
            let near = riccati_value(kc * (1.0 - 2e-8), kc, t);
            let inside = riccati_value(kc * (1.0 - 5e-9), kc, t);
            assert!(near < inside && inside <= kc);
            assert!((near - inside).abs() < 1e-7);
        }
    }

    #[test]
    fn halfinterval_values() {
        let b = halfinterval_bound(1.0, 1.0).unwrap();
        assert!((b - (1.0 + 2.0 / (1f64.exp() - 1.0))).abs() < 1e-15);
        assert!((b - 2.16395).abs() < 1e-5);
        assert!((halfinterval_bound(3.0, 60.0).unwrap() - 3.0).abs() < 1e-20);
    }

    #[test]
    fn comparison_cases() {
        let flat: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.01, 0.0)).collect();
        assert!(comparison_verify(&flat, 1.0).unwrap().passed);
        assert!(comparison_verify(&[], 1.0).is_err());

        // h(t) = 2 Kc^2 t overtakes g(t) = Kc tanh(Kc t) immediately.
        let kc = 1.0;
        let ramp: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.01;
                (t, (2.0 * kc * kc * t).min(0.5))
            })
            .collect();
        let out = comparison_verify(&ramp, kc).unwrap();
        assert!(!out.passed);
        assert_eq!(out.first_violation, Some(1));
    }

    #[test]
    fn numeric_matches_on_constant() {
        let inp = RiccatiInput::new(2.0, 2.0, 1.0).unwrap();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let g = riccati_numeric(&inp, &grid).unwrap();
        assert!(g.iter().all(|&v| v == 2.0));
    }
}

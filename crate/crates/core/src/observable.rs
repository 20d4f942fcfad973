//! Named scalar functionals of the state.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::SpectralField;

/// Norms every recorded state carries; built-in functionals are computed from these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateNorms {
    pub h: f64,
    pub hdelta: f64,
}

type CustomFn = Arc<dyn Fn(&SpectralField) -> f64 + Send + Sync>;

/// A scalar functional `f(X)`.
///
/// The textual names accepted by [`Observable::from_str`] are
/// `exp_neg_h2`, `tanh_h2`, `tanh_hdelta2:M`, `one` and `const:C`.
#[derive(Clone)]
pub enum Observable {
    /// `exp(-|x|_H^2)`
    ExpNegH2,
    /// `tanh(|x|_H^2)`
    TanhH2,
    /// `tanh(|x|_{H_delta}^2 - M^2)`
    TanhHdelta2 { m: f64 },
    Constant(f64),
    /// Arbitrary functional of the full state; needs stored states to be averaged after the fact.
    Custom { name: String, f: CustomFn },
}

impl Observable {
    pub fn custom(name: impl Into<String>, f: impl Fn(&SpectralField) -> f64 + Send + Sync + 'static) -> Self {
        Observable::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Observable::ExpNegH2 => "exp_neg_h2".into(),
            Observable::TanhH2 => "tanh_h2".into(),
            Observable::TanhHdelta2 { m } => format!("tanh_hdelta2:{m}"),
            Observable::Constant(c) if *c == 1.0 => "one".into(),
            Observable::Constant(c) => format!("const:{c}"),
            Observable::Custom { name, .. } => name.clone(),
        }
    }

    /// `Some(f)` when the functional depends on the state only through its norms.
    pub fn from_norms(&self, n: StateNorms) -> Option<f64> {
        Some(match self {
            Observable::ExpNegH2 => (-n.h * n.h).exp(),
            Observable::TanhH2 => (n.h * n.h).tanh(),
            Observable::TanhHdelta2 { m } => (n.hdelta * n.hdelta - m * m).tanh(),
            Observable::Constant(c) => *c,
            Observable::Custom { .. } => return None,
        })
    }

    pub fn eval(&self, x: &SpectralField, n: StateNorms) -> f64 {
        match self {
            Observable::Custom { f, .. } => f(x),
            other => other.from_norms(n).expect("built-in functionals use norms only"),
        }
    }

    /// Lower and upper bound of the range, when known.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self {
            Observable::ExpNegH2 => Some((0.0, 1.0)),
            Observable::TanhH2 => Some((0.0, 1.0)),
            Observable::TanhHdelta2 { .. } => Some((-1.0, 1.0)),
            Observable::Constant(c) => Some((*c, *c)),
            Observable::Custom { .. } => None,
        }
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({})", self.name())
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Usage(format!("functional `{s}` needs a numeric argument")))
        };
        match head {
            "exp_neg_h2" => Ok(Observable::ExpNegH2),
            "tanh_h2" => Ok(Observable::TanhH2),
            "tanh_hdelta2" => Ok(Observable::TanhHdelta2 { m: num(arg)? }),
            "one" => Ok(Observable::Constant(1.0)),
            "const" => Ok(Observable::Constant(num(arg)?)),
            _ => Err(Error::Usage(format!(
                "unknown functional `{s}` (expected exp_neg_h2, tanh_h2, tanh_hdelta2:M, one, const:C)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_name_round_trip() {
        for s in ["exp_neg_h2", "tanh_h2", "tanh_hdelta2:2", "one", "const:0.5"] {
            assert_eq!(s.parse::<Observable>().unwrap().name(), s);
        }
        assert!("tanh_hdelta2".parse::<Observable>().is_err());
        assert!("bogus".parse::<Observable>().is_err());
    }

    #[test]
    fn bounded_values() {
        let n = StateNorms { h: 3.0, hdelta: 0.1 };
        for o in [Observable::ExpNegH2, Observable::TanhH2, Observable::TanhHdelta2 { m: 1.0 }] {
            let (lo, hi) = o.range().unwrap();
            let v = o.from_norms(n).unwrap();
            assert!(v >= lo && v <= hi);
        }
        let c = Observable::custom("first_cos", |x: &SpectralField| x.cos()[0]);
        assert!(c.from_norms(n).is_none());
        let x = SpectralField::from_coeffs(vec![0.25], vec![0.0]).unwrap();
        assert_eq!(c.eval(&x, n), 0.25);
    }
}

//! Utility functions on terminal wealth. All are nondecreasing and concave
//! on (0, ∞) and equal −∞ on negative wealth.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Log,
    /// w^γ / γ with γ < 1, γ ≠ 0
    Power { gamma: f64 },
    Linear,
    /// a·w + b·ln w with a, b ≥ 0 and b > 0
    LinearLog { a: f64, b: f64 },
}

impl UtilitySpec {
    pub fn power(gamma: f64) -> Result<UtilitySpec> {
        if !(gamma < 1.0) || gamma == 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("power utility needs γ < 1, γ ≠ 0, got {gamma}")));
        }
        Ok(UtilitySpec::Power { gamma })
    }

    pub fn linear_log(a: f64, b: f64) -> Result<UtilitySpec> {
        if !(a >= 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("blend utility needs a ≥ 0, b > 0, got ({a}, {b})")));
        }
        Ok(UtilitySpec::LinearLog { a, b })
    }

    pub fn value(&self, w: f64) -> f64 {
        if w < 0.0 || w.is_nan() {
            return f64::NEG_INFINITY;
        }
        match *self {
            UtilitySpec::Log => w.ln(),
            UtilitySpec::Power { gamma } => {
                if w == 0.0 && gamma < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w.powf(gamma) / gamma
                }
            }
            UtilitySpec::Linear => w,
            UtilitySpec::LinearLog { a, b } => a * w + b * w.ln(),
        }
    }

    /// U'(w) for w > 0.
    pub fn derivative(&self, w: f64) -> f64 {
        match *self {
            UtilitySpec::Log => 1.0 / w,
            UtilitySpec::Power { gamma } => w.powf(gamma - 1.0),
            UtilitySpec::Linear => 1.0,
            UtilitySpec::LinearLog { a, b } => a + b / w,
        }
    }

    /// U''(w) for w > 0.
    pub fn second_derivative(&self, w: f64) -> f64 {
        match *self {
            UtilitySpec::Log => -1.0 / (w * w),
            UtilitySpec::Power { gamma } => (gamma - 1.0) * w.powf(gamma - 2.0),
            UtilitySpec::Linear => 0.0,
            UtilitySpec::LinearLog { b, .. } => -b / (w * w),
        }
    }

    /// Σ p_l U(w_l).
    pub fn expected(&self, probs: &[f64], wealth: &[f64]) -> f64 {
        probs.iter().zip(wealth).map(|(p, w)| p * self.value(*w)).sum()
    }
}

impl FromStr for UtilitySpec {
    type Err = Error;

    /// `log`, `linear`, `pow:<γ>` or `blend:<a>,<b>`.
    fn from_str(s: &str) -> Result<UtilitySpec> {
        let bad = || Error::Parse(format!("unknown utility '{s}' (expected log, linear, pow:<gamma> or blend:<a>,<b>)"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        match s.trim() {
            "log" => Ok(UtilitySpec::Log),
            "linear" => Ok(UtilitySpec::Linear),
            other => {
                if let Some(g) = other.strip_prefix("pow:") {
                    UtilitySpec::power(num(g)?)
                } else if let Some(ab) = other.strip_prefix("blend:") {
                    let (a, b) = ab.split_once(',').ok_or_else(bad)?;
                    UtilitySpec::linear_log(num(a)?, num(b)?)
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilitySpec::Log => write!(f, "log"),
            UtilitySpec::Power { gamma } => write!(f, "pow:{gamma}"),
            UtilitySpec::Linear => write!(f, "linear"),
            UtilitySpec::LinearLog { a, b } => write!(f, "blend:{a},{b}"),
        }
    }
}

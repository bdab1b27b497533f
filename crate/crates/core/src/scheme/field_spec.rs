//! Closed-form initial and reference profiles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Field, GridSpec};
use crate::monotone::split_call;

#[derive(Debug, Error, PartialEq)]
#[error("cannot parse field profile `{0}` (expected constant(c), cosine(mean, amp, k), step(left, right, split) or gaussian(base, amp, width))")]
pub struct FieldSpecError(pub String);

/// A field given by a formula in the cell centers.
///
/// `cosine` and `step` vary along the first axis only; `gaussian` is centered
/// in the box and uses the full distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FieldSpec {
    Constant(f64),
    /// `mean + amp·cos(kπx/L)`
    Cosine { mean: f64, amp: f64, k: f64 },
    /// `left` for `x < split·L`, `right` otherwise.
    Step { left: f64, right: f64, split: f64 },
    /// `base + amp·exp(−|x − c|²/(2 width²))`
    Gaussian { base: f64, amp: f64, width: f64 },
}

impl FieldSpec {
    pub fn eval(&self, grid: &GridSpec) -> Field {
        let len0 = grid.extent()[0];
        let dim = grid.dim();
        let ext = grid.extent().to_vec();
        match *self {
            FieldSpec::Constant(c) => Field::constant(grid, c),
            FieldSpec::Cosine { mean, amp, k } => Field::from_fn(grid, |x| {
                mean + amp * (k * std::f64::consts::PI * x[0] / len0).cos()
            }),
            FieldSpec::Step { left, right, split } => {
                Field::from_fn(grid, |x| if x[0] < split * len0 { left } else { right })
            }
            FieldSpec::Gaussian { base, amp, width } => Field::from_fn(grid, |x| {
                let r2: f64 = (0..dim).map(|a| (x[a] - 0.5 * ext[a]).powi(2)).sum();
                base + amp * (-r2 / (2.0 * width * width)).exp()
            }),
        }
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::Constant(c) => write!(f, "constant({c:?})"),
            FieldSpec::Cosine { mean, amp, k } => write!(f, "cosine({mean:?}, {amp:?}, {k:?})"),
            FieldSpec::Step { left, right, split } => {
                write!(f, "step({left:?}, {right:?}, {split:?})")
            }
            FieldSpec::Gaussian { base, amp, width } => {
                write!(f, "gaussian({base:?}, {amp:?}, {width:?})")
            }
        }
    }
}

impl FromStr for FieldSpec {
    type Err = FieldSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FieldSpecError(s.to_string());
        let (name, args) = split_call(s).ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .iter()
            .map(|a| a.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        match (name, nums.as_slice()) {
            ("constant", &[c]) => Ok(FieldSpec::Constant(c)),
            ("cosine", &[mean, amp, k]) => Ok(FieldSpec::Cosine { mean, amp, k }),
            ("step", &[left, right, split]) => Ok(FieldSpec::Step { left, right, split }),
            ("gaussian", &[base, amp, width]) if width > 0.0 => {
                Ok(FieldSpec::Gaussian { base, amp, width })
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for FieldSpec {
    type Error = FieldSpecError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FieldSpec> for String {
    fn from(f: FieldSpec) -> String {
        f.to_string()
    }
}

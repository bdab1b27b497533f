//! Maximal monotone graphs and their Yosida regularizations.
//!
//! Scalar graphs act pointwise and come with an exact resolvent
//! `R_ε = (I + εβ)⁻¹`, the Yosida map `β_ε = (I − R_ε)/ε` with a generalized
//! derivative, and the Moreau envelope `β̃_ε(x) = β̃(R_ε x) + (x − R_ε x)²/(2ε)`.
//! The logarithm is treated as the graph `∂Λ` with `Λ(x) = x ln x − x + 1`.
//!
//! Nonlocal operators act on whole fields through the `H` inner product.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{norm_h, Field, GridSpec};

#[derive(Debug, Error, PartialEq)]
pub enum MonotoneError {
    #[error("cannot parse operator `{0}`")]
    Parse(String),
    #[error("indicator box needs lo ≤ 0 ≤ hi so that 0 ∈ β(0) (got [{lo}, {hi}])")]
    BoxWithoutOrigin { lo: f64, hi: f64 },
    #[error("power graph needs an odd exponent ≥ 3 (got {0})")]
    BadExponent(u32),
}

const ROOT_MAXIT: usize = 2000;

/// `Λ(x) = x ln x − x + 1`, the convex primitive of `ln` with `Λ(1) = 0`;
/// `+∞` for `x < 0`.
pub fn lambda(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln() - x + 1.0
    } else if x == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Solves `e^u + ε u = x` for `u = ln y`. The map is increasing and convex in
/// `u`, so Newton started at the upper bracket end decreases monotonically to
/// the root; bisection only guards against round-off.
fn log_resolvent_exponent(eps: f64, x: f64) -> f64 {
    let mut lo = ((x - 1.0) / eps).min(0.0);
    let mut hi = x.max(1.0).ln();
    let mut u = hi;
    for _ in 0..ROOT_MAXIT {
        let eu = u.exp();
        let f = eu + eps * u - x;
        if f == 0.0 {
            return u;
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let mut next = u - f / (eu + eps);
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 2.0 * f64::EPSILON * u.abs().max(1.0) {
            return next;
        }
        u = next;
    }
    panic!("log resolvent root finder failed for eps={eps}, x={x}");
}

/// Returns `(y, ln y)` with `y + ε ln y = x`.
fn log_resolvent_pair(eps: f64, x: f64) -> (f64, f64) {
    let u = log_resolvent_exponent(eps, x);
    let mut y = u.exp();
    if y < f64::MIN_POSITIVE {
        // x/ε far below −708: y is not representable, ln y = u still is
        return (f64::MIN_POSITIVE, u);
    }
    // polish in y so the identity holds to relative precision for large x
    for _ in 0..2 {
        let f = y + eps * y.ln() - x;
        let next = y - f / (1.0 + eps / y);
        if next > 0.0 && (next + eps * next.ln() - x).abs() < f.abs() {
            y = next;
        } else {
            break;
        }
    }
    (y, y.ln())
}

/// The unique `y > 0` with `y + ε ln y = x`.
pub fn log_resolvent(eps: f64, x: f64) -> f64 {
    log_resolvent_pair(eps, x).0
}

/// Resolvent value and its derivative `dy/dx = y/(y + ε)`.
pub fn log_resolvent_with_derivative(eps: f64, x: f64) -> (f64, f64) {
    let y = log_resolvent(eps, x);
    (y, y / (y + eps))
}

/// `ln_ε(x)` and its derivative `1/(y + ε)`.
pub fn log_yosida(eps: f64, x: f64) -> (f64, f64) {
    let (y, ln_y) = log_resolvent_pair(eps, x);
    (ln_y, 1.0 / (y + eps))
}

/// `Λ_ε(x) = Λ(y) + (x − y)²/(2ε)` with `y` the log resolvent.
pub fn log_moreau(eps: f64, x: f64) -> f64 {
    let (y, ln_y) = log_resolvent_pair(eps, x);
    // (x − y)/ε = ln y
    lambda(y) + 0.5 * eps * ln_y * ln_y
}

/// A scalar maximal monotone graph `β = ∂β̃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScalarGraph {
    /// `ln` on `(0, ∞)`, subdifferential of `Λ`.
    Log,
    /// Subdifferential of the indicator of `[lo, hi]`.
    IndicatorBox { lo: f64, hi: f64 },
    /// `β(x) = x^p` for odd `p ≥ 3`.
    Power { exponent: u32 },
    Zero,
}

impl ScalarGraph {
    pub fn indicator_box(lo: f64, hi: f64) -> Result<Self, MonotoneError> {
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(MonotoneError::BoxWithoutOrigin { lo, hi });
        }
        Ok(ScalarGraph::IndicatorBox { lo, hi })
    }

    pub fn power(exponent: u32) -> Result<Self, MonotoneError> {
        if exponent < 3 || exponent % 2 == 0 {
            return Err(MonotoneError::BadExponent(exponent));
        }
        Ok(ScalarGraph::Power { exponent })
    }

    /// `R_ε(x) = (I + εβ)⁻¹ x`.
    pub fn resolvent(&self, eps: f64, x: f64) -> f64 {
        match *self {
            ScalarGraph::Log => log_resolvent(eps, x),
            ScalarGraph::IndicatorBox { lo, hi } => x.clamp(lo, hi),
            ScalarGraph::Power { exponent } => power_resolvent(exponent, eps, x),
            ScalarGraph::Zero => x,
        }
    }

    /// `β_ε(x)` and a generalized derivative. At the kinks of the indicator
    /// box the derivative is taken to be zero.
    pub fn yosida(&self, eps: f64, x: f64) -> (f64, f64) {
        match *self {
            ScalarGraph::Log => log_yosida(eps, x),
            ScalarGraph::IndicatorBox { lo, hi } => {
                if x > hi {
                    ((x - hi) / eps, 1.0 / eps)
                } else if x < lo {
                    ((x - lo) / eps, 1.0 / eps)
                } else {
                    (0.0, 0.0)
                }
            }
            ScalarGraph::Power { exponent } => {
                let y = power_resolvent(exponent, eps, x);
                let p = exponent as f64;
                let dbeta = p * y.powi(exponent as i32 - 1);
                (y.powi(exponent as i32), dbeta / (1.0 + eps * dbeta))
            }
            ScalarGraph::Zero => (0.0, 0.0),
        }
    }

    /// Moreau envelope `β̃_ε(x)`.
    pub fn moreau(&self, eps: f64, x: f64) -> f64 {
        match *self {
            ScalarGraph::Log => log_moreau(eps, x),
            _ => {
                let y = self.resolvent(eps, x);
                let (v, _) = self.yosida(eps, x);
                self.primitive(y) + 0.5 * eps * v * v
            }
        }
    }

    /// The convex potential `β̃` (or `Λ`), `+∞` outside its domain.
    pub fn primitive(&self, x: f64) -> f64 {
        match *self {
            ScalarGraph::Log => lambda(x),
            ScalarGraph::IndicatorBox { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ScalarGraph::Power { exponent } => {
                x.powi(exponent as i32 + 1) / (exponent as f64 + 1.0)
            }
            ScalarGraph::Zero => 0.0,
        }
    }

    /// Distance from `x` to the closure of the effective domain `D(β)`.
    pub fn domain_distance(&self, x: f64) -> f64 {
        match *self {
            ScalarGraph::Log => (-x).max(0.0),
            ScalarGraph::IndicatorBox { lo, hi } => (lo - x).max(x - hi).max(0.0),
            _ => 0.0,
        }
    }

    /// Whether `y ∈ β(x)`. Exact for the indicator box; for the single-valued
    /// graphs `y` must match `β(x)` to `tol` relative.
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        match *self {
            ScalarGraph::IndicatorBox { lo, hi } => {
                if x < lo || x > hi {
                    false
                } else if lo == hi {
                    true
                } else if x == lo {
                    y <= 0.0
                } else if x == hi {
                    y >= 0.0
                } else {
                    y == 0.0
                }
            }
            ScalarGraph::Log => x > 0.0 && (y - x.ln()).abs() <= tol * (1.0 + y.abs()),
            ScalarGraph::Power { exponent } => {
                let b = x.powi(exponent as i32);
                (y - b).abs() <= tol * (1.0 + b.abs())
            }
            ScalarGraph::Zero => y == 0.0,
        }
    }

    /// A selection `ξ₀ ∈ β(χ₀)`: zero for the indicator box (valid on the
    /// whole box), `β(χ₀)` otherwise.
    pub fn initial_selection(&self, x: f64) -> f64 {
        match *self {
            ScalarGraph::IndicatorBox { .. } | ScalarGraph::Zero => 0.0,
            ScalarGraph::Power { exponent } => x.powi(exponent as i32),
            ScalarGraph::Log => x.ln(),
        }
    }
}

fn power_resolvent(exponent: u32, eps: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let a = x.abs();
    let p = exponent as i32;
    let pf = exponent as f64;
    // y + ε y^p = a is convex increasing on y ≥ 0; Newton from the upper
    // bound descends monotonically.
    let mut hi = a.min((a / eps).powf(1.0 / pf));
    let mut lo = 0.0;
    let mut y = hi;
    for _ in 0..ROOT_MAXIT {
        let yp1 = y.powi(p - 1);
        let f = y + eps * yp1 * y - a;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let mut next = y - f / (1.0 + eps * pf * yp1);
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 2.0 * f64::EPSILON * y {
            y = next;
            break;
        }
        y = next;
    }
    y.copysign(x)
}

impl fmt::Display for ScalarGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarGraph::Log => write!(f, "log"),
            ScalarGraph::IndicatorBox { lo, hi } => write!(f, "indicator_box({lo:?}, {hi:?})"),
            ScalarGraph::Power { exponent } => write!(f, "power({exponent})"),
            ScalarGraph::Zero => write!(f, "zero"),
        }
    }
}

/// Splits `name(a, b, …)` into the name and its argument list.
pub(crate) fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    match s.find('(') {
        None => Some((s, Vec::new())),
        Some(open) => {
            let inner = s[open + 1..].strip_suffix(')')?;
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(str::trim).collect()
            };
            Some((s[..open].trim(), args))
        }
    }
}

impl FromStr for ScalarGraph {
    type Err = MonotoneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MonotoneError::Parse(s.to_string());
        let (name, args) = split_call(s).ok_or_else(bad)?;
        let num = |i: usize| -> Result<f64, MonotoneError> {
            args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad)
        };
        match (name, args.len()) {
            ("log", 0) => Ok(ScalarGraph::Log),
            ("zero", 0) => Ok(ScalarGraph::Zero),
            ("indicator_box", 2) => ScalarGraph::indicator_box(num(0)?, num(1)?),
            ("power", 1) => {
                let p: u32 = args[0].parse().map_err(|_| bad())?;
                ScalarGraph::power(p)
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ScalarGraph {
    type Error = MonotoneError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ScalarGraph> for String {
    fn from(g: ScalarGraph) -> String {
        g.to_string()
    }
}

/// A maximal monotone operator `A = ∂Φ` on `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NonlocalOp {
    Zero,
    /// `∂` of `v ↦ ‖v‖_H`.
    SignNonlocal,
    /// `∂` of `v ↦ ∫|v|`, acting pointwise.
    SignLocal,
}

impl NonlocalOp {
    /// `J_ε v = (I + εA)⁻¹ v`.
    pub fn resolvent(&self, eps: f64, v: &Field) -> Field {
        match self {
            NonlocalOp::Zero => v.clone(),
            NonlocalOp::SignNonlocal => {
                let n = norm_h(v);
                let shrink = if n <= eps { 0.0 } else { 1.0 - eps / n };
                v.map(|x| shrink * x)
            }
            NonlocalOp::SignLocal => v.map(|x| x.signum() * (x.abs() - eps).max(0.0)),
        }
    }

    /// `A_ε v = (v − J_ε v)/ε`.
    pub fn yosida(&self, eps: f64, v: &Field) -> Field {
        match self {
            NonlocalOp::Zero => Field::zeros(v.grid()),
            NonlocalOp::SignNonlocal => {
                let denom = norm_h(v).max(eps);
                v.map(|x| x / denom)
            }
            NonlocalOp::SignLocal => v.map(|x| x / x.abs().max(eps)),
        }
    }

    /// Generalized derivative of `A_ε` at `v`.
    pub fn yosida_jacobian(&self, eps: f64, v: &Field) -> YosidaJacobian {
        match self {
            NonlocalOp::Zero => YosidaJacobian::Zero,
            NonlocalOp::SignNonlocal => {
                let n = norm_h(v);
                if n <= eps {
                    YosidaJacobian::Scaled(1.0 / eps)
                } else {
                    YosidaJacobian::Projected {
                        scale: 1.0 / n,
                        direction: v.map(|x| x / n),
                    }
                }
            }
            NonlocalOp::SignLocal => YosidaJacobian::Diagonal(
                v.values()
                    .iter()
                    .map(|x| if x.abs() < eps { 1.0 / eps } else { 0.0 })
                    .collect(),
            ),
        }
    }

    /// The potential `Φ(v)`.
    pub fn potential(&self, v: &Field) -> f64 {
        match self {
            NonlocalOp::Zero => 0.0,
            NonlocalOp::SignNonlocal => norm_h(v),
            NonlocalOp::SignLocal => crate::grid::norm_l1(v),
        }
    }

    /// `C_A` in `‖A_ε v‖_H ≤ C_A (1 + ‖v‖_H)`. The pointwise sign is bounded
    /// by one in every cell, so its `H` norm is at most `|Ω|^{1/2}`.
    pub fn growth_constant(&self, grid: &GridSpec) -> f64 {
        match self {
            NonlocalOp::Zero => 0.0,
            NonlocalOp::SignNonlocal => 1.0,
            NonlocalOp::SignLocal => grid.volume().sqrt().max(1.0),
        }
    }
}

impl fmt::Display for NonlocalOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NonlocalOp::Zero => "zero",
            NonlocalOp::SignNonlocal => "sign_nonlocal",
            NonlocalOp::SignLocal => "sign_local",
        })
    }
}

impl FromStr for NonlocalOp {
    type Err = MonotoneError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "zero" => Ok(NonlocalOp::Zero),
            "sign_nonlocal" => Ok(NonlocalOp::SignNonlocal),
            "sign_local" => Ok(NonlocalOp::SignLocal),
            _ => Err(MonotoneError::Parse(s.to_string())),
        }
    }
}

impl TryFrom<String> for NonlocalOp {
    type Error = MonotoneError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NonlocalOp> for String {
    fn from(op: NonlocalOp) -> String {
        op.to_string()
    }
}

/// Linearization of `A_ε` around a point; symmetric positive semidefinite in `H`.
#[derive(Clone, Debug, PartialEq)]
pub enum YosidaJacobian {
    Zero,
    /// `c I`
    Scaled(f64),
    /// `c (I − u ⊗ u)` with `‖u‖_H = 1`
    Projected { scale: f64, direction: Field },
    Diagonal(Vec<f64>),
}

impl YosidaJacobian {
    /// `out += coef · J d`.
    pub fn apply_add(&self, coef: f64, d: &Field, out: &mut Field) {
        match self {
            YosidaJacobian::Zero => {}
            YosidaJacobian::Scaled(c) => out.axpy(coef * c, d),
            YosidaJacobian::Projected { scale, direction } => {
                let proj = crate::grid::inner_h(direction, d).expect("grid mismatch");
                out.axpy(coef * scale, d);
                out.axpy(-coef * scale * proj, direction);
            }
            YosidaJacobian::Diagonal(diag) => {
                for ((o, di), x) in out.values_mut().iter_mut().zip(diag).zip(d.values()) {
                    *o += coef * di * x;
                }
            }
        }
    }

    /// `diag += coef · diag(J)`.
    pub fn add_diagonal(&self, coef: f64, diag: &mut [f64]) {
        match self {
            YosidaJacobian::Zero => {}
            YosidaJacobian::Scaled(c) => diag.iter_mut().for_each(|d| *d += coef * c),
            YosidaJacobian::Projected { scale, direction } => {
                let dv = direction.grid().cell_volume();
                for (d, u) in diag.iter_mut().zip(direction.values()) {
                    *d += coef * scale * (1.0 - u * u * dv);
                }
            }
            YosidaJacobian::Diagonal(j) => {
                for (d, ji) in diag.iter_mut().zip(j) {
                    *d += coef * ji;
                }
            }
        }
    }
}

/// The affine Lipschitz perturbation `π(r) = slope·r + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PiFunction {
    pub slope: f64,
    pub offset: f64,
}

impl PiFunction {
    pub fn new(slope: f64, offset: f64) -> Self {
        PiFunction { slope, offset }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.slope * r + self.offset
    }

    /// `C_π`.
    pub fn lipschitz(&self) -> f64 {
        self.slope.abs()
    }
}

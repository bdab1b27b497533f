//! Heat sources `F(t, x)` and their window averages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{norm_linf, Field, GridSpec};
use crate::scheme::field_spec::FieldSpec;

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("tabulated source covers [{first}, {last}] but step {step} needs [{a}, {b}]")]
    NotCovered {
        step: usize,
        a: f64,
        b: f64,
        first: f64,
        last: f64,
    },
    #[error("invalid source: {0}")]
    Invalid(String),
}

/// 4-point Gauss–Legendre rule on `[−1, 1]`.
const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
];

/// Integral of `f` over `[a, b]` with the 4-point Gauss–Legendre rule.
pub fn gauss_legendre4(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GL4.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `(Σ_k c_k t^k)·φ(x)`
    Polynomial { coeffs: Vec<f64>, profile: FieldSpec },
    /// `amplitude·sin(ω t + phase)·φ(x)`
    Harmonic {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        profile: FieldSpec,
    },
    /// Piecewise linear in time between the given profiles.
    Tabulated {
        times: Vec<f64>,
        profiles: Vec<FieldSpec>,
    },
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SourceError> {
        let bad = |m: &str| Err(SourceError::Invalid(m.to_string()));
        match self {
            SourceSpec::Zero => Ok(()),
            SourceSpec::Constant { value } if !value.is_finite() => bad("constant value must be finite"),
            SourceSpec::Polynomial { coeffs, .. } if coeffs.iter().any(|c| !c.is_finite()) => {
                bad("polynomial coefficients must be finite")
            }
            SourceSpec::Harmonic { amplitude, omega, phase, .. }
                if !(amplitude.is_finite() && omega.is_finite() && phase.is_finite()) =>
            {
                bad("harmonic parameters must be finite")
            }
            SourceSpec::Tabulated { times, profiles } => {
                if times.is_empty() || times.len() != profiles.len() {
                    return bad("tabulated source needs as many profiles as times (at least one)");
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("tabulated times must be strictly increasing");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Time factor and spatial profile for the separable forms.
    fn separable(&self, grid: &GridSpec) -> Option<(Box<dyn Fn(f64) -> f64 + '_>, Field)> {
        match self {
            SourceSpec::Zero => Some((Box::new(|_| 0.0), Field::zeros(grid))),
            SourceSpec::Constant { value } => Some((Box::new(|_| 1.0), Field::constant(grid, *value))),
            SourceSpec::Polynomial { coeffs, profile } => Some((
                Box::new(move |t| coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)),
                profile.eval(grid),
            )),
            SourceSpec::Harmonic { amplitude, omega, phase, profile } => Some((
                Box::new(move |t| amplitude * (omega * t + phase).sin()),
                profile.eval(grid),
            )),
            SourceSpec::Tabulated { .. } => None,
        }
    }

    /// `F(t)` on the grid.
    pub fn eval(&self, grid: &GridSpec, t: f64) -> Result<Field, SourceError> {
        if let Some((time, mut profile)) = self.separable(grid) {
            profile.scale(time(t));
            return Ok(profile);
        }
        let SourceSpec::Tabulated { times, profiles } = self else {
            unreachable!()
        };
        let last = times.len() - 1;
        if t < times[0] || t > times[last] {
            return Err(SourceError::NotCovered {
                step: 0,
                a: t,
                b: t,
                first: times[0],
                last: times[last],
            });
        }
        let k = times.partition_point(|&s| s <= t).clamp(1, last.max(1)) - 1;
        if last == 0 {
            return Ok(profiles[0].eval(grid));
        }
        let w = (t - times[k]) / (times[k + 1] - times[k]);
        let (a, b) = (profiles[k].eval(grid), profiles[k + 1].eval(grid));
        Ok(a.zip_map(&b, |x, y| (1.0 - w) * x + w * y))
    }

    fn window(&self, tau: f64, step: usize) -> Result<(f64, f64), SourceError> {
        if step == 0 {
            return Err(SourceError::Invalid("step index starts at 1".into()));
        }
        let (a, b) = ((step - 1) as f64 * tau, step as f64 * tau);
        if let SourceSpec::Tabulated { times, .. } = self {
            let (first, last) = (times[0], times[times.len() - 1]);
            if a < first || b > last * (1.0 + 1e-12) {
                return Err(SourceError::NotCovered { step, a, b, first, last });
            }
        }
        Ok((a, b))
    }

    /// Sub-intervals of `[a, b]` on which the source is smooth in time.
    fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let mut cuts = vec![a];
        if let SourceSpec::Tabulated { times, .. } = self {
            cuts.extend(times.iter().copied().filter(|&t| t > a && t < b));
        }
        cuts.push(b);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Window average `F^i = (1/τ)∫_{(i−1)τ}^{iτ} F(s) ds`.
    pub fn discretize(&self, grid: &GridSpec, tau: f64, step: usize) -> Result<Field, SourceError> {
        let (a, b) = self.window(tau, step)?;
        match self {
            SourceSpec::Zero => Ok(Field::zeros(grid)),
            SourceSpec::Constant { value } => Ok(Field::constant(grid, *value)),
            SourceSpec::Polynomial { coeffs, profile } => {
                let mut avg = 0.0;
                let (mut pa, mut pb) = (a, b);
                for (k, c) in coeffs.iter().enumerate() {
                    avg += c * (pb - pa) / (k + 1) as f64;
                    pa *= a;
                    pb *= b;
                }
                let mut f = profile.eval(grid);
                f.scale(avg / tau);
                Ok(f)
            }
            SourceSpec::Harmonic { .. } => {
                let (time, mut profile) = self.separable(grid).expect("separable");
                profile.scale(gauss_legendre4(a, b, time) / tau);
                Ok(profile)
            }
            SourceSpec::Tabulated { .. } => {
                let mut acc = Field::zeros(grid);
                for (p, q) in self.pieces(a, b) {
                    let (mid, half) = (0.5 * (p + q), 0.5 * (q - p));
                    for &(x, w) in &GL4 {
                        acc.axpy(w * half / tau, &self.eval(grid, mid + half * x)?);
                    }
                }
                Ok(acc)
            }
        }
    }

    /// `∫_{(i−1)τ}^{iτ} ‖F(s)‖_{L∞} ds`, used for the per-window smallness check.
    pub fn window_linf_integral(&self, grid: &GridSpec, tau: f64, step: usize) -> Result<f64, SourceError> {
        let (a, b) = self.window(tau, step)?;
        if let Some((time, profile)) = self.separable(grid) {
            let sup = norm_linf(&profile);
            return Ok(self
                .pieces(a, b)
                .iter()
                .map(|&(p, q)| gauss_legendre4(p, q, |t| time(t).abs() * sup))
                .sum());
        }
        let mut total = 0.0;
        for (p, q) in self.pieces(a, b) {
            let (mid, half) = (0.5 * (p + q), 0.5 * (q - p));
            for &(x, w) in &GL4 {
                total += w * half * norm_linf(&self.eval(grid, mid + half * x)?);
            }
        }
        Ok(total)
    }
}

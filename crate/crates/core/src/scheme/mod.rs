//! The backward finite-difference scheme over `i = 1..N`.
//!
//! With `τ = T/N`, step `i` solves for `(Θ^i, X^i)` given
//!
//! ```text
//! g = τF^i + τ^{1/2}Θ^{i−1} + L^{i−1} + ℓX^{i−1},   h = X^{i−1},
//! ```
//!
//! where `F^i` is the window average of the source and `L^{i−1}` the stored
//! logarithm of the previous temperature: the exact `ln ϑ₀` at `i = 1`,
//! afterwards `ln_ε Θ^{i−1}` under a fixed ε and the exact (clipped) `ln Θ^{i−1}`
//! under an ε ladder.

pub mod checkpoint;
pub mod field_spec;
pub mod interp;
pub mod source;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{LedgerRow, RowInputs};
use crate::grid::{Field, GridSpec};
use crate::monotone::{log_yosida, NonlocalOp, PiFunction, ScalarGraph};
use crate::stepper::{
    epsilon_ladder_step, fixed_point_step, geometric_ladder, StepError, StepInputs, StepParams,
    StepResult, StepStart, Tolerances,
};
use field_spec::FieldSpec;
use source::{SourceError, SourceSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("step {step} of {steps} failed: {source}")]
    Step {
        step: usize,
        steps: usize,
        #[source]
        source: StepError,
        partial: Box<Trajectory>,
    },
    #[error("step {step} requested but only {available} steps are available")]
    StepOutOfRange { step: usize, available: usize },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterInit {
    /// Start the outer iteration from the previous state.
    #[default]
    Previous,
    /// Start from the pointwise solution of `τ^{1/2}Θ + ln_ε Θ = g`.
    Pointwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub final_time: f64,
    pub steps: usize,
    pub k0: f64,
    pub ell: f64,
    #[serde(default = "yes")]
    pub stabilization: bool,
    #[serde(default)]
    pub outer_init: OuterInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub extent: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonotoneSection {
    pub beta: ScalarGraph,
    pub nonlocal: NonlocalOp,
    pub pi_slope: f64,
    pub pi_offset: f64,
}

impl Default for MonotoneSection {
    fn default() -> Self {
        MonotoneSection {
            beta: ScalarGraph::Zero,
            nonlocal: NonlocalOp::Zero,
            pi_slope: 0.0,
            pi_offset: 0.0,
        }
    }
}

fn unit_profile() -> FieldSpec {
    FieldSpec::Constant(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub theta0: FieldSpec,
    pub chi0: FieldSpec,
    #[serde(default = "unit_profile")]
    pub theta_star: FieldSpec,
}

fn ladder_start() -> f64 {
    0.1
}
fn ladder_factor() -> f64 {
    0.5
}
fn ladder_min() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonPolicy {
    Fixed {
        value: f64,
    },
    /// Every step runs `start, start·factor, …, min`.
    Ladder {
        #[serde(default = "ladder_start")]
        start: f64,
        #[serde(default = "ladder_factor")]
        factor: f64,
        #[serde(default = "ladder_min")]
        min: f64,
        /// Warm-start each rung from the previous one; otherwise solve
        /// directly at `min`.
        #[serde(default = "yes")]
        continuation: bool,
    },
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        EpsilonPolicy::Ladder {
            start: ladder_start(),
            factor: ladder_factor(),
            min: ladder_min(),
            continuation: true,
        }
    }
}

impl EpsilonPolicy {
    /// The ε at which the accepted states are computed.
    pub fn working_eps(&self) -> f64 {
        match *self {
            EpsilonPolicy::Fixed { value } => value,
            EpsilonPolicy::Ladder { min, .. } => min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: SchemeSection,
    pub grid: GridSection,
    #[serde(default)]
    pub monotone: MonotoneSection,
    pub data: DataSection,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub epsilon: EpsilonPolicy,
    #[serde(default)]
    pub stepper: Tolerances,
}

/// A validated configuration with every field evaluated on the grid.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: GridSpec,
    pub tau: f64,
    pub steps: usize,
    pub theta0: Field,
    pub chi0: Field,
    pub theta_star: Field,
    pub beta: ScalarGraph,
    pub op_a: NonlocalOp,
    pub pi: PiFunction,
    pub params: StepParams,
    pub source: SourceSpec,
    /// Per-step ε ladder and whether rungs are warm-started.
    pub ladder: Option<(Vec<f64>, bool)>,
    pub outer_init: OuterInit,
    pub warnings: Vec<String>,
}

impl SchemeConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn tau(&self) -> f64 {
        self.scheme.final_time / self.scheme.steps as f64
    }

    pub fn resolve(&self) -> Result<Problem, ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let s = &self.scheme;
        if !(s.final_time > 0.0 && s.final_time.is_finite()) {
            return bad(format!("final_time = {} violates T > 0", s.final_time));
        }
        if s.steps == 0 {
            return bad("steps = 0 violates N ≥ 1".into());
        }
        let grid = GridSpec::new(&self.grid.extent, &self.grid.cells)
            .map_err(|e| ConfigError::Invalid(format!("grid: {e}")))?;
        let tau = self.tau();

        let ladder = match self.epsilon {
            EpsilonPolicy::Fixed { value } => {
                if !(value > 0.0 && value <= 1.0) {
                    return bad(format!("epsilon value = {value} violates ε ∈ (0, 1]"));
                }
                None
            }
            EpsilonPolicy::Ladder { start, factor, min, continuation } => {
                if !(min > 0.0 && min <= start && start <= 1.0) {
                    return bad(format!(
                        "epsilon ladder start = {start}, min = {min} violates 0 < min ≤ start ≤ 1"
                    ));
                }
                if !(factor > 0.0 && factor < 1.0) {
                    return bad(format!("epsilon ladder factor = {factor} violates 0 < factor < 1"));
                }
                Some((geometric_ladder(start, factor, min), continuation))
            }
        };

        let pi = PiFunction::new(self.monotone.pi_slope, self.monotone.pi_offset);
        let params = StepParams {
            tau,
            eps: self.epsilon.working_eps(),
            k0: s.k0,
            ell: s.ell,
            stabilization: s.stabilization,
            tol: self.stepper,
        };
        params
            .validate(&pi)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let theta0 = self.data.theta0.eval(&grid);
        let chi0 = self.data.chi0.eval(&grid);
        let theta_star = self.data.theta_star.eval(&grid);
        if let Some((i, v)) = first_cell(&theta0, |v| v > 0.0) {
            return bad(format!("ϑ₀ > 0 violated: cell {i} has ϑ₀ = {v}"));
        }
        if let Some((i, v)) = first_cell(&theta_star, |v| v > 0.0) {
            return bad(format!("ϑ* > 0 violated: cell {i} has ϑ* = {v}"));
        }
        let beta = self.monotone.beta;
        if let Some((i, v)) = first_cell(&chi0, |x| {
            beta.domain_distance(x) == 0.0 && beta.initial_selection(x).is_finite()
        }) {
            return bad(format!("χ₀ ∈ D(β) violated for β = {beta}: cell {i} has χ₀ = {v}"));
        }

        self.source
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut warnings = Vec::new();
        let mut failing = 0;
        let mut worst = (0, 0.0);
        for i in 1..=s.steps {
            let w = self
                .source
                .window_linf_integral(&grid, tau, i)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if w > 0.25 {
                failing += 1;
            }
            if w > worst.1 {
                worst = (i, w);
            }
        }
        if failing > 0 {
            warnings.push(format!(
                "source smallness ∫‖F‖_L∞ ≤ 1/4 fails on {failing} of {} step windows (largest {} at step {})",
                s.steps, worst.1, worst.0
            ));
        }

        Ok(Problem {
            grid,
            tau,
            steps: s.steps,
            theta0,
            chi0,
            theta_star,
            beta,
            op_a: self.monotone.nonlocal,
            pi,
            params,
            source: self.source.clone(),
            ladder,
            outer_init: s.outer_init,
            warnings,
        })
    }
}

fn first_cell(f: &Field, ok: impl Fn(f64) -> bool) -> Option<(usize, f64)> {
    f.values().iter().copied().enumerate().find(|&(_, v)| !ok(v))
}

impl Problem {
    /// The logarithm carried into the next step's `g`.
    pub fn log_term(&self, theta: &Field) -> Field {
        match self.ladder {
            None => theta.map(|t| log_yosida(self.params.eps, t).0),
            Some(_) => theta.map(|t| t.max(f64::MIN_POSITIVE).ln()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub eps: f64,
    pub outer_iters: usize,
    pub newton_iters: usize,
    pub cg_iters: usize,
    pub damped_steps: usize,
    pub residual_theta: f64,
    pub residual_chi: f64,
    pub contraction_ratios: Vec<f64>,
    pub eps_cauchy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub theta: Field,
    pub chi: Field,
    pub zeta: Field,
    pub xi: Field,
    pub log_theta: Field,
    pub stats: StepStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Theta,
    Chi,
    LogTheta,
    SqrtTheta,
}

/// Initial data plus every accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub config: SchemeConfig,
    pub theta0: Field,
    pub chi0: Field,
    pub log_theta0: Field,
    pub steps: Vec<StepRecord>,
    pub ledger: Vec<LedgerRow>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    /// Validates the configuration and sets up the initial state.
    pub fn start(config: SchemeConfig) -> Result<Self, SchemeError> {
        let problem = config.resolve()?;
        for w in &problem.warnings {
            warn!("{w}");
        }
        let log_theta0 = problem.theta0.map(f64::ln);
        Ok(Trajectory {
            theta0: problem.theta0,
            chi0: problem.chi0,
            log_theta0,
            steps: Vec::new(),
            ledger: Vec::new(),
            warnings: problem.warnings,
            config,
        })
    }

    pub fn tau(&self) -> f64 {
        self.config.tau()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.config.scheme.steps
    }

    /// `(Θ^i, X^i, L^i)` for `0 ≤ i ≤ len`.
    pub fn state(&self, i: usize) -> Option<(&Field, &Field, &Field)> {
        if i == 0 {
            Some((&self.theta0, &self.chi0, &self.log_theta0))
        } else {
            self.steps
                .get(i - 1)
                .map(|r| (&r.theta, &r.chi, &r.log_theta))
        }
    }

    /// The node values `z^0, …, z^len` of one quantity.
    pub fn series(&self, q: Quantity) -> Vec<Field> {
        (0..=self.len())
            .map(|i| {
                let (t, c, l) = self.state(i).expect("in range");
                match q {
                    Quantity::Theta => t.clone(),
                    Quantity::Chi => c.clone(),
                    Quantity::LogTheta => l.clone(),
                    Quantity::SqrtTheta => t.map(|v| v.max(0.0).sqrt()),
                }
            })
            .collect()
    }

    /// Runs steps `len+1 ..= upto`. On failure the error carries the
    /// trajectory up to the last accepted step.
    pub fn advance(mut self, upto: usize) -> Result<Self, SchemeError> {
        let problem = self.config.resolve()?;
        let upto = upto.min(problem.steps);
        while self.len() < upto {
            let i = self.len() + 1;
            let inputs = assemble_step_inputs(&problem, &self, i)?;
            let start = match problem.outer_init {
                OuterInit::Previous => {
                    let (t, c, _) = self.state(i - 1).expect("previous state");
                    Some(StepStart {
                        theta: t.clone(),
                        chi: c.clone(),
                    })
                }
                OuterInit::Pointwise => None,
            };
            let outcome = match &problem.ladder {
                Some((ladder, true)) => {
                    epsilon_ladder_step(&inputs, &problem.params, ladder, start.as_ref())
                }
                _ => fixed_point_step(&inputs, &problem.params, start.as_ref()),
            };
            match outcome {
                Ok(res) => self.accept(&problem, i, res)?,
                Err(source) => {
                    return Err(SchemeError::Step {
                        step: i,
                        steps: problem.steps,
                        source,
                        partial: Box::new(self),
                    })
                }
            }
        }
        Ok(self)
    }

    fn accept(
        &mut self,
        problem: &Problem,
        i: usize,
        res: StepResult,
    ) -> Result<(), SchemeError> {
        let log_theta = problem.log_term(&res.theta);
        let record = StepRecord {
            theta: res.theta,
            chi: res.chi,
            zeta: res.zeta,
            xi: res.xi,
            log_theta,
            stats: StepStats {
                eps: problem.params.eps,
                outer_iters: res.outer_iters,
                newton_iters: res.total_newton_iters,
                cg_iters: res.total_cg_iters,
                damped_steps: res.damped_steps,
                residual_theta: res.residual_theta,
                residual_chi: res.residual_chi,
                contraction_ratios: res.contraction_ratios,
                eps_cauchy: res.eps_cauchy,
            },
        };
        let source = problem.source.discretize(&problem.grid, problem.tau, i)?;
        let (theta_prev, chi_prev, log_prev) = self.state(i - 1).expect("previous state");
        let row = LedgerRow::compute(&RowInputs {
            step: i,
            tau: problem.tau,
            params: &problem.params,
            beta: &problem.beta,
            record: &record,
            theta_prev,
            chi_prev,
            log_prev,
            source: &source,
            previous_row: self.ledger.last(),
        });
        debug!(
            "step {i}: outer {} newton {} min Θ {:e} defect {:e}",
            row.outer_iters, row.newton_iters, row.theta_min, row.entropy_defect
        );
        if !row.positive {
            let w = format!("step {i}: min Θ = {} is not positive", row.theta_min);
            warn!("{w}");
            self.warnings.push(w);
        }
        self.steps.push(record);
        self.ledger.push(row);
        Ok(())
    }
}

/// Builds `g`, `h` and the operators for step `i` from the stored state `i − 1`.
pub fn assemble_step_inputs(
    problem: &Problem,
    traj: &Trajectory,
    i: usize,
) -> Result<StepInputs, SchemeError> {
    if i == 0 || i > problem.steps {
        return Err(SchemeError::StepOutOfRange {
            step: i,
            available: problem.steps,
        });
    }
    let (theta_prev, chi_prev, log_prev) =
        traj.state(i - 1).ok_or(SchemeError::StepOutOfRange {
            step: i,
            available: traj.len() + 1,
        })?;
    let f = problem.source.discretize(&problem.grid, problem.tau, i)?;
    let (tau, ell) = (problem.tau, problem.params.ell);
    let s = problem.params.stabilization_coef();
    let mut g = log_prev.clone();
    for (k, gv) in g.values_mut().iter_mut().enumerate() {
        *gv = tau * f.values()[k] + s * theta_prev.values()[k] + *gv + ell * chi_prev.values()[k];
    }
    Ok(StepInputs {
        g,
        h: chi_prev.clone(),
        theta_star: problem.theta_star.clone(),
        beta: problem.beta,
        op_a: problem.op_a,
        pi: problem.pi,
    })
}

/// Validates `config` and runs all `N` steps.
pub fn run(config: SchemeConfig) -> Result<Trajectory, SchemeError> {
    let n = config.scheme.steps;
    Trajectory::start(config)?.advance(n)
}

/// Continues a partial trajectory to the final step.
pub fn resume(traj: Trajectory) -> Result<Trajectory, SchemeError> {
    let n = traj.config.scheme.steps;
    traj.advance(n)
}

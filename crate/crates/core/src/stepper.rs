//! One implicit time step of the regularized problem.
//!
//! For fixed data `g`, `h` the step solves
//!
//! ```text
//! s Θ + ln_ε Θ + τ A_ε(Θ − ϑ*) − τ k₀ ΔΘ = −ℓ X + g
//! X − τ ΔX + τ β_ε(X) + τ π(X)          = h + τ ℓ Θ
//! ```
//!
//! with `s = τ^{1/2}`, by the Banach iteration `Θ̄ ↦ X(Θ̄) ↦ Θ(X)`, whose
//! Lipschitz constant in `H` is at most `2 τ^{1/2} ℓ²`. Each of the two
//! equations is solved by a damped semismooth Newton method whose Jacobian is
//! symmetric positive definite and is inverted with Jacobi-preconditioned CG.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    cg_solve, laplacian_neumann, laplacian_neumann_into, norm_h, norm_linf, Field, GridError,
};
use crate::monotone::{log_yosida, NonlocalOp, PiFunction, ScalarGraph, YosidaJacobian};

/// Maximum number of step halvings in the Newton line search.
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("invalid step parameters: {0}")]
    InvalidParams(String),
    #[error("{stage} Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonNotConverged {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("{stage} Newton stalled: no descent after {MAX_HALVINGS} halvings (residual {residual:e})")]
    NewtonStalled { stage: &'static str, residual: f64 },
    #[error("{stage} linear solve failed: {source}")]
    Linear {
        stage: &'static str,
        #[source]
        source: GridError,
    },
    #[error("outer fixed point did not converge after {iterations} iterations (last difference {difference:e})")]
    OuterNotConverged { iterations: usize, difference: f64 },
    #[error("invalid epsilon ladder: {0}")]
    BadLadder(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub outer_tol: f64,
    pub newton_tol: f64,
    pub cg_tol: f64,
    pub outer_maxit: usize,
    pub newton_maxit: usize,
    pub cg_maxit: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            outer_tol: 1e-8,
            newton_tol: 1e-10,
            cg_tol: 1e-12,
            outer_maxit: 200,
            newton_maxit: 60,
            cg_maxit: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub tau: f64,
    pub eps: f64,
    pub k0: f64,
    pub ell: f64,
    /// Include the `τ^{1/2} Θ` term (always on in production runs).
    pub stabilization: bool,
    pub tol: Tolerances,
}

impl StepParams {
    /// Coefficient `s` of the stabilizing term.
    pub fn stabilization_coef(&self) -> f64 {
        if self.stabilization {
            self.tau.sqrt()
        } else {
            0.0
        }
    }

    /// Checks the step-size restrictions under which the outer map contracts
    /// and the `χ` operator is strongly monotone.
    pub fn validate(&self, pi: &PiFunction) -> Result<(), StepError> {
        let bad = |m: String| Err(StepError::InvalidParams(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("τ must be positive (got {})", self.tau));
        }
        if self.tau > 1.0 {
            return bad(format!("τ = {} violates τ ≤ 1", self.tau));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("ε = {} violates ε ∈ (0, 1]", self.eps));
        }
        if !(self.k0 > 0.0) {
            return bad(format!("k₀ = {} violates k₀ > 0", self.k0));
        }
        if self.ell != 0.0 {
            let limit = 1.0 / (8.0 * self.ell.powi(4));
            if self.tau >= limit {
                return bad(format!(
                    "τ = {} with ℓ = {}: τ ≥ 1/(8ℓ⁴) = {limit:e} violates the contraction restriction τ < 1/(8ℓ⁴)",
                    self.tau, self.ell
                ));
            }
        }
        let c_pi = pi.lipschitz();
        if c_pi > 0.0 && self.tau >= 1.0 / (2.0 * c_pi) {
            return bad(format!(
                "τ = {} with C_π = {c_pi}: τ ≥ 1/(2C_π) violates the strong monotonicity restriction τ < 1/(2C_π)",
                self.tau
            ));
        }
        let t = &self.tol;
        if !(t.outer_tol > 0.0 && t.newton_tol > 0.0 && t.cg_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if t.outer_maxit == 0 || t.newton_maxit == 0 || t.cg_maxit == 0 {
            return bad("iteration limits must be positive".into());
        }
        Ok(())
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        StepParams { eps, ..*self }
    }
}

/// Data of one step: `g`, `h = χ^{i−1}` and the operators.
#[derive(Clone, Debug)]
pub struct StepInputs {
    pub g: Field,
    pub h: Field,
    pub theta_star: Field,
    pub beta: ScalarGraph,
    pub op_a: NonlocalOp,
    pub pi: PiFunction,
}

/// Initial iterate of the outer loop and of both Newton solves.
#[derive(Clone, Debug)]
pub struct StepStart {
    pub theta: Field,
    pub chi: Field,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub cg_iterations: usize,
    /// Iterations whose accepted step needed at least one halving.
    pub damped_steps: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub theta: Field,
    pub chi: Field,
    /// `ζ = A_ε(Θ − ϑ*)`
    pub zeta: Field,
    /// `ξ = β_ε(X)`
    pub xi: Field,
    pub outer_iters: usize,
    pub total_newton_iters: usize,
    pub total_cg_iters: usize,
    pub damped_steps: usize,
    /// `‖Θ̄_{k+1} − Θ̄_k‖_H` for every outer iteration.
    pub outer_diffs: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub residual_theta: f64,
    pub residual_chi: f64,
    /// `‖Θ_{ε_{j+1}} − Θ_{ε_j}‖_H` along an ε ladder (empty for a single ε).
    pub eps_cauchy: Vec<f64>,
}

struct Linearization {
    diag: Vec<f64>,
    diffusion: f64,
    nonlocal: Option<(f64, YosidaJacobian)>,
}

fn damped_newton(
    stage: &'static str,
    x0: Field,
    residual: impl Fn(&Field) -> Field,
    linearize: impl Fn(&Field) -> Linearization,
    tol: &Tolerances,
) -> Result<(Field, NewtonReport), StepError> {
    let grid = *x0.grid();
    let neg_lap = grid.neg_laplacian_diag();
    let mut x = x0;
    let mut r = residual(&x);
    let mut merit = norm_h(&r);
    let mut report = NewtonReport::default();
    loop {
        let r_inf = norm_linf(&r);
        if r_inf <= tol.newton_tol {
            report.residual = r_inf;
            return Ok((x, report));
        }
        if report.iterations >= tol.newton_maxit {
            return Err(StepError::NewtonNotConverged {
                stage,
                iterations: report.iterations,
                residual: r_inf,
            });
        }
        report.iterations += 1;

        let lin = linearize(&x);
        let mut jacobi: Vec<f64> = lin
            .diag
            .iter()
            .zip(&neg_lap)
            .map(|(d, l)| d + lin.diffusion * l)
            .collect();
        if let Some((c, jac)) = &lin.nonlocal {
            jac.add_diagonal(*c, &mut jacobi);
        }
        let jacobi = Field::from_values(&grid, jacobi)
            .map_err(|source| StepError::Linear { stage, source })?;
        let rhs = r.map(|v| -v);
        let (dir, cg) = cg_solve(
            |p: &Field, out: &mut Field| {
                laplacian_neumann_into(p, out);
                for ((o, pv), d) in out.values_mut().iter_mut().zip(p.values()).zip(&lin.diag) {
                    *o = d * pv - lin.diffusion * *o;
                }
                if let Some((c, jac)) = &lin.nonlocal {
                    jac.apply_add(*c, p, out);
                }
            },
            &rhs,
            tol.cg_tol,
            tol.cg_maxit,
            &jacobi,
        )
        .map_err(|source| StepError::Linear { stage, source })?;
        report.cg_iterations += cg.iterations;

        let mut step = 1.0;
        let mut accepted = None;
        for halving in 0..=MAX_HALVINGS {
            let mut trial = x.clone();
            trial.axpy(step, &dir);
            let rt = residual(&trial);
            let m = norm_h(&rt);
            if m < merit || norm_linf(&rt) <= tol.newton_tol {
                if halving > 0 {
                    report.damped_steps += 1;
                }
                accepted = Some((trial, rt, m));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((xn, rn, m)) => {
                x = xn;
                r = rn;
                merit = m;
            }
            None => {
                return Err(StepError::NewtonStalled {
                    stage,
                    residual: r_inf,
                })
            }
        }
    }
}

fn chi_residual(x: &Field, theta_bar: &Field, inputs: &StepInputs, params: &StepParams) -> Field {
    let tau = params.tau;
    let mut out = laplacian_neumann(x);
    for (((o, &xv), &h), &tb) in out
        .values_mut()
        .iter_mut()
        .zip(x.values())
        .zip(inputs.h.values())
        .zip(theta_bar.values())
    {
        let (b, _) = inputs.beta.yosida(params.eps, xv);
        *o = xv - tau * *o + tau * b + tau * inputs.pi.eval(xv) - h - tau * params.ell * tb;
    }
    out
}

fn theta_residual(theta: &Field, x: &Field, inputs: &StepInputs, params: &StepParams) -> Field {
    let s = params.stabilization_coef();
    let tk = params.tau * params.k0;
    let zeta = inputs.op_a.yosida(params.eps, &theta.sub(&inputs.theta_star));
    let mut out = laplacian_neumann(theta);
    for ((((o, &t), &xv), &g), &z) in out
        .values_mut()
        .iter_mut()
        .zip(theta.values())
        .zip(x.values())
        .zip(inputs.g.values())
        .zip(zeta.values())
    {
        let (l, _) = log_yosida(params.eps, t);
        *o = s * t + l + params.tau * z - tk * *o + params.ell * xv - g;
    }
    out
}

/// Solves the `χ` equation for a frozen `Θ̄`.
pub fn solve_chi(
    theta_bar: &Field,
    chi_guess: &Field,
    inputs: &StepInputs,
    params: &StepParams,
) -> Result<(Field, NewtonReport), StepError> {
    let tau = params.tau;
    let base = 1.0 + tau * inputs.pi.slope;
    damped_newton(
        "chi",
        chi_guess.clone(),
        |x| chi_residual(x, theta_bar, inputs, params),
        |x| Linearization {
            diag: x
                .values()
                .iter()
                .map(|&xv| base + tau * inputs.beta.yosida(params.eps, xv).1)
                .collect(),
            diffusion: tau,
            nonlocal: None,
        },
        &params.tol,
    )
}

/// Solves the `Θ` equation for a given `X`.
pub fn solve_theta(
    x_field: &Field,
    theta_guess: &Field,
    inputs: &StepInputs,
    params: &StepParams,
) -> Result<(Field, NewtonReport), StepError> {
    let s = params.stabilization_coef();
    let tau = params.tau;
    damped_newton(
        "theta",
        theta_guess.clone(),
        |t| theta_residual(t, x_field, inputs, params),
        |t| {
            let jac = inputs
                .op_a
                .yosida_jacobian(params.eps, &t.sub(&inputs.theta_star));
            Linearization {
                diag: t
                    .values()
                    .iter()
                    .map(|&tv| s + log_yosida(params.eps, tv).1)
                    .collect(),
                diffusion: tau * params.k0,
                nonlocal: (jac != YosidaJacobian::Zero).then_some((tau, jac)),
            }
        },
        &params.tol,
    )
}

/// One application of the outer map `Θ̄ ↦ (X(Θ̄), Θ(X(Θ̄)))`.
pub fn outer_map(
    theta_bar: &Field,
    chi_guess: &Field,
    inputs: &StepInputs,
    params: &StepParams,
) -> Result<(Field, Field, NewtonReport, NewtonReport), StepError> {
    let (chi, rc) = solve_chi(theta_bar, chi_guess, inputs, params)?;
    let (theta, rt) = solve_theta(&chi, theta_bar, inputs, params)?;
    Ok((chi, theta, rc, rt))
}

/// Root of a continuous strictly increasing `f` (value, derivative), found by
/// bracket expansion around `guess` followed by safeguarded Newton.
pub(crate) fn solve_increasing(f: impl Fn(f64) -> (f64, f64), guess: f64) -> f64 {
    let mut width = 1.0;
    let (mut lo, mut hi) = (guess - width, guess + width);
    while f(lo).0 > 0.0 {
        width *= 2.0;
        lo = guess - width;
    }
    while f(hi).0 < 0.0 {
        width *= 2.0;
        hi = guess + width;
    }
    let mut x = guess.clamp(lo, hi);
    for _ in 0..500 {
        let (v, d) = f(x);
        if v == 0.0 {
            return x;
        }
        if v > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - v / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 2.0 * f64::EPSILON * x.abs().max(1e-300) || hi - lo <= 2.0 * f64::EPSILON * hi.abs() {
            return next;
        }
        x = next;
    }
    x
}

/// Cold start: pointwise solution of `s Θ + ln_ε Θ = g`, and `X = h`.
pub fn cold_start(inputs: &StepInputs, params: &StepParams) -> StepStart {
    let s = params.stabilization_coef();
    let theta = inputs.g.map(|g| {
        solve_increasing(
            |t| {
                let (l, dl) = log_yosida(params.eps, t);
                (s * t + l - g, s + dl)
            },
            1.0,
        )
    });
    StepStart {
        theta,
        chi: inputs.h.clone(),
    }
}

/// Solves one regularized step by the outer Banach iteration.
pub fn fixed_point_step(
    inputs: &StepInputs,
    params: &StepParams,
    start: Option<&StepStart>,
) -> Result<StepResult, StepError> {
    params.validate(&inputs.pi)?;
    let start = match start {
        Some(s) => s.clone(),
        None => cold_start(inputs, params),
    };
    let mut theta_bar = start.theta;
    let mut chi = start.chi;
    let mut diffs = Vec::new();
    let mut ratios = Vec::new();
    let (mut newton, mut cg, mut damped) = (0, 0, 0);
    let mut converged = false;
    for _ in 0..params.tol.outer_maxit {
        let (x, theta, rc, rt) = outer_map(&theta_bar, &chi, inputs, params)?;
        newton += rc.iterations + rt.iterations;
        cg += rc.cg_iterations + rt.cg_iterations;
        damped += rc.damped_steps + rt.damped_steps;
        let diff = norm_h(&theta.sub(&theta_bar));
        if let Some(&prev) = diffs.last() {
            if prev > 0.0 {
                ratios.push(diff / prev);
            }
        }
        diffs.push(diff);
        chi = x;
        theta_bar = theta;
        if diff <= params.tol.outer_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(StepError::OuterNotConverged {
            iterations: diffs.len(),
            difference: diffs.last().copied().unwrap_or(f64::NAN),
        });
    }
    // bring X in line with the accepted Θ
    let (chi, rc) = solve_chi(&theta_bar, &chi, inputs, params)?;
    newton += rc.iterations;
    cg += rc.cg_iterations;
    damped += rc.damped_steps;

    let theta = theta_bar;
    let zeta = inputs.op_a.yosida(params.eps, &theta.sub(&inputs.theta_star));
    let xi = chi.map(|x| inputs.beta.yosida(params.eps, x).0);
    let (residual_theta, residual_chi) = step_residuals(&theta, &chi, inputs, params);
    Ok(StepResult {
        theta,
        chi,
        zeta,
        xi,
        outer_iters: diffs.len(),
        total_newton_iters: newton,
        total_cg_iters: cg,
        damped_steps: damped,
        outer_diffs: diffs,
        contraction_ratios: ratios,
        residual_theta,
        residual_chi,
        eps_cauchy: Vec::new(),
    })
}

/// Standard geometric ε ladder `start, start·factor, …` ending exactly at `min`.
pub fn geometric_ladder(start: f64, factor: f64, min: f64) -> Vec<f64> {
    let mut ladder = Vec::new();
    let mut e = start;
    while e > min * (1.0 + 1e-12) {
        ladder.push(e);
        e *= factor;
    }
    ladder.push(min);
    ladder
}

/// Continuation in ε: solves at every rung, warm-starting from the previous
/// rung, and records the Cauchy differences of `Θ` between rungs.
pub fn epsilon_ladder_step(
    inputs: &StepInputs,
    params: &StepParams,
    ladder: &[f64],
    start: Option<&StepStart>,
) -> Result<StepResult, StepError> {
    let Some(&last) = ladder.last() else {
        return Err(StepError::BadLadder("empty".into()));
    };
    if ladder[0] > 1.0 {
        return Err(StepError::BadLadder(format!("first entry {} exceeds 1", ladder[0])));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(StepError::BadLadder("entries must be strictly decreasing".into()));
    }
    if last != params.eps {
        return Err(StepError::BadLadder(format!(
            "last entry {last} differs from the working ε {}",
            params.eps
        )));
    }
    let mut current: Option<StepResult> = None;
    let mut cauchy = Vec::new();
    let (mut newton, mut cg, mut outer, mut damped) = (0, 0, 0, 0);
    for &eps in ladder {
        let p = params.with_eps(eps);
        let warm = current.as_ref().map(|r| StepStart {
            theta: r.theta.clone(),
            chi: r.chi.clone(),
        });
        let res = fixed_point_step(inputs, &p, warm.as_ref().or(start))?;
        if let Some(prev) = &current {
            cauchy.push(norm_h(&res.theta.sub(&prev.theta)));
        }
        newton += res.total_newton_iters;
        cg += res.total_cg_iters;
        outer += res.outer_iters;
        damped += res.damped_steps;
        current = Some(res);
    }
    let mut res = current.expect("nonempty ladder");
    res.total_newton_iters = newton;
    res.total_cg_iters = cg;
    res.outer_iters = outer;
    res.damped_steps = damped;
    res.eps_cauchy = cauchy;
    Ok(res)
}

/// Recomputes the L∞ residuals of both step equations at `(Θ, X)`.
pub fn step_residuals(
    theta: &Field,
    chi: &Field,
    inputs: &StepInputs,
    params: &StepParams,
) -> (f64, f64) {
    let (tau, eps, ell) = (params.tau, params.eps, params.ell);
    let s = params.stabilization_coef();

    // Θ equation: left side minus right side
    let zeta = inputs.op_a.yosida(eps, &theta.sub(&inputs.theta_star));
    let lap_theta = laplacian_neumann(theta);
    let mut r_theta: f64 = 0.0;
    for i in 0..theta.len() {
        let t = theta.values()[i];
        let lhs = s * t + log_yosida(eps, t).0 + tau * zeta.values()[i]
            - tau * params.k0 * lap_theta.values()[i];
        let rhs = -ell * chi.values()[i] + inputs.g.values()[i];
        r_theta = r_theta.max((lhs - rhs).abs());
    }

    let lap_chi = laplacian_neumann(chi);
    let mut r_chi: f64 = 0.0;
    for i in 0..chi.len() {
        let x = chi.values()[i];
        let lhs = x - tau * lap_chi.values()[i]
            + tau * inputs.beta.yosida(eps, x).0
            + tau * inputs.pi.eval(x);
        let rhs = inputs.h.values()[i] + tau * ell * theta.values()[i];
        r_chi = r_chi.max((lhs - rhs).abs());
    }
    (r_theta, r_chi)
}

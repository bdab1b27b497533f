//! Per-step ledger, discrete lemmas, energy monitors and refinement studies.

pub mod study;
pub mod verify;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{grad_sq, norm_h, norm_l1, norm_v_sq, Field};
use crate::monotone::{log_yosida, ScalarGraph};
use crate::scheme::{StepRecord, Trajectory};
use crate::stepper::StepParams;

#[derive(Debug, Error, PartialEq)]
pub enum DiagError {
    #[error("negative input to the Gronwall bound")]
    NegativeInput,
    #[error("index m = {m} outside 1..={max}")]
    BadIndex { m: usize, max: usize },
    #[error("inputs must be strictly positive (got a = {a}, b = {b})")]
    NonPositive { a: f64, b: f64 },
    #[error("obstacle violation needs β = indicator_box (got {0})")]
    NotABox(String),
}

/// One ledger row per accepted step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub step: usize,
    pub t: f64,
    pub eps: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_h: f64,
    pub theta_grad_sq: f64,
    pub theta_l1: f64,
    pub log_theta_h: f64,
    pub chi_v_sq: f64,
    /// `∫ β̃_ε(X)`
    pub beta_envelope: f64,
    pub zeta_h: f64,
    pub xi_h: f64,
    pub obstacle_violation: f64,
    pub entropy_defect: f64,
    /// `τ Σ_{j≤i} ‖∇Θ^j‖²`
    pub cum_grad_theta: f64,
    /// `τ Σ_{j≤i} ‖(X^j − X^{j−1})/τ‖²_H`
    pub cum_dchi_sq: f64,
    pub outer_iters: usize,
    pub newton_iters: usize,
    pub cg_iters: usize,
    pub damped_steps: usize,
    pub residual_theta: f64,
    pub residual_chi: f64,
    pub max_contraction: f64,
    pub positive: bool,
}

pub struct RowInputs<'a> {
    pub step: usize,
    pub tau: f64,
    pub params: &'a StepParams,
    pub beta: &'a ScalarGraph,
    pub record: &'a StepRecord,
    pub theta_prev: &'a Field,
    pub chi_prev: &'a Field,
    pub log_prev: &'a Field,
    pub source: &'a Field,
    pub previous_row: Option<&'a LedgerRow>,
}

/// Terms of the integrated temperature equation at one step.
pub struct EntropyTerms<'a> {
    pub theta: &'a Field,
    pub chi: &'a Field,
    pub zeta: &'a Field,
    pub theta_prev: &'a Field,
    pub chi_prev: &'a Field,
    /// The logarithm that entered `g` at this step.
    pub log_prev: &'a Field,
    pub source: &'a Field,
    pub tau: f64,
    pub eps: f64,
    pub ell: f64,
    /// Coefficient of the stabilizing term.
    pub stabilization: f64,
}

/// `|∫ [s(Θ^i − Θ^{i−1}) + (ln_ε Θ^i − L^{i−1}) + ℓ(X^i − X^{i−1}) + τζ^i − τF^i]|`.
///
/// The diffusion term is absent because the Neumann Laplacian sums to zero.
pub fn entropy_defect(e: &EntropyTerms) -> f64 {
    let dv = e.theta.grid().cell_volume();
    let mut sum = 0.0;
    for k in 0..e.theta.len() {
        let t = e.theta.values()[k];
        sum += e.stabilization * (t - e.theta_prev.values()[k])
            + (log_yosida(e.eps, t).0 - e.log_prev.values()[k])
            + e.ell * (e.chi.values()[k] - e.chi_prev.values()[k])
            + e.tau * e.zeta.values()[k]
            - e.tau * e.source.values()[k];
    }
    (sum * dv).abs()
}

impl LedgerRow {
    pub fn compute(r: &RowInputs) -> LedgerRow {
        let rec = r.record;
        let eps = rec.stats.eps;
        let dv = rec.theta.grid().cell_volume();
        let grad = grad_sq(&rec.theta);
        let dchi = norm_h(&rec.chi.sub(r.chi_prev)) / r.tau;
        let (cum_grad, cum_dchi) = r
            .previous_row
            .map_or((0.0, 0.0), |p| (p.cum_grad_theta, p.cum_dchi_sq));
        let theta_min = rec.theta.min();
        LedgerRow {
            step: r.step,
            t: r.step as f64 * r.tau,
            eps,
            theta_min,
            theta_max: rec.theta.max(),
            theta_h: norm_h(&rec.theta),
            theta_grad_sq: grad,
            theta_l1: norm_l1(&rec.theta),
            log_theta_h: norm_h(&rec.log_theta),
            chi_v_sq: norm_v_sq(&rec.chi),
            beta_envelope: rec.chi.values().iter().map(|&x| r.beta.moreau(eps, x)).sum::<f64>() * dv,
            zeta_h: norm_h(&rec.zeta),
            xi_h: norm_h(&rec.xi),
            obstacle_violation: rec
                .chi
                .values()
                .iter()
                .map(|&x| r.beta.domain_distance(x))
                .fold(0.0, f64::max),
            entropy_defect: entropy_defect(&EntropyTerms {
                theta: &rec.theta,
                chi: &rec.chi,
                zeta: &rec.zeta,
                theta_prev: r.theta_prev,
                chi_prev: r.chi_prev,
                log_prev: r.log_prev,
                source: r.source,
                tau: r.tau,
                eps,
                ell: r.params.ell,
                stabilization: r.params.stabilization_coef(),
            }),
            cum_grad_theta: cum_grad + r.tau * grad,
            cum_dchi_sq: cum_dchi + r.tau * dchi * dchi,
            outer_iters: rec.stats.outer_iters,
            newton_iters: rec.stats.newton_iters,
            cg_iters: rec.stats.cg_iters,
            damped_steps: rec.stats.damped_steps,
            residual_theta: rec.stats.residual_theta,
            residual_chi: rec.stats.residual_chi,
            max_contraction: rec.stats.contraction_ratios.iter().copied().fold(0.0, f64::max),
            positive: theta_min > 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.eps,
            self.theta_min,
            self.theta_max,
            self.theta_h,
            self.theta_grad_sq,
            self.theta_l1,
            self.log_theta_h,
            self.chi_v_sq,
            self.beta_envelope,
            self.zeta_h,
            self.xi_h,
            self.obstacle_violation,
            self.entropy_defect,
            self.cum_grad_theta,
            self.cum_dchi_sq,
            self.residual_theta,
            self.residual_chi,
            self.max_contraction,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn write_ledger_csv<W: Write>(rows: &[LedgerRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_ledger_csv<R: Read>(r: R) -> Result<Vec<LedgerRow>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// `a₀ exp(Σ_{n=1}^{m−1} b_n)`, with `b[0] = b_1`.
pub fn gronwall_bound(a0: f64, b: &[f64], m: usize) -> Result<f64, DiagError> {
    if a0 < 0.0 || b.iter().any(|&x| x < 0.0) {
        return Err(DiagError::NegativeInput);
    }
    if m == 0 || m > b.len() + 1 {
        return Err(DiagError::BadIndex { m, max: b.len() + 1 });
    }
    Ok(a0 * b[..m - 1].iter().sum::<f64>().exp())
}

/// `(|a − b|, |ln a² − ln b²|(a + b))`; the first never exceeds the second.
pub fn log_pair_inequality(a: f64, b: f64) -> Result<(f64, f64), DiagError> {
    if !(a > 0.0 && b > 0.0) {
        return Err(DiagError::NonPositive { a, b });
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let log_gap = 2.0 * ((hi - lo) / lo).ln_1p();
    Ok((hi - lo, log_gap * (a + b)))
}

/// The bounded quantities of the first a priori estimate, over steps `1..=n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyQuantities {
    /// `τ^{1/2} max ‖Θ^i‖²_H`
    pub theta_h_sup: f64,
    /// `τ^{3/2} ‖∂_t Θ̂‖²_{L²(H)}`
    pub theta_dt: f64,
    /// `max ‖Θ^i‖_{L¹}`
    pub theta_l1_sup: f64,
    /// `‖∇Θ̄‖²_{L²(H)}`
    pub grad_theta: f64,
    /// `‖∂_t X̂‖²_{L²(H)}`
    pub chi_dt: f64,
    /// `max ‖X^i‖²_V`
    pub chi_v_sup: f64,
    /// `τ ‖∂_t X̂‖²_{L²(V)}`
    pub chi_dt_v: f64,
    /// `max ∫ β̃_ε(X^i)`
    pub beta_sup: f64,
    /// `max ‖L^i‖_H`
    pub log_theta_sup: f64,
}

impl EnergyQuantities {
    pub fn named(&self) -> [(&'static str, f64); 9] {
        [
            ("theta_h_sup", self.theta_h_sup),
            ("theta_dt", self.theta_dt),
            ("theta_l1_sup", self.theta_l1_sup),
            ("grad_theta", self.grad_theta),
            ("chi_dt", self.chi_dt),
            ("chi_v_sup", self.chi_v_sup),
            ("chi_dt_v", self.chi_dt_v),
            ("beta_sup", self.beta_sup),
            ("log_theta_sup", self.log_theta_sup),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    /// Quantities accumulated over steps `1..=n`, for each `n`.
    pub running: Vec<EnergyQuantities>,
    /// Whether every quantity is finite at step `n`.
    pub finite: Vec<bool>,
    /// Smallest `c ≥ 0` with `E_n ≤ E_0 exp(c t_n)` for the state energy
    /// `E = τ^{1/2}‖Θ‖²_H + ‖Θ‖_{L¹} + ‖X‖²_V + ∫β̃_ε(X)`.
    pub gronwall_constant: f64,
}

impl EnergyReport {
    pub fn summary(&self) -> EnergyQuantities {
        self.running.last().copied().unwrap_or_default()
    }
}

pub fn energy_monitor(traj: &Trajectory) -> EnergyReport {
    let tau = traj.tau();
    let st = tau.sqrt();
    let beta = traj.config.monotone.beta;
    let dv = traj.theta0.grid().cell_volume();
    let envelope = |x: &Field, eps: f64| x.values().iter().map(|&v| beta.moreau(eps, v)).sum::<f64>() * dv;
    let eps0 = traj.steps.first().map_or(1.0, |r| r.stats.eps);
    let state_energy = |t: &Field, x: &Field, eps: f64| {
        st * norm_h(t).powi(2) + norm_l1(t) + norm_v_sq(x) + envelope(x, eps)
    };
    let e0 = state_energy(&traj.theta0, &traj.chi0, eps0);

    let mut q = EnergyQuantities::default();
    let mut running = Vec::with_capacity(traj.len());
    let mut finite = Vec::with_capacity(traj.len());
    let mut gronwall: f64 = 0.0;
    for (k, rec) in traj.steps.iter().enumerate() {
        let (tp, xp, _) = traj.state(k).expect("previous state");
        let eps = rec.stats.eps;
        let dtheta = norm_h(&rec.theta.sub(tp)) / tau;
        let dchi = rec.chi.sub(xp);
        q.theta_h_sup = q.theta_h_sup.max(st * norm_h(&rec.theta).powi(2));
        q.theta_dt += st * tau * tau * dtheta * dtheta;
        q.theta_l1_sup = q.theta_l1_sup.max(norm_l1(&rec.theta));
        q.grad_theta += tau * grad_sq(&rec.theta);
        q.chi_dt += tau * (norm_h(&dchi) / tau).powi(2);
        q.chi_v_sup = q.chi_v_sup.max(norm_v_sq(&rec.chi));
        q.chi_dt_v += norm_v_sq(&dchi);
        q.beta_sup = q.beta_sup.max(envelope(&rec.chi, eps));
        q.log_theta_sup = q.log_theta_sup.max(norm_h(&rec.log_theta));
        finite.push(q.named().iter().all(|(_, v)| v.is_finite()));
        running.push(q);

        let e = state_energy(&rec.theta, &rec.chi, eps);
        if e0 > 0.0 && e > e0 {
            gronwall = gronwall.max((e / e0).ln() / ((k + 1) as f64 * tau));
        }
    }
    EnergyReport {
        running,
        finite,
        gronwall_constant: gronwall,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioCheck {
    pub name: &'static str,
    pub coarse: f64,
    pub fine: f64,
    pub limit: f64,
    pub pass: bool,
}

/// Boundedness under τ-halving: `v(τ/2) ≤ 1.25 v(τ) + 0.1 max(1, v(τ))`.
pub fn refinement_ratio_test(coarse: &EnergyQuantities, fine: &EnergyQuantities) -> Vec<RatioCheck> {
    coarse
        .named()
        .iter()
        .zip(fine.named())
        .map(|(&(name, c), (_, f))| {
            let limit = 1.25 * c + 0.1 * c.max(1.0);
            RatioCheck {
                name,
                coarse: c,
                fine: f,
                limit,
                pass: f <= limit,
            }
        })
        .collect()
}

/// `max_i max_x dist(X^i(x), [lo, hi])` over the trajectory.
pub fn obstacle_violation(traj: &Trajectory) -> Result<f64, DiagError> {
    let beta = traj.config.monotone.beta;
    if !matches!(beta, ScalarGraph::IndicatorBox { .. }) {
        return Err(DiagError::NotABox(beta.to_string()));
    }
    Ok(traj
        .ledger
        .iter()
        .map(|r| r.obstacle_violation)
        .fold(0.0, f64::max))
}

/// Ratios `v(ε_{k+1})/v(ε_k)` for an ε table sorted by decreasing ε; `None`
/// where a pair is outside the resolved regime.
///
/// A pair is resolved when the smaller violation is at least `floor` (so it
/// is not dominated by solver tolerances) and the larger one is at most
/// `5%` of the box width (so the penalty is in its asymptotic regime).
pub fn violation_ratios(table: &[(f64, f64)], floor: f64, width: f64) -> Vec<Option<f64>> {
    table
        .windows(2)
        .map(|w| {
            let (v0, v1) = (w[0].1, w[1].1);
            (v1 >= floor && v0 <= 0.05 * width && v0 > 0.0).then(|| v1 / v0)
        })
        .collect()
}

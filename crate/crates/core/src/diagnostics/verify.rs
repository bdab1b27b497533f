//! Independent verification of a stored trajectory.
//!
//! Recomputes every step's residuals and entropy defect from the stored
//! fields using only grid operators and the monotone maps. Nothing here goes
//! through the solver or the scheme's assembly code.

use crate::grid::{laplacian_neumann, norm_linf, Field, GridSpec};
use crate::monotone::{log_yosida, PiFunction};
use crate::scheme::{EpsilonPolicy, Trajectory};

/// Tolerance factor on `newton_tol` for recomputed residuals and defects.
pub const CHECK_FACTOR: f64 = 100.0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckOutcome {
    pub steps: usize,
    pub max_residual_theta: f64,
    pub max_residual_chi: f64,
    pub max_defect: f64,
    pub failures: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn close(a: &Field, b: &Field) -> bool {
    a.values()
        .iter()
        .zip(b.values())
        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
}

pub fn verify_trajectory(traj: &Trajectory) -> CheckOutcome {
    let mut out = CheckOutcome {
        steps: traj.len(),
        ..Default::default()
    };
    let cfg = &traj.config;
    let grid = match GridSpec::new(&cfg.grid.extent, &cfg.grid.cells) {
        Ok(g) => g,
        Err(e) => {
            out.failures.push(format!("grid: {e}"));
            return out;
        }
    };
    let n = cfg.scheme.steps;
    let tau = cfg.scheme.final_time / n as f64;
    let (k0, ell) = (cfg.scheme.k0, cfg.scheme.ell);
    let s = if cfg.scheme.stabilization { tau.sqrt() } else { 0.0 };
    let eps = match cfg.epsilon {
        EpsilonPolicy::Fixed { value } => value,
        EpsilonPolicy::Ladder { min, .. } => min,
    };
    let exact_log = matches!(cfg.epsilon, EpsilonPolicy::Ladder { .. });
    let beta = cfg.monotone.beta;
    let op_a = cfg.monotone.nonlocal;
    let pi = PiFunction::new(cfg.monotone.pi_slope, cfg.monotone.pi_offset);
    let tol = CHECK_FACTOR * cfg.stepper.newton_tol;
    let theta_star = cfg.data.theta_star.eval(&grid);
    let volume = grid.volume();

    if traj.len() > n {
        out.failures.push(format!("{} steps stored for N = {n}", traj.len()));
    }
    if traj.ledger.len() != traj.len() {
        out.failures.push(format!("{} ledger rows for {} steps", traj.ledger.len(), traj.len()));
    }
    if traj.theta0 != cfg.data.theta0.eval(&grid) || traj.chi0 != cfg.data.chi0.eval(&grid) {
        out.failures.push("initial data differ from the configured profiles".into());
    }
    if traj.log_theta0 != traj.theta0.map(f64::ln) {
        out.failures.push("stored ln ϑ₀ differs from ln of ϑ₀".into());
    }

    for (k, rec) in traj.steps.iter().enumerate() {
        let i = k + 1;
        let mut fail = |m: String| out.failures.push(format!("step {i}: {m}"));
        let fields = [&rec.theta, &rec.chi, &rec.zeta, &rec.xi, &rec.log_theta];
        if fields.iter().any(|f| f.grid() != &grid || !f.is_finite()) {
            fail("non-finite or mis-sized field".into());
            continue;
        }
        if rec.stats.eps != eps {
            fail(format!("stored ε {} differs from working ε {eps}", rec.stats.eps));
        }
        let (tp, xp, lp) = if k == 0 {
            (&traj.theta0, &traj.chi0, &traj.log_theta0)
        } else {
            let p = &traj.steps[k - 1];
            (&p.theta, &p.chi, &p.log_theta)
        };
        let f = match cfg.source.discretize(&grid, tau, i) {
            Ok(f) => f,
            Err(e) => {
                fail(format!("source: {e}"));
                continue;
            }
        };

        let zeta = op_a.yosida(eps, &rec.theta.sub(&theta_star));
        if !close(&zeta, &rec.zeta) {
            fail("stored ζ is not A_ε(Θ − ϑ*)".into());
        }
        let xi = rec.chi.map(|x| beta.yosida(eps, x).0);
        if !close(&xi, &rec.xi) {
            fail("stored ξ is not β_ε(X)".into());
        }
        let log_expected = if exact_log {
            rec.theta.map(|t| t.max(f64::MIN_POSITIVE).ln())
        } else {
            rec.theta.map(|t| log_yosida(eps, t).0)
        };
        if !close(&log_expected, &rec.log_theta) {
            fail("stored logarithm does not match Θ".into());
        }

        let lap_t = laplacian_neumann(&rec.theta);
        let lap_x = laplacian_neumann(&rec.chi);
        let mut r_theta = Field::zeros(&grid);
        let mut r_chi = Field::zeros(&grid);
        let mut integral = 0.0;
        for c in 0..grid.len() {
            let t = rec.theta.values()[c];
            let x = rec.chi.values()[c];
            let g = tau * f.values()[c] + s * tp.values()[c] + lp.values()[c] + ell * xp.values()[c];
            let eq = s * t + log_yosida(eps, t).0 + tau * zeta.values()[c] - tau * k0 * lap_t.values()[c]
                + ell * x
                - g;
            r_theta.values_mut()[c] = eq;
            integral += eq;
            r_chi.values_mut()[c] = x - tau * lap_x.values()[c] + tau * beta.yosida(eps, x).0 + tau * pi.eval(x)
                - xp.values()[c]
                - tau * ell * t;
        }
        let (rt, rc) = (norm_linf(&r_theta), norm_linf(&r_chi));
        let defect = (integral * grid.cell_volume()).abs();
        out.max_residual_theta = out.max_residual_theta.max(rt);
        out.max_residual_chi = out.max_residual_chi.max(rc);
        out.max_defect = out.max_defect.max(defect);
        if rt > tol {
            fail(format!("Θ residual {rt:e} exceeds {tol:e}"));
        }
        if rc > tol {
            fail(format!("X residual {rc:e} exceeds {tol:e}"));
        }
        if defect > tol * volume {
            fail(format!("entropy defect {defect:e} exceeds {:e}", tol * volume));
        }
        if let Some(row) = traj.ledger.get(k) {
            if row.step != i || (row.entropy_defect - defect).abs() > tol * volume {
                fail("ledger row disagrees with the recomputed step".into());
            }
        }
    }
    out
}

//! Self-convergence studies over τ or ε ladders.
//!
//! Every ladder member is a full run of the same scenario. Differences are
//! taken at the nodes of the coarsest member, in the discrete norms
//! `C⁰([0,T];V′)` for `ln θ`, `C⁰([0,T];V)` for `χ` and `L²(0,T;H)` for
//! `θ^{1/2}`. The finest member serves as reference; orders are fitted by least
//! squares on the successive differences.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::obstacle_violation;
use crate::grid::{dual_norm_vprime, norm_h, norm_v_sq, GridError};
use crate::scheme::{run, EpsilonPolicy, Quantity, SchemeConfig, SchemeError, Trajectory};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("a study needs at least 3 ladder entries (got {0})")]
    TooShort(usize),
    #[error("ladder is not nested: {0}")]
    NonNested(String),
    #[error("ladder member {param}: {source}")]
    Member {
        param: f64,
        #[source]
        source: Box<SchemeError>,
    },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Tau,
    Eps,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StudyNorms {
    /// `max_j ‖ln θ_a − ln θ_b‖_{V′}`
    pub log_theta: f64,
    /// `max_j ‖χ_a − χ_b‖_V`
    pub chi: f64,
    /// `(Σ_j τ_c ‖θ_a^{1/2} − θ_b^{1/2}‖²_H)^{1/2}`
    pub sqrt_theta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StudyOrders {
    pub log_theta: Option<f64>,
    pub chi: Option<f64>,
    pub sqrt_theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyMember {
    pub param: f64,
    pub steps: usize,
    pub eps: f64,
    pub min_theta: f64,
    /// `None` unless β is an indicator box.
    pub obstacle_violation: Option<f64>,
    pub max_entropy_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub ladder: Vec<f64>,
    pub members: Vec<StudyMember>,
    /// Member `k` against member `k + 1`.
    pub successive: Vec<StudyNorms>,
    /// Member `k` against the finest member.
    pub against_finest: Vec<StudyNorms>,
    /// Indices `k` with `ladder[k] == ladder[k + 1]`.
    pub duplicates: Vec<usize>,
    pub orders: StudyOrders,
}

/// Least-squares slope of `ln d` against `ln h`, skipping zero differences.
pub fn fit_order(h: &[f64], d: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(d)
        .filter(|(&h, &d)| h > 0.0 && d > 0.0 && d.is_finite())
        .map(|(h, d)| (h.ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn run_all(configs: Vec<(f64, SchemeConfig)>, jobs: usize) -> Result<Vec<Trajectory>, StudyError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| StudyError::Pool(e.to_string()))?;
    pool.install(|| {
        configs
            .into_par_iter()
            .map(|(param, c)| {
                run(c).map_err(|e| StudyError::Member {
                    param,
                    source: Box::new(e),
                })
            })
            .collect()
    })
}

/// Distances between two runs at the coarse nodes `j = 0..=nc`.
fn distance(a: &Trajectory, b: &Trajectory, nc: usize, cg_tol: f64) -> Result<StudyNorms, GridError> {
    let (na, nb) = (a.len(), b.len());
    let tau_c = a.config.scheme.final_time / nc as f64;
    let la = a.series(Quantity::LogTheta);
    let lb = b.series(Quantity::LogTheta);
    let sa = a.series(Quantity::SqrtTheta);
    let sb = b.series(Quantity::SqrtTheta);
    let mut out = StudyNorms::default();
    let mut l2 = 0.0;
    for j in 0..=nc {
        let (ia, ib) = (j * na / nc, j * nb / nc);
        let (_, xa, _) = a.state(ia).expect("node");
        let (_, xb, _) = b.state(ib).expect("node");
        out.log_theta = out.log_theta.max(dual_norm_vprime(&la[ia].sub(&lb[ib]), cg_tol)?);
        out.chi = out.chi.max(norm_v_sq(&xa.sub(xb)).sqrt());
        if j > 0 {
            l2 += tau_c * norm_h(&sa[ia].sub(&sb[ib])).powi(2);
        }
    }
    out.sqrt_theta = l2.sqrt();
    Ok(out)
}

fn report(kind: StudyKind, ladder: Vec<f64>, runs: Vec<Trajectory>, nc: usize) -> Result<StudyReport, StudyError> {
    let cg_tol = runs[0].config.stepper.cg_tol;
    let finest = runs.last().expect("nonempty");
    let mut successive = Vec::new();
    let mut against_finest = Vec::new();
    for k in 0..runs.len() {
        against_finest.push(distance(&runs[k], finest, nc, cg_tol)?);
        if k + 1 < runs.len() {
            successive.push(distance(&runs[k], &runs[k + 1], nc, cg_tol)?);
        }
    }
    let duplicates: Vec<usize> = ladder
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] == w[1])
        .map(|(k, _)| k)
        .collect();
    let h = &ladder[..ladder.len() - 1];
    let col = |f: fn(&StudyNorms) -> f64| -> Vec<f64> { successive.iter().map(f).collect() };
    let orders = StudyOrders {
        log_theta: fit_order(h, &col(|n| n.log_theta)),
        chi: fit_order(h, &col(|n| n.chi)),
        sqrt_theta: fit_order(h, &col(|n| n.sqrt_theta)),
    };
    let members = ladder
        .iter()
        .zip(&runs)
        .map(|(&param, t)| StudyMember {
            param,
            steps: t.len(),
            eps: t.steps.last().map_or(f64::NAN, |r| r.stats.eps),
            min_theta: t.ledger.iter().map(|r| r.theta_min).fold(f64::INFINITY, f64::min),
            obstacle_violation: obstacle_violation(t).ok(),
            max_entropy_defect: t.ledger.iter().map(|r| r.entropy_defect).fold(0.0, f64::max),
        })
        .collect();
    Ok(StudyReport {
        kind,
        ladder,
        members,
        successive,
        against_finest,
        duplicates,
        orders,
    })
}

/// Runs `base` with `N = T/τ` for every `τ` of the ladder (coarse to fine).
pub fn tau_study(base: &SchemeConfig, taus: &[f64], jobs: usize) -> Result<StudyReport, StudyError> {
    if taus.len() < 3 {
        return Err(StudyError::TooShort(taus.len()));
    }
    let t_final = base.scheme.final_time;
    let mut steps = Vec::new();
    for &tau in taus {
        let n = (t_final / tau).round();
        if !(n >= 1.0) || (n * tau - t_final).abs() > 1e-9 * t_final {
            return Err(StudyError::NonNested(format!("τ = {tau} does not divide T = {t_final}")));
        }
        steps.push(n as usize);
    }
    for w in steps.windows(2) {
        if w[1] % w[0] != 0 {
            return Err(StudyError::NonNested(format!(
                "N = {} is not a multiple of N = {}",
                w[1], w[0]
            )));
        }
    }
    let configs = taus
        .iter()
        .zip(&steps)
        .map(|(&tau, &n)| {
            let mut c = base.clone();
            c.scheme.steps = n;
            (tau, c)
        })
        .collect();
    let runs = run_all(configs, jobs)?;
    report(StudyKind::Tau, taus.to_vec(), runs, steps[0])
}

/// Runs `base` at each fixed ε of the ladder (largest first).
pub fn eps_study(base: &SchemeConfig, eps: &[f64], jobs: usize) -> Result<StudyReport, StudyError> {
    if eps.len() < 3 {
        return Err(StudyError::TooShort(eps.len()));
    }
    if eps.windows(2).any(|w| w[1] > w[0]) {
        return Err(StudyError::NonNested("ε ladder must be nonincreasing".into()));
    }
    let configs = eps
        .iter()
        .map(|&e| {
            let mut c = base.clone();
            c.epsilon = EpsilonPolicy::Fixed { value: e };
            (e, c)
        })
        .collect();
    let runs = run_all(configs, jobs)?;
    report(StudyKind::Eps, eps.to_vec(), runs, base.scheme.steps)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl StudyReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "index",
            "param",
            "steps",
            "eps",
            "min_theta",
            "obstacle_violation",
            "max_entropy_defect",
            "succ_log_theta_vprime",
            "succ_chi_v",
            "succ_sqrt_theta_l2h",
            "finest_log_theta_vprime",
            "finest_chi_v",
            "finest_sqrt_theta_l2h",
        ])?;
        for (k, m) in self.members.iter().enumerate() {
            let s = self.successive.get(k);
            let f = &self.against_finest[k];
            wr.write_record([
                k.to_string(),
                m.param.to_string(),
                m.steps.to_string(),
                m.eps.to_string(),
                m.min_theta.to_string(),
                opt(m.obstacle_violation),
                m.max_entropy_defect.to_string(),
                opt(s.map(|n| n.log_theta)),
                opt(s.map(|n| n.chi)),
                opt(s.map(|n| n.sqrt_theta)),
                f.log_theta.to_string(),
                f.chi.to_string(),
                f.sqrt_theta.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let name = match self.kind {
            StudyKind::Tau => "tau",
            StudyKind::Eps => "eps",
        };
        let fmt = |o: Option<f64>| o.map_or_else(|| "n/a".to_string(), |p| format!("{p:.3}"));
        let mut s = format!("{name} study over {:?}\n", self.ladder);
        s += &format!("order ln(theta) C0(V'):      {}\n", fmt(self.orders.log_theta));
        s += &format!("order chi C0(V):             {}\n", fmt(self.orders.chi));
        s += &format!("order sqrt(theta) L2(H):     {}\n", fmt(self.orders.sqrt_theta));
        let dec = |f: fn(&StudyNorms) -> f64| {
            self.successive.windows(2).all(|w| f(&w[1]) < f(&w[0]))
        };
        s += &format!(
            "successive differences decreasing: ln(theta) {}, chi {}, sqrt(theta) {}\n",
            dec(|n| n.log_theta),
            dec(|n| n.chi),
            dec(|n| n.sqrt_theta)
        );
        if !self.duplicates.is_empty() {
            s += &format!("duplicate ladder entries at {:?} (zero differences skipped in the fit)\n", self.duplicates);
        }
        s
    }
}

//! Piecewise constant and piecewise linear interpolants of node sequences.
//!
//! For nodes `z^0, …, z^N` and `t = (i + s)τ` with `0 < s < 1`,
//! `z̄(t) = z^{i+1}` and `ẑ(t) = z^i + s(z^{i+1} − z^i)`. At a node `t = iτ`
//! both evaluate to `z^i`.

use thiserror::Error;

use crate::grid::{norm_h, Field};

#[derive(Debug, Error, PartialEq)]
pub enum InterpError {
    #[error("time {t} outside [0, {t_final}]")]
    OutOfRange { t: f64, t_final: f64 },
    #[error("need at least one node")]
    Empty,
}

/// Locates `t` as `(i, s)` with `t = (i + s)τ`, `0 ≤ s < 1`; `s = 0` marks a node.
fn locate(n_nodes: usize, tau: f64, t: f64) -> Result<(usize, f64), InterpError> {
    if n_nodes == 0 {
        return Err(InterpError::Empty);
    }
    let n = n_nodes - 1;
    let t_final = n as f64 * tau;
    if !(t >= 0.0 && t <= t_final * (1.0 + 1e-14)) {
        return Err(InterpError::OutOfRange { t, t_final });
    }
    let x = t / tau;
    let i = x.round();
    if (x - i).abs() <= 1e-12 * x.max(1.0) {
        return Ok(((i as usize).min(n), 0.0));
    }
    let i = x.floor();
    Ok(((i as usize).min(n.saturating_sub(1)), x - i))
}

/// `z̄` on interval `i` at local coordinate `s ∈ (0, 1)`.
pub fn const_on_interval(seq: &[Field], i: usize) -> Field {
    seq[i + 1].clone()
}

/// `ẑ` on interval `i` at local coordinate `s`.
pub fn lin_on_interval(seq: &[Field], i: usize, s: f64) -> Field {
    seq[i].zip_map(&seq[i + 1], |a, b| a + s * (b - a))
}

pub fn interp_const(seq: &[Field], tau: f64, t: f64) -> Result<Field, InterpError> {
    let (i, s) = locate(seq.len(), tau, t)?;
    Ok(if s == 0.0 {
        seq[i].clone()
    } else {
        const_on_interval(seq, i)
    })
}

pub fn interp_lin(seq: &[Field], tau: f64, t: f64) -> Result<Field, InterpError> {
    let (i, s) = locate(seq.len(), tau, t)?;
    Ok(if s == 0.0 {
        seq[i].clone()
    } else {
        lin_on_interval(seq, i, s)
    })
}

fn jumps(seq: &[Field]) -> impl Iterator<Item = f64> + '_ {
    seq.windows(2).map(|w| norm_h(&w[1].sub(&w[0])))
}

/// `‖z̄ − ẑ‖_{L∞(0,T;H)} = max_i ‖z^{i+1} − z^i‖_H`
pub fn gap_linf(seq: &[Field]) -> f64 {
    jumps(seq).fold(0.0, f64::max)
}

/// `‖z̄ − ẑ‖²_{L²(0,T;H)} = (τ/3) Σ_i ‖z^{i+1} − z^i‖²_H`
pub fn gap_l2_sq(seq: &[Field], tau: f64) -> f64 {
    tau / 3.0 * jumps(seq).map(|j| j * j).sum::<f64>()
}

/// `‖∂_t ẑ‖²_{L²(0,T;H)} = τ Σ_i ‖(z^{i+1} − z^i)/τ‖²_H`
pub fn derivative_l2_sq(seq: &[Field], tau: f64) -> f64 {
    jumps(seq).map(|j| tau * (j / tau).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn scalars(v: &[f64]) -> Vec<Field> {
        let g = GridSpec::unit_interval(2).unwrap();
        v.iter().map(|&c| Field::constant(&g, c)).collect()
    }

    #[test]
    fn node_and_midpoint_values() {
        let seq = scalars(&[0.0, 1.0, 3.0]);
        let tau = 0.25;
        for i in 0..3 {
            let t = i as f64 * tau;
            assert_eq!(interp_lin(&seq, tau, t).unwrap(), seq[i]);
            assert_eq!(interp_const(&seq, tau, t).unwrap(), seq[i]);
        }
        assert_eq!(interp_lin(&seq, tau, 0.375).unwrap().values()[0], 2.0);
        assert_eq!(interp_const(&seq, tau, 0.375).unwrap().values()[0], 3.0);
        assert_eq!(interp_const(&seq, tau, 0.125).unwrap().values()[0], 1.0);
        assert!(interp_lin(&seq, tau, 0.6).is_err());
        assert!(interp_lin(&seq, tau, -1e-3).is_err());
    }

    #[test]
    fn gap_example() {
        let seq = scalars(&[0.0, 1.0, 3.0]);
        assert!((gap_l2_sq(&seq, 1.0) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(gap_linf(&seq), 2.0);
        assert_eq!(derivative_l2_sq(&seq, 1.0), 5.0);
    }
}

//! Uniform cell-centered box grids with a homogeneous Neumann Laplacian.
//!
//! Every space-dependent unknown of the solver lives in a [`Field`]: one value
//! per cell, stored row-major with the last axis fastest. Discrete inner
//! products carry the cell volume, so `inner_h` is the midpoint rule for
//! `∫_Ω u v`.
//!
//! The Laplacian is assembled face by face with mirrored ghost cells, which
//! makes every boundary face flux exactly zero. Summing `Δu` over the grid
//! therefore telescopes to zero and `grad_sq(u) = (u, -Δu)_H` holds as a
//! summation-by-parts identity.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of spatial dimensions.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("fields live on different grids")]
    Mismatch,
    #[error("field has {got} values, grid has {expected} cells")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at cell {0}")]
    NonFinite(usize),
    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box `[0, L_1] × … × [0, L_d]` split into uniform cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    extent: [f64; MAX_DIM],
    cells: [usize; MAX_DIM],
}

impl GridSpec {
    pub fn new(extent: &[f64], cells: &[usize]) -> Result<Self, GridError> {
        let dim = extent.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(GridError::InvalidSpec(format!(
                "dimension must be 1, 2 or 3 (got {dim})"
            )));
        }
        if cells.len() != dim {
            return Err(GridError::InvalidSpec(format!(
                "{} extents but {} cell counts",
                dim,
                cells.len()
            )));
        }
        let mut ext = [1.0; MAX_DIM];
        let mut n = [1; MAX_DIM];
        for k in 0..dim {
            if !(extent[k].is_finite() && extent[k] > 0.0) {
                return Err(GridError::InvalidSpec(format!(
                    "extent on axis {k} must be positive (got {})",
                    extent[k]
                )));
            }
            if cells[k] < 2 {
                return Err(GridError::InvalidSpec(format!(
                    "axis {k} needs at least 2 cells (got {})",
                    cells[k]
                )));
            }
            ext[k] = extent[k];
            n[k] = cells[k];
        }
        Ok(GridSpec {
            dim,
            extent: ext,
            cells: n,
        })
    }

    /// Unit interval with `n` cells.
    pub fn unit_interval(n: usize) -> Result<Self, GridError> {
        Self::new(&[1.0], &[n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|k| self.spacing(k)).product()
    }

    /// Measure of the domain, `|Ω|`.
    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major stride of each axis.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0; MAX_DIM];
        let mut acc = 1;
        for k in (0..self.dim).rev() {
            s[k] = acc;
            acc *= self.cells[k];
        }
        s
    }

    /// Cell-center coordinates of cell `idx`; unused axes are zero.
    pub fn center(&self, idx: usize) -> [f64; MAX_DIM] {
        let strides = self.strides();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let j = (idx / strides[k]) % self.cells[k];
            x[k] = (j as f64 + 0.5) * self.spacing(k);
        }
        x
    }

    /// Diagonal of the matrix of `-Δ`.
    pub fn neg_laplacian_diag(&self) -> Vec<f64> {
        let strides = self.strides();
        (0..self.len())
            .map(|idx| {
                (0..self.dim)
                    .map(|k| {
                        let n = self.cells[k];
                        let j = (idx / strides[k]) % n;
                        let neighbours = usize::from(j > 0) + usize::from(j + 1 < n);
                        neighbours as f64 / self.spacing(k).powi(2)
                    })
                    .sum()
            })
            .collect()
    }
}

/// A scalar grid function.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Field {
            grid: *grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Field {
            grid: *grid,
            values,
        })
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut([f64; MAX_DIM]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        Field {
            grid: *grid,
            values,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise image under `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(self.grid, other.grid, "zip_map across different grids");
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Field) {
        assert_eq!(self.grid, other.grid, "axpy across different grids");
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `∫_Ω u`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `|Ω|⁻¹ ∫_Ω u`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn check_same(u: &Field, v: &Field) -> Result<(), GridError> {
    if u.grid != v.grid {
        Err(GridError::Mismatch)
    } else {
        Ok(())
    }
}

/// Writes `Δu` into `out` using mirrored ghost cells (zero boundary flux).
pub fn laplacian_neumann_into(u: &Field, out: &mut Field) {
    let grid = &u.grid;
    assert_eq!(grid, &out.grid, "laplacian across different grids");
    let strides = grid.strides();
    let inv_h2: Vec<f64> = (0..grid.dim).map(|k| grid.spacing(k).powi(-2)).collect();
    let uv = &u.values;
    for (idx, o) in out.values.iter_mut().enumerate() {
        let c = uv[idx];
        let mut acc = 0.0;
        for k in 0..grid.dim {
            let n = grid.cells[k];
            let s = strides[k];
            let j = (idx / s) % n;
            let mut flux = 0.0;
            if j > 0 {
                flux += uv[idx - s] - c;
            }
            if j + 1 < n {
                flux += uv[idx + s] - c;
            }
            acc += flux * inv_h2[k];
        }
        *o = acc;
    }
}

/// Cell-centered Neumann Laplacian `Δ_h u`.
pub fn laplacian_neumann(u: &Field) -> Field {
    let mut out = Field::zeros(&u.grid);
    laplacian_neumann_into(u, &mut out);
    out
}

/// `(u, v)_H = Σ u v dV`.
pub fn inner_h(u: &Field, v: &Field) -> Result<f64, GridError> {
    check_same(u, v)?;
    Ok(dot(&u.values, &v.values) * u.grid.cell_volume())
}

pub fn norm_h(u: &Field) -> f64 {
    (dot(&u.values, &u.values) * u.grid.cell_volume()).sqrt()
}

pub fn norm_l1(u: &Field) -> f64 {
    u.values.iter().map(|v| v.abs()).sum::<f64>() * u.grid.cell_volume()
}

pub fn norm_linf(u: &Field) -> f64 {
    u.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Discrete Dirichlet energy `Σ_faces ((u_+ - u_-)/h)² dV`.
pub fn grad_sq(u: &Field) -> f64 {
    let grid = &u.grid;
    let strides = grid.strides();
    let mut total = 0.0;
    for k in 0..grid.dim {
        let n = grid.cells[k];
        let s = strides[k];
        let inv_h2 = grid.spacing(k).powi(-2);
        let mut axis_sum = 0.0;
        for idx in 0..grid.len() {
            if (idx / s) % n + 1 < n {
                let d = u.values[idx + s] - u.values[idx];
                axis_sum += d * d;
            }
        }
        total += axis_sum * inv_h2;
    }
    total * grid.cell_volume()
}

/// Squared discrete `V` norm, `‖u‖²_H + grad_sq(u)`.
pub fn norm_v_sq(u: &Field) -> f64 {
    norm_h(u).powi(2) + grad_sq(u)
}

/// Ratio `‖u‖_V / (‖u‖_{L¹} + ‖∇u‖_H)` realizing the Poincaré-type bound on
/// this grid; `None` for the zero field.
pub fn poincare_ratio(u: &Field) -> Option<f64> {
    let denom = norm_l1(u) + grad_sq(u).sqrt();
    (denom > 0.0).then(|| norm_v_sq(u).sqrt() / denom)
}

/// Norm dual to the discrete `V` norm: `sqrt((u, (I - Δ_h)⁻¹ u)_H)`.
pub fn dual_norm_vprime(u: &Field, cg_tol: f64) -> Result<f64, GridError> {
    if u.values.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let grid = u.grid;
    let mut diag = Field::from_values(&grid, grid.neg_laplacian_diag())?;
    for d in diag.values_mut() {
        *d += 1.0;
    }
    let (w, _) = cg_solve(
        |x: &Field, out: &mut Field| {
            laplacian_neumann_into(x, out);
            for (o, xv) in out.values.iter_mut().zip(&x.values) {
                *o = xv - *o;
            }
        },
        u,
        cg_tol,
        10 * grid.len() + 100,
        &diag,
    )?;
    Ok(inner_h(u, &w)?.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator given in
/// matrix-free form (`apply(x, out)` writes `A x`), starting from zero.
///
/// Converged when `‖A x − b‖_H ≤ tol · max(1, ‖b‖_H)`.
pub fn cg_solve<A>(
    apply: A,
    b: &Field,
    tol: f64,
    maxit: usize,
    jacobi_diag: &Field,
) -> Result<(Field, CgReport), GridError>
where
    A: Fn(&Field, &mut Field),
{
    check_same(b, jacobi_diag)?;
    let grid = b.grid;
    let dv = grid.cell_volume();
    let target = tol * norm_h(b);

    let mut x = Field::zeros(&grid);
    let mut r = b.clone();
    let mut res = norm_h(&r);
    if res <= target {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                residual: res,
            },
        ));
    }
    let inv_diag: Vec<f64> = jacobi_diag.values.iter().map(|d| 1.0 / d).collect();
    let mut z = r.zip_map(jacobi_diag, |ri, di| ri / di);
    let mut p = z.clone();
    let mut ap = Field::zeros(&grid);
    let mut rz = dot(&r.values, &z.values);

    for it in 1..=maxit {
        apply(&p, &mut ap);
        let pap = dot(&p.values, &ap.values);
        if !(pap > 0.0) {
            return Err(GridError::CgNotConverged {
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        res = (dot(&r.values, &r.values) * dv).sqrt();
        if res <= target {
            return Ok((
                x,
                CgReport {
                    iterations: it,
                    residual: res,
                },
            ));
        }
        for ((zi, ri), di) in z.values.iter_mut().zip(&r.values).zip(&inv_diag) {
            *zi = ri * di;
        }
        let rz_new = dot(&r.values, &z.values);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.values.iter_mut().zip(&z.values) {
            *pi = zi + beta * *pi;
        }
    }
    Err(GridError::CgNotConverged {
        iterations: maxit,
        residual: res,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Snapshot layout (little-endian), 32-byte header then the values:
//   0  magic "ENTF"
//   4  version    u32
//   8  dim        u32
//  12  n[0..3]    u32 × 3 (unused axes written as 1)
//  24  float64    u32 (always 1)
//  28  reserved   u32 (zero)
//  32  values     f64 × Π n, row-major

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"ENTF";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 32;

pub fn write_snapshot<W: Write>(field: &Field, mut w: W) -> Result<(), GridError> {
    w.write_all(&snapshot_bytes(field))?;
    Ok(())
}

pub fn snapshot_bytes(field: &Field) -> Vec<u8> {
    let grid = &field.grid;
    let mut buf = Vec::with_capacity(SNAPSHOT_HEADER_LEN + 8 * field.len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.dim as u32).to_le_bytes());
    for k in 0..MAX_DIM {
        buf.extend_from_slice(&(grid.cells[k] as u32).to_le_bytes());
    }
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Reads one snapshot and checks it against the expected grid (the header
/// carries cell counts, not extents).
pub fn read_snapshot<R: Read>(mut r: R, grid: &GridSpec) -> Result<Field, GridError> {
    let mut header = [0u8; SNAPSHOT_HEADER_LEN];
    read_exact_or_truncated(&mut r, &mut header)?;
    if &header[0..4] != SNAPSHOT_MAGIC {
        return Err(GridError::Snapshot("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != SNAPSHOT_VERSION {
        return Err(GridError::Snapshot(format!(
            "unsupported version {version}"
        )));
    }
    if word(8) as usize != grid.dim {
        return Err(GridError::Snapshot(format!(
            "dimension {} does not match grid dimension {}",
            word(8),
            grid.dim
        )));
    }
    for k in 0..MAX_DIM {
        if word(12 + 4 * k) as usize != grid.cells[k] {
            return Err(GridError::Snapshot(format!(
                "cell count on axis {k} does not match grid"
            )));
        }
    }
    if word(24) != 1 {
        return Err(GridError::Snapshot("only float64 payloads are supported".into()));
    }
    let mut payload = vec![0u8; 8 * grid.len()];
    read_exact_or_truncated(&mut r, &mut payload)?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Field::from_values(grid, values)
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), GridError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            GridError::Snapshot("truncated".into())
        } else {
            GridError::Io(e)
        }
    })
}

//! Binary checkpoints of a trajectory.
//!
//! Layout (little endian): the magic `ENTC`, a `u32` version, then a sequence
//! of blocks. Every block is `u64 length | payload | SHA-256(payload)`:
//!
//! 1. header: config TOML, warnings, step count
//! 2. initial data: snapshots of `ϑ₀`, `χ₀`, `ln ϑ₀`
//! 3. one block per step: statistics, then snapshots of `Θ, X, ζ, ξ, L`
//! 4. the ledger as CSV text
//!
//! Floats are stored as raw bits, so a save/load round trip is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{read_ledger_csv, write_ledger_csv};
use crate::grid::{read_snapshot, write_snapshot, Field, GridSpec};
use crate::scheme::{SchemeConfig, StepRecord, StepStats, Trajectory};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ENTC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated in {0}")]
    Truncated(String),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("corrupt {part}: {detail}")]
    Corrupt { part: String, detail: String },
}

impl CheckpointError {
    /// The step a corruption or truncation was found in, if any.
    pub fn step(&self) -> Option<usize> {
        let part = match self {
            CheckpointError::Truncated(p) | CheckpointError::Checksum(p) => p,
            CheckpointError::Corrupt { part, .. } => part,
            _ => return None,
        };
        part.strip_prefix("step ")?.parse().ok()
    }
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u64(buf, s.len() as u64);
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    put_u64(buf, v.len() as u64);
    for &x in v {
        put_f64(buf, x);
    }
}

fn put_field(buf: &mut Vec<u8>, f: &Field) {
    write_snapshot(f, &mut *buf).expect("writing to memory");
}

fn put_block(out: &mut Vec<u8>, payload: &[u8]) {
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
    out.extend_from_slice(&Sha256::digest(payload));
}

pub fn to_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let mut b = Vec::new();
    put_str(&mut b, &traj.config.to_toml());
    put_u64(&mut b, traj.warnings.len() as u64);
    for w in &traj.warnings {
        put_str(&mut b, w);
    }
    put_u64(&mut b, traj.steps.len() as u64);
    put_block(&mut out, &b);

    b.clear();
    for f in [&traj.theta0, &traj.chi0, &traj.log_theta0] {
        put_field(&mut b, f);
    }
    put_block(&mut out, &b);

    for (k, rec) in traj.steps.iter().enumerate() {
        b.clear();
        let s = &rec.stats;
        put_u64(&mut b, k as u64 + 1);
        put_f64(&mut b, s.eps);
        for n in [s.outer_iters, s.newton_iters, s.cg_iters, s.damped_steps] {
            put_u64(&mut b, n as u64);
        }
        put_f64(&mut b, s.residual_theta);
        put_f64(&mut b, s.residual_chi);
        put_f64s(&mut b, &s.contraction_ratios);
        put_f64s(&mut b, &s.eps_cauchy);
        for f in [&rec.theta, &rec.chi, &rec.zeta, &rec.xi, &rec.log_theta] {
            put_field(&mut b, f);
        }
        put_block(&mut out, &b);
    }

    b.clear();
    write_ledger_csv(&traj.ledger, &mut b).expect("writing to memory");
    put_block(&mut out, &b);
    out
}

pub fn save(traj: &Trajectory, path: &Path) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(traj))?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trajectory, CheckpointError> {
    from_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    data: &'a [u8],
    part: String,
}

impl<'a> Cursor<'a> {
    fn truncated(&self) -> CheckpointError {
        CheckpointError::Truncated(self.part.clone())
    }

    fn corrupt(&self, detail: impl ToString) -> CheckpointError {
        CheckpointError::Corrupt {
            part: self.part.clone(),
            detail: detail.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.data.len() < n {
            return Err(self.truncated());
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.corrupt(format!("count {v} too large")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.usize()?;
        if n > self.data.len() / 8 {
            return Err(self.truncated());
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.usize()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| self.corrupt(e))
    }

    fn field(&mut self, grid: &GridSpec) -> Result<Field, CheckpointError> {
        read_snapshot(&mut self.data, grid).map_err(|e| self.corrupt(e))
    }

    /// Reads one checksummed block and returns a cursor over its payload.
    fn block(&mut self, part: String) -> Result<Cursor<'a>, CheckpointError> {
        self.part = part.clone();
        let len = self.usize()?;
        let payload = self.take(len)?;
        let digest = self.take(32)?;
        if Sha256::digest(payload).as_slice() != digest {
            return Err(CheckpointError::Checksum(part));
        }
        Ok(Cursor {
            data: payload,
            part,
        })
    }

    fn finish(&self) -> Result<(), CheckpointError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(self.corrupt(format!("{} trailing bytes", self.data.len())))
        }
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trajectory, CheckpointError> {
    let mut cur = Cursor {
        data: bytes,
        part: "header".into(),
    };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }

    let mut h = cur.block("header".into())?;
    let config = SchemeConfig::from_toml(&h.string()?).map_err(|e| h.corrupt(e))?;
    let n_warn = h.usize()?;
    let warnings = (0..n_warn).map(|_| h.string()).collect::<Result<Vec<_>, _>>()?;
    let n_steps = h.usize()?;
    h.finish()?;
    let grid = GridSpec::new(&config.grid.extent, &config.grid.cells).map_err(|e| h.corrupt(e))?;

    let mut b = cur.block("initial data".into())?;
    let theta0 = b.field(&grid)?;
    let chi0 = b.field(&grid)?;
    let log_theta0 = b.field(&grid)?;
    b.finish()?;

    let mut steps = Vec::with_capacity(n_steps.min(1 << 16));
    for i in 1..=n_steps {
        let mut b = cur.block(format!("step {i}"))?;
        let index = b.u64()?;
        if index != i as u64 {
            return Err(b.corrupt(format!("record index {index}")));
        }
        let eps = b.f64()?;
        let (outer_iters, newton_iters, cg_iters, damped_steps) =
            (b.usize()?, b.usize()?, b.usize()?, b.usize()?);
        let residual_theta = b.f64()?;
        let residual_chi = b.f64()?;
        let contraction_ratios = b.f64s()?;
        let eps_cauchy = b.f64s()?;
        let rec = StepRecord {
            theta: b.field(&grid)?,
            chi: b.field(&grid)?,
            zeta: b.field(&grid)?,
            xi: b.field(&grid)?,
            log_theta: b.field(&grid)?,
            stats: StepStats {
                eps,
                outer_iters,
                newton_iters,
                cg_iters,
                damped_steps,
                residual_theta,
                residual_chi,
                contraction_ratios,
                eps_cauchy,
            },
        };
        b.finish()?;
        steps.push(rec);
    }

    let b = cur.block("ledger".into())?;
    let ledger = read_ledger_csv(b.data).map_err(|e| b.corrupt(e))?;
    if ledger.len() != n_steps {
        return Err(b.corrupt(format!("{} rows for {n_steps} steps", ledger.len())));
    }
    cur.part = "end of file".into();
    cur.finish()?;

    Ok(Trajectory {
        config,
        theta0,
        chi0,
        log_theta0,
        steps,
        ledger,
        warnings,
    })
}

//! Path export: CSV with full round-trip precision and a compact binary dump.
//!
//! Binary layout, all little-endian:
//!
//! | field   | type          |
//! |---------|---------------|
//! | magic   | `b"RSPD"`     |
//! | version | `u32` (= 1)   |
//! | M       | `u64`         |
//! | steps   | `u64`         |
//! | dt      | `f64`         |
//! | dx      | `f64`         |
//! | u       | `(steps+1)·M` `f64`, row-major by time |
//! | dK      | `steps·M` `f64`, row-major by time     |

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ratefn::RateFunctionResult;
use crate::solver::ReflectedPath;

const MAGIC: &[u8; 4] = b"RSPD";
const VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `t, x_1, ..., x_M` rows, one per time node.
pub fn write_path_csv<W: Write>(p: &ReflectedPath, mut w: W) -> Result<()> {
    let grid = p.grid();
    let mut header = String::from("t");
    for i in 0..grid.m() {
        header.push_str(&format!(",x_{}", i + 1));
    }
    writeln!(w, "{header}")?;
    for (k, u) in p.states().iter().enumerate() {
        let mut line = fmt_f64(p.mesh().t(k));
        for v in u.values() {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_path_binary<W: Write>(p: &ReflectedPath, mut w: W) -> Result<()> {
    let m = p.grid().m();
    let steps = p.mesh().steps();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m as u64).to_le_bytes())?;
    w.write_all(&(steps as u64).to_le_bytes())?;
    w.write_all(&p.mesh().dt().to_le_bytes())?;
    w.write_all(&p.grid().dx().to_le_bytes())?;
    for u in p.states() {
        for v in u.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for k in 0..steps {
        for v in p.dk(k) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Contents of a binary dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDump {
    pub m: usize,
    pub steps: usize,
    pub dt: f64,
    pub dx: f64,
    /// `(steps+1)·M` values, row-major by time.
    pub u: Vec<f64>,
    /// `steps·M` values, row-major by time.
    pub dk: Vec<f64>,
}

impl PathDump {
    pub fn from_path(p: &ReflectedPath) -> Self {
        let steps = p.mesh().steps();
        Self {
            m: p.grid().m(),
            steps,
            dt: p.mesh().dt(),
            dx: p.grid().dx(),
            u: p.states()
                .iter()
                .flat_map(|u| u.values().iter().copied())
                .collect(),
            dk: (0..steps).flat_map(|k| p.dk(k).iter().copied()).collect(),
        }
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header or body: {e}")))?;
    Ok(buf)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| read_array::<8, _>(r).map(f64::from_le_bytes))
        .collect()
}

pub fn read_path_binary<R: Read>(mut r: R) -> Result<PathDump> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let m = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let steps = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let dt = f64::from_le_bytes(read_array(&mut r)?);
    let dx = f64::from_le_bytes(read_array(&mut r)?);
    let u = read_f64s(&mut r, (steps + 1) * m)?;
    let dk = read_f64s(&mut r, steps * m)?;
    Ok(PathDump {
        m,
        steps,
        dt,
        dx,
        u,
        dk,
    })
}

/// Per-iteration optimizer history: `stage, mu, iteration, objective, residual, energy`.
pub fn write_rate_history_csv<W: Write>(r: &RateFunctionResult, mut w: W) -> Result<()> {
    writeln!(w, "stage,mu,iteration,objective,residual,energy")?;
    for rec in &r.history {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            rec.stage,
            fmt_f64(rec.mu),
            rec.iteration,
            fmt_f64(rec.objective),
            fmt_f64(rec.residual),
            fmt_f64(rec.energy)
        )?;
    }
    Ok(())
}

/// Final control blocks: `block, t_start, h_1, ..., h_d`.
pub fn write_control_csv<W: Write>(r: &RateFunctionResult, mut w: W) -> Result<()> {
    let h = &r.h_star;
    let mut header = String::from("block,t_start");
    for j in 0..h.channels() {
        header.push_str(&format!(",h_{}", j + 1));
    }
    writeln!(w, "{header}")?;
    for b in 0..h.blocks() {
        let mut line = format!("{b},{}", fmt_f64(b as f64 * h.block_len()));
        for v in h.block(b) {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

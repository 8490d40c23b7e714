//! Decoupling fields `Φ` (mean field) and `Ψ_N` (N particles) on a `(t, x̂)` grid.

mod codec;
mod residual;
mod solve;

pub use codec::{decode_field, encode_field, FIELD_MAGIC};
pub use residual::{residual_u, ResidualReport, ResidualSample, ResidualVariant};
pub use solve::{lq_phi_oracle, solve_decoupling_field, solve_phi, solve_psi, PdeConfig};

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Snap a fractional grid coordinate to the nearest node when it is within rounding of one.
fn split_coordinate(s: f64, cells: usize) -> (usize, f64) {
    let r = s.round();
    let s = if (s - r).abs() < 1e-9 { r } else { s };
    let j = (s.floor().max(0.0) as usize).min(cells - 1);
    (j, s - j as f64)
}

/// Values on a uniform `(nt+1) × (nx+1)` grid over `[0, T] × [lo, hi]`.
///
/// Evaluation is bilinear inside the box; in `x̂` it extrapolates linearly
/// beyond the box and counts how often that happened.
#[derive(Debug)]
pub struct SpaceTimeField {
    horizon: f64,
    lo: f64,
    hi: f64,
    nt: usize,
    nx: usize,
    diffusion: f64,
    values: Vec<f64>,
    extrapolations: AtomicU64,
}

impl Clone for SpaceTimeField {
    fn clone(&self) -> Self {
        SpaceTimeField {
            horizon: self.horizon,
            lo: self.lo,
            hi: self.hi,
            nt: self.nt,
            nx: self.nx,
            diffusion: self.diffusion,
            values: self.values.clone(),
            extrapolations: AtomicU64::new(self.extrapolations.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for SpaceTimeField {
    /// Grid and values only; the extrapolation counter is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.horizon == other.horizon
            && self.lo == other.lo
            && self.hi == other.hi
            && self.nt == other.nt
            && self.nx == other.nx
            && self.diffusion == other.diffusion
            && self.values == other.values
    }
}

impl SpaceTimeField {
    /// `values` is slice-major: `values[k * (nx + 1) + j]` is the value at `(t_k, x_j)`.
    pub fn new(horizon: f64, lo: f64, hi: f64, nt: usize, nx: usize, diffusion: f64, values: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Grid(format!("horizon must be positive and finite, got {horizon}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Grid(format!("space interval [{lo}, {hi}] is empty or not finite")));
        }
        if nt == 0 || nx < 2 {
            return Err(Error::Grid(format!("need nt >= 1 and nx >= 2 (got nt = {nt}, nx = {nx})")));
        }
        if !(diffusion.is_finite() && diffusion >= 0.0) {
            return Err(Error::Grid(format!("diffusion coefficient must be finite and >= 0, got {diffusion}")));
        }
        let expected = (nt + 1).checked_mul(nx + 1).ok_or_else(|| Error::Grid("grid too large".into()))?;
        if values.len() != expected {
            return Err(Error::Grid(format!("expected {expected} values, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let t = horizon * (i / (nx + 1)) as f64 / nt as f64;
            return Err(Error::NonFinite { what: "field value", t });
        }
        Ok(SpaceTimeField { horizon, lo, hi, nt, nx, diffusion, values, extrapolations: AtomicU64::new(0) })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Diffusion coefficient the field was solved with (`σ₀²` for `Φ`, `σ²/N + σ₀²` for `Ψ_N`).
    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.nx as f64
    }

    pub fn t_node(&self, k: usize) -> f64 {
        if k == self.nt {
            self.horizon
        } else {
            self.horizon * k as f64 / self.nt as f64
        }
    }

    pub fn x_node(&self, j: usize) -> f64 {
        if j == self.nx {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * j as f64 / self.nx as f64
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let w = self.nx + 1;
        &self.values[k * w..(k + 1) * w]
    }

    /// Number of evaluations that fell outside `[lo, hi]` so far.
    pub fn extrapolation_count(&self) -> u64 {
        self.extrapolations.load(Ordering::Relaxed)
    }

    fn eval_slice(&self, k: usize, j: usize, w: f64) -> f64 {
        let row = self.slice(k);
        if w == 0.0 {
            row[j]
        } else if w == 1.0 {
            row[j + 1]
        } else {
            row[j] + w * (row[j + 1] - row[j])
        }
    }

    /// Bilinear interpolation; `t` is clamped to `[0, T]`, `x̂` extrapolates linearly.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let tau = (t / self.horizon).clamp(0.0, 1.0) * self.nt as f64;
        let (k, wt) = split_coordinate(tau, self.nt);
        if x < self.lo || x > self.hi {
            self.extrapolations.fetch_add(1, Ordering::Relaxed);
        }
        let (j, wx) = split_coordinate((x - self.lo) / self.dx(), self.nx);
        let a = self.eval_slice(k, j, wx);
        if wt == 0.0 {
            return a;
        }
        let b = self.eval_slice(k + 1, j, wx);
        if wt == 1.0 {
            b
        } else {
            a + wt * (b - a)
        }
    }

    /// Central difference in `x̂` with the grid spacing.
    pub fn d_x(&self, t: f64, x: f64) -> f64 {
        let h = self.dx();
        (self.eval(t, x + h) - self.eval(t, x - h)) / (2.0 * h)
    }

    /// Second difference in `x̂` with the grid spacing.
    pub fn d_xx(&self, t: f64, x: f64) -> f64 {
        let h = self.dx();
        (self.eval(t, x + h) - 2.0 * self.eval(t, x) + self.eval(t, x - h)) / (h * h)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest nodewise `|self − other|`; the grids must match.
    pub fn max_abs_diff(&self, other: &SpaceTimeField) -> Result<f64> {
        if (self.nt, self.nx, self.lo, self.hi) != (other.nt, other.nx, other.lo, other.hi) {
            return Err(Error::Domain("fields are defined on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// CSV with columns `t, xhat, value`, keeping every `t_stride`-th slice and `x_stride`-th node
    /// (the terminal slice and both boundary nodes are always kept).
    pub fn write_csv<W: Write>(&self, out: W, t_stride: usize, x_stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "xhat", "value"])?;
        for k in strided(self.nt, t_stride) {
            let row = self.slice(k);
            for j in strided(self.nx, x_stride) {
                w.write_record([self.t_node(k).to_string(), self.x_node(j).to_string(), row[j].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn strided(last: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    (0..=last).filter(move |i| i % stride == 0 || *i == last)
}

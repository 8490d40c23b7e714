//! Backward finite-difference solver for the decoupling-field equation
//!
//! ```text
//! ∂tΦ + v ∂x̂Φ + ½ D ∂x̂x̂Φ + S = 0,        Φ(T, x̂) = ½ g'(x̂)
//! v = A x̂ + a(x̂) + B k + b(k),            k = ρ(P x̂ + Φ)
//! S = P [a(x̂) + R⁻¹B² P x̂ + B k + b(k) + a'(x̂) x̂] + ½ q'(x̂) + (A + a'(x̂)) Φ
//! ```
//!
//! Each step applies explicit upwinded advection and the source, then an
//! implicit diffusion solve. Boundary nodes satisfy `∂x̂x̂Φ = 0`, so they carry
//! advection and source only and act as Dirichlet data for the diffusion solve.

use super::SpaceTimeField;
use crate::error::{Error, Result};
use crate::feedback::RhoSolver;
use crate::model::MfcModel;
use crate::riccati::TimeGridFn;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeConfig {
    pub lo: f64,
    pub hi: f64,
    pub nx: usize,
    pub nt: usize,
    /// Upper bound on `dt · max|v| / dx`.
    pub cfl_safety: f64,
}

impl PdeConfig {
    pub fn new(lo: f64, hi: f64, nx: usize, nt: usize, cfl_safety: f64) -> Result<Self> {
        let cfg = PdeConfig { lo, hi, nx, nt, cfl_safety };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo) {
            return Err(Error::Grid(format!("PDE domain [{}, {}] is empty or not finite", self.lo, self.hi)));
        }
        if self.nx < 4 || self.nt < 1 {
            return Err(Error::Grid(format!("need nx >= 4 and nt >= 1 (got nx = {}, nt = {})", self.nx, self.nt)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Grid(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.nx as f64
    }

    /// Default box `[x₀ − m, x₀ + m]` with `m = 6σ₀√T + V·T + 2`, where `V` is the largest
    /// `|A x̂ + a(x̂) + B k + b(k)|` seen at `k = ρ(P x̂ + ½ g'(x̂))` for `|x̂ − x₀| ≤ 6σ₀√T`
    /// and any stored `P` value.
    pub fn default_domain(model: &MfcModel, p: &TimeGridFn) -> Result<(f64, f64)> {
        let solver = RhoSolver::new(model)?;
        let x0 = model.init.mean;
        let spread = 6.0 * model.sigma0 * model.horizon.sqrt();
        let p_max = p.max_abs();
        let mut speed: f64 = 0.0;
        for i in 0..=200 {
            let x = x0 - spread + 2.0 * spread * i as f64 / 200.0;
            for pv in [0.0, p_max] {
                let k = solver.rho(pv * x + 0.5 * model.g_fn.d1(x))?;
                let v = model.a_coef * x + model.a_fn.value(x) + model.b_coef * k + model.b_fn.value(k);
                speed = speed.max(v.abs());
            }
        }
        let m = spread + speed * model.horizon + 2.0;
        Ok((x0 - m, x0 + m))
    }
}

fn grid_node(lo: f64, hi: f64, nx: usize, j: usize) -> f64 {
    if j == nx {
        hi
    } else {
        lo + (hi - lo) * j as f64 / nx as f64
    }
}

/// Solves the tridiagonal system `−λ u_{j−1} + (1 + 2λ) u_j − λ u_{j+1} = rhs_j` for the
/// interior nodes, with `u_0` and `u_n` fixed.
fn implicit_diffusion(u: &mut [f64], lambda: f64, scratch: &mut Vec<f64>) {
    let n = u.len() - 1;
    if lambda == 0.0 || n < 2 {
        return;
    }
    let diag = 1.0 + 2.0 * lambda;
    scratch.clear();
    scratch.resize(n, 0.0);
    let c = scratch; // modified super-diagonal
    u[1] += lambda * u[0];
    u[n - 1] += lambda * u[n];
    c[1] = -lambda / diag;
    u[1] /= diag;
    for j in 2..n {
        let m = diag + lambda * c[j - 1];
        c[j] = -lambda / m;
        u[j] = (u[j] + lambda * u[j - 1]) / m;
    }
    for j in (1..n - 1).rev() {
        u[j] -= c[j] * u[j + 1];
    }
}

/// Solves the decoupling-field equation with diffusion coefficient `D = diffusion`
/// (`σ₀²` gives `Φ`, `σ²/N + σ₀²` gives `Ψ_N`).
pub fn solve_decoupling_field(
    model: &MfcModel,
    p: &TimeGridFn,
    cfg: &PdeConfig,
    diffusion: f64,
) -> Result<SpaceTimeField> {
    cfg.validate()?;
    if !(diffusion > 0.0 && diffusion.is_finite()) {
        return Err(Error::Grid(format!("diffusion coefficient must be positive, got {diffusion}")));
    }
    let solver = RhoSolver::new(model)?;
    let (nt, nx) = (cfg.nt, cfg.nx);
    let horizon = model.horizon;
    let dt = horizon / nt as f64;
    let dx = cfg.dx();
    let lambda = 0.5 * diffusion * dt / (dx * dx);
    let shared_grid = p.steps() == nt && p.horizon() == horizon;
    let p_at = |k: usize| if shared_grid { p.values()[k] } else { p.eval(horizon * k as f64 / nt as f64) };

    let xs: Vec<f64> = (0..=nx).map(|j| grid_node(cfg.lo, cfg.hi, nx, j)).collect();
    // x-only pieces of the coefficients
    let a_val: Vec<f64> = xs.iter().map(|&x| model.a_fn.value(x)).collect();
    let a_d1: Vec<f64> = xs.iter().map(|&x| model.a_fn.d1(x)).collect();
    let half_q_d1: Vec<f64> = xs.iter().map(|&x| 0.5 * model.q_fn.d1(x)).collect();
    let gain_b = model.gain() * model.b_coef;

    let w = nx + 1;
    let mut values = vec![0.0; (nt + 1) * w];
    for (j, &x) in xs.iter().enumerate() {
        values[nt * w + j] = 0.5 * model.g_fn.d1(x);
    }

    let mut next = vec![0.0; w];
    let mut scratch = Vec::with_capacity(w);
    for n in (0..nt).rev() {
        let pk = p_at(n + 1);
        let cur = &values[(n + 1) * w..(n + 2) * w];
        let mut speed: f64 = 0.0;
        for j in 0..w {
            let x = xs[j];
            let phi = cur[j];
            let k = solver.rho(pk * x + phi)?;
            let bk = model.b_fn.value(k);
            let v = model.a_coef * x + a_val[j] + model.b_coef * k + bk;
            speed = speed.max(v.abs());
            // first-order upwinding for the backward equation
            let grad = if (v > 0.0 && j < nx) || j == 0 { (cur[j + 1] - phi) / dx } else { (phi - cur[j - 1]) / dx };
            let source = pk * (a_val[j] + gain_b * pk * x + model.b_coef * k + bk + a_d1[j] * x)
                + half_q_d1[j]
                + (model.a_coef + a_d1[j]) * phi;
            next[j] = phi + dt * (v * grad + source);
        }
        if speed * dt > cfg.cfl_safety * dx {
            return Err(Error::Cfl { dt, limit: cfg.cfl_safety * dx / speed, speed });
        }
        implicit_diffusion(&mut next, lambda, &mut scratch);
        let t = horizon * n as f64 / nt as f64;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "decoupling field", t });
        }
        values[n * w..(n + 1) * w].copy_from_slice(&next);
    }
    SpaceTimeField::new(horizon, cfg.lo, cfg.hi, nt, nx, diffusion, values)
}

/// `Φ`: diffusion `σ₀²`.
pub fn solve_phi(model: &MfcModel, p: &TimeGridFn, cfg: &PdeConfig) -> Result<SpaceTimeField> {
    solve_decoupling_field(model, p, cfg, model.sigma0 * model.sigma0)
}

/// `Ψ_N`: diffusion `σ²/N + σ₀²`.
pub fn solve_psi(model: &MfcModel, p: &TimeGridFn, cfg: &PdeConfig, n: usize) -> Result<SpaceTimeField> {
    if n == 0 {
        return Err(Error::Ensemble("particle count N must be at least 1".into()));
    }
    solve_decoupling_field(model, p, cfg, model.sigma * model.sigma / n as f64 + model.sigma0 * model.sigma0)
}

/// The affine LQ field `(Π(t) − P(t)) x̂` on the grid of `p` (which must match that of `pi`).
pub fn lq_phi_oracle(
    p: &TimeGridFn,
    pi: &TimeGridFn,
    lo: f64,
    hi: f64,
    nx: usize,
    diffusion: f64,
) -> Result<SpaceTimeField> {
    if p.steps() != pi.steps() || p.horizon() != pi.horizon() {
        return Err(Error::Grid("P and Pi must share a time grid".into()));
    }
    let mut values = Vec::with_capacity((p.steps() + 1) * (nx + 1));
    for (pk, qk) in p.values().iter().zip(pi.values()) {
        for j in 0..=nx {
            let x = grid_node(lo, hi, nx, j);
            values.push((qk - pk) * x);
        }
    }
    SpaceTimeField::new(p.horizon(), lo, hi, p.steps(), nx, diffusion, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, LqCoeffs};
    use crate::riccati::{solve_p, solve_pi};

    #[test]
    fn thomas_matches_dense_solve() {
        let lambda = 0.7;
        let mut u = vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0];
        let rhs = u.clone();
        let mut scratch = Vec::new();
        implicit_diffusion(&mut u, lambda, &mut scratch);
        assert_eq!(u[0], rhs[0]);
        assert_eq!(u[5], rhs[5]);
        for j in 1..5 {
            let lhs = -lambda * u[j - 1] + (1.0 + 2.0 * lambda) * u[j] - lambda * u[j + 1];
            assert!((lhs - rhs[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let m = presets::trivial();
        let p = solve_p(&m, 200).unwrap();
        let cfg = PdeConfig::new(-6.0, 6.0, 101, 200, 0.9).unwrap();
        assert_eq!(solve_phi(&m, &p, &cfg).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn lq_field_tracks_affine_oracle() {
        let lq = LqCoeffs { a_bar: 0.2, b_bar: 0.5, q_bar: 0.5, r_bar: 0.5, g_bar: 0.5 };
        let m = presets::lq(lq);
        let (nt, nx) = (400, 121);
        let p = solve_p(&m, nt).unwrap();
        let pi = solve_pi(&m, &lq, nt).unwrap();
        let cfg = PdeConfig::new(-6.0, 6.0, nx, nt, 0.9).unwrap();
        let phi = solve_phi(&m, &p, &cfg).unwrap();
        let oracle = lq_phi_oracle(&p, &pi, -6.0, 6.0, nx, m.sigma0 * m.sigma0).unwrap();
        assert_eq!(phi.slice(nt), oracle.slice(nt));
        let mut worst: f64 = 0.0;
        for k in 0..=nt {
            for j in 0..=nx {
                let x = phi.x_node(j);
                worst = worst.max((phi.slice(k)[j] - oracle.slice(k)[j]).abs() / (1.0 + x.abs()));
            }
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn terminal_slice_is_half_g_prime() {
        let m = presets::nonconvex();
        let p = solve_p(&m, 100).unwrap();
        let cfg = PdeConfig::new(-5.0, 6.0, 80, 100, 0.9).unwrap();
        let phi = solve_phi(&m, &p, &cfg).unwrap();
        for j in 0..=cfg.nx {
            assert_eq!(phi.slice(100)[j], 0.5 * m.g_fn.d1(phi.x_node(j)));
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let m = presets::nonconvex();
        let p = solve_p(&m, 10).unwrap();
        let cfg = PdeConfig::new(-6.0, 6.0, 400, 10, 0.9).unwrap();
        assert!(matches!(solve_phi(&m, &p, &cfg), Err(Error::Cfl { .. })));
    }

    #[test]
    fn sigma_zero_makes_psi_equal_phi() {
        let mut m = presets::nonconvex();
        m.sigma = 0.0;
        let p = solve_p(&m, 100).unwrap();
        let cfg = PdeConfig::new(-5.0, 6.0, 60, 100, 0.9).unwrap();
        let phi = solve_phi(&m, &p, &cfg).unwrap();
        for n in [1, 8, 256] {
            assert_eq!(solve_psi(&m, &p, &cfg, n).unwrap(), phi);
        }
    }

    #[test]
    fn default_domain_contains_the_mean() {
        let m = presets::nonconvex();
        let p = solve_p(&m, 100).unwrap();
        let (lo, hi) = PdeConfig::default_domain(&m, &p).unwrap();
        assert!(lo < m.init.mean - 5.0 && hi > m.init.mean + 5.0);
        assert!(((lo + hi) / 2.0 - m.init.mean).abs() < 1e-12);
    }
}

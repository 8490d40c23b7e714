//! Numerical checks of the optimality condition and of the `V^N` gradient identity.

use rand::Rng;
use rayon::prelude::*;

use super::kernels::{run_particles, simulate_mf_ensemble, simulate_xhat, ClosedLoop, ParticlePath};
use super::noise::{NoisePlan, StreamTag};
use super::stats::{mean, mean_stderr, pairwise_sum, trapezoid};
use super::EnsembleConfig;
use crate::error::{Error, Result};
use crate::fields::SpaceTimeField;

/// Pieces of the step-function perturbation directions.
pub const PERTURB_PIECES: usize = 8;

/// Deterministic step function on `[0, T]` with `PERTURB_PIECES` values in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub index: u64,
    pub values: Vec<f64>,
}

impl Direction {
    pub fn from_plan(plan: &NoisePlan, index: u64) -> Self {
        let mut rng = plan.rng(StreamTag::Perturb, &[index]);
        Direction { index, values: (0..PERTURB_PIECES).map(|_| rng.random_range(-1.0..=1.0)).collect() }
    }

    pub fn at(&self, t: f64, horizon: f64) -> f64 {
        let p = ((t / horizon) * self.values.len() as f64).floor().max(0.0) as usize;
        self.values[p.min(self.values.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateauxRow {
    pub direction: u64,
    /// Central difference `[J(u* + εũ) − J(u* − εũ)] / 2ε`.
    pub derivative: f64,
    /// Standard error of the derivative over common paths.
    pub stderr: f64,
    /// `J(u*)` on the same open-loop dynamics.
    pub cost: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Open-loop cost of the `M1` controlled paths of one common path, with the conditional
/// means replaced by ensemble averages.
fn open_loop_cost(
    cl: &ClosedLoop,
    plan: &NoisePlan,
    path: u64,
    base: &[ParticlePath],
    dw0: &[f64],
    shift: &[f64],
) -> f64 {
    let m = cl.model;
    let steps = plan.steps();
    let dt = plan.dt();
    let count = base.len() as f64;
    let dws: Vec<Vec<f64>> = (0..base.len() as u64).map(|j| plan.increments(StreamTag::Idio, &[path, j])).collect();
    let mut xs: Vec<f64> = base.iter().map(|p| p.x[0]).collect();
    let mut us = vec![0.0; xs.len()];
    let mut running = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        for (u, p) in us.iter_mut().zip(base) {
            *u = p.u[k] + shift[k];
        }
        let xm = pairwise_sum(&xs) / count;
        let um = pairwise_sum(&us) / count;
        let own: Vec<f64> = xs.iter().zip(&us).map(|(x, u)| m.q_coef * x * x + m.r_coef * u * u).collect();
        running.push(pairwise_sum(&own) / count + m.q_fn.value(xm) + m.r_fn.value(um));
        if k == steps {
            break;
        }
        let drift_common = m.a_fn.value(xm) + m.b_fn.value(um);
        for (j, x) in xs.iter_mut().enumerate() {
            *x += (m.a_coef * *x + drift_common + m.b_coef * us[j]) * dt + m.sigma * dws[j][k] + m.sigma0 * dw0[k];
        }
    }
    let xm = pairwise_sum(&xs) / count;
    let terminal: Vec<f64> = xs.iter().map(|x| m.g_coef * x * x).collect();
    trapezoid(&running, dt) + pairwise_sum(&terminal) / count + m.g_fn.value(xm)
}

/// Gâteaux derivatives of `J` at the feedback control `u*` in `directions` seeded
/// step-function directions, by central differences with common random numbers.
///
/// The closed-loop controls `u*` are recorded on `ens.m0 × ens.m1` paths and then
/// replayed, shifted by `±εũ`, through the open-loop dynamics.
pub fn gateaux_check(
    cl: &ClosedLoop,
    phi: &SpaceTimeField,
    directions: usize,
    eps: f64,
    ens: &EnsembleConfig,
    plan: &NoisePlan,
) -> Result<Vec<GateauxRow>> {
    ens.validate()?;
    if !(eps > 0.0) {
        return Err(Error::Ensemble(format!("perturbation size must be positive, got {eps}")));
    }
    if ens.m0 * ens.m1 < 100 {
        return Err(Error::Ensemble(format!("need at least 100 paths for a stable estimate, got {}", ens.m0 * ens.m1)));
    }
    let dirs: Vec<Direction> = (0..directions as u64).map(|d| Direction::from_plan(plan, d)).collect();
    let shifts: Vec<Vec<f64>> =
        dirs.iter().map(|d| (0..=plan.steps()).map(|k| eps * d.at(plan.time(k), plan.horizon())).collect()).collect();
    let zero = vec![0.0; plan.steps() + 1];

    // per common path: J(u*) and, per direction, the difference quotient
    let per_path: Vec<(f64, Vec<f64>)> = (0..ens.m0 as u64)
        .into_par_iter()
        .map(|m| {
            let xhat = simulate_xhat(cl, phi, plan, m)?;
            let set = simulate_mf_ensemble(cl, &xhat, plan, ens.m1)?;
            let base = open_loop_cost(cl, plan, m, &set.paths, &xhat.dw0, &zero);
            let quotients = shifts
                .iter()
                .map(|s| {
                    let minus: Vec<f64> = s.iter().map(|v| -v).collect();
                    let jp = open_loop_cost(cl, plan, m, &set.paths, &xhat.dw0, s);
                    let jm = open_loop_cost(cl, plan, m, &set.paths, &xhat.dw0, &minus);
                    (jp - jm) / (2.0 * eps)
                })
                .collect();
            Ok((base, quotients))
        })
        .collect::<Result<_>>()?;

    let costs: Vec<f64> = per_path.iter().map(|(c, _)| *c).collect();
    let cost = mean(&costs);
    let bound = 0.02 * (1.0 + cost.abs());
    Ok(dirs
        .iter()
        .enumerate()
        .map(|(d, dir)| {
            let q: Vec<f64> = per_path.iter().map(|(_, qs)| qs[d]).collect();
            let (derivative, stderr) = mean_stderr(&q);
            GateauxRow { direction: dir.index, derivative, stderr, cost, bound, pass: derivative.abs() <= bound }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VnGradient {
    /// Central difference of the `V^N` estimate with step `h`.
    pub fd: f64,
    /// The same with step `h/2`.
    pub fd_half: f64,
    /// `(1/N)(2P(t₀)x_i + 2Ψ(t₀, x^{(N)}))`.
    pub target: f64,
    pub discrepancy: f64,
    pub stderr_mc: f64,
    /// `|fd − fd_half|`, a proxy for the truncation error of the difference.
    pub fd_trunc: f64,
    /// `sqrt(stderr_mc² + fd_trunc²)`.
    pub combined_se: f64,
}

/// Realized `(1/N) Σ J_i` of the optimal particle system started from `x0` at grid index `k0`.
fn particle_value(
    cl: &ClosedLoop,
    psi: &SpaceTimeField,
    x0: Vec<f64>,
    k0: usize,
    plan: &NoisePlan,
    dw0: &[f64],
    dws: &[Vec<f64>],
) -> Result<f64> {
    let m = cl.model;
    let n = x0.len() as f64;
    let mut running = Vec::with_capacity(plan.steps() + 1 - k0);
    let mut terminal = 0.0;
    run_particles(cl, psi, x0, k0, plan, dw0, dws, |k, xbar, _, xs, us| {
        let own: Vec<f64> = xs.iter().zip(us).map(|(x, u)| m.q_coef * x * x + m.r_coef * u * u).collect();
        let ubar = pairwise_sum(us) / n;
        running.push(pairwise_sum(&own) / n + m.q_fn.value(xbar) + m.r_fn.value(ubar));
        if k == plan.steps() {
            let g: Vec<f64> = xs.iter().map(|x| m.g_coef * x * x).collect();
            terminal = pairwise_sum(&g) / n + m.g_fn.value(xbar);
        }
    })?;
    Ok(trapezoid(&running, plan.dt()) + terminal)
}

/// Compares a common-random-number central difference of `V^N(t₀, ·)` in coordinate `i`
/// with `(1/N) U_i = (1/N)(2P(t₀)x_i + 2Ψ(t₀, x^{(N)}))`.
#[allow(clippy::too_many_arguments)]
pub fn vn_gradient_check(
    cl: &ClosedLoop,
    psi: &SpaceTimeField,
    t0: f64,
    x0: &[f64],
    i: usize,
    h: f64,
    paths: usize,
    plan: &NoisePlan,
) -> Result<VnGradient> {
    let n = x0.len();
    if n == 0 || i >= n {
        return Err(Error::Ensemble(format!("coordinate {i} out of range for {n} particles")));
    }
    if !(h > 0.0) || paths < 2 {
        return Err(Error::Ensemble(format!("need h > 0 and at least two paths (got h = {h}, {paths} paths)")));
    }
    let k0 = (t0 / plan.dt()).round() as usize;
    if k0 >= plan.steps() || (k0 as f64 * plan.dt() - t0).abs() > 1e-9 * plan.horizon() {
        return Err(Error::Domain(format!("t0 = {t0} is not a grid time before the horizon")));
    }
    let bumped = |delta: f64| {
        let mut x = x0.to_vec();
        x[i] += delta;
        x
    };
    let quotients: Vec<(f64, f64)> = (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let dw0 = plan.increments(StreamTag::Common, &[m]);
            let dws: Vec<Vec<f64>> = (0..n as u64).map(|j| plan.increments(StreamTag::Idio, &[m, j])).collect();
            let v = |delta: f64| particle_value(cl, psi, bumped(delta), k0, plan, &dw0, &dws);
            let full = (v(h)? - v(-h)?) / (2.0 * h);
            let half = (v(0.5 * h)? - v(-0.5 * h)?) / h;
            Ok((full, half))
        })
        .collect::<Result<_>>()?;
    let full: Vec<f64> = quotients.iter().map(|q| q.0).collect();
    let half: Vec<f64> = quotients.iter().map(|q| q.1).collect();
    let (fd, stderr_mc) = mean_stderr(&full);
    let fd_half = mean(&half);

    let xbar = pairwise_sum(x0) / n as f64;
    let target = (2.0 * cl.p.eval(t0) * x0[i] + 2.0 * psi.eval(t0, xbar)) / n as f64;
    let fd_trunc = (fd - fd_half).abs();
    let combined_se = stderr_mc.hypot(fd_trunc);
    if stderr_mc > target.abs().max(1e-12) {
        log::warn!(
            "finite-difference noise {stderr_mc:e} exceeds the gradient {target:e}; increase h or the path count"
        );
    }
    Ok(VnGradient { fd, fd_half, target, discrepancy: (fd - target).abs(), stderr_mc, fd_trunc, combined_se })
}

//! Euler–Maruyama kernels for the closed-loop systems.
//!
//! One call simulates one common-noise path: the conditional mean `x̂`, an
//! ensemble of mean-field optimal states `x*`, the optimal `N`-particle system
//! `x̄_i`, or the decentralized system `x*_i` driven by the mean-field feedback.

use std::io::Write;

use super::noise::{NoisePlan, StreamTag};
use super::stats::pairwise_sum;
use crate::error::{Error, Result};
use crate::feedback::RhoSolver;
use crate::fields::SpaceTimeField;
use crate::model::MfcModel;
use crate::riccati::TimeGridFn;

/// Model, Riccati function and feedback solver bundled for the kernels.
///
/// `feedback_p_scale` multiplies `P` wherever it enters a feedback law
/// (`−R⁻¹BP(x − x̂)` and `k = ρ(P x̂ + y)`); it is 1 except for deliberately
/// suboptimal contrast runs.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    pub model: &'a MfcModel,
    pub p: &'a TimeGridFn,
    solver: RhoSolver,
    feedback_p_scale: f64,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(model: &'a MfcModel, p: &'a TimeGridFn) -> Result<Self> {
        Ok(ClosedLoop { model, p, solver: RhoSolver::new(model)?, feedback_p_scale: 1.0 })
    }

    pub fn with_feedback_p_scale(mut self, scale: f64) -> Self {
        self.feedback_p_scale = scale;
        self
    }

    pub fn solver(&self) -> &RhoSolver {
        &self.solver
    }

    /// `P` as seen by the feedback laws.
    pub fn p_feedback(&self, t: f64) -> f64 {
        self.feedback_p_scale * self.p.eval(t)
    }

    /// `k(t, x, y) = ρ(P(t) x + y)`.
    pub fn kappa(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        self.solver.rho(self.p_feedback(t) * x + y)
    }

    /// `−R⁻¹ B P(t) · offset`.
    pub fn centering(&self, t: f64, offset: f64) -> f64 {
        -self.model.gain() * self.p_feedback(t) * offset
    }

    fn state_drift(&self, x: f64, mean: f64, u: f64, mean_u: f64) -> f64 {
        let m = self.model;
        m.a_coef * x + m.a_fn.value(mean) + m.b_coef * u + m.b_fn.value(mean_u)
    }
}

/// Conditional mean path `x̂` with `φ(t_k) = Φ(t_k, x̂_k)` and `κ_k = k(t_k, x̂_k, φ_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct XhatPath {
    pub path_id: u64,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Common increments that drove the path.
    pub dw0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    /// Mean-field optimal states `x*` around `x̂` (controls from `Φ`).
    MeanField,
    /// Optimal `N`-particle system `x̄_i` (controls from `Ψ_N`).
    Particles(usize),
    /// `N` particles each using the mean-field feedback (controls from `Φ`).
    Decentralized(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePath {
    pub particle_id: u64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

/// All particles of one common path. `shared` is `x̂` for the mean-field and
/// decentralized systems and `x̄^{(N)}` for the particle system; `shared_kappa`
/// is the feedback value `k(t, shared, field(t, shared))` at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub system: System,
    pub path_id: u64,
    pub times: Vec<f64>,
    pub shared: Vec<f64>,
    pub shared_kappa: Vec<f64>,
    pub paths: Vec<ParticlePath>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Empirical average of the states at step `k`.
    pub fn state_mean(&self, k: usize) -> f64 {
        let xs: Vec<f64> = self.paths.iter().map(|p| p.x[k]).collect();
        pairwise_sum(&xs) / xs.len() as f64
    }

    /// Empirical average of the controls at step `k`.
    pub fn control_mean(&self, k: usize) -> f64 {
        let us: Vec<f64> = self.paths.iter().map(|p| p.u[k]).collect();
        pairwise_sum(&us) / us.len() as f64
    }

    /// Largest deviation between the stored controls and a fresh evaluation of the
    /// generating feedback law with `field`.
    pub fn feedback_error(&self, cl: &ClosedLoop, field: &SpaceTimeField) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (k, &t) in self.times.iter().enumerate() {
            let s = self.shared[k];
            let kappa = cl.kappa(t, s, field.eval(t, s))?;
            for p in &self.paths {
                let u = cl.centering(t, p.x[k] - s) + kappa;
                worst = worst.max((u - p.u[k]).abs());
            }
        }
        Ok(worst)
    }
}

/// Writes `path_id, particle_id, t, x, u, xhat_or_xbarN` rows for every step of every particle.
pub fn write_trajectories_csv<W: Write>(out: W, sets: &[TrajectorySet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "particle_id", "t", "x", "u", "xhat_or_xbarN"])?;
    for set in sets {
        for p in &set.paths {
            for (k, &t) in set.times.iter().enumerate() {
                w.write_record([
                    set.path_id.to_string(),
                    p.particle_id.to_string(),
                    t.to_string(),
                    p.x[k].to_string(),
                    p.u[k].to_string(),
                    set.shared[k].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn times(plan: &NoisePlan) -> Vec<f64> {
    (0..=plan.steps()).map(|k| plan.time(k)).collect()
}

fn check_horizon(model: &MfcModel, plan: &NoisePlan) -> Result<()> {
    if model.horizon != plan.horizon() {
        return Err(Error::StreamMismatch(format!(
            "noise plan horizon {} differs from model horizon {}",
            plan.horizon(),
            model.horizon
        )));
    }
    Ok(())
}

fn initial_state(model: &MfcModel, plan: &NoisePlan, path: u64, particle: u64) -> f64 {
    model.init.sample(&mut plan.rng(StreamTag::Init, &[path, particle]))
}

/// Conditional mean `x̂` on common path `w0_index`, started at `E[ξ]`.
pub fn simulate_xhat(cl: &ClosedLoop, phi: &SpaceTimeField, plan: &NoisePlan, w0_index: u64) -> Result<XhatPath> {
    let m = cl.model;
    check_horizon(m, plan)?;
    let n = plan.steps();
    let dt = plan.dt();
    let dw0 = plan.increments(StreamTag::Common, &[w0_index]);
    let mut x = Vec::with_capacity(n + 1);
    let mut phis = Vec::with_capacity(n + 1);
    let mut kappas = Vec::with_capacity(n + 1);
    let mut cur = m.init.mean;
    for k in 0..=n {
        let t = plan.time(k);
        let f = phi.eval(t, cur);
        let kappa = cl.kappa(t, cur, f)?;
        x.push(cur);
        phis.push(f);
        kappas.push(kappa);
        if k < n {
            cur += cl.state_drift(cur, cur, kappa, kappa) * dt + m.sigma0 * dw0[k];
            if !cur.is_finite() {
                return Err(Error::NonFinite { what: "conditional mean path", t });
            }
        }
    }
    Ok(XhatPath { path_id: w0_index, x, phi: phis, kappa: kappas, dw0 })
}

/// One mean-field optimal state `x*` on common path `w0_index` and idiosyncratic
/// stream `(w0_index, particle)`.
pub fn simulate_mf(
    cl: &ClosedLoop,
    xhat: &XhatPath,
    plan: &NoisePlan,
    w0_index: u64,
    particle: u64,
) -> Result<ParticlePath> {
    let m = cl.model;
    check_horizon(m, plan)?;
    if xhat.path_id != w0_index {
        return Err(Error::StreamMismatch(format!(
            "x̂ was simulated on common path {} but x* was requested on {w0_index}",
            xhat.path_id
        )));
    }
    let n = plan.steps();
    if xhat.x.len() != n + 1 {
        return Err(Error::StreamMismatch("x̂ path length differs from the noise plan".into()));
    }
    let dt = plan.dt();
    let dw = plan.increments(StreamTag::Idio, &[w0_index, particle]);
    let mut x = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n + 1);
    let mut cur = initial_state(m, plan, w0_index, particle);
    for k in 0..=n {
        let t = plan.time(k);
        let kappa = xhat.kappa[k];
        let uk = cl.centering(t, cur - xhat.x[k]) + kappa;
        x.push(cur);
        u.push(uk);
        if k < n {
            cur += cl.state_drift(cur, xhat.x[k], uk, kappa) * dt + m.sigma * dw[k] + m.sigma0 * xhat.dw0[k];
            if !cur.is_finite() {
                return Err(Error::NonFinite { what: "mean-field state", t });
            }
        }
    }
    Ok(ParticlePath { particle_id: particle, x, u })
}

/// `count` mean-field optimal states sharing one `x̂` path.
pub fn simulate_mf_ensemble(cl: &ClosedLoop, xhat: &XhatPath, plan: &NoisePlan, count: usize) -> Result<TrajectorySet> {
    let paths = (0..count as u64).map(|j| simulate_mf(cl, xhat, plan, xhat.path_id, j)).collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet {
        system: System::MeanField,
        path_id: xhat.path_id,
        times: times(plan),
        shared: xhat.x.clone(),
        shared_kappa: xhat.kappa.clone(),
        paths,
    })
}

fn implied_particles(model: &MfcModel, diffusion: f64) -> usize {
    let idio = diffusion - model.sigma0 * model.sigma0;
    if idio <= 0.0 || model.sigma == 0.0 {
        0
    } else {
        (model.sigma * model.sigma / idio).round() as usize
    }
}

/// The optimal `N`-particle system on common path `w0_index`; `psi` must be `Ψ_N`.
pub fn simulate_particles(
    cl: &ClosedLoop,
    psi: &SpaceTimeField,
    n_particles: usize,
    plan: &NoisePlan,
    w0_index: u64,
) -> Result<TrajectorySet> {
    let m = cl.model;
    check_horizon(m, plan)?;
    if n_particles == 0 {
        return Err(Error::Ensemble("particle count N must be at least 1".into()));
    }
    let expected = m.sigma * m.sigma / n_particles as f64 + m.sigma0 * m.sigma0;
    if (psi.diffusion() - expected).abs() > 1e-12 * expected {
        return Err(Error::ParticleMismatch { field: implied_particles(m, psi.diffusion()), requested: n_particles });
    }
    let dw0 = plan.increments(StreamTag::Common, &[w0_index]);
    let dws: Vec<Vec<f64>> =
        (0..n_particles as u64).map(|i| plan.increments(StreamTag::Idio, &[w0_index, i])).collect();
    let init: Vec<f64> = (0..n_particles as u64).map(|i| initial_state(m, plan, w0_index, i)).collect();
    let steps = plan.steps();
    let mut paths: Vec<ParticlePath> = (0..n_particles as u64)
        .map(|i| ParticlePath { particle_id: i, x: Vec::with_capacity(steps + 1), u: Vec::with_capacity(steps + 1) })
        .collect();
    let mut shared = Vec::with_capacity(steps + 1);
    let mut kappas = Vec::with_capacity(steps + 1);
    run_particles(cl, psi, init, 0, plan, &dw0, &dws, |_, xbar, kappa, xs, us| {
        shared.push(xbar);
        kappas.push(kappa);
        for ((path, &x), &u) in paths.iter_mut().zip(xs).zip(us) {
            path.x.push(x);
            path.u.push(u);
        }
    })?;
    Ok(TrajectorySet {
        system: System::Particles(n_particles),
        path_id: w0_index,
        times: times(plan),
        shared,
        shared_kappa: kappas,
        paths,
    })
}

/// Steps the optimal particle system from states `init` at grid index `k0` to the horizon,
/// calling `visit(k, x̄^{(N)}, κ, states, controls)` at every grid time before stepping.
pub(crate) fn run_particles(
    cl: &ClosedLoop,
    psi: &SpaceTimeField,
    mut cur: Vec<f64>,
    k0: usize,
    plan: &NoisePlan,
    dw0: &[f64],
    dws: &[Vec<f64>],
    mut visit: impl FnMut(usize, f64, f64, &[f64], &[f64]),
) -> Result<()> {
    let m = cl.model;
    let steps = plan.steps();
    let dt = plan.dt();
    let n = cur.len() as f64;
    let mut us = vec![0.0; cur.len()];
    for k in k0..=steps {
        let t = plan.time(k);
        let xbar = pairwise_sum(&cur) / n;
        let kappa = cl.kappa(t, xbar, psi.eval(t, xbar))?;
        for (u, x) in us.iter_mut().zip(&cur) {
            *u = cl.centering(t, x - xbar) + kappa;
        }
        visit(k, xbar, kappa, &cur, &us);
        if k == steps {
            break;
        }
        let common = m.sigma0 * dw0[k];
        for (i, x) in cur.iter_mut().enumerate() {
            *x += cl.state_drift(*x, xbar, us[i], kappa) * dt + m.sigma * dws[i][k] + common;
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "particle state", t });
        }
    }
    Ok(())
}

/// `N` particles each applying the mean-field feedback around `x̂`, on the same
/// streams as [`simulate_particles`]. Inside `b` the drift uses the average control
/// `−R⁻¹BP(x^{(N),*} − x̂) + κ`.
pub fn simulate_decentralized(
    cl: &ClosedLoop,
    xhat: &XhatPath,
    n_particles: usize,
    plan: &NoisePlan,
    w0_index: u64,
) -> Result<TrajectorySet> {
    let m = cl.model;
    check_horizon(m, plan)?;
    if n_particles == 0 {
        return Err(Error::Ensemble("particle count N must be at least 1".into()));
    }
    if xhat.path_id != w0_index || xhat.x.len() != plan.steps() + 1 {
        return Err(Error::StreamMismatch(format!(
            "x̂ was simulated on common path {} but the decentralized system was requested on {w0_index}",
            xhat.path_id
        )));
    }
    let steps = plan.steps();
    let dt = plan.dt();
    let dws: Vec<Vec<f64>> =
        (0..n_particles as u64).map(|i| plan.increments(StreamTag::Idio, &[w0_index, i])).collect();
    let mut cur: Vec<f64> = (0..n_particles as u64).map(|i| initial_state(m, plan, w0_index, i)).collect();
    let mut paths: Vec<ParticlePath> = (0..n_particles as u64)
        .map(|i| ParticlePath { particle_id: i, x: Vec::with_capacity(steps + 1), u: Vec::with_capacity(steps + 1) })
        .collect();
    for k in 0..=steps {
        let t = plan.time(k);
        let (xh, kappa) = (xhat.x[k], xhat.kappa[k]);
        let xn = pairwise_sum(&cur) / n_particles as f64;
        let mean_u = cl.centering(t, xn - xh) + kappa;
        let common = if k < steps { m.sigma0 * xhat.dw0[k] } else { 0.0 };
        for (i, (x, path)) in cur.iter_mut().zip(paths.iter_mut()).enumerate() {
            let u = cl.centering(t, *x - xh) + kappa;
            path.x.push(*x);
            path.u.push(u);
            if k < steps {
                *x += cl.state_drift(*x, xn, u, mean_u) * dt + m.sigma * dws[i][k] + common;
            }
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "decentralized particle state", t });
        }
    }
    Ok(TrajectorySet {
        system: System::Decentralized(n_particles),
        path_id: w0_index,
        times: times(plan),
        shared: xhat.x.clone(),
        shared_kappa: xhat.kappa.clone(),
        paths,
    })
}

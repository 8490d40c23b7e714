//! Monte Carlo costs and the shared-trajectory value-gap estimator.

use rayon::prelude::*;

use super::kernels::{
    simulate_mf_ensemble, simulate_particles, simulate_xhat, ClosedLoop, ParticlePath, TrajectorySet,
};
use super::noise::NoisePlan;
use super::stats::{mean_stderr, trapezoid};
use super::{EnsembleConfig, Estimate};
use crate::error::{Error, Result};
use crate::fields::SpaceTimeField;
use crate::model::MfcModel;

/// Running cost `∫ Q x² + R u² dt + G x(T)²` of one path (no mean-field terms).
fn own_cost(model: &MfcModel, p: &ParticlePath, dt: f64) -> f64 {
    let run: Vec<f64> = p.x.iter().zip(&p.u).map(|(x, u)| model.q_coef * x * x + model.r_coef * u * u).collect();
    let xt = *p.x.last().expect("non-empty path");
    trapezoid(&run, dt) + model.g_coef * xt * xt
}

/// Mean-field terms `∫ q(m_x) + r(m_u) dt + g(m_x(T))`.
fn coupling_cost(model: &MfcModel, mean_x: &[f64], mean_u: &[f64], dt: f64) -> f64 {
    let run: Vec<f64> = mean_x.iter().zip(mean_u).map(|(&x, &u)| model.q_fn.value(x) + model.r_fn.value(u)).collect();
    trapezoid(&run, dt) + model.g_fn.value(*mean_x.last().expect("non-empty path"))
}

/// Per-path costs of a mean-field ensemble, with the conditional terms taken from `x̂` and `κ`.
pub fn mf_path_costs(model: &MfcModel, set: &TrajectorySet) -> Vec<f64> {
    let dt = set.times[1] - set.times[0];
    let common = coupling_cost(model, &set.shared, &set.shared_kappa, dt);
    set.paths.iter().map(|p| own_cost(model, p, dt) + common).collect()
}

/// `𝒥 = (1/N) Σ J_i` for one common path, with empirical `x^{(N)}`, `u^{(N)}` in `q, r, g`.
pub fn particle_cost(model: &MfcModel, set: &TrajectorySet) -> Result<f64> {
    if set.is_empty() || set.times.len() < 2 {
        return Err(Error::Ensemble("empty trajectory set".into()));
    }
    let dt = set.times[1] - set.times[0];
    let steps = set.times.len();
    let mean_x: Vec<f64> = (0..steps).map(|k| set.state_mean(k)).collect();
    let mean_u: Vec<f64> = (0..steps).map(|k| set.control_mean(k)).collect();
    let own: Vec<f64> = set.paths.iter().map(|p| own_cost(model, p, dt)).collect();
    Ok(super::stats::mean(&own) + coupling_cost(model, &mean_x, &mean_u, dt))
}

/// Nested Monte Carlo estimate of the mean-field cost `J(u*)`: `M0` common paths, `M1`
/// idiosyncratic paths each. The standard error is computed from the `M0` per-common-path
/// means, since paths sharing `W⁰` are correlated.
pub fn cost_mf(cl: &ClosedLoop, phi: &SpaceTimeField, ens: &EnsembleConfig, plan: &NoisePlan) -> Result<Estimate> {
    ens.validate()?;
    let clusters: Vec<Vec<f64>> = (0..ens.m0 as u64)
        .into_par_iter()
        .map(|m| {
            let xhat = simulate_xhat(cl, phi, plan, m)?;
            let set = simulate_mf_ensemble(cl, &xhat, plan, ens.m1)?;
            Ok(mf_path_costs(cl.model, &set))
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = if ens.m0 > 1 {
        let means: Vec<f64> = clusters.iter().map(|c| super::stats::mean(c)).collect();
        mean_stderr(&means)
    } else {
        log::warn!("cost_mf with a single common path: standard error ignores common-noise correlation");
        mean_stderr(&clusters[0])
    };
    Ok(Estimate::new("cost_mf", value, stderr, ens, plan.seed()))
}

/// Average of [`particle_cost`] over trajectory sets (one per common path).
pub fn cost_particles(model: &MfcModel, sets: &[TrajectorySet]) -> Result<(f64, f64)> {
    if sets.is_empty() {
        return Err(Error::Ensemble("no trajectory sets".into()));
    }
    let costs = sets.iter().map(|s| particle_cost(model, s)).collect::<Result<Vec<_>>>()?;
    Ok(mean_stderr(&costs))
}

/// Value-gap and field-gap samples along one particle trajectory set generated with `Ψ_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSample {
    /// `∫ R k_Φ² − R k_Ψ² + r(k_Φ) − r(k_Ψ) ds`.
    pub value_gap: f64,
    /// `sup_t |Φ − Ψ_N|²` at `x̄^{(N)}`.
    pub field_gap_sq: f64,
    /// `sup_t |k_Φ − k_Ψ|²` at `x̄^{(N)}`.
    pub control_gap_sq: f64,
}

pub fn gap_sample(
    cl: &ClosedLoop,
    phi: &SpaceTimeField,
    psi: &SpaceTimeField,
    set: &TrajectorySet,
) -> Result<GapSample> {
    let model = cl.model;
    let dt = set.times[1] - set.times[0];
    let mut integrand = Vec::with_capacity(set.times.len());
    let (mut field_sup, mut control_sup): (f64, f64) = (0.0, 0.0);
    for (k, &t) in set.times.iter().enumerate() {
        let xb = set.shared[k];
        let (f_phi, f_psi) = (phi.eval(t, xb), psi.eval(t, xb));
        let k_phi = cl.kappa(t, xb, f_phi)?;
        let k_psi = set.shared_kappa[k];
        integrand
            .push(model.r_coef * (k_phi * k_phi - k_psi * k_psi) + model.r_fn.value(k_phi) - model.r_fn.value(k_psi));
        field_sup = field_sup.max((f_phi - f_psi).powi(2));
        control_sup = control_sup.max((k_phi - k_psi).powi(2));
    }
    Ok(GapSample { value_gap: trapezoid(&integrand, dt), field_gap_sq: field_sup, control_gap_sq: control_sup })
}

/// Shared-trajectory estimate of `V − V^N` over `ens.m0` common paths of the `N`-particle
/// system, together with `E sup |Φ − Ψ_N|²` along the same paths.
pub fn value_gap(
    cl: &ClosedLoop,
    phi: &SpaceTimeField,
    psi: &SpaceTimeField,
    n_particles: usize,
    ens: &EnsembleConfig,
    plan: &NoisePlan,
) -> Result<(Estimate, Estimate)> {
    ens.validate()?;
    if phi.domain() != psi.domain() || phi.nx() != psi.nx() || phi.nt() != psi.nt() {
        return Err(Error::Domain("Φ and Ψ must be solved on the same grid".into()));
    }
    let samples: Vec<GapSample> = (0..ens.m0 as u64)
        .into_par_iter()
        .map(|m| {
            let set = simulate_particles(cl, psi, n_particles, plan, m)?;
            gap_sample(cl, phi, psi, &set)
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = samples.iter().map(|s| s.value_gap).collect();
    let fields: Vec<f64> = samples.iter().map(|s| s.field_gap_sq).collect();
    let ens_n = EnsembleConfig { n_particles, m1: 1, ..*ens };
    let (g, gse) = mean_stderr(&gaps);
    let (f, fse) = mean_stderr(&fields);
    Ok((
        Estimate::new("value_gap", g, gse, &ens_n, plan.seed()),
        Estimate::new("field_gap_sq", f, fse, &ens_n, plan.seed()),
    ))
}

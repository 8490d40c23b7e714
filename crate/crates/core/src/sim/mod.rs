//! Reproducible simulation of the closed-loop systems and Monte Carlo estimators.

mod checks;
mod cost;
mod kernels;
pub mod noise;
pub mod stats;

pub use checks::{gateaux_check, vn_gradient_check, Direction, GateauxRow, VnGradient, PERTURB_PIECES};
pub use cost::{cost_mf, cost_particles, gap_sample, mf_path_costs, particle_cost, value_gap, GapSample};
pub use kernels::{
    simulate_decentralized, simulate_mf, simulate_mf_ensemble, simulate_particles, simulate_xhat,
    write_trajectories_csv, ClosedLoop, ParticlePath, System, TrajectorySet, XhatPath,
};
pub use noise::{NoisePlan, StreamTag};

use std::io::Write;

use crate::error::{Error, Result};

/// Sizes of a Monte Carlo run: `M0` common paths with `M1` idiosyncratic paths each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub n_t: usize,
    pub n_particles: usize,
    pub m0: usize,
    pub m1: usize,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_particles == 0 || self.m0 == 0 || self.m1 == 0 {
            return Err(Error::Ensemble(format!(
                "all ensemble counts must be >= 1 (n_t = {}, N = {}, M0 = {}, M1 = {})",
                self.n_t, self.n_particles, self.m0, self.m1
            )));
        }
        Ok(())
    }
}

/// One row of the estimate table.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub quantity: String,
    pub value: f64,
    pub stderr: f64,
    pub m0: usize,
    pub m1: usize,
    pub n: usize,
    pub seed: u64,
}

impl Estimate {
    pub fn new(quantity: &str, value: f64, stderr: f64, ens: &EnsembleConfig, seed: u64) -> Self {
        Estimate { quantity: quantity.to_string(), value, stderr, m0: ens.m0, m1: ens.m1, n: ens.n_particles, seed }
    }
}

/// CSV with columns `quantity, value, stderr, M0, M1, N, seed`.
pub fn write_estimates_csv<W: Write>(out: W, rows: &[Estimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "value", "stderr", "M0", "M1", "N", "seed"])?;
    for r in rows {
        w.write_record([
            r.quantity.clone(),
            r.value.to_string(),
            r.stderr.to_string(),
            r.m0.to_string(),
            r.m1.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

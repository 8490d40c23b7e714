//! JSON run configuration.
//!
//! ```json
//! {
//!   "model": { "A": 0, "B": 1, "sigma": 1, "sigma0": 0.5, "Q": 1, "R": 1, "G": 0.5, "T": 1,
//!              "a": {"kind": "neg_logistic"}, "b": {"kind": "tanh", "params": [-0.05, 1]} },
//!   "grids": { "K": 200, "nx": 200 },
//!   "sim": { "N": 64, "M0": 64, "M1": 64, "seed": 1, "init": {"kind": "gaussian", "mean": 0.5, "spread": 0.5} },
//!   "experiment": { "quantities": ["CHAOS"], "ladder": [8, 16, 32, 64, 128, 256], "M": 200 }
//! }
//! ```
//!
//! Omitted coupling functions are zero; every other section has defaults except `sim.init`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::convergence::Quantity;
use crate::error::{Error, Result};
use crate::model::{InitialLaw, MfcModel, ScalarC2Fn};
use crate::sim::EnsembleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub grids: GridSection,
    pub sim: SimSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default = "default_output")]
    pub output: String,
}

/// Model data without the initial law, which lives in the `sim` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "A")]
    pub a_coef: f64,
    #[serde(rename = "B")]
    pub b_coef: f64,
    pub sigma: f64,
    pub sigma0: f64,
    #[serde(rename = "Q")]
    pub q_coef: f64,
    #[serde(rename = "R")]
    pub r_coef: f64,
    #[serde(rename = "G")]
    pub g_coef: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "a", default = "zero_fn")]
    pub a_fn: ScalarC2Fn,
    #[serde(rename = "b", default = "zero_fn")]
    pub b_fn: ScalarC2Fn,
    #[serde(rename = "q", default = "zero_fn")]
    pub q_fn: ScalarC2Fn,
    #[serde(rename = "r", default = "zero_fn")]
    pub r_fn: ScalarC2Fn,
    #[serde(rename = "g", default = "zero_fn")]
    pub g_fn: ScalarC2Fn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Riccati steps.
    #[serde(rename = "K")]
    pub k: usize,
    pub nx: usize,
    /// PDE time steps; defaults to `K`.
    #[serde(default)]
    pub nt: Option<usize>,
    /// `[lo, hi]`; the heuristic domain is used when absent.
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
    pub cfl_safety: f64,
    /// Row and column strides of the written field CSVs.
    pub csv_t_stride: usize,
    pub csv_x_stride: usize,
    /// `x̂` window for the residual check; defaults to `E[ξ] ± 3`.
    #[serde(default)]
    pub residual_window: Option<[f64; 2]>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            k: 200,
            nx: 200,
            nt: None,
            domain: None,
            cfl_safety: 0.9,
            csv_t_stride: 1,
            csv_x_stride: 1,
            residual_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Euler steps; defaults to `K` so that the SDE and PDE grids align.
    #[serde(default)]
    pub n_t: Option<usize>,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    #[serde(rename = "M0", default = "default_m")]
    pub m0: usize,
    #[serde(rename = "M1", default = "default_m")]
    pub m1: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub init: InitialLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "all_quantities")]
    pub quantities: Vec<Quantity>,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<usize>,
    /// Common paths per ladder point.
    #[serde(rename = "M", default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Optional `V^N` gradient check run by the optimality command.
    #[serde(default)]
    pub vn: Option<VnSection>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            quantities: all_quantities(),
            ladder: default_ladder(),
            paths: default_paths(),
            directions: default_directions(),
            eps: default_eps(),
            vn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VnSection {
    #[serde(default)]
    pub t0: f64,
    /// Initial particle positions; their count is `N`.
    pub x0: Vec<f64>,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_vn_paths")]
    pub paths: usize,
}

fn zero_fn() -> ScalarC2Fn {
    ScalarC2Fn::Zero
}
fn default_output() -> String {
    "out".into()
}
fn default_n() -> usize {
    64
}
fn default_m() -> usize {
    64
}
fn default_seed() -> u64 {
    1
}
fn all_quantities() -> Vec<Quantity> {
    Quantity::ALL.to_vec()
}
fn default_ladder() -> Vec<usize> {
    vec![8, 16, 32, 64, 128, 256]
}
fn default_paths() -> usize {
    200
}
fn default_directions() -> usize {
    5
}
fn default_eps() -> f64 {
    1e-3
}
fn default_h() -> f64 {
    0.05
}
fn default_vn_paths() -> usize {
    5000
}

/// Upper bounds that keep a hostile config from requesting absurd allocations.
const MAX_STEPS: usize = 1 << 20;
const MAX_NODES: usize = 1 << 16;
const MAX_COUNT: usize = 1 << 24;

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

impl RunConfig {
    /// Parses and validates a config. Never panics on malformed input.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| bad(format!("config is not UTF-8: {e}")))?;
        Self::from_json_str(text)
    }

    /// Structural checks. `R > 0` and the sign conditions are left to the assumption report.
    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        let g = &self.grids;
        if !(10..=MAX_STEPS).contains(&g.k) {
            return Err(bad(format!("grids.K must be in [10, {MAX_STEPS}], got {}", g.k)));
        }
        if !(4..=MAX_NODES).contains(&g.nx) {
            return Err(bad(format!("grids.nx must be in [4, {MAX_NODES}], got {}", g.nx)));
        }
        if !(1..=MAX_STEPS).contains(&self.pde_steps()) || !(1..=MAX_STEPS).contains(&self.sde_steps()) {
            return Err(bad(format!("grids.nt and sim.n_t must be in [1, {MAX_STEPS}]")));
        }
        if !(g.cfl_safety > 0.0 && g.cfl_safety <= 1.0) {
            return Err(bad(format!("grids.cfl_safety must be in (0, 1], got {}", g.cfl_safety)));
        }
        if g.csv_t_stride == 0 || g.csv_x_stride == 0 {
            return Err(bad("csv strides must be >= 1".into()));
        }
        for (name, w) in [("grids.domain", g.domain), ("grids.residual_window", g.residual_window)] {
            if let Some([lo, hi]) = w {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(bad(format!("{name} must be a finite interval [lo, hi], got [{lo}, {hi}]")));
                }
            }
        }
        let s = &self.sim;
        for (name, v) in [("sim.N", s.n), ("sim.M0", s.m0), ("sim.M1", s.m1), ("experiment.M", self.experiment.paths)] {
            if !(1..=MAX_COUNT).contains(&v) {
                return Err(bad(format!("{name} must be in [1, {MAX_COUNT}], got {v}")));
            }
        }
        let e = &self.experiment;
        if e.ladder.is_empty() || e.ladder.iter().any(|&n| n == 0 || n > MAX_COUNT) {
            return Err(bad(format!("experiment.ladder must be non-empty with entries in [1, {MAX_COUNT}]")));
        }
        if e.directions > 64 {
            return Err(bad(format!("experiment.directions must be at most 64, got {}", e.directions)));
        }
        if !(e.eps > 0.0 && e.eps.is_finite()) {
            return Err(bad(format!("experiment.eps must be positive, got {}", e.eps)));
        }
        if let Some(vn) = &e.vn {
            if vn.x0.is_empty() || vn.x0.len() > MAX_NODES || vn.x0.iter().any(|x| !x.is_finite()) {
                return Err(bad("experiment.vn.x0 needs between 1 and 65536 finite positions".into()));
            }
            if !(vn.h > 0.0 && vn.h.is_finite()) || vn.paths < 2 || vn.paths > MAX_COUNT {
                return Err(bad("experiment.vn needs h > 0 and at least two paths".into()));
            }
            if !(vn.t0 >= 0.0 && vn.t0 < self.model.horizon) {
                return Err(bad(format!("experiment.vn.t0 must lie in [0, T), got {}", vn.t0)));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> MfcModel {
        let m = &self.model;
        MfcModel {
            a_coef: m.a_coef,
            b_coef: m.b_coef,
            sigma: m.sigma,
            sigma0: m.sigma0,
            q_coef: m.q_coef,
            r_coef: m.r_coef,
            g_coef: m.g_coef,
            horizon: m.horizon,
            a_fn: m.a_fn.clone(),
            b_fn: m.b_fn.clone(),
            q_fn: m.q_fn.clone(),
            r_fn: m.r_fn.clone(),
            g_fn: m.g_fn.clone(),
            init: self.sim.init,
        }
    }

    pub fn pde_steps(&self) -> usize {
        self.grids.nt.unwrap_or(self.grids.k)
    }

    pub fn sde_steps(&self) -> usize {
        self.sim.n_t.unwrap_or(self.grids.k)
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig { n_t: self.sde_steps(), n_particles: self.sim.n, m0: self.sim.m0, m1: self.sim.m1 }
    }

    /// SHA-256 of the canonical serialization, as lowercase hex. The seed is part of the
    /// config, so a `--seed` override is reported next to the digest rather than inside it.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

impl From<&MfcModel> for ModelSection {
    fn from(m: &MfcModel) -> Self {
        ModelSection {
            a_coef: m.a_coef,
            b_coef: m.b_coef,
            sigma: m.sigma,
            sigma0: m.sigma0,
            q_coef: m.q_coef,
            r_coef: m.r_coef,
            g_coef: m.g_coef,
            horizon: m.horizon,
            a_fn: m.a_fn.clone(),
            b_fn: m.b_fn.clone(),
            q_fn: m.q_fn.clone(),
            r_fn: m.r_fn.clone(),
            g_fn: m.g_fn.clone(),
        }
    }
}

impl RunConfig {
    /// Config with default grids and experiment settings for `model`.
    pub fn for_model(model: &MfcModel) -> Self {
        RunConfig {
            model: ModelSection::from(model),
            grids: GridSection::default(),
            sim: SimSection {
                n_t: None,
                n: default_n(),
                m0: default_m(),
                m1: default_m(),
                seed: default_seed(),
                init: model.init,
            },
            experiment: ExperimentSection::default(),
            output: default_output(),
        }
    }
}

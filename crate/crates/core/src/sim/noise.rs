//! Counter-based Brownian increment streams.
//!
//! Every substream is a ChaCha8 generator seeded by SHA-256 of
//! `(base seed, tag, index tuple)`, so the noise of a given path or particle
//! does not depend on how many others exist or in which order they run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    /// `W⁰`, indexed by common path.
    Common,
    /// `W_i`, indexed by (common path, particle).
    Idio,
    /// Initial states `ξ_i`, indexed by (common path, particle).
    Init,
    /// Perturbation directions of the optimality check, indexed by direction.
    Perturb,
}

impl StreamTag {
    pub fn name(self) -> &'static str {
        match self {
            StreamTag::Common => "common",
            StreamTag::Idio => "idio",
            StreamTag::Init => "init",
            StreamTag::Perturb => "perturb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePlan {
    seed: u64,
    n_t: usize,
    horizon: f64,
}

impl NoisePlan {
    pub fn new(seed: u64, n_t: usize, horizon: f64) -> Result<Self> {
        if n_t == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Ensemble(format!("noise plan needs n_t >= 1 and T > 0 (got {n_t}, {horizon})")));
        }
        Ok(NoisePlan { seed, n_t, horizon })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.n_t
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_t {
            self.horizon
        } else {
            self.horizon * k as f64 / self.n_t as f64
        }
    }

    /// Fresh generator for one substream.
    pub fn rng(&self, tag: StreamTag, index: &[u64]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"mfc-noise-v1");
        h.update(self.seed.to_le_bytes());
        h.update(tag.name().as_bytes());
        h.update((index.len() as u64).to_le_bytes());
        for i in index {
            h.update(i.to_le_bytes());
        }
        let key: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(key)
    }

    /// The `n_t` Brownian increments `ΔW_k ~ N(0, dt)` of one substream.
    pub fn increments(&self, tag: StreamTag, index: &[u64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_t];
        self.fill_increments(tag, index, &mut out);
        out
    }

    pub fn fill_increments(&self, tag: StreamTag, index: &[u64], out: &mut [f64]) {
        let mut rng = self.rng(tag, index);
        let scale = self.dt().sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = scale * z;
        }
    }
}

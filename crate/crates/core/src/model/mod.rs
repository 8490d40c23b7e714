//! Problem data for the linear-quadratic mean field control problem.
//!
//! State dynamics (per particle, common noise `W⁰`):
//!
//! ```text
//! dx = [A x + a(E[x|F⁰]) + B u + b(E[u|F⁰])] dt + σ dW + σ₀ dW⁰
//! J  = E ∫ Q x² + q(E[x|F⁰]) + R u² + r(E[u|F⁰]) dt + E[G x(T)² + g(E[x(T)|F⁰])]
//! ```

mod assumptions;
mod catalog;
pub mod presets;

pub use assumptions::{validate_assumptions, AssumptionEntry, AssumptionReport, ScanGrid};
pub use catalog::{catalog_make, C2Bounds, FnKind, FnSpec, ScalarC2Fn};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLawKind {
    Point,
    Gaussian,
    Uniform,
}

/// Law of the i.i.d. initial states. `spread` is the standard deviation for
/// `gaussian` and the half-width for `uniform`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialLaw {
    pub kind: InitialLawKind,
    pub mean: f64,
    #[serde(default)]
    pub spread: f64,
}

impl InitialLaw {
    pub fn point(mean: f64) -> Self {
        InitialLaw { kind: InitialLawKind::Point, mean, spread: 0.0 }
    }

    pub fn gaussian(mean: f64, sd: f64) -> Self {
        InitialLaw { kind: InitialLawKind::Gaussian, mean, spread: sd }
    }

    pub fn uniform(mean: f64, half_width: f64) -> Self {
        InitialLaw { kind: InitialLawKind::Uniform, mean, spread: half_width }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.spread.is_finite() || self.spread < 0.0 {
            return Err(Error::InvalidModel(format!(
                "initial law needs finite mean and spread >= 0 (mean {}, spread {})",
                self.mean, self.spread
            )));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            InitialLawKind::Point => 0.0,
            InitialLawKind::Gaussian => self.spread * self.spread,
            InitialLawKind::Uniform => self.spread * self.spread / 3.0,
        }
    }

    pub fn second_moment(&self) -> f64 {
        self.mean * self.mean + self.variance()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            InitialLawKind::Point => self.mean,
            InitialLawKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.mean + self.spread * z
            }
            InitialLawKind::Uniform => self.mean + self.spread * (2.0 * rng.random::<f64>() - 1.0),
        }
    }
}

/// Full problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfcModel {
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
    #[serde(rename = "a")]
    pub a_fn: ScalarC2Fn,
    #[serde(rename = "b")]
    pub b_fn: ScalarC2Fn,
    #[serde(rename = "q")]
    pub q_fn: ScalarC2Fn,
    #[serde(rename = "r")]
    pub r_fn: ScalarC2Fn,
    #[serde(rename = "g")]
    pub g_fn: ScalarC2Fn,
    pub init: InitialLaw,
}

/// Barred coefficients of the LQ special case
/// `a = Āx, b = B̄x, q = Q̄x², r = R̄x², g = Ḡx²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LqCoeffs {
    pub a_bar: f64,
    pub b_bar: f64,
    pub q_bar: f64,
    pub r_bar: f64,
    pub g_bar: f64,
}

fn linear_coef(f: &ScalarC2Fn) -> Option<f64> {
    match *f {
        ScalarC2Fn::Zero => Some(0.0),
        ScalarC2Fn::Affine { slope, intercept } if intercept == 0.0 => Some(slope),
        _ => None,
    }
}

fn quadratic_coef(f: &ScalarC2Fn) -> Option<f64> {
    match *f {
        ScalarC2Fn::Zero => Some(0.0),
        ScalarC2Fn::Quadratic { c2, c1, c0 } if c1 == 0.0 && c0 == 0.0 => Some(c2),
        _ => None,
    }
}

impl MfcModel {
    /// Structural checks only: finiteness, `T > 0`, `σ ≥ 0`, `σ₀ > 0`.
    ///
    /// Sign conditions on the weights and `R > 0` are reported by
    /// [`validate_assumptions`] so that a config with `R = 0` still loads and
    /// can be diagnosed.
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("A", self.a_coef),
            ("B", self.b_coef),
            ("sigma", self.sigma),
            ("sigma0", self.sigma0),
            ("Q", self.q_coef),
            ("R", self.r_coef),
            ("G", self.g_coef),
            ("T", self.horizon),
        ];
        if let Some((name, v)) = scalars.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("{name} is not finite ({v})")));
        }
        if self.horizon <= 0.0 {
            return Err(Error::InvalidModel(format!("horizon T must be positive, got {}", self.horizon)));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidModel(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.sigma0 <= 0.0 {
            return Err(Error::InvalidModel(format!("sigma0 must be > 0, got {}", self.sigma0)));
        }
        self.init.validate()
    }

    pub fn require_positive_r(&self) -> Result<()> {
        if self.r_coef > 0.0 {
            Ok(())
        } else {
            Err(Error::RequiresPositiveR(self.r_coef))
        }
    }

    /// `R⁻¹ B`
    pub fn gain(&self) -> f64 {
        self.b_coef / self.r_coef
    }

    /// Barred coefficients when every coupling function is of LQ form.
    pub fn lq_coeffs(&self) -> Option<LqCoeffs> {
        Some(LqCoeffs {
            a_bar: linear_coef(&self.a_fn)?,
            b_bar: linear_coef(&self.b_fn)?,
            q_bar: quadratic_coef(&self.q_fn)?,
            r_bar: quadratic_coef(&self.r_fn)?,
            g_bar: quadratic_coef(&self.g_fn)?,
        })
    }

    pub fn coupling_fns(&self) -> [(&'static str, &ScalarC2Fn); 5] {
        [("a", &self.a_fn), ("b", &self.b_fn), ("q", &self.q_fn), ("r", &self.r_fn), ("g", &self.g_fn)]
    }
}

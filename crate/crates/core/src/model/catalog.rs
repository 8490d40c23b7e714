//! Closed catalog of scalar C² functions with analytic first and second derivatives.
//!
//! Every coupling function of a model (`a`, `b`, `q`, `r`, `g`) is drawn from this
//! catalog. Keeping the set closed means Newton iterations and PDE source terms
//! never fall back on finite differences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag of a catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FnKind {
    Zero,
    Constant,
    Affine,
    Quadratic,
    Sin,
    Cos,
    Tanh,
    NegLogistic,
    ScaledSum,
}

impl FnKind {
    pub const ALL: [FnKind; 9] = [
        FnKind::Zero,
        FnKind::Constant,
        FnKind::Affine,
        FnKind::Quadratic,
        FnKind::Sin,
        FnKind::Cos,
        FnKind::Tanh,
        FnKind::NegLogistic,
        FnKind::ScaledSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FnKind::Zero => "zero",
            FnKind::Constant => "constant",
            FnKind::Affine => "affine",
            FnKind::Quadratic => "quadratic",
            FnKind::Sin => "sin",
            FnKind::Cos => "cos",
            FnKind::Tanh => "tanh",
            FnKind::NegLogistic => "neg_logistic",
            FnKind::ScaledSum => "scaled_sum",
        }
    }
}

impl fmt::Display for FnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FnKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// A scalar function `ℝ → ℝ` with analytic `d1` and `d2`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarC2Fn {
    Zero,
    Constant {
        c: f64,
    },
    /// `slope·x + intercept`. Unbounded: oracle-only.
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// `c2·x² + c1·x + c0`. Unbounded: oracle-only.
    Quadratic {
        c2: f64,
        c1: f64,
        c0: f64,
    },
    /// `amplitude·sin(frequency·x + phase)`
    Sin {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `amplitude·cos(frequency·x + phase)`
    Cos {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `amplitude·tanh(scale·x)`
    Tanh {
        amplitude: f64,
        scale: f64,
    },
    /// `-amplitude / (exp(scale·x) + 1)`
    NegLogistic {
        amplitude: f64,
        scale: f64,
    },
    /// `Σ weight_i · f_i(x)`
    ScaledSum {
        terms: Vec<(f64, ScalarC2Fn)>,
    },
}

/// Sup-norm bounds of value, first and second derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C2Bounds {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

fn check_finite(kind: FnKind, params: &[f64]) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidParams { kind: kind.name(), reason: format!("non-finite parameter {p}") });
    }
    Ok(())
}

fn take_params<const N: usize>(kind: FnKind, params: &[f64], defaults: [f64; N], required: usize) -> Result<[f64; N]> {
    if params.len() < required || params.len() > N {
        return Err(Error::InvalidParams {
            kind: kind.name(),
            reason: format!("expected {required}..={N} parameters, got {}", params.len()),
        });
    }
    check_finite(kind, params)?;
    let mut out = defaults;
    out[..params.len()].copy_from_slice(params);
    Ok(out)
}

fn positive(kind: FnKind, name: &str, v: f64) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams { kind: kind.name(), reason: format!("{name} must be positive, got {v}") })
    }
}

/// Builds a catalog function from its tag and parameter list.
///
/// Parameter layouts (trailing entries optional):
///
/// | kind           | params                                   |
/// |----------------|------------------------------------------|
/// | `zero`         | none                                     |
/// | `constant`     | `c`                                      |
/// | `affine`       | `slope, intercept = 0`                   |
/// | `quadratic`    | `c2, c1 = 0, c0 = 0`                     |
/// | `sin`, `cos`   | `amplitude = 1, frequency = 1, phase = 0`|
/// | `tanh`         | `amplitude = 1, scale = 1`               |
/// | `neg_logistic` | `amplitude = 1, scale = 1`               |
///
/// `scaled_sum` needs sub-functions and is built with [`ScalarC2Fn::scaled_sum`].
pub fn catalog_make(kind: FnKind, params: &[f64]) -> Result<ScalarC2Fn> {
    Ok(match kind {
        FnKind::Zero => {
            take_params::<0>(kind, params, [], 0)?;
            ScalarC2Fn::Zero
        }
        FnKind::Constant => {
            let [c] = take_params(kind, params, [0.0], 1)?;
            ScalarC2Fn::Constant { c }
        }
        FnKind::Affine => {
            let [slope, intercept] = take_params(kind, params, [0.0, 0.0], 1)?;
            ScalarC2Fn::Affine { slope, intercept }
        }
        FnKind::Quadratic => {
            let [c2, c1, c0] = take_params(kind, params, [0.0, 0.0, 0.0], 1)?;
            ScalarC2Fn::Quadratic { c2, c1, c0 }
        }
        FnKind::Sin | FnKind::Cos => {
            let [amplitude, frequency, phase] = take_params(kind, params, [1.0, 1.0, 0.0], 0)?;
            positive(kind, "frequency", frequency)?;
            if kind == FnKind::Sin {
                ScalarC2Fn::Sin { amplitude, frequency, phase }
            } else {
                ScalarC2Fn::Cos { amplitude, frequency, phase }
            }
        }
        FnKind::Tanh => {
            let [amplitude, scale] = take_params(kind, params, [1.0, 1.0], 0)?;
            positive(kind, "scale", scale)?;
            ScalarC2Fn::Tanh { amplitude, scale }
        }
        FnKind::NegLogistic => {
            let [amplitude, scale] = take_params(kind, params, [1.0, 1.0], 0)?;
            positive(kind, "scale", scale)?;
            ScalarC2Fn::NegLogistic { amplitude, scale }
        }
        FnKind::ScaledSum => {
            return Err(Error::InvalidParams { kind: kind.name(), reason: "scaled_sum requires sub-functions".into() })
        }
    })
}

/// Logistic `1/(1+e^{-x})` evaluated without overflow.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ScalarC2Fn {
    pub fn scaled_sum(terms: Vec<(f64, ScalarC2Fn)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParams {
                kind: FnKind::ScaledSum.name(),
                reason: "at least one term required".into(),
            });
        }
        let weights: Vec<f64> = terms.iter().map(|(w, _)| *w).collect();
        check_finite(FnKind::ScaledSum, &weights)?;
        Ok(ScalarC2Fn::ScaledSum { terms })
    }

    pub fn kind(&self) -> FnKind {
        match self {
            ScalarC2Fn::Zero => FnKind::Zero,
            ScalarC2Fn::Constant { .. } => FnKind::Constant,
            ScalarC2Fn::Affine { .. } => FnKind::Affine,
            ScalarC2Fn::Quadratic { .. } => FnKind::Quadratic,
            ScalarC2Fn::Sin { .. } => FnKind::Sin,
            ScalarC2Fn::Cos { .. } => FnKind::Cos,
            ScalarC2Fn::Tanh { .. } => FnKind::Tanh,
            ScalarC2Fn::NegLogistic { .. } => FnKind::NegLogistic,
            ScalarC2Fn::ScaledSum { .. } => FnKind::ScaledSum,
        }
    }

    /// Parameter list in the layout accepted by [`catalog_make`]
    /// (for `scaled_sum`: the weights).
    pub fn params(&self) -> Vec<f64> {
        match *self {
            ScalarC2Fn::Zero => vec![],
            ScalarC2Fn::Constant { c } => vec![c],
            ScalarC2Fn::Affine { slope, intercept } => vec![slope, intercept],
            ScalarC2Fn::Quadratic { c2, c1, c0 } => vec![c2, c1, c0],
            ScalarC2Fn::Sin { amplitude, frequency, phase } | ScalarC2Fn::Cos { amplitude, frequency, phase } => {
                vec![amplitude, frequency, phase]
            }
            ScalarC2Fn::Tanh { amplitude, scale } | ScalarC2Fn::NegLogistic { amplitude, scale } => {
                vec![amplitude, scale]
            }
            ScalarC2Fn::ScaledSum { ref terms } => terms.iter().map(|(w, _)| *w).collect(),
        }
    }

    /// `(f, f', f'')` at `x`.
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            ScalarC2Fn::Zero => (0.0, 0.0, 0.0),
            ScalarC2Fn::Constant { c } => (c, 0.0, 0.0),
            ScalarC2Fn::Affine { slope, intercept } => (slope * x + intercept, slope, 0.0),
            ScalarC2Fn::Quadratic { c2, c1, c0 } => (c2 * x * x + c1 * x + c0, 2.0 * c2 * x + c1, 2.0 * c2),
            ScalarC2Fn::Sin { amplitude, frequency, phase } => {
                let (s, c) = (frequency * x + phase).sin_cos();
                (amplitude * s, amplitude * frequency * c, -amplitude * frequency * frequency * s)
            }
            ScalarC2Fn::Cos { amplitude, frequency, phase } => {
                let (s, c) = (frequency * x + phase).sin_cos();
                (amplitude * c, -amplitude * frequency * s, -amplitude * frequency * frequency * c)
            }
            ScalarC2Fn::Tanh { amplitude, scale } => {
                let t = (scale * x).tanh();
                let sech2 = 1.0 - t * t;
                (amplitude * t, amplitude * scale * sech2, -2.0 * amplitude * scale * scale * t * sech2)
            }
            ScalarC2Fn::NegLogistic { amplitude, scale } => {
                let z = scale * x;
                let p = logistic(z);
                let q = logistic(-z);
                let pq = p * q;
                (-amplitude * q, amplitude * scale * pq, amplitude * scale * scale * pq * (q - p))
            }
            ScalarC2Fn::ScaledSum { ref terms } => terms.iter().fold((0.0, 0.0, 0.0), |acc, (w, f)| {
                let (v, d1, d2) = f.eval3(x);
                (acc.0 + w * v, acc.1 + w * d1, acc.2 + w * d2)
            }),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.eval3(x).0
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        self.eval3(x).1
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        self.eval3(x).2
    }

    /// Affine and quadratic entries violate the boundedness requirement on
    /// coupling functions and exist only to express the LQ reference problem.
    pub fn is_oracle_only(&self) -> bool {
        match self {
            ScalarC2Fn::Affine { .. } | ScalarC2Fn::Quadratic { .. } => true,
            ScalarC2Fn::ScaledSum { terms } => terms.iter().any(|(w, f)| *w != 0.0 && f.is_oracle_only()),
            _ => false,
        }
    }

    /// Global sup-norm bounds of `f`, `f'`, `f''`; `None` for oracle-only entries.
    pub fn bounds(&self) -> Option<C2Bounds> {
        const TANH_D2: f64 = 0.769_800_358_919_501; // 4 / (3√3)
        const LOGISTIC_D2: f64 = 0.096_225_044_864_937_63; // 1 / (6√3)
        let b = |value: f64, d1: f64, d2: f64| Some(C2Bounds { value, d1, d2 });
        match *self {
            ScalarC2Fn::Zero => b(0.0, 0.0, 0.0),
            ScalarC2Fn::Constant { c } => b(c.abs(), 0.0, 0.0),
            ScalarC2Fn::Affine { slope, .. } if slope == 0.0 => self.value(0.0).abs().into_bounds(),
            ScalarC2Fn::Quadratic { c2, c1, .. } if c2 == 0.0 && c1 == 0.0 => self.value(0.0).abs().into_bounds(),
            ScalarC2Fn::Affine { .. } | ScalarC2Fn::Quadratic { .. } => None,
            ScalarC2Fn::Sin { amplitude, frequency, .. } | ScalarC2Fn::Cos { amplitude, frequency, .. } => {
                let a = amplitude.abs();
                b(a, a * frequency, a * frequency * frequency)
            }
            ScalarC2Fn::Tanh { amplitude, scale } => {
                let a = amplitude.abs();
                b(a, a * scale, a * scale * scale * TANH_D2)
            }
            ScalarC2Fn::NegLogistic { amplitude, scale } => {
                let a = amplitude.abs();
                b(a, a * scale / 4.0, a * scale * scale * LOGISTIC_D2)
            }
            ScalarC2Fn::ScaledSum { ref terms } => {
                terms.iter().try_fold(C2Bounds { value: 0.0, d1: 0.0, d2: 0.0 }, |acc, (w, f)| {
                    let fb = if *w == 0.0 { C2Bounds { value: 0.0, d1: 0.0, d2: 0.0 } } else { f.bounds()? };
                    Some(C2Bounds {
                        value: acc.value + w.abs() * fb.value,
                        d1: acc.d1 + w.abs() * fb.d1,
                        d2: acc.d2 + w.abs() * fb.d2,
                    })
                })
            }
        }
    }
}

trait IntoBounds {
    fn into_bounds(self) -> Option<C2Bounds>;
}

impl IntoBounds for f64 {
    fn into_bounds(self) -> Option<C2Bounds> {
        Some(C2Bounds { value: self, d1: 0.0, d2: 0.0 })
    }
}

/// Serialized form `{kind, params, terms}` used by run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<FnSpec>,
}

/// Nesting limit for `scaled_sum` specs read from untrusted input.
const MAX_SPEC_DEPTH: usize = 8;

impl FnSpec {
    pub fn build(&self) -> Result<ScalarC2Fn> {
        self.build_at(0)
    }

    /// Parses one spec such as `{"kind": "tanh", "params": [-0.05, 1.0]}` and builds it.
    pub fn parse_json(text: &[u8]) -> Result<ScalarC2Fn> {
        serde_json::from_slice::<FnSpec>(text)?.build()
    }

    fn build_at(&self, depth: usize) -> Result<ScalarC2Fn> {
        let kind: FnKind = self.kind.parse()?;
        if kind == FnKind::ScaledSum {
            if depth >= MAX_SPEC_DEPTH {
                return Err(Error::InvalidParams {
                    kind: kind.name(),
                    reason: format!("nesting deeper than {MAX_SPEC_DEPTH}"),
                });
            }
            if self.params.len() != self.terms.len() {
                return Err(Error::InvalidParams {
                    kind: kind.name(),
                    reason: format!("{} weights for {} terms", self.params.len(), self.terms.len()),
                });
            }
            let terms = self
                .params
                .iter()
                .zip(&self.terms)
                .map(|(w, t)| Ok((*w, t.build_at(depth + 1)?)))
                .collect::<Result<Vec<_>>>()?;
            ScalarC2Fn::scaled_sum(terms)
        } else {
            if !self.terms.is_empty() {
                return Err(Error::InvalidParams { kind: kind.name(), reason: "only scaled_sum takes terms".into() });
            }
            catalog_make(kind, &self.params)
        }
    }
}

impl From<&ScalarC2Fn> for FnSpec {
    fn from(f: &ScalarC2Fn) -> Self {
        let terms = match f {
            ScalarC2Fn::ScaledSum { terms } => terms.iter().map(|(_, t)| FnSpec::from(t)).collect(),
            _ => Vec::new(),
        };
        FnSpec { kind: f.kind().name().to_string(), params: f.params(), terms }
    }
}

impl Serialize for ScalarC2Fn {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        FnSpec::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ScalarC2Fn {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spec = FnSpec::deserialize(deserializer)?;
        spec.build().map_err(serde::de::Error::custom)
    }
}

//! The implicit feedback map `ρ` and the composite feedback `k(t, x, y) = ρ(P(t)x + y)`.
//!
//! `ρ(ŷ)` is the root in `u` of
//!
//! ```text
//! F(u; ŷ) = R u + ½ r'(u) + B ŷ + b'(u) ŷ
//! ```
//!
//! which is unique and strictly increasing in `u` when `R > 0` and the (A3) margin is positive.

use crate::error::{Error, Result};
use crate::model::{LqCoeffs, MfcModel, ScalarC2Fn};
use crate::riccati::TimeGridFn;

/// Largest `|u|` the bracket search may reach before giving up.
pub const BRACKET_LIMIT: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct RhoSolver {
    r_coef: f64,
    b_coef: f64,
    r_fn: ScalarC2Fn,
    b_fn: ScalarC2Fn,
    tol: f64,
    max_iter: usize,
    eps0: f64,
}

impl RhoSolver {
    pub const DEFAULT_TOL: f64 = 1e-12;
    pub const DEFAULT_MAX_ITER: usize = 200;
    pub const DEFAULT_EPS0: f64 = 1e-3;

    pub fn new(model: &MfcModel) -> Result<Self> {
        Self::with_options(model, Self::DEFAULT_TOL, Self::DEFAULT_MAX_ITER, Self::DEFAULT_EPS0)
    }

    pub fn with_options(model: &MfcModel, tol: f64, max_iter: usize, eps0: f64) -> Result<Self> {
        model.require_positive_r()?;
        if !(tol > 0.0) || max_iter == 0 || !(eps0 > 0.0) {
            return Err(Error::InvalidModel(format!(
                "feedback solver needs tol > 0, max_iter > 0, eps0 > 0 (got {tol}, {max_iter}, {eps0})"
            )));
        }
        Ok(RhoSolver {
            r_coef: model.r_coef,
            b_coef: model.b_coef,
            r_fn: model.r_fn.clone(),
            b_fn: model.b_fn.clone(),
            tol,
            max_iter,
            eps0,
        })
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `F(u; ŷ)`.
    pub fn residual(&self, u: f64, y_hat: f64) -> f64 {
        self.r_coef * u + 0.5 * self.r_fn.d1(u) + self.b_coef * y_hat + self.b_fn.d1(u) * y_hat
    }

    /// `∂F/∂u = R + ½ r''(u) + ŷ b''(u)`.
    pub fn slope(&self, u: f64, y_hat: f64) -> f64 {
        self.r_coef + 0.5 * self.r_fn.d2(u) + y_hat * self.b_fn.d2(u)
    }

    fn eval(&self, u: f64, y_hat: f64) -> (f64, f64, f64) {
        let (_, r1, r2) = self.r_fn.eval3(u);
        let (_, b1, b2) = self.b_fn.eval3(u);
        let ru = self.r_coef * u;
        let by = self.b_coef * y_hat;
        let f = ru + 0.5 * r1 + by + b1 * y_hat;
        let scale = ru.abs() + (0.5 * r1).abs() + by.abs() + (b1 * y_hat).abs();
        (f, self.r_coef + 0.5 * r2 + y_hat * b2, scale)
    }

    /// `ρ(ŷ)`: Newton from `−R⁻¹Bŷ`, safeguarded by bisection on an expanding bracket.
    pub fn rho(&self, y_hat: f64) -> Result<f64> {
        if !y_hat.is_finite() {
            return Err(Error::NonFinite { what: "feedback argument", t: f64::NAN });
        }
        let u0 = -self.b_coef * y_hat / self.r_coef;
        let (f0, d0, _) = self.eval(u0, y_hat);
        if f0.abs() <= self.tol {
            return Ok(u0);
        }

        // F is increasing, so the root lies on the side opposite to sign(F(u0)).
        let dir = if f0 > 0.0 { -1.0 } else { 1.0 };
        let mut width = f64::max(1.0, 2.0 * u0.abs());
        let far = loop {
            let u = u0 + dir * width;
            if u.abs() > BRACKET_LIMIT {
                return Err(Error::BracketNotFound { y_hat, limit: BRACKET_LIMIT });
            }
            let f = self.residual(u, y_hat);
            if f.abs() <= self.tol {
                return Ok(u);
            }
            if f.signum() != f0.signum() {
                break u;
            }
            width *= 2.0;
        };
        let (mut lo, mut hi) = if dir > 0.0 { (u0, far) } else { (far, u0) };

        let (mut u, mut f, mut d) = (u0, f0, d0);
        for _ in 0..self.max_iter {
            let newton = u - f / d;
            let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            let (fn_, dn, scale) = self.eval(next, y_hat);
            if fn_.abs() <= self.tol {
                return Ok(next);
            }
            if fn_ < 0.0 {
                lo = next;
            } else {
                hi = next;
            }
            (u, f, d) = (next, fn_, dn);
            // Bracket exhausted in floating point: accept if the residual is at rounding level.
            if hi - lo <= 4.0 * f64::EPSILON * u.abs().max(f64::MIN_POSITIVE) {
                if f.abs() <= 64.0 * f64::EPSILON * scale {
                    return Ok(u);
                }
                break;
            }
        }
        Err(Error::MaxIterations { y_hat, iters: self.max_iter, residual: f.abs() })
    }

    /// `ρ'(ŷ) = −(B + b'(ρ)) / (R + ½ r''(ρ) + ŷ b''(ρ))`.
    pub fn rho_prime(&self, y_hat: f64) -> Result<f64> {
        let u = self.rho(y_hat)?;
        self.rho_prime_at(u, y_hat)
    }

    /// `ρ'` given an already solved root `u = ρ(ŷ)`.
    pub fn rho_prime_at(&self, u: f64, y_hat: f64) -> Result<f64> {
        let denom = self.slope(u, y_hat);
        if denom.abs() < self.eps0 {
            return Err(Error::DegenerateDerivative { denom: denom.abs(), eps: self.eps0 });
        }
        Ok(-(self.b_coef + self.b_fn.d1(u)) / denom)
    }

    /// `k(t, x, y) = ρ(P(t) x + y)`.
    pub fn k_map(&self, p: &TimeGridFn, t: f64, x: f64, y: f64) -> Result<f64> {
        self.rho(p.eval(t) * x + y)
    }
}

/// Gain of the LQ closed form `ρ(ŷ) = −(R+R̄)⁻¹(B+B̄) ŷ`.
pub fn lq_rho_gain(model: &MfcModel, lq: &LqCoeffs) -> f64 {
    -(model.b_coef + lq.b_bar) / (model.r_coef + lq.r_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog_make, presets, FnKind};
    use crate::riccati::solve_p;
    use proptest::prelude::*;

    fn cos_model() -> MfcModel {
        let mut m = presets::trivial();
        m.r_fn = catalog_make(FnKind::Cos, &[]).unwrap();
        m
    }

    fn nonconvex_margin() -> f64 {
        static MARGIN: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
        *MARGIN.get_or_init(|| {
            let m = presets::nonconvex();
            let p = solve_p(&m, 100).unwrap();
            let grid = crate::model::ScanGrid::default();
            crate::model::validate_assumptions(&m, &grid, &p).unwrap().get("A3").unwrap().margin
        })
    }

    #[test]
    fn linear_when_couplings_vanish() {
        let mut m = presets::trivial();
        m.b_coef = 3.0;
        let s = RhoSolver::new(&m).unwrap();
        assert_eq!(s.rho(2.0).unwrap(), -6.0);
        assert_eq!(s.rho_prime(-1.7).unwrap(), -3.0);
    }

    #[test]
    fn lq_closed_form() {
        let lq = LqCoeffs { a_bar: 0.2, b_bar: 0.5, q_bar: 0.5, r_bar: 0.5, g_bar: 0.5 };
        let m = presets::lq(lq);
        let s = RhoSolver::new(&m).unwrap();
        let gain = lq_rho_gain(&m, &lq);
        for i in 0..=1000 {
            let y = -5.0 + 0.01 * i as f64;
            assert!((s.rho(y).unwrap() - gain * y).abs() <= 1e-10);
            assert!((s.rho_prime(y).unwrap() - gain).abs() <= 1e-14);
        }
    }

    #[test]
    fn cosine_root_matches_bisection_oracle() {
        // u - sin(u)/2 + 0.3 = 0, bisected to 1e-20 in extended precision.
        const ROOT: f64 = -0.569_682_256_443_944_8;
        const SLOPE: f64 = -1.727_223_701_445_297;
        let s = RhoSolver::new(&cos_model()).unwrap();
        let u = s.rho(0.3).unwrap();
        assert!((u - ROOT).abs() < 1e-12, "{u}");
        assert!(s.residual(u, 0.3).abs() <= 1e-12);
        assert!((s.rho_prime(0.3).unwrap() - SLOPE).abs() < 1e-10);
    }

    #[test]
    fn k_map_collapses() {
        let m = presets::nonconvex();
        let s = RhoSolver::new(&m).unwrap();
        let p = solve_p(&m, 100).unwrap();
        let zero = TimeGridFn::constant(1.0, 100, 0.0);
        for &(x, y) in &[(1.0, 0.2), (-3.0, 1.5), (0.0, -0.7)] {
            assert_eq!(s.k_map(&zero, 0.4, x, y).unwrap(), s.rho(y).unwrap());
        }
        assert_eq!(s.k_map(&p, 0.5, 0.0, 0.9).unwrap(), s.rho(0.9).unwrap());
        let t = p.time(30);
        assert_eq!(s.k_map(&p, t, 2.0, 0.1).unwrap(), s.rho(p.values()[30] * 2.0 + 0.1).unwrap());
    }

    #[test]
    fn degenerate_derivative_is_reported() {
        let mut m = cos_model();
        m.r_coef = 0.5;
        let s = RhoSolver::new(&m).unwrap();
        // slope 0.5 - cos(u)/2 vanishes at u = 0, which is the root for y = 0
        assert_eq!(s.rho(0.0).unwrap(), 0.0);
        assert!(matches!(s.rho_prime(0.0), Err(Error::DegenerateDerivative { .. })));
    }

    #[test]
    fn requires_positive_r() {
        let mut m = presets::trivial();
        m.r_coef = 0.0;
        assert!(matches!(RhoSolver::new(&m), Err(Error::RequiresPositiveR(_))));
    }

    #[test]
    fn residual_on_dense_sweep() {
        let s = RhoSolver::new(&presets::nonconvex()).unwrap();
        for i in 0..10_000 {
            let y = -20.0 + 40.0 * i as f64 / 9999.0;
            let u = s.rho(y).unwrap();
            assert!(s.residual(u, y).abs() <= s.tol(), "y = {y}");
        }
    }

    proptest! {
        #[test]
        fn residual_within_tolerance(y in -20.0f64..20.0) {
            let s = RhoSolver::new(&presets::nonconvex()).unwrap();
            let u = s.rho(y).unwrap();
            prop_assert!(s.residual(u, y).abs() <= s.tol());
        }

        #[test]
        fn derivative_matches_central_difference(y in -10.0f64..10.0) {
            let s = RhoSolver::new(&presets::nonconvex()).unwrap();
            let h = 1e-5;
            let fd = (s.rho(y + h).unwrap() - s.rho(y - h).unwrap()) / (2.0 * h);
            let d = s.rho_prime(y).unwrap();
            prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "{fd} vs {d}");
        }

        #[test]
        fn decreasing_with_bounded_slope(y1 in -10.0f64..10.0, gap in 1e-3f64..5.0) {
            // B + b' > 0 everywhere for this model, so rho is decreasing.
            let m = presets::nonconvex();
            let s = RhoSolver::new(&m).unwrap();
            prop_assert!(s.rho(y1 + gap).unwrap() < s.rho(y1).unwrap());
            let bd = m.b_fn.bounds().unwrap().d1;
            prop_assert!(s.rho_prime(y1).unwrap().abs() <= (m.b_coef.abs() + bd) / nonconvex_margin());
        }
    }
}

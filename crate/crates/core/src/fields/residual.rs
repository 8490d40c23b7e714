//! Pointwise residual of the `U`-equations evaluated at `U = 2P(t)x + 2F(t, x̂)`.
//!
//! With that ansatz `∂xU = 2P`, `∂x̂U = 2∂x̂F`, `∂x̂x̂U = 2∂x̂x̂F` and the mixed and pure
//! `x` second derivatives vanish. The averaged terms are taken on the diagonal
//! (`U(t, x̂, x̂)`), which for the particle equation means `x^{(N)} = x̂`.

use super::SpaceTimeField;
use crate::error::{Error, Result};
use crate::feedback::RhoSolver;
use crate::model::MfcModel;
use crate::riccati::{RiccatiCoeffs, TimeGridFn};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualVariant {
    MeanField,
    Particle(usize),
}

impl ResidualVariant {
    /// Coefficient `D` in front of `∂x̂x̂F`.
    pub fn diffusion(&self, model: &MfcModel) -> f64 {
        let common = model.sigma0 * model.sigma0;
        match *self {
            ResidualVariant::MeanField => common,
            ResidualVariant::Particle(n) => model.sigma * model.sigma / n as f64 + common,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub t: f64,
    pub x: f64,
    pub xhat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub samples: Vec<ResidualSample>,
    pub residuals: Vec<f64>,
    pub max_abs: f64,
}

/// Evaluates the residual at every sample.
///
/// `∂tF` uses the five-point central stencil on the field's time step and
/// `∂x̂F`, `∂x̂x̂F` the central stencils on its space step, so samples need two
/// time steps of room on each side and two cells of room in `x̂`. `Ṗ` is taken
/// from the Riccati right-hand side.
pub fn residual_u(
    model: &MfcModel,
    p: &TimeGridFn,
    field: &SpaceTimeField,
    samples: &[ResidualSample],
    variant: ResidualVariant,
) -> Result<ResidualReport> {
    if let ResidualVariant::Particle(0) = variant {
        return Err(Error::Ensemble("particle count N must be at least 1".into()));
    }
    let solver = RhoSolver::new(model)?;
    let riccati = RiccatiCoeffs::for_p(model)?;
    let d = variant.diffusion(model);
    let ht = field.dt();
    let hx = field.dx();
    let (lo, hi) = field.domain();
    let gain_b = model.gain() * model.b_coef;

    let mut residuals = Vec::with_capacity(samples.len());
    for s in samples {
        let tol = 1e-9 * ht;
        if s.t - 2.0 * ht < -tol || s.t + 2.0 * ht > field.horizon() + tol {
            return Err(Error::Domain(format!("residual sample t = {} needs two time steps of room", s.t)));
        }
        if s.xhat < lo + 2.0 * hx - 1e-9 * hx || s.xhat > hi - 2.0 * hx + 1e-9 * hx {
            return Err(Error::Domain(format!(
                "residual sample xhat = {} is within two cells of the boundary",
                s.xhat
            )));
        }
        let (t, x, xh) = (s.t, s.x, s.xhat);
        let f = field.eval(t, xh);
        let f_t = (-field.eval(t + 2.0 * ht, xh) + 8.0 * field.eval(t + ht, xh) - 8.0 * field.eval(t - ht, xh)
            + field.eval(t - 2.0 * ht, xh))
            / (12.0 * ht);
        let f_x = field.d_x(t, xh);
        let f_xx = field.d_xx(t, xh);

        let pt = p.eval(t);
        let p_dot = riccati.rate(pt);
        let k = solver.rho(pt * xh + f)?;
        let (a, a1, _) = model.a_fn.eval3(xh);
        let control_drift = model.b_coef * k + model.b_fn.value(k);

        let r = 2.0 * p_dot * x
            + 2.0 * f_t
            + 2.0 * pt * (model.a_coef * x + a - gain_b * pt * (x - xh) + control_drift)
            + 2.0 * f_x * (model.a_coef * xh + a + control_drift)
            + d * f_xx
            + 2.0 * model.q_coef * x
            + model.q_fn.d1(xh)
            + model.a_coef * (2.0 * pt * x + 2.0 * f)
            + a1 * (2.0 * pt * xh + 2.0 * f);
        residuals.push(r);
    }
    let max_abs = residuals.iter().fold(0.0, |m: f64, r| m.max(r.abs()));
    Ok(ResidualReport { samples: samples.to_vec(), residuals, max_abs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{lq_phi_oracle, solve_phi, PdeConfig};
    use crate::model::{presets, LqCoeffs};
    use crate::riccati::{solve_p, solve_pi};

    fn grid_samples(
        field: &SpaceTimeField,
        t_every: usize,
        x_every: usize,
        half_width: f64,
        center: f64,
    ) -> Vec<ResidualSample> {
        let mut out = Vec::new();
        for k in (2..=field.nt() - 2).step_by(t_every) {
            for j in (0..=field.nx()).step_by(x_every) {
                let xh = field.x_node(j);
                if (xh - center).abs() <= half_width {
                    out.push(ResidualSample { t: field.t_node(k), x: xh + 0.5, xhat: xh });
                }
            }
        }
        out
    }

    #[test]
    fn riccati_terms_cancel_without_coupling() {
        let mut m = presets::trivial();
        m.q_coef = 1.0;
        m.g_coef = 0.5;
        m.a_coef = 0.3;
        let p = solve_p(&m, 200).unwrap();
        let cfg = PdeConfig::new(-6.0, 6.0, 120, 200, 0.9).unwrap();
        let phi = solve_phi(&m, &p, &cfg).unwrap();
        let samples = grid_samples(&phi, 7, 5, 4.0, 0.0);
        let rep = residual_u(&m, &p, &phi, &samples, ResidualVariant::MeanField).unwrap();
        assert!(rep.max_abs <= 1e-10, "{}", rep.max_abs);
    }

    #[test]
    fn lq_oracle_has_tiny_residual() {
        let lq = LqCoeffs { a_bar: 0.2, b_bar: 0.5, q_bar: 0.5, r_bar: 0.5, g_bar: 0.5 };
        let m = presets::lq(lq);
        let p = solve_p(&m, 1000).unwrap();
        let pi = solve_pi(&m, &lq, 1000).unwrap();
        let oracle = lq_phi_oracle(&p, &pi, -6.0, 6.0, 200, m.sigma0 * m.sigma0).unwrap();
        let samples = grid_samples(&oracle, 37, 9, 4.0, 0.0);
        for variant in [ResidualVariant::MeanField, ResidualVariant::Particle(5)] {
            let rep = residual_u(&m, &p, &oracle, &samples, variant).unwrap();
            assert!(rep.max_abs <= 1e-8, "{variant:?}: {}", rep.max_abs);
        }
    }

    #[test]
    fn samples_near_edges_are_rejected() {
        let m = presets::trivial();
        let p = solve_p(&m, 20).unwrap();
        let cfg = PdeConfig::new(-1.0, 1.0, 20, 20, 0.9).unwrap();
        let phi = solve_phi(&m, &p, &cfg).unwrap();
        let bad_t = [ResidualSample { t: 1.0, x: 0.0, xhat: 0.0 }];
        let bad_x = [ResidualSample { t: 0.5, x: 0.0, xhat: 0.95 }];
        assert!(matches!(residual_u(&m, &p, &phi, &bad_t, ResidualVariant::MeanField), Err(Error::Domain(_))));
        assert!(matches!(residual_u(&m, &p, &phi, &bad_x, ResidualVariant::MeanField), Err(Error::Domain(_))));
    }
}

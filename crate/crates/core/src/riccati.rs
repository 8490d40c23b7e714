//! Backward solvers for the scalar Riccati equations
//!
//! ```text
//! P' + 2A P + Q − R⁻¹B² P² = 0,                         P(T) = G
//! Π' + 2(A+Ā) Π + Q+Q̄ − (R+R̄)⁻¹(B+B̄)² Π² = 0,          Π(T) = G+Ḡ
//! ```
//!
//! Both are integrated with the classical fourth-order Runge–Kutta scheme on a
//! uniform grid, backward from the terminal value.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{LqCoeffs, MfcModel};

/// Coefficients of `P' = −(2αP + β − γP²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiCoeffs {
    pub linear: f64,
    pub constant: f64,
    pub quadratic: f64,
    pub terminal: f64,
}

impl RiccatiCoeffs {
    pub fn for_p(model: &MfcModel) -> Result<Self> {
        model.require_positive_r()?;
        Ok(RiccatiCoeffs {
            linear: model.a_coef,
            constant: model.q_coef,
            quadratic: model.b_coef * model.b_coef / model.r_coef,
            terminal: model.g_coef,
        })
    }

    pub fn for_pi(model: &MfcModel, lq: &LqCoeffs) -> Result<Self> {
        let r_tot = model.r_coef + lq.r_bar;
        if r_tot <= 0.0 {
            return Err(Error::InvalidModel(format!("R + R̄ must be positive, got {r_tot}")));
        }
        let q_tot = model.q_coef + lq.q_bar;
        let g_tot = model.g_coef + lq.g_bar;
        if q_tot < 0.0 || g_tot < 0.0 {
            return Err(Error::InvalidModel(format!("need Q + Q̄ >= 0 and G + Ḡ >= 0 (got {q_tot}, {g_tot})")));
        }
        let b_tot = model.b_coef + lq.b_bar;
        Ok(RiccatiCoeffs {
            linear: model.a_coef + lq.a_bar,
            constant: q_tot,
            quadratic: b_tot * b_tot / r_tot,
            terminal: g_tot,
        })
    }

    /// Time derivative `dP/dt` at value `p`.
    #[inline]
    pub fn rate(&self, p: f64) -> f64 {
        -(2.0 * self.linear * p + self.constant - self.quadratic * p * p)
    }
}

/// Values on the uniform grid `t_k = k·T/K`, `k = 0..=K`, with linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGridFn {
    horizon: f64,
    values: Vec<f64>,
}

impl TimeGridFn {
    pub fn new(horizon: f64, values: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0) || values.len() < 2 {
            return Err(Error::Grid(format!(
                "need T > 0 and at least two nodes (T = {horizon}, {} nodes)",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let t = horizon * k as f64 / (values.len() - 1) as f64;
            return Err(Error::NonFinite { what: "time grid function", t });
        }
        Ok(TimeGridFn { horizon, values })
    }

    pub fn constant(horizon: f64, steps: usize, value: f64) -> Self {
        TimeGridFn { horizon, values: vec![value; steps + 1] }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps() {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps() as f64
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.steps();
        if t >= self.horizon {
            return self.values[k];
        }
        if t <= 0.0 {
            return self.values[0];
        }
        let s = t / self.horizon * k as f64;
        let i = (s.floor() as usize).min(k - 1);
        let w = s - i as f64;
        if w == 0.0 {
            self.values[i]
        } else {
            self.values[i] + w * (self.values[i + 1] - self.values[i])
        }
    }

    /// Pointwise map, e.g. to scale a gain for a deliberately suboptimal feedback.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        TimeGridFn { horizon: self.horizon, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Integrates `P' = coeffs.rate(P)` backward from `P(T)` with RK4.
pub fn solve_backward(coeffs: &RiccatiCoeffs, horizon: f64, steps: usize) -> Result<TimeGridFn> {
    if steps < 10 {
        return Err(Error::Grid(format!("Riccati solve needs K >= 10, got {steps}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Grid(format!("horizon must be positive, got {horizon}")));
    }
    let h = horizon / steps as f64;
    let mut values = vec![0.0; steps + 1];
    values[steps] = coeffs.terminal;
    let mut p = coeffs.terminal;
    for k in (0..steps).rev() {
        // backward step: dP/ds = −rate(P) with s = T − t
        let k1 = coeffs.rate(p);
        let k2 = coeffs.rate(p - 0.5 * h * k1);
        let k3 = coeffs.rate(p - 0.5 * h * k2);
        let k4 = coeffs.rate(p - h * k3);
        p -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !p.is_finite() {
            return Err(Error::BlowUp { t: horizon * k as f64 / steps as f64 });
        }
        values[k] = p;
    }
    Ok(TimeGridFn { horizon, values })
}

/// `P` of the mean-field and particle problems.
pub fn solve_p(model: &MfcModel, steps: usize) -> Result<TimeGridFn> {
    solve_backward(&RiccatiCoeffs::for_p(model)?, model.horizon, steps)
}

/// `Π` of the LQ special case.
pub fn solve_pi(model: &MfcModel, lq: &LqCoeffs, steps: usize) -> Result<TimeGridFn> {
    model.require_positive_r()?;
    solve_backward(&RiccatiCoeffs::for_pi(model, lq)?, model.horizon, steps)
}

/// CSV with columns `t,P` (and `Pi` when given). Both must share the grid.
pub fn write_csv<W: Write>(out: W, p: &TimeGridFn, pi: Option<&TimeGridFn>) -> Result<()> {
    if let Some(pi) = pi {
        if pi.steps() != p.steps() || pi.horizon() != p.horizon() {
            return Err(Error::Grid("P and Pi grids differ".into()));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    if pi.is_some() {
        w.write_record(["t", "P", "Pi"])?;
    } else {
        w.write_record(["t", "P"])?;
    }
    for k in 0..=p.steps() {
        let t = p.time(k).to_string();
        let pv = p.values()[k].to_string();
        match pi {
            Some(pi) => w.write_record([t, pv, pi.values()[k].to_string()])?,
            None => w.write_record([t, pv])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    fn closed_form_model() -> MfcModel {
        let mut m = presets::trivial();
        m.g_coef = 2.0;
        m
    }

    #[test]
    fn separable_closed_form() {
        let p = solve_p(&closed_form_model(), 1000).unwrap();
        let err = (0..=1000)
            .map(|k| {
                let t = p.time(k);
                (p.values()[k] - 2.0 / (1.0 + 2.0 * (1.0 - t))).abs()
            })
            .fold(0.0, f64::max);
        assert!(err <= 1e-9, "max node error {err:e}");
        assert!((p.eval(0.0) - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(p.eval(1.0), 2.0);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let p = solve_p(&presets::trivial(), 100).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_case_closed_form() {
        let mut m = presets::trivial();
        m.b_coef = 0.0;
        m.g_coef = 1.0;
        m.a_coef = 0.5;
        let p = solve_p(&m, 1000).unwrap();
        for k in 0..=1000 {
            let t = p.time(k);
            assert!((p.values()[k] - (1.0 - t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn pi_collapses_to_p_without_barred_terms() {
        let m = presets::nonconvex();
        let p = solve_p(&m, 200).unwrap();
        let pi = solve_pi(&m, &LqCoeffs::default(), 200).unwrap();
        assert_eq!(p, pi);
    }

    #[test]
    fn pi_closed_form() {
        let mut m = presets::trivial();
        m.b_coef = 0.5;
        m.r_coef = 0.5;
        m.g_coef = 1.0;
        let lq = LqCoeffs { b_bar: 0.5, r_bar: 0.5, g_bar: 1.0, ..Default::default() };
        let pi = solve_pi(&m, &lq, 1000).unwrap();
        for k in 0..=1000 {
            let t = pi.time(k);
            assert!((pi.values()[k] - 2.0 / (1.0 + 2.0 * (1.0 - t))).abs() < 1e-9);
        }
        let zero = solve_pi(&presets::trivial(), &LqCoeffs::default(), 50).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fourth_order_refinement() {
        let mut m = presets::trivial();
        m.a_coef = 1.0;
        m.q_coef = 2.0;
        m.b_coef = 2.0;
        m.r_coef = 0.5;
        m.g_coef = 3.0;
        let reference = solve_p(&m, 1_000_000).unwrap();
        let err = |k: usize| {
            let p = solve_p(&m, k).unwrap();
            (0..=k).map(|i| (p.values()[i] - reference.eval(p.time(i))).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(250), err(500));
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order} ({e1:e} -> {e2:e})");
    }

    #[test]
    fn nonnegative_for_nonnegative_weights() {
        for (q, g, a) in [(0.0, 0.0, -1.0), (1.0, 0.0, 2.0), (0.0, 3.0, -3.0), (5.0, 5.0, 0.0)] {
            let mut m = presets::trivial();
            m.q_coef = q;
            m.g_coef = g;
            m.a_coef = a;
            let p = solve_p(&m, 200).unwrap();
            assert!(p.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn blow_up_is_reported() {
        // negative quadratic coefficient (B² / R with R < 0 is rejected, so force it)
        let coeffs = RiccatiCoeffs { linear: 0.0, constant: 0.0, quadratic: -1.0, terminal: 10.0 };
        let err = solve_backward(&coeffs, 5.0, 100).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }), "{err}");
        assert!(solve_p(
            &{
                let mut m = presets::trivial();
                m.r_coef = 0.0;
                m
            },
            100
        )
        .is_err());
        assert!(solve_p(&presets::trivial(), 5).is_err());
    }

    #[test]
    fn interpolation_hits_nodes_and_terminal() {
        let p = solve_p(&closed_form_model(), 40).unwrap();
        for k in 0..=40 {
            assert_eq!(p.eval(p.time(k)), p.values()[k]);
        }
        assert_eq!(p.eval(2.0), 2.0);
        let mid = p.eval(0.5 * (p.time(3) + p.time(4)));
        assert!((mid - 0.5 * (p.values()[3] + p.values()[4])).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let p = solve_p(&closed_form_model(), 10).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &p, Some(&p)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,P,Pi"));
        assert_eq!(text.lines().count(), 12);
        assert!(text.lines().last().unwrap().starts_with("1,2,2"));
    }
}

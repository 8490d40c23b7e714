//! Sampled checks of the standing assumptions (A1)–(A4).
//!
//! The checks scan finite grids; they report margins and witnesses rather than
//! proving anything.

use std::io::Write;

use super::MfcModel;
use crate::error::Result;
use crate::riccati::TimeGridFn;

/// Sampling grid for the (A3)/(A4) scans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGrid {
    pub u_range: (f64, f64),
    pub y_range: (f64, f64),
    pub points: usize,
    /// Lower bound `ε₀` required of the (A3) margin.
    pub eps0: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        ScanGrid { u_range: (-10.0, 10.0), y_range: (-10.0, 10.0), points: 2001, eps0: 1e-3 }
    }
}

fn linspace(range: (f64, f64), n: usize) -> impl Iterator<Item = f64> {
    let (lo, hi) = range;
    let n = n.max(2);
    (0..n).map(move |i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionEntry {
    pub name: &'static str,
    pub pass: bool,
    /// Worst observed margin; negative (or below `ε₀` for A3) means violated.
    pub margin: f64,
    /// Sample point attaining the worst margin.
    pub witness: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub entries: Vec<AssumptionEntry>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["assumption", "pass", "margin", "witness", "detail"])?;
        for e in &self.entries {
            let witness = e.witness.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([e.name, if e.pass { "PASS" } else { "FAIL" }, &e.margin.to_string(), &witness, &e.detail])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tolerance below zero still accepted for the sign conditions of (A1)/(A4).
const SIGN_TOL: f64 = 1e-12;

fn check_a1(model: &MfcModel) -> AssumptionEntry {
    let signs = [
        ("sigma0", model.sigma0),
        ("sigma", model.sigma),
        ("Q", model.q_coef),
        ("R", model.r_coef),
        ("G", model.g_coef),
    ];
    let (worst_name, worst) =
        signs.iter().copied().fold(("", f64::INFINITY), |acc, (n, v)| if v < acc.1 { (n, v) } else { acc });
    let unbounded: Vec<&str> =
        model.coupling_fns().iter().filter(|(_, f)| f.bounds().is_none()).map(|(n, _)| *n).collect();
    let signs_ok = worst >= -SIGN_TOL && model.sigma0 > 0.0;
    let pass = signs_ok && unbounded.is_empty();
    let detail = if !unbounded.is_empty() {
        format!("oracle-only (unbounded) coupling functions: {}", unbounded.join(","))
    } else if !signs_ok {
        format!("{worst_name} = {worst} violates the sign condition")
    } else {
        format!("smallest of sigma0, sigma, Q, R, G is {worst_name}")
    };
    AssumptionEntry {
        name: "A1",
        pass,
        margin: if unbounded.is_empty() { worst } else { f64::NEG_INFINITY },
        witness: Vec::new(),
        detail,
    }
}

fn check_a2(model: &MfcModel) -> AssumptionEntry {
    let m2 = model.init.second_moment();
    AssumptionEntry {
        name: "A2",
        pass: m2.is_finite(),
        margin: m2,
        witness: Vec::new(),
        detail: format!("{:?} initial law, E[xi^2] = {m2}", model.init.kind),
    }
}

fn check_a3(model: &MfcModel, grid: &ScanGrid) -> AssumptionEntry {
    let mut worst = (f64::INFINITY, 0.0, 0.0);
    for u in linspace(grid.u_range, grid.points) {
        let base = model.r_coef + 0.5 * model.r_fn.d2(u);
        let curv = model.b_fn.d2(u);
        for y in linspace(grid.y_range, grid.points) {
            let m = (base + y * curv).abs();
            if m < worst.0 {
                worst = (m, u, y);
            }
        }
    }
    AssumptionEntry {
        name: "A3",
        pass: worst.0 >= grid.eps0,
        margin: worst.0,
        witness: vec![worst.1, worst.2],
        detail: format!("min |R + r''(u)/2 + y b''(u)| over grid, eps0 = {}", grid.eps0),
    }
}

fn check_a4(model: &MfcModel, grid: &ScanGrid, p: &TimeGridFn) -> AssumptionEntry {
    let rinv_b = model.gain();
    let b = model.b_coef;
    let mut worst = (f64::INFINITY, 0.0, 0.0, "");
    for u in linspace(grid.u_range, grid.points) {
        let ad = model.a_fn.d1(u);
        let bd = model.b_fn.d1(u);
        let second = b * b + b * bd;
        if second < worst.0 {
            worst = (second, f64::NAN, u, "B^2 + B b'(u)");
        }
        for (k, &pk) in p.values().iter().enumerate() {
            let first = ad * pk - rinv_b * bd * pk * pk;
            if first < worst.0 {
                worst = (first, p.time(k), u, "a'(u) P(t) - R^-1 B b'(u) P(t)^2");
            }
        }
    }
    let witness = if worst.1.is_nan() { vec![worst.2] } else { vec![worst.1, worst.2] };
    AssumptionEntry {
        name: "A4",
        pass: worst.0 >= -SIGN_TOL,
        margin: worst.0,
        witness,
        detail: format!("worst term: {}", worst.3),
    }
}

/// Scans (A1)–(A4) on the given grid. `p` is the solved Riccati function (needed for (A4)).
///
/// Fails hard with [`crate::Error::RequiresPositiveR`] when `R ≤ 0`.
pub fn validate_assumptions(model: &MfcModel, grid: &ScanGrid, p: &TimeGridFn) -> Result<AssumptionReport> {
    model.require_positive_r()?;
    Ok(AssumptionReport {
        entries: vec![check_a1(model), check_a2(model), check_a3(model, grid), check_a4(model, grid, p)],
    })
}

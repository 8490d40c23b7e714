//! Rate studies over a ladder of particle counts and log-log fits of the results.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::SpaceTimeField;
use crate::sim::stats::{mean_stderr, pairwise_sum, sup};
use crate::sim::{
    gap_sample, particle_cost, simulate_decentralized, simulate_particles, simulate_xhat, ClosedLoop, NoisePlan,
    TrajectorySet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    /// `E sup |x^{(N),*} − x̂|²`, decentralized average against the conditional mean.
    XnVsXhat,
    /// `E sup |x̄^{(N)} − x̂|²`.
    XbarnVsXhat,
    /// `E sup |Φ − Ψ_N|²` along `x̄^{(N)}`.
    FieldGap,
    /// `E sup |k_Φ − k_Ψ|²` along `x̄^{(N)}`.
    ControlGap,
    /// `E (1/N) Σ sup |x*_i − x̄_i|²` on shared streams.
    Chaos,
    /// `|E 𝒥(u*) − E 𝒥(ū)|`.
    CostGap,
    /// Signed shared-trajectory estimate of `V − V^N`.
    ValueGap,
    /// `E (1/N) Σ sup |x̄_i|²`.
    Moment,
}

impl Quantity {
    pub const ALL: [Quantity; 8] = [
        Quantity::XnVsXhat,
        Quantity::XbarnVsXhat,
        Quantity::FieldGap,
        Quantity::ControlGap,
        Quantity::Chaos,
        Quantity::CostGap,
        Quantity::ValueGap,
        Quantity::Moment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::XnVsXhat => "XN_VS_XHAT",
            Quantity::XbarnVsXhat => "XBARN_VS_XHAT",
            Quantity::FieldGap => "FIELD_GAP",
            Quantity::ControlGap => "CONTROL_GAP",
            Quantity::Chaos => "CHAOS",
            Quantity::CostGap => "COST_GAP",
            Quantity::ValueGap => "VALUE_GAP",
            Quantity::Moment => "MOMENT",
        }
    }

    /// Acceptance band for the fitted slope.
    pub fn band(self) -> RateBand {
        let around = |rate: f64| RateBand {
            lo: rate - 0.35,
            hi: rate + 0.35,
            min_r2: None,
            max_variation: None,
            monotone: false,
        };
        match self {
            Quantity::XnVsXhat | Quantity::Chaos => around(-1.0),
            Quantity::XbarnVsXhat => RateBand { min_r2: Some(0.9), ..around(-1.0) },
            Quantity::FieldGap | Quantity::ControlGap => RateBand { lo: -2.5, hi: -1.5, ..around(-2.0) },
            Quantity::CostGap => RateBand { lo: f64::NEG_INFINITY, hi: -0.4, monotone: true, ..around(-0.5) },
            Quantity::ValueGap => RateBand { lo: -1.5, hi: -0.6, ..around(-1.0) },
            Quantity::Moment => RateBand { lo: -0.1, hi: 0.1, max_variation: Some(0.15), ..around(0.0) },
        }
    }

    /// Whether the study needs `Ψ_N` (the optimal particle system).
    pub fn needs_psi(self) -> bool {
        self != Quantity::XnVsXhat
    }

    fn needs_decentralized(self) -> bool {
        matches!(self, Quantity::XnVsXhat | Quantity::Chaos | Quantity::CostGap)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown quantity {s:?}")))
    }
}

impl serde::Serialize for Quantity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for Quantity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Pass rule of a rate study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBand {
    pub lo: f64,
    pub hi: f64,
    pub min_r2: Option<f64>,
    /// Largest allowed `max/min − 1` of the errors across the ladder.
    pub max_variation: Option<f64>,
    /// Adjacent errors must not increase by more than two combined standard errors.
    pub monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub error: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Rows that entered the fit.
    pub used: usize,
}

/// Ordinary least squares of `log₂ error` on `log₂ N`. Rows with a non-positive error are
/// dropped with a warning.
pub fn fit_loglog(rows: &[(f64, f64)]) -> Result<LogLogFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|&&(n, e)| {
            let keep = n > 0.0 && e > 0.0 && e.is_finite();
            if !keep {
                log::warn!("dropping row (N = {n}, error = {e}) from the log-log fit");
            }
            keep
        })
        .map(|&(n, e)| (n.log2(), e.log2()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!("need at least two positive rows, have {}", pts.len())));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all rows share the same N".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= f64::EPSILON {
        1.0
    } else {
        0.0
    };
    Ok(LogLogFit { slope, intercept, r2, used: pts.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub quantity: Quantity,
    /// Sorted by `N`.
    pub rows: Vec<RateRow>,
    /// Present only when at least three rows have a positive error.
    pub fit: Option<LogLogFit>,
    /// Every error is exactly zero; the study carries no rate information.
    pub degenerate: bool,
    /// `N` values at which the error grew by more than two combined standard errors.
    pub monotone_violations: Vec<usize>,
    pub seed: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail(String),
    /// Degenerate study, excluded from pass/fail.
    Excluded,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "true",
            Verdict::Fail(_) => "false",
            Verdict::Excluded => "excluded",
        }
    }
}

impl RateReport {
    pub fn new(quantity: Quantity, mut rows: Vec<RateRow>, seed: u64, digest: &str) -> Self {
        rows.sort_by_key(|r| r.n);
        let degenerate = !rows.is_empty() && rows.iter().all(|r| r.error == 0.0);
        let positive = rows.iter().filter(|r| r.error > 0.0).count();
        let fit = if !degenerate && positive >= 3 {
            fit_loglog(&rows.iter().map(|r| (r.n as f64, r.error)).collect::<Vec<_>>()).ok()
        } else {
            None
        };
        let monotone_violations = rows
            .windows(2)
            .filter(|w| {
                let tol = 2.0 * w[0].stderr.hypot(w[1].stderr);
                w[1].error > w[0].error + if tol.is_finite() { tol } else { 0.0 }
            })
            .map(|w| w[1].n)
            .collect();
        RateReport { quantity, rows, fit, degenerate, monotone_violations, seed, digest: digest.to_string() }
    }

    /// `max/min − 1` of the errors.
    pub fn variation(&self) -> f64 {
        let lo = self.rows.iter().map(|r| r.error).fold(f64::INFINITY, f64::min);
        let hi = self.rows.iter().map(|r| r.error).fold(f64::NEG_INFINITY, f64::max);
        hi / lo - 1.0
    }

    pub fn verdict(&self) -> Verdict {
        if self.degenerate {
            return Verdict::Excluded;
        }
        let Some(fit) = self.fit else {
            return Verdict::Fail(format!("{}: slope undefined with {} usable rows", self.quantity, self.rows.len()));
        };
        let band = self.quantity.band();
        let mut why = Vec::new();
        if !(fit.slope >= band.lo && fit.slope <= band.hi) {
            why.push(format!("slope {:.3} outside [{}, {}]", fit.slope, band.lo, band.hi));
        }
        if let Some(min) = band.min_r2 {
            if !(fit.r2 >= min) {
                why.push(format!("r² {:.3} below {min}", fit.r2));
            }
        }
        if let Some(max) = band.max_variation {
            let v = self.variation();
            if !(v <= max) {
                why.push(format!("variation {:.3} above {max}", v));
            }
        }
        if band.monotone && !self.monotone_violations.is_empty() {
            why.push(format!("error increases at N = {:?}", self.monotone_violations));
        }
        if why.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail(format!("{}: {}", self.quantity, why.join("; ")))
        }
    }
}

/// Per-path samples of every quantity at one `N`.
#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    values: [f64; 8],
}

fn index(q: Quantity) -> usize {
    Quantity::ALL.iter().position(|&x| x == q).expect("listed")
}

fn sup_sq_gap(a: &[f64], b: &[f64]) -> f64 {
    sup(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
}

fn particle_mean(set: &TrajectorySet, f: impl Fn(usize) -> f64) -> f64 {
    let v: Vec<f64> = (0..set.len()).map(f).collect();
    pairwise_sum(&v) / set.len() as f64
}

/// Runs the requested rate studies on `paths` common paths per ladder point.
///
/// For every common path the conditional mean `x̂` is simulated once; at each `N` the
/// optimal particle system and the decentralized system then share the same streams.
/// `psi` must hold `Ψ_N` for every ladder point when any quantity other than
/// `XN_VS_XHAT` is requested.
#[allow(clippy::too_many_arguments)]
pub fn rate_study(
    quantities: &[Quantity],
    cl: &ClosedLoop,
    phi: &SpaceTimeField,
    psi: &BTreeMap<usize, SpaceTimeField>,
    ladder: &[usize],
    paths: usize,
    plan: &NoisePlan,
    digest: &str,
) -> Result<Vec<RateReport>> {
    if quantities.is_empty() {
        return Ok(Vec::new());
    }
    if paths < 2 {
        return Err(Error::Ensemble(format!("rate studies need at least two common paths, got {paths}")));
    }
    let mut ladder = ladder.to_vec();
    ladder.sort_unstable();
    ladder.dedup();
    if ladder.is_empty() || ladder[0] == 0 {
        return Err(Error::Ensemble("the N ladder must be non-empty with every N >= 1".into()));
    }
    let want_particles = quantities.iter().any(|q| q.needs_psi());
    let want_dec = quantities.iter().any(|q| q.needs_decentralized());
    if want_particles {
        if let Some(n) = ladder.iter().find(|n| !psi.contains_key(n)) {
            return Err(Error::Ensemble(format!("Ψ has not been solved for N = {n}")));
        }
    }

    let xhats =
        (0..paths as u64).into_par_iter().map(|m| simulate_xhat(cl, phi, plan, m)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..ladder.len()).flat_map(|i| (0..paths).map(move |m| (i, m))).collect();
    let cells: Vec<Cell> = jobs
        .into_par_iter()
        .map(|(i, m)| {
            let n = ladder[i];
            let xhat = &xhats[m];
            let w0 = m as u64;
            let mut cell = Cell::default();
            let dec = if want_dec { Some(simulate_decentralized(cl, xhat, n, plan, w0)?) } else { None };
            if let Some(d) = &dec {
                let xn: Vec<f64> = (0..d.times.len()).map(|k| d.state_mean(k)).collect();
                cell.values[index(Quantity::XnVsXhat)] = sup_sq_gap(&xn, &xhat.x);
            }
            if want_particles {
                let field = &psi[&n];
                let set = simulate_particles(cl, field, n, plan, w0)?;
                cell.values[index(Quantity::XbarnVsXhat)] = sup_sq_gap(&set.shared, &xhat.x);
                let gap = gap_sample(cl, phi, field, &set)?;
                cell.values[index(Quantity::FieldGap)] = gap.field_gap_sq;
                cell.values[index(Quantity::ControlGap)] = gap.control_gap_sq;
                cell.values[index(Quantity::ValueGap)] = gap.value_gap;
                cell.values[index(Quantity::Moment)] =
                    particle_mean(&set, |j| sup(set.paths[j].x.iter().map(|x| x * x)));
                if let Some(d) = &dec {
                    cell.values[index(Quantity::Chaos)] =
                        particle_mean(&set, |j| sup_sq_gap(&d.paths[j].x, &set.paths[j].x));
                    cell.values[index(Quantity::CostGap)] =
                        particle_cost(cl.model, d)? - particle_cost(cl.model, &set)?;
                }
            }
            Ok(cell)
        })
        .collect::<Result<_>>()?;

    Ok(quantities
        .iter()
        .map(|&q| {
            let rows = ladder
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let samples: Vec<f64> =
                        cells[i * paths..(i + 1) * paths].iter().map(|c| c.values[index(q)]).collect();
                    let (m, se) = mean_stderr(&samples);
                    let error = if q == Quantity::CostGap { m.abs() } else { m };
                    RateRow { n, error, stderr: se }
                })
                .collect();
            RateReport::new(q, rows, plan.seed(), digest)
        })
        .collect())
}

/// CSV with columns `quantity, N, error, stderr`.
pub fn write_report_csv<W: Write>(out: W, report: &RateReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "N", "error", "stderr"])?;
    for r in &report.rows {
        w.write_record([
            report.quantity.name().to_string(),
            r.n.to_string(),
            r.error.to_string(),
            r.stderr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `quantity, slope, r2, pass_band_lo, pass_band_hi, pass`.
pub fn write_summary_csv<W: Write>(out: W, reports: &[RateReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "slope", "r2", "pass_band_lo", "pass_band_hi", "pass"])?;
    for r in reports {
        let band = r.quantity.band();
        let (slope, r2) = match r.fit {
            Some(f) => (f.slope.to_string(), f.r2.to_string()),
            None => ("undefined".to_string(), "undefined".to_string()),
        };
        w.write_record([
            r.quantity.name().to_string(),
            slope,
            r2,
            band.lo.to_string(),
            band.hi.to_string(),
            r.verdict().label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two whitespace-separated columns `log2(N) log2(error)`, positive errors only.
pub fn write_plot_dat<W: Write>(mut out: W, report: &RateReport) -> Result<()> {
    writeln!(out, "# {} log2(N) log2(error)", report.quantity)?;
    for r in report.rows.iter().filter(|r| r.error > 0.0) {
        writeln!(out, "{} {}", (r.n as f64).log2(), r.error.log2())?;
    }
    Ok(())
}

//! Command-line driver. Every subcommand reads a JSON [`RunConfig`], writes CSV files
//! into the output directory and maps the outcome to an exit code:
//! 0 pass, 1 config error, 2 assumption failure, 3 numerical failure, 4 acceptance failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::convergence::{rate_study, write_plot_dat, write_report_csv, write_summary_csv, Verdict};
use crate::error::{Error, Result};
use crate::fields::{
    decode_field, encode_field, lq_phi_oracle, residual_u, solve_phi, solve_psi, PdeConfig, ResidualSample,
    ResidualVariant, SpaceTimeField,
};
use crate::model::{validate_assumptions, AssumptionEntry, AssumptionReport, MfcModel, ScanGrid};
use crate::riccati::{self, solve_p, solve_pi, TimeGridFn};
use crate::sim::{
    cost_mf, cost_particles, gateaux_check, simulate_decentralized, simulate_mf_ensemble, simulate_particles,
    simulate_xhat, value_gap, vn_gradient_check, write_estimates_csv, write_trajectories_csv, ClosedLoop,
    EnsembleConfig, Estimate, NoisePlan,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mfc", version, about = "Mean field control solvers, particle simulation and rate studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Multiplies P in the feedback laws (optimality contrast runs only).
    #[arg(long = "debug-scale-P", global = true)]
    pub debug_scale_p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the structural assumptions and write assumptions.csv.
    Validate,
    /// Solve the Riccati equations and write riccati.csv.
    Riccati,
    /// Solve Φ and Ψ_N, write the fields and the residual check.
    Fields,
    /// Simulate the closed-loop systems and estimate costs.
    Simulate,
    /// Gâteaux derivatives of the cost at the feedback control.
    Optimality,
    /// Convergence-rate studies over the N ladder.
    Rates,
    /// Shared-trajectory estimate of V − V^N.
    ValueGap,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::RequiresPositiveR(_) => EXIT_ASSUMPTION,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json_slice(&bytes)?;
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(scale) = cli.debug_scale_p {
        if cli.command != Command::Optimality {
            return Err(Error::Config("--debug-scale-P only applies to the optimality command".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("--debug-scale-P must be positive, got {scale}")));
        }
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output));
    fs::create_dir_all(&out)?;
    let ctx = Context { digest: cfg.digest(), model: cfg.model(), cfg, out, p_scale: cli.debug_scale_p.unwrap_or(1.0) };
    log::info!("{:?}: digest {} seed {}", cli.command, ctx.digest, ctx.cfg.sim.seed);
    pool.install(|| match cli.command {
        Command::Validate => cmd_validate(&ctx),
        Command::Riccati => cmd_riccati(&ctx),
        Command::Fields => cmd_fields(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Optimality => cmd_optimality(&ctx),
        Command::Rates => cmd_rates(&ctx),
        Command::ValueGap => cmd_value_gap(&ctx),
    })
}

struct Context {
    cfg: RunConfig,
    model: MfcModel,
    digest: String,
    out: PathBuf,
    p_scale: f64,
}

impl Context {
    /// Writes `name` with a `# digest=… seed=…` first line followed by `body`.
    fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "# digest={} seed={}", self.digest, self.cfg.sim.seed)?;
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    fn riccati(&self) -> Result<TimeGridFn> {
        self.model.require_positive_r()?;
        solve_p(&self.model, self.cfg.grids.k)
    }

    fn pde(&self, p: &TimeGridFn) -> Result<PdeConfig> {
        let (lo, hi) = match self.cfg.grids.domain {
            Some([lo, hi]) => (lo, hi),
            None => PdeConfig::default_domain(&self.model, p)?,
        };
        PdeConfig::new(lo, hi, self.cfg.grids.nx, self.cfg.pde_steps(), self.cfg.grids.cfl_safety)
    }

    fn plan(&self) -> Result<NoisePlan> {
        NoisePlan::new(self.cfg.sim.seed, self.cfg.sde_steps(), self.model.horizon)
    }

    /// `Ψ_N` from `out/cache/{digest}_N{n}.bin`, solving and storing it on a miss.
    fn psi(&self, p: &TimeGridFn, pde: &PdeConfig, n: usize) -> Result<SpaceTimeField> {
        let dir = self.out.join("cache");
        let path = dir.join(format!("{}_N{n}.bin", self.digest));
        if let Ok(bytes) = fs::read(&path) {
            match decode_field(&bytes) {
                Ok(field) => return Ok(field),
                Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
            }
        }
        let field = solve_psi(&self.model, p, pde, n)?;
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{}_N{n}.bin.tmp{}", self.digest, std::process::id()));
        fs::write(&tmp, encode_field(&field))?;
        fs::rename(&tmp, &path)?;
        Ok(field)
    }

    fn psi_ladder(&self, p: &TimeGridFn, pde: &PdeConfig, ns: &[usize]) -> Result<BTreeMap<usize, SpaceTimeField>> {
        let mut ns = ns.to_vec();
        ns.sort_unstable();
        ns.dedup();
        ns.par_iter().map(|&n| Ok((n, self.psi(p, pde, n)?))).collect()
    }
}

fn cmd_validate(ctx: &Context) -> Result<i32> {
    let report = if ctx.model.r_coef > 0.0 {
        let p = solve_p(&ctx.model, ctx.cfg.grids.k)?;
        validate_assumptions(&ctx.model, &ScanGrid::default(), &p)?
    } else {
        AssumptionReport {
            entries: vec![AssumptionEntry {
                name: "R>0",
                pass: false,
                margin: ctx.model.r_coef,
                witness: Vec::new(),
                detail: "the feedback map and the decoupling field need R > 0".into(),
            }],
        }
    };
    ctx.write("assumptions.csv", |w| report.write_csv(w))?;
    for e in report.entries.iter().filter(|e| !e.pass) {
        log::warn!("{} fails: {} (margin {:e})", e.name, e.detail, e.margin);
    }
    Ok(if report.all_pass() { EXIT_OK } else { EXIT_ASSUMPTION })
}

fn cmd_riccati(ctx: &Context) -> Result<i32> {
    let p = ctx.riccati()?;
    let pi = match ctx.model.lq_coeffs() {
        Some(lq) => Some(solve_pi(&ctx.model, &lq, ctx.cfg.grids.k)?),
        None => None,
    };
    ctx.write("riccati.csv", |w| riccati::write_csv(w, &p, pi.as_ref()))?;
    log::info!("P(0) = {}, max |P| = {}", p.values()[0], p.max_abs());
    Ok(EXIT_OK)
}

/// Diagonal samples `x = x̂` on interior nodes of the residual window.
fn residual_samples(ctx: &Context, field: &SpaceTimeField) -> Vec<ResidualSample> {
    let [lo, hi] = ctx.cfg.grids.residual_window.unwrap_or([ctx.model.init.mean - 3.0, ctx.model.init.mean + 3.0]);
    let (nt, nx) = (field.nt(), field.nx());
    if nt < 5 {
        return Vec::new();
    }
    let t_stride = ((nt - 4) / 10).max(1);
    let xs: Vec<f64> = (2..=nx - 2).map(|j| field.x_node(j)).filter(|x| (lo..=hi).contains(x)).collect();
    let x_stride = (xs.len() / 40).max(1);
    let mut out = Vec::new();
    for k in (2..=nt - 2).step_by(t_stride) {
        for &x in xs.iter().step_by(x_stride) {
            out.push(ResidualSample { t: field.t_node(k), x, xhat: x });
        }
    }
    out
}

fn cmd_fields(ctx: &Context) -> Result<i32> {
    let p = ctx.riccati()?;
    let pde = ctx.pde(&p)?;
    let phi = solve_phi(&ctx.model, &p, &pde)?;
    let n = ctx.cfg.sim.n;
    let psi = ctx.psi(&p, &pde, n)?;
    let (ts, xs) = (ctx.cfg.grids.csv_t_stride, ctx.cfg.grids.csv_x_stride);
    ctx.write("field_phi.csv", |w| phi.write_csv(w, ts, xs))?;
    ctx.write(&format!("field_psi_N{n}.csv"), |w| psi.write_csv(w, ts, xs))?;

    let samples = residual_samples(ctx, &phi);
    let res_phi = residual_u(&ctx.model, &p, &phi, &samples, ResidualVariant::MeanField)?;
    let res_psi = residual_u(&ctx.model, &p, &psi, &samples, ResidualVariant::Particle(n))?;
    log::info!("max |residual|: phi {:e}, psi_N{n} {:e}", res_phi.max_abs, res_psi.max_abs);
    let mut reports = vec![("phi".to_string(), res_phi), (format!("psi_N{n}"), res_psi)];
    if let Some(lq) = ctx.model.lq_coeffs() {
        // the affine field (Π − P)x̂ on the PDE time grid, checked against the numerical Φ
        let pi = solve_pi(&ctx.model, &lq, pde.nt)?;
        let p_fine = solve_p(&ctx.model, pde.nt)?;
        let oracle = lq_phi_oracle(&p_fine, &pi, pde.lo, pde.hi, pde.nx, phi.diffusion())?;
        log::info!("LQ: max |Phi - (Pi - P) x| = {:e}", phi.max_abs_diff(&oracle)?);
        let res = residual_u(&ctx.model, &p_fine, &oracle, &samples, ResidualVariant::MeanField)?;
        log::info!("LQ: max |residual| of the affine field = {:e}", res.max_abs);
        reports.push(("lq_affine".to_string(), res));
    }
    ctx.write("residuals.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["field", "t", "xhat", "residual"])?;
        for (name, rep) in &reports {
            for (s, r) in rep.samples.iter().zip(&rep.residuals) {
                c.write_record([name.clone(), s.t.to_string(), s.xhat.to_string(), r.to_string()])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    let extrapolated = phi.extrapolation_count() + psi.extrapolation_count();
    if extrapolated > 0 {
        log::warn!("{extrapolated} field evaluations fell outside the domain");
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(ctx: &Context) -> Result<i32> {
    let p = ctx.riccati()?;
    let pde = ctx.pde(&p)?;
    let phi = solve_phi(&ctx.model, &p, &pde)?;
    let n = ctx.cfg.sim.n;
    let psi = ctx.psi(&p, &pde, n)?;
    let cl = ClosedLoop::new(&ctx.model, &p)?;
    let plan = ctx.plan()?;
    let ens = ctx.cfg.ensemble();
    ens.validate()?;

    let xhat = simulate_xhat(&cl, &phi, &plan, 0)?;
    let sets = vec![
        simulate_mf_ensemble(&cl, &xhat, &plan, ens.m1)?,
        simulate_particles(&cl, &psi, n, &plan, 0)?,
        simulate_decentralized(&cl, &xhat, n, &plan, 0)?,
    ];
    ctx.write("trajectories.csv", |w| write_trajectories_csv(w, &sets))?;

    let mf = cost_mf(&cl, &phi, &ens, &plan)?;
    let (particles, decentralized): (Vec<_>, Vec<_>) = (0..ens.m0 as u64)
        .into_par_iter()
        .map(|m| {
            let xh = simulate_xhat(&cl, &phi, &plan, m)?;
            Ok((simulate_particles(&cl, &psi, n, &plan, m)?, simulate_decentralized(&cl, &xh, n, &plan, m)?))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let ens_n = EnsembleConfig { m1: 1, ..ens };
    let (jp, jp_se) = cost_particles(&ctx.model, &particles)?;
    let (jd, jd_se) = cost_particles(&ctx.model, &decentralized)?;
    let rows = [
        mf,
        Estimate::new("cost_particles", jp, jp_se, &ens_n, plan.seed()),
        Estimate::new("cost_decentralized", jd, jd_se, &ens_n, plan.seed()),
    ];
    ctx.write("estimates.csv", |w| write_estimates_csv(w, &rows))?;
    for r in &rows {
        log::info!("{} = {} ± {}", r.quantity, r.value, r.stderr);
    }
    Ok(EXIT_OK)
}

fn cmd_optimality(ctx: &Context) -> Result<i32> {
    let p = ctx.riccati()?;
    let pde = ctx.pde(&p)?;
    let phi = solve_phi(&ctx.model, &p, &pde)?;
    let cl = ClosedLoop::new(&ctx.model, &p)?.with_feedback_p_scale(ctx.p_scale);
    let plan = ctx.plan()?;
    let ex = &ctx.cfg.experiment;
    let rows = gateaux_check(&cl, &phi, ex.directions, ex.eps, &ctx.cfg.ensemble(), &plan)?;
    ctx.write("gateaux.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["direction", "derivative", "stderr", "cost", "bound", "pass"])?;
        for r in &rows {
            c.write_record([
                r.direction.to_string(),
                r.derivative.to_string(),
                r.stderr.to_string(),
                r.cost.to_string(),
                r.bound.to_string(),
                r.pass.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let mut pass = rows.iter().all(|r| r.pass);
    for r in rows.iter().filter(|r| !r.pass) {
        log::warn!("direction {}: |dJ/deps| = {:e} exceeds {:e}", r.direction, r.derivative.abs(), r.bound);
    }

    if let Some(vn) = &ex.vn {
        let n = vn.x0.len();
        let psi = ctx.psi(&p, &pde, n)?;
        let grads = (0..n)
            .map(|i| vn_gradient_check(&cl, &psi, vn.t0, &vn.x0, i, vn.h, vn.paths, &plan))
            .collect::<Result<Vec<_>>>()?;
        ctx.write("vn_gradient.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["i", "fd", "target", "discrepancy", "combined_se", "pass"])?;
            for (i, g) in grads.iter().enumerate() {
                let ok = g.discrepancy <= 3.0 * g.combined_se;
                pass &= ok;
                c.write_record([
                    i.to_string(),
                    g.fd.to_string(),
                    g.target.to_string(),
                    g.discrepancy.to_string(),
                    g.combined_se.to_string(),
                    ok.to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_ACCEPTANCE })
}

fn cmd_rates(ctx: &Context) -> Result<i32> {
    let p = ctx.riccati()?;
    let pde = ctx.pde(&p)?;
    let phi = solve_phi(&ctx.model, &p, &pde)?;
    let ex = &ctx.cfg.experiment;
    let psi = if ex.quantities.iter().any(|q| q.needs_psi()) {
        ctx.psi_ladder(&p, &pde, &ex.ladder)?
    } else {
        BTreeMap::new()
    };
    let cl = ClosedLoop::new(&ctx.model, &p)?;
    let plan = ctx.plan()?;
    let reports = rate_study(&ex.quantities, &cl, &phi, &psi, &ex.ladder, ex.paths, &plan, &ctx.digest)?;
    let mut pass = true;
    for r in &reports {
        let name = r.quantity.name();
        ctx.write(&format!("rates_{name}.csv"), |w| write_report_csv(w, r))?;
        ctx.write(&format!("rates_{name}.dat"), |w| write_plot_dat(w, r))?;
        match r.verdict() {
            Verdict::Pass => log::info!("{name}: slope {:.3}", r.fit.map_or(f64::NAN, |f| f.slope)),
            Verdict::Excluded => log::warn!("{name}: all errors are zero; degenerate study excluded"),
            Verdict::Fail(why) => {
                pass = false;
                eprintln!("{why}");
            }
        }
        if !r.monotone_violations.is_empty() {
            log::warn!("{name}: error increases at N = {:?}", r.monotone_violations);
        }
    }
    ctx.write("rates_summary.csv", |w| write_summary_csv(w, &reports))?;
    Ok(if pass { EXIT_OK } else { EXIT_ACCEPTANCE })
}

fn cmd_value_gap(ctx: &Context) -> Result<i32> {
    let p = ctx.riccati()?;
    let pde = ctx.pde(&p)?;
    let phi = solve_phi(&ctx.model, &p, &pde)?;
    let n = ctx.cfg.sim.n;
    let psi = ctx.psi(&p, &pde, n)?;
    let cl = ClosedLoop::new(&ctx.model, &p)?;
    let plan = ctx.plan()?;
    let (gap, field) = value_gap(&cl, &phi, &psi, n, &ctx.cfg.ensemble(), &plan)?;
    log::info!("V - V^N = {} ± {}", gap.value, gap.stderr);
    ctx.write("value_gap.csv", |w| write_estimates_csv(w, &[gap, field]))?;
    Ok(EXIT_OK)
}

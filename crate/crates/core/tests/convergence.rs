use std::collections::BTreeMap;

use mfc_core::convergence::{rate_study, write_plot_dat, write_report_csv, write_summary_csv, Quantity, Verdict};
use mfc_core::fields::{solve_phi, solve_psi, PdeConfig, SpaceTimeField};
use mfc_core::model::{presets, MfcModel};
use mfc_core::riccati::solve_p;
use mfc_core::sim::{gap_sample, simulate_particles, ClosedLoop, NoisePlan};

const N_T: usize = 100;

fn setup(
    m: &MfcModel,
    ladder: &[usize],
) -> (mfc_core::riccati::TimeGridFn, SpaceTimeField, BTreeMap<usize, SpaceTimeField>) {
    let p = solve_p(m, N_T).unwrap();
    let (lo, hi) = PdeConfig::default_domain(m, &p).unwrap();
    let cfg = PdeConfig::new(lo, hi, 100, N_T, 0.9).unwrap();
    let phi = solve_phi(m, &p, &cfg).unwrap();
    let psi = ladder.iter().map(|&n| (n, solve_psi(m, &p, &cfg, n).unwrap())).collect();
    (p, phi, psi)
}

#[test]
fn field_gap_is_degenerate_without_idiosyncratic_noise() {
    let mut m = presets::nonconvex();
    m.sigma = 0.0;
    let ladder = [4, 8, 16];
    let (p, phi, psi) = setup(&m, &ladder);
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(1, N_T, 1.0).unwrap();
    let reports = rate_study(&[Quantity::FieldGap], &cl, &phi, &psi, &ladder, 8, &plan, "d").unwrap();
    let r = &reports[0];
    assert!(r.rows.iter().all(|row| row.error == 0.0));
    assert!(r.degenerate && r.fit.is_none());
    assert_eq!(r.verdict(), Verdict::Excluded);
}

#[test]
fn single_point_ladder_has_undefined_slope() {
    let m = presets::nonconvex();
    let (p, phi, psi) = setup(&m, &[64]);
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(1, N_T, 1.0).unwrap();
    let r = &rate_study(&[Quantity::Chaos], &cl, &phi, &psi, &[64], 8, &plan, "d").unwrap()[0];
    assert_eq!(r.rows.len(), 1);
    assert!(r.fit.is_none());
    assert!(matches!(r.verdict(), Verdict::Fail(msg) if msg.contains("slope undefined")));
}

#[test]
fn missing_psi_is_an_error() {
    let m = presets::nonconvex();
    let (p, phi, psi) = setup(&m, &[8]);
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(1, N_T, 1.0).unwrap();
    assert!(rate_study(&[Quantity::Moment], &cl, &phi, &psi, &[8, 16], 8, &plan, "d").is_err());
    // the decentralized comparison alone does not need Ψ
    assert!(rate_study(&[Quantity::XnVsXhat], &cl, &phi, &BTreeMap::new(), &[8, 16], 8, &plan, "d").is_ok());
}

#[test]
fn field_gap_matches_the_field_difference_along_paths() {
    let m = presets::nonconvex();
    let ladder = [8, 32];
    let (p, phi, psi) = setup(&m, &ladder);
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(5, N_T, 1.0).unwrap();
    let paths = 6;
    let r = &rate_study(&[Quantity::FieldGap], &cl, &phi, &psi, &ladder, paths, &plan, "d").unwrap()[0];
    for row in &r.rows {
        let field = &psi[&row.n];
        let direct: Vec<f64> = (0..paths as u64)
            .map(|w| {
                let set = simulate_particles(&cl, field, row.n, &plan, w).unwrap();
                let sup = set
                    .times
                    .iter()
                    .zip(&set.shared)
                    .map(|(&t, &x)| (phi.eval(t, x) - field.eval(t, x)).powi(2))
                    .fold(0.0, f64::max);
                assert_eq!(sup, gap_sample(&cl, &phi, field, &set).unwrap().field_gap_sq);
                sup
            })
            .collect();
        let mean = direct.iter().sum::<f64>() / paths as f64;
        assert!((mean - row.error).abs() <= 1e-12 * (1.0 + mean), "{mean} vs {}", row.error);
    }
}

#[test]
fn reports_are_reproducible_and_serialize() {
    let m = presets::nonconvex();
    let ladder = [4, 8, 16];
    let (p, phi, psi) = setup(&m, &ladder);
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(9, N_T, 1.0).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| rate_study(&Quantity::ALL, &cl, &phi, &psi, &ladder, 12, &plan, "abc").unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a, b);
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &a).unwrap();
    let text = String::from_utf8(summary).unwrap();
    assert!(text.starts_with("quantity,slope,r2,pass_band_lo,pass_band_hi,pass\n"));
    assert_eq!(text.lines().count(), 1 + Quantity::ALL.len());
    let mut rows = Vec::new();
    write_report_csv(&mut rows, &a[0]).unwrap();
    assert_eq!(String::from_utf8(rows).unwrap().lines().count(), 1 + ladder.len());
    let mut dat = Vec::new();
    write_plot_dat(&mut dat, &a[1]).unwrap();
    let dat = String::from_utf8(dat).unwrap();
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), ladder.len());
    assert!(dat.lines().nth(1).unwrap().starts_with("2 "));
}

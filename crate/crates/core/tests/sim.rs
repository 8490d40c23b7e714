use mfc_core::fields::{solve_phi, solve_psi, PdeConfig, SpaceTimeField};
use mfc_core::model::{catalog_make, presets, FnKind, InitialLaw, MfcModel};
use mfc_core::riccati::{solve_p, solve_pi, TimeGridFn};
use mfc_core::sim::*;

const N_T: usize = 200;

fn fields(m: &MfcModel, n_t: usize, nx: usize) -> (TimeGridFn, PdeConfig) {
    let p = solve_p(m, n_t).unwrap();
    let (lo, hi) = PdeConfig::default_domain(m, &p).unwrap();
    (p, PdeConfig::new(lo, hi, nx, n_t, 0.9).unwrap())
}

/// Everything zero except `R = 1`, so `P ≡ 0`, `Φ ≡ 0` and every control vanishes.
fn inert(sigma: f64, sigma0: f64) -> MfcModel {
    let mut m = presets::trivial();
    m.sigma = sigma;
    m.sigma0 = sigma0;
    m
}

#[test]
fn trivial_conditional_mean_is_brownian() {
    let m = presets::trivial();
    let (p, cfg) = fields(&m, N_T, 41);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(3, N_T, 1.0).unwrap();
    let xhat = simulate_xhat(&cl, &phi, &plan, 5).unwrap();
    let mut w = m.init.mean;
    for k in 0..=N_T {
        assert_eq!(xhat.x[k], w);
        assert_eq!(xhat.kappa[k], 0.0);
        if k < N_T {
            w += xhat.dw0[k];
        }
    }
}

#[test]
fn lq_conditional_mean_matches_closed_form_feedback() {
    let lq = mfc_core::model::LqCoeffs { a_bar: 0.2, b_bar: 0.3, q_bar: 0.5, r_bar: 0.5, g_bar: 0.4 };
    let m = presets::lq(lq);
    let p = solve_p(&m, N_T).unwrap();
    let pi = solve_pi(&m, &lq, N_T).unwrap();
    let cfg = PdeConfig::new(-8.0, 10.0, 181, N_T, 0.9).unwrap();
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(9, N_T, 1.0).unwrap();
    let gain = (m.b_coef + lq.b_bar) * (m.b_coef + lq.b_bar) / (m.r_coef + lq.r_bar);
    for path in 0..4 {
        let xhat = simulate_xhat(&cl, &phi, &plan, path).unwrap();
        let mut y = m.init.mean;
        let mut worst: f64 = 0.0;
        for k in 0..=N_T {
            worst = worst.max((xhat.x[k] - y).abs());
            if k < N_T {
                let drift = (m.a_coef + lq.a_bar - gain * pi.values()[k]) * y;
                y += drift * plan.dt() + m.sigma0 * xhat.dw0[k];
            }
        }
        assert!(worst < 1e-2, "path {path}: {worst}");
    }
}

#[test]
fn no_idiosyncratic_noise_pins_states_to_conditional_mean() {
    let mut m = presets::nonconvex();
    m.sigma = 0.0;
    m.init = InitialLaw::point(0.5);
    let (p, cfg) = fields(&m, N_T, 121);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(1, N_T, 1.0).unwrap();
    let xhat = simulate_xhat(&cl, &phi, &plan, 2).unwrap();
    let set = simulate_mf_ensemble(&cl, &xhat, &plan, 3).unwrap();
    for path in &set.paths {
        for k in 0..=N_T {
            assert!((path.x[k] - xhat.x[k]).abs() < 1e-12);
            assert!((path.u[k] - xhat.kappa[k]).abs() < 1e-12);
        }
    }
    let dec = simulate_decentralized(&cl, &xhat, 5, &plan, 2).unwrap();
    for path in &dec.paths {
        for k in 0..=N_T {
            assert!((path.x[k] - xhat.x[k]).abs() < 1e-12);
        }
    }
    let single = simulate_decentralized(&cl, &xhat, 1, &plan, 2).unwrap();
    let mf = simulate_mf(&cl, &xhat, &plan, 2, 0).unwrap();
    assert_eq!(single.paths[0].x, mf.x);
    assert_eq!(single.paths[0].u, mf.u);
}

#[test]
fn mismatched_common_path_is_rejected() {
    let m = presets::trivial();
    let (p, cfg) = fields(&m, N_T, 41);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(1, N_T, 1.0).unwrap();
    let xhat = simulate_xhat(&cl, &phi, &plan, 0).unwrap();
    assert!(simulate_mf(&cl, &xhat, &plan, 1, 0).is_err());
    assert!(simulate_decentralized(&cl, &xhat, 4, &plan, 1).is_err());
}

#[test]
fn single_particle_has_no_centering() {
    let m = presets::nonconvex();
    let (p, cfg) = fields(&m, N_T, 121);
    let psi = solve_psi(&m, &p, &cfg, 1).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(4, N_T, 1.0).unwrap();
    let set = simulate_particles(&cl, &psi, 1, &plan, 0).unwrap();
    assert_eq!(set.paths[0].x, set.shared);
    assert_eq!(set.paths[0].u, set.shared_kappa);
    assert!(matches!(simulate_particles(&cl, &psi, 8, &plan, 0), Err(mfc_core::Error::ParticleMismatch { .. })));
}

#[test]
fn uncontrolled_particles_match_direct_simulation_and_nest() {
    let mut m = inert(0.7, 0.4);
    m.a_coef = -0.3;
    m.init = InitialLaw::gaussian(1.0, 0.5);
    let (p, cfg) = fields(&m, N_T, 41);
    let plan = NoisePlan::new(21, N_T, 1.0).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let psi16 = solve_psi(&m, &p, &cfg, 16).unwrap();
    let psi8 = solve_psi(&m, &p, &cfg, 8).unwrap();
    let big = simulate_particles(&cl, &psi16, 16, &plan, 3).unwrap();
    let small = simulate_particles(&cl, &psi8, 8, &plan, 3).unwrap();
    let dw0 = plan.increments(StreamTag::Common, &[3]);
    for i in 0..8 {
        assert_eq!(big.paths[i], small.paths[i]);
        let dw = plan.increments(StreamTag::Idio, &[3, i as u64]);
        let mut x = big.paths[i].x[0];
        for k in 0..=N_T {
            assert_eq!(big.paths[i].u[k], 0.0);
            assert_eq!(big.paths[i].x[k], x);
            if k < N_T {
                x += m.a_coef * x * plan.dt() + m.sigma * dw[k] + m.sigma0 * dw0[k];
            }
        }
    }
}

#[test]
fn stored_controls_reproduce_the_feedback_law() {
    let m = presets::nonconvex();
    let (p, cfg) = fields(&m, N_T, 121);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let psi = solve_psi(&m, &p, &cfg, 8).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(8, N_T, 1.0).unwrap();
    let xhat = simulate_xhat(&cl, &phi, &plan, 1).unwrap();
    let mf = simulate_mf_ensemble(&cl, &xhat, &plan, 8).unwrap();
    let parts = simulate_particles(&cl, &psi, 8, &plan, 1).unwrap();
    let dec = simulate_decentralized(&cl, &xhat, 8, &plan, 1).unwrap();
    assert!(mf.feedback_error(&cl, &phi).unwrap() <= 1e-10);
    assert!(parts.feedback_error(&cl, &psi).unwrap() <= 1e-10);
    assert!(dec.feedback_error(&cl, &phi).unwrap() <= 1e-10);
    for set in [&mf, &parts, &dec] {
        assert!(set.paths.iter().all(|p| p.x.len() == N_T + 1 && p.u.len() == N_T + 1));
    }
}

fn cost_in_pool(threads: usize, m: &MfcModel, phi: &SpaceTimeField, p: &TimeGridFn) -> Estimate {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let cl = ClosedLoop::new(m, p).unwrap();
        let plan = NoisePlan::new(77, N_T, 1.0).unwrap();
        let ens = EnsembleConfig { n_t: N_T, n_particles: 1, m0: 16, m1: 8 };
        cost_mf(&cl, phi, &ens, &plan).unwrap()
    })
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let m = presets::nonconvex();
    let (p, cfg) = fields(&m, N_T, 121);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let one = cost_in_pool(1, &m, &phi, &p);
    let many = cost_in_pool(8, &m, &phi, &p);
    assert_eq!(one.value.to_bits(), many.value.to_bits());
    assert_eq!(one.stderr.to_bits(), many.stderr.to_bits());
}

#[test]
fn zero_and_constant_costs() {
    let m = inert(1.0, 1.0);
    let (p, cfg) = fields(&m, N_T, 41);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(5, N_T, 1.0).unwrap();
    let ens = EnsembleConfig { n_t: N_T, n_particles: 1, m0: 4, m1: 4 };
    assert_eq!(cost_mf(&cl, &phi, &ens, &plan).unwrap().value, 0.0);

    let mut c = inert(1.0, 1.0);
    c.horizon = 2.0;
    c.q_fn = catalog_make(FnKind::Constant, &[0.75]).unwrap();
    let (p, cfg) = fields(&c, N_T, 41);
    let phi = solve_phi(&c, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&c, &p).unwrap();
    let plan = NoisePlan::new(5, N_T, 2.0).unwrap();
    let est = cost_mf(&cl, &phi, &ens, &plan).unwrap();
    assert!((est.value - 1.5).abs() <= 1e-12, "{}", est.value);

    let psi = solve_psi(&c, &p, &cfg, 3).unwrap();
    let sets: Vec<_> = (0..4).map(|w| simulate_particles(&cl, &psi, 3, &plan, w).unwrap()).collect();
    assert!((cost_particles(&c, &sets).unwrap().0 - 1.5).abs() <= 1e-12);
    assert!(cost_particles(&c, &[]).is_err());
}

#[test]
fn zero_coupling_lq_cost_matches_riccati_value() {
    let m = presets::zero_coupling_lq();
    let n_t = 400;
    let (p, cfg) = fields(&m, n_t, 121);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(2024, n_t, 1.0).unwrap();
    let ens = EnsembleConfig { n_t, n_particles: 1, m0: 64, m1: 64 };
    let est = cost_mf(&cl, &phi, &ens, &plan).unwrap();

    // E[ξ²] P(0) + ∫ (σ² + σ₀²) P dt with Simpson on the fine Riccati grid
    let fine = solve_p(&m, 4000).unwrap();
    let v = fine.values();
    let h = fine.dt();
    let simpson: f64 = (0..2000).map(|j| h / 3.0 * (v[2 * j] + 4.0 * v[2 * j + 1] + v[2 * j + 2])).sum();
    let exact = m.init.second_moment() * v[0] + (m.sigma * m.sigma + m.sigma0 * m.sigma0) * simpson;
    assert!((est.value - exact).abs() <= 3.0 * est.stderr, "{} vs {exact} (se {})", est.value, est.stderr);
}

#[test]
fn zero_coupling_lq_mean_follows_linear_ode() {
    let m = presets::zero_coupling_lq();
    let (p, cfg) = fields(&m, N_T, 121);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(31, N_T, 1.0).unwrap();
    let means: Vec<f64> = (0..64u64)
        .map(|w| {
            let xhat = simulate_xhat(&cl, &phi, &plan, w).unwrap();
            let set = simulate_mf_ensemble(&cl, &xhat, &plan, 32).unwrap();
            set.state_mean(N_T)
        })
        .collect();
    let (mean, se) = stats::mean_stderr(&means);

    // m' = (A − B²P/R) m by RK4 with P interpolated on the fine grid
    let fine = solve_p(&m, 4000).unwrap();
    let rate = |t: f64| m.a_coef - m.b_coef * m.b_coef * fine.eval(t) / m.r_coef;
    let (mut y, h) = (m.init.mean, 1e-3);
    for j in 0..1000 {
        let t = j as f64 * h;
        let k1 = rate(t) * y;
        let k2 = rate(t + h / 2.0) * (y + h / 2.0 * k1);
        let k3 = rate(t + h / 2.0) * (y + h / 2.0 * k2);
        let k4 = rate(t + h) * (y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    assert!((mean - y).abs() <= 3.0 * se, "{mean} vs {y} (se {se})");
}

#[test]
fn value_gap_vanishes_without_idiosyncratic_noise() {
    let mut m = presets::nonconvex();
    m.sigma = 0.0;
    let (p, cfg) = fields(&m, N_T, 121);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let psi = solve_psi(&m, &p, &cfg, 16).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(6, N_T, 1.0).unwrap();
    let ens = EnsembleConfig { n_t: N_T, n_particles: 16, m0: 8, m1: 1 };
    let (gap, field) = value_gap(&cl, &phi, &psi, 16, &ens, &plan).unwrap();
    assert_eq!(gap.value, 0.0);
    assert_eq!(field.value, 0.0);
}

#[test]
fn gateaux_derivative_vanishes_for_zero_costs() {
    let m = inert(1.0, 1.0);
    let (p, cfg) = fields(&m, N_T, 41);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(12, N_T, 1.0).unwrap();
    let ens = EnsembleConfig { n_t: N_T, n_particles: 1, m0: 10, m1: 10 };
    for row in gateaux_check(&cl, &phi, 3, 1e-3, &ens, &plan).unwrap() {
        assert_eq!(row.derivative, 0.0);
        assert!(row.pass);
    }
    assert!(gateaux_check(&cl, &phi, 3, 0.0, &ens, &plan).is_err());
    let tiny = EnsembleConfig { m0: 9, m1: 11, ..ens };
    assert!(gateaux_check(&cl, &phi, 3, 1e-3, &tiny, &plan).is_err());
}

#[test]
fn gateaux_check_separates_optimal_from_scaled_feedback() {
    let m = presets::zero_coupling_lq();
    let (p, cfg) = fields(&m, N_T, 121);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let plan = NoisePlan::new(7, N_T, 1.0).unwrap();
    let ens = EnsembleConfig { n_t: N_T, n_particles: 1, m0: 64, m1: 64 };
    let optimal = ClosedLoop::new(&m, &p).unwrap();
    assert!(gateaux_check(&optimal, &phi, 5, 1e-3, &ens, &plan).unwrap().iter().all(|r| r.pass));
    let scaled = ClosedLoop::new(&m, &p).unwrap().with_feedback_p_scale(1.5);
    assert!(gateaux_check(&scaled, &phi, 5, 1e-3, &ens, &plan).unwrap().iter().any(|r| !r.pass));
}

#[test]
fn particle_value_gradient_matches_decoupling_field() {
    let m = presets::zero_coupling_lq();
    let (p, cfg) = fields(&m, N_T, 121);
    let psi = solve_psi(&m, &p, &cfg, 4).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(11, N_T, 1.0).unwrap();
    let x0 = [1.0, 0.5, -0.3, 1.4];
    for i in 0..4 {
        let g = vn_gradient_check(&cl, &psi, 0.0, &x0, i, 0.05, 1000, &plan).unwrap();
        assert!(g.discrepancy <= 3.0 * g.combined_se, "{i}: {g:?}");
    }
    let same = [0.8; 4];
    let grads: Vec<VnGradient> =
        (0..4).map(|i| vn_gradient_check(&cl, &psi, 0.0, &same, i, 0.05, 1000, &plan).unwrap()).collect();
    for g in &grads[1..] {
        assert!((g.fd - grads[0].fd).abs() <= 3.0 * g.stderr_mc.hypot(grads[0].stderr_mc));
        assert_eq!(g.target, grads[0].target);
    }
    assert!(vn_gradient_check(&cl, &psi, 0.0, &x0, 4, 0.05, 10, &plan).is_err());
    assert!(vn_gradient_check(&cl, &psi, 0.0013, &x0, 0, 0.05, 10, &plan).is_err());
}

#[test]
fn particle_value_gradient_is_zero_without_costs() {
    let m = inert(1.0, 1.0);
    let (p, cfg) = fields(&m, N_T, 41);
    let psi = solve_psi(&m, &p, &cfg, 3).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(1, N_T, 1.0).unwrap();
    let g = vn_gradient_check(&cl, &psi, 0.5, &[0.1, 0.2, 0.3], 1, 0.05, 16, &plan).unwrap();
    assert_eq!(g.fd, 0.0);
    assert_eq!(g.target, 0.0);
}

#[test]
fn trajectory_csv_has_one_row_per_particle_step() {
    let m = presets::trivial();
    let (p, cfg) = fields(&m, 20, 41);
    let phi = solve_phi(&m, &p, &cfg).unwrap();
    let cl = ClosedLoop::new(&m, &p).unwrap();
    let plan = NoisePlan::new(1, 20, 1.0).unwrap();
    let xhat = simulate_xhat(&cl, &phi, &plan, 0).unwrap();
    let set = simulate_mf_ensemble(&cl, &xhat, &plan, 3).unwrap();
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, &[set]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("path_id,particle_id,t,x,u,xhat_or_xbarN\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 21);
}

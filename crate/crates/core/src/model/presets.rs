//! Reference problem instances used by tests, examples and the shipped configs.

use super::{catalog_make, FnKind, InitialLaw, LqCoeffs, MfcModel, ScalarC2Fn};

fn f(kind: FnKind, params: &[f64]) -> ScalarC2Fn {
    catalog_make(kind, params).expect("preset parameters are valid")
}

/// All coupling functions zero, `A = 0`, `B = R = 1`, `Q = G = 0`.
pub fn trivial() -> MfcModel {
    MfcModel {
        a_coef: 0.0,
        b_coef: 1.0,
        sigma: 1.0,
        sigma0: 1.0,
        q_coef: 0.0,
        r_coef: 1.0,
        g_coef: 0.0,
        horizon: 1.0,
        a_fn: ScalarC2Fn::Zero,
        b_fn: ScalarC2Fn::Zero,
        q_fn: ScalarC2Fn::Zero,
        r_fn: ScalarC2Fn::Zero,
        g_fn: ScalarC2Fn::Zero,
        init: InitialLaw::point(0.0),
    }
}

/// LQ problem with the given barred coefficients on top of
/// `A = 0.1, B = 1, Q = 1, R = 1, G = 1, σ = 0.5, σ₀ = 0.5, T = 1`.
pub fn lq(c: LqCoeffs) -> MfcModel {
    MfcModel {
        a_coef: 0.1,
        b_coef: 1.0,
        sigma: 0.5,
        sigma0: 0.5,
        q_coef: 1.0,
        r_coef: 1.0,
        g_coef: 1.0,
        horizon: 1.0,
        a_fn: lin(c.a_bar),
        b_fn: lin(c.b_bar),
        q_fn: quad(c.q_bar),
        r_fn: quad(c.r_bar),
        g_fn: quad(c.g_bar),
        init: InitialLaw::gaussian(1.0, 0.5),
    }
}

fn lin(slope: f64) -> ScalarC2Fn {
    if slope == 0.0 {
        ScalarC2Fn::Zero
    } else {
        f(FnKind::Affine, &[slope])
    }
}

fn quad(c2: f64) -> ScalarC2Fn {
    if c2 == 0.0 {
        ScalarC2Fn::Zero
    } else {
        f(FnKind::Quadratic, &[c2])
    }
}

/// Standard LQ problem: no mean-field coupling at all.
pub fn zero_coupling_lq() -> MfcModel {
    let mut m = lq(LqCoeffs::default());
    m.init = InitialLaw::gaussian(1.0, 0.5);
    m
}

/// The non-convex example with logistic drift coupling, `q = sin`,
/// `r = cos + a` and constant `b = c`. `R` is a parameter because the
/// feedback formulas need `R > 0`.
pub fn example_3_1(r_coef: f64, c: f64) -> MfcModel {
    let a = f(FnKind::NegLogistic, &[]);
    MfcModel {
        a_coef: 0.0,
        b_coef: 1.0,
        sigma: 1.0,
        sigma0: 0.5,
        q_coef: 0.0,
        r_coef,
        g_coef: 0.0,
        horizon: 1.0,
        a_fn: a.clone(),
        b_fn: f(FnKind::Constant, &[c]),
        q_fn: f(FnKind::Sin, &[]),
        r_fn: ScalarC2Fn::scaled_sum(vec![(1.0, f(FnKind::Cos, &[])), (1.0, a)]).expect("valid weights"),
        g_fn: ScalarC2Fn::Zero,
        init: InitialLaw::gaussian(0.5, 0.5),
    }
}

/// Default non-convex configuration for the convergence experiments:
/// logistic drift coupling, a mildly curved decreasing control coupling,
/// `q = sin`, `r = cos + a`, `g = sin`, with `σ = 1`, `σ₀ = 0.5`.
pub fn nonconvex() -> MfcModel {
    let a = f(FnKind::NegLogistic, &[]);
    MfcModel {
        a_coef: 0.0,
        b_coef: 1.0,
        sigma: 1.0,
        sigma0: 0.5,
        q_coef: 1.0,
        r_coef: 1.0,
        g_coef: 0.5,
        horizon: 1.0,
        a_fn: a.clone(),
        b_fn: f(FnKind::Tanh, &[-0.05, 1.0]),
        q_fn: f(FnKind::Sin, &[]),
        r_fn: ScalarC2Fn::scaled_sum(vec![(1.0, f(FnKind::Cos, &[])), (1.0, a)]).expect("valid weights"),
        g_fn: f(FnKind::Sin, &[]),
        init: InitialLaw::gaussian(0.5, 0.5),
    }
}

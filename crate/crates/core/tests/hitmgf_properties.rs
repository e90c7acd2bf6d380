use brwre::env::{sample_environment, zeta_of, Environment, EnvironmentLaw, Window};
use brwre::hitmgf::{log_mgf_site, oracle_dense, TruncationConfig};
use proptest::prelude::*;

fn env(seed: u64) -> Environment {
    sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-3000, 5), seed).unwrap()
}

fn l(env: &Environment, eta: f64) -> brwre::hitmgf::MgfEval {
    log_mgf_site(&zeta_of(env), 1, eta, &TruncationConfig { tol: 1e-15, ..TruncationConfig::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn increasing_and_convex_in_eta(seed in any::<u64>(), a in -3.0..-0.05f64, gap in 0.01..1.0f64) {
        let env = env(seed);
        let (lo, hi) = (l(&env, a - gap), l(&env, a));
        prop_assert!(lo.value < hi.value);
        prop_assert!(lo.d2 > 0.0 && hi.d2 > 0.0);
        prop_assert!(lo.d1 <= hi.d1);
    }

    #[test]
    fn agrees_with_dense_elimination(seed in any::<u64>(), eta in -3.0..-0.05f64) {
        let env = env(seed);
        let dense = oracle_dense(&zeta_of(&env), 1, eta, 2500).unwrap();
        prop_assert!((l(&env, eta).value - dense).abs() <= 1e-10);
    }

    #[test]
    fn raising_rates_never_lowers_l(seed in any::<u64>(), raise in proptest::collection::vec(0.0..1.0f64, 64), eta in -2.0..-0.1f64) {
        let base = env(seed);
        let mut xi = base.xi.clone();
        let k = xi.len();
        for (j, r) in raise.iter().enumerate() {
            let x = &mut xi[k - 1 - 2 * j];
            *x += r * (2.0 - *x);
        }
        let raised = Environment::from_values(base.window.lo, xi, base.law.clone()).unwrap();
        prop_assert!(l(&raised, eta).value >= l(&base, eta).value - 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences(seed in any::<u64>(), eta in -3.0..-0.1f64) {
        let env = env(seed);
        let h = 1e-4 * eta.abs().max(0.1);
        let (m, p, c) = (l(&env, eta - h), l(&env, eta + h), l(&env, eta));
        let fd1 = (p.value - m.value) / (2.0 * h);
        let fd2 = (p.d1 - m.d1) / (2.0 * h);
        prop_assert!((fd1 - c.d1).abs() <= 1e-6 * c.d1.abs(), "d1 {} vs {}", c.d1, fd1);
        prop_assert!((fd2 - c.d2).abs() <= 1e-5 * c.d2.abs(), "d2 {} vs {}", c.d2, fd2);
    }
}

#[test]
fn truncation_error_decays_geometrically() {
    let env = env(11);
    let z = zeta_of(&env);
    for eta in [-0.1, -0.5, -2.0] {
        let v: Vec<f64> = (0..6).map(|k| oracle_dense(&z, 1, eta, 16 << k).unwrap()).collect();
        let diffs: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for w in diffs.windows(2) {
            if w[0] > 1e-13 {
                assert!(w[1] <= 0.5 * w[0], "eta {eta}: {diffs:?}");
            }
        }
        let site = log_mgf_site(&z, 1, eta, &TruncationConfig::default()).unwrap();
        assert!(site.trunc_bound <= 1e-12);
        assert!((site.value - v[5]).abs() <= 1e-10);
    }
}

#[test]
fn constant_potential_matches_closed_form() {
    // L(eta) = ln(1 - eta - sqrt((1 - eta)^2 - 1)) for zeta = 0.
    let env = Environment::constant(Window::new(-2000, 5), 1.0);
    for eta in [-0.1, -0.5, -1.0, -3.0] {
        let closed = (1.0 - eta - ((1.0 - eta) * (1.0 - eta) - 1.0f64).sqrt()).ln();
        assert!((l(&env, eta).value - closed).abs() <= 1e-12, "eta {eta}");
    }
}

use brwre::env::{sample_environment, Environment, EnvironmentLaw, Window};
use brwre::fkpp::{run_fkpp, KppInitial};
use brwre::lattice::IntegratorConfig;
use brwre::pam::{run_pam, InitialCondition, PamConfig};
use proptest::prelude::*;

/// `I_n(t)` from its power series.
fn bessel(n: i64, t: f64) -> f64 {
    let n = n.unsigned_abs();
    let mut term = (1..=n).fold(1.0, |acc, k| acc * 0.5 * t / k as f64);
    let mut sum = 0.0;
    for k in 0..400u64 {
        sum += term;
        term *= 0.25 * t * t / ((k + 1) as f64 * (k + 1 + n) as f64);
    }
    sum
}

#[test]
fn unit_rate_solution_is_bessel_at_small_steps() {
    let env = Environment::constant(Window::new(-400, 400), 1.0);
    let mut cfg = PamConfig::new(&env);
    cfg.integrator = IntegratorConfig::with_dt(0.0025);
    let run = run_pam(&env, InitialCondition::Delta, 5.0, &cfg, &[1.0, 2.0, 5.0]).unwrap();
    for f in &run.snapshots {
        for x in -10..=10 {
            let exact = bessel(x, f.time);
            let rel = (f.ln_value(x).exp() - exact).abs() / exact;
            assert!(rel <= 1e-6, "t {} x {x}: {rel:e}", f.time);
        }
    }
}

#[test]
fn constant_rate_mass_grows_exponentially() {
    let env = Environment::constant(Window::new(-300, 300), 0.7);
    let mut cfg = PamConfig::new(&env);
    cfg.integrator = IntegratorConfig::with_dt(0.0025);
    let run = run_pam(&env, InitialCondition::Delta, 6.0, &cfg, &[6.0]).unwrap();
    let f = &run.snapshots[0];
    let total = f.tail_log_sum(f.x_lo);
    assert!((total - 0.7 * 6.0).abs() <= 1e-9, "{total}");
}

#[test]
fn renormalization_keeps_log_values() {
    let env = sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-200, 200), 1).unwrap();
    let cfg = PamConfig::new(&env);
    let run = run_pam(&env, InitialCondition::Delta, 3.0, &cfg, &[3.0]).unwrap();
    let mut f = run.snapshots[0].clone();
    f.values.iter_mut().for_each(|v| *v *= 37.0);
    f.offset -= 37f64.ln();
    let before: Vec<f64> = (f.x_lo..=f.x_hi()).map(|x| f.ln_value(x)).collect();
    f.renormalize();
    for (x, b) in (f.x_lo..=f.x_hi()).zip(before) {
        if b.is_finite() {
            assert!((f.ln_value(x) - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn larger_rates_give_larger_solutions(seed in any::<u64>(), bump in proptest::collection::vec(0.0..1.0f64, 81)) {
        let law = EnvironmentLaw::default_two_point();
        let low = sample_environment(&law, Window::new(-200, 200), seed).unwrap();
        let xi = low.xi.iter().enumerate().map(|(i, x)| match bump.get(i.wrapping_sub(160)) {
            Some(b) => x + b * (2.0 - x),
            None => *x,
        }).collect();
        let high = Environment::from_values(-200, xi, law).unwrap();
        let mut cfg = PamConfig::new(&high);
        cfg.integrator = cfg.integrator.fixed();
        let a = run_pam(&low, InitialCondition::Delta, 3.0, &cfg, &[1.0, 3.0]).unwrap();
        let b = run_pam(&high, InitialCondition::Delta, 3.0, &cfg, &[1.0, 3.0]).unwrap();
        for (fa, fb) in a.snapshots.iter().zip(&b.snapshots) {
            for x in -40..=40 {
                let (ua, ub) = (fa.ln_value(x), fb.ln_value(x));
                prop_assert!(ub >= ua - 1e-10, "x {}: {} > {}", x, ua, ub);
                prop_assert!(fa.mantissa(x) >= 0.0);
            }
        }
    }

    #[test]
    fn reaction_stays_in_unit_interval(seed in any::<u64>(), lo in -20i64..0, width in 0i64..20) {
        let env = sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-200, 200), seed).unwrap();
        let run = run_fkpp(&env, KppInitial::Indicator { lo, hi: lo + width }, &[0.5, 2.0, 6.0], &IntegratorConfig::for_env(&env)).unwrap();
        for f in &run.snapshots {
            prop_assert!(f.values.iter().all(|w| (0.0..=1.0).contains(w)));
        }
    }
}

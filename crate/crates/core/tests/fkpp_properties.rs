use brwre::env::{sample_environment, Environment, EnvironmentLaw, Window};
use brwre::fkpp::{duality_check, run_fkpp, KppInitial};
use brwre::lattice::IntegratorConfig;
use brwre::pam::{run_pam, InitialCondition, PamConfig};

fn bessel0(t: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 0..400u64 {
        sum += term;
        term *= 0.25 * t * t / ((k + 1) * (k + 1)) as f64;
    }
    sum
}

#[test]
fn pure_diffusion_of_a_step_matches_the_walk_law() {
    // With no branching, w(t, 0) = P(X_t <= 0) = (1 + P(X_t = 0)) / 2.
    let env = Environment::constant(Window::new(-300, 300), 0.0);
    let cfg = IntegratorConfig::with_dt(0.005);
    let run = run_fkpp(&env, KppInitial::StepLeft, &[1.0, 4.0, 9.0], &cfg).unwrap();
    for f in &run.snapshots {
        let exact = 0.5 * (1.0 + (-f.time).exp() * bessel0(f.time));
        assert!((f.value(0) - exact).abs() <= 1e-8, "t {}: {} vs {exact}", f.time, f.value(0));
    }
}

#[test]
fn linear_solution_dominates() {
    let env = sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-600, 600), 8).unwrap();
    let times = [0.5, 2.0, 5.0, 10.0];
    let ic = IntegratorConfig::for_env(&env);
    let w = run_fkpp(&env, KppInitial::StepLeft, &times, &ic).unwrap();
    let cfg = PamConfig { tilt: 1.0, ..PamConfig::new(&env) };
    let u = run_pam(&env, InitialCondition::StepLeft { c: 1.0 }, 10.0, &cfg, &times).unwrap();
    for (fw, fu) in w.snapshots.iter().zip(&u.snapshots) {
        for x in -100..=100 {
            let lin = fu.ln_value(x).exp().min(1.0);
            assert!(fw.value(x) <= lin * (1.0 + 1e-9) + 1e-12, "t {} x {x}: {} > {lin}", fw.time, fw.value(x));
        }
    }
}

#[test]
fn fronts_move_right_at_positive_speed() {
    let env = sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-200, 800), 9).unwrap();
    let times: Vec<f64> = (1..=6).map(|k| 20.0 * k as f64).collect();
    let run = run_fkpp(&env, KppInitial::StepLeft, &times, &IntegratorConfig::for_env(&env)).unwrap();
    let m: Vec<f64> = run.fronts.iter().map(|p| p.m_hat_interp).collect();
    assert_eq!(m.len(), times.len());
    assert!(m.windows(2).all(|w| w[1] > w[0]));
    let speed = (m[5] - m[0]) / 100.0;
    assert!(speed > 1.0 && speed < 2.5, "speed {speed}");
}

#[test]
fn duality_holds_on_a_small_table() {
    let env = sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-200, 200), 10).unwrap();
    let rows = duality_check(&env, &[-4, -1, 0], 2.0, 3000, 5, &IntegratorConfig::for_env(&env)).unwrap();
    for r in rows {
        assert!((r.w - r.p_hat).abs() <= 4.0 * r.sigma.max(1e-3), "{r:?}");
    }
}

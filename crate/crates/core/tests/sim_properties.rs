use brwre::env::{sample_environment, Environment, EnvironmentLaw, Window};
use brwre::pam::{breakpoint, run_pam, InitialCondition, PamConfig};
use brwre::sim::{estimate_median, simulate, SimConfig, SimInitial};
use proptest::prelude::*;

fn env(seed: u64) -> Environment {
    sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-300, 300), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn snapshots_conserve_and_replay(seed in any::<u64>(), start in -3i64..3) {
        let env = env(seed);
        let cfg = SimConfig::new(1.5).with_schedule(&[0.0, 0.5, 1.0]);
        let init = SimInitial::Counts(vec![(start, 2), (start + 1, 1)]);
        let a = simulate(&env, &init, &cfg, seed, 20).unwrap();
        prop_assert_eq!(&a, &simulate(&env, &init, &cfg, seed, 20).unwrap());
        for r in &a {
            prop_assert_eq!(r.pop[0], 3);
            for (j, (lo, counts)) in r.snapshots.iter().enumerate() {
                prop_assert_eq!(counts.iter().sum::<u64>(), r.pop[j]);
                if !counts.is_empty() {
                    prop_assert_eq!(lo + counts.len() as i64 - 1, r.max[j]);
                }
            }
        }
    }
}

#[test]
fn distinct_seeds_give_distinct_runs() {
    let env = env(1);
    let cfg = SimConfig::new(2.0);
    let a = simulate(&env, &SimInitial::Single(0), &cfg, 1, 50).unwrap();
    let b = simulate(&env, &SimInitial::Single(0), &cfg, 2, 50).unwrap();
    assert_ne!(a, b);
}

#[test]
fn constant_rate_population_mean_is_exponential() {
    let env = Environment::constant(Window::new(-100, 100), 1.0);
    let reps = simulate(&env, &SimInitial::Single(0), &SimConfig::new(1.0), 3, 4000).unwrap();
    let pops: Vec<f64> = reps.iter().map(|r| r.pop[0] as f64).collect();
    let (mean, se) = brwre::stats::jackknife_mean(&pops);
    let z = (mean - 1f64.exp()) / se;
    assert!(z.abs() <= 4.0, "mean {mean}, z {z}");
}

#[test]
fn mean_occupation_matches_the_linear_solution() {
    let env = env(4);
    let t = 2.0;
    let reps = simulate(&env, &SimInitial::Single(0), &SimConfig::new(t), 6, 4000).unwrap();
    let run = run_pam(&env, InitialCondition::Delta, t, &PamConfig::new(&env), &[t]).unwrap();
    let f = &run.snapshots[0];
    for x in -2..=2 {
        let counts: Vec<f64> = reps
            .iter()
            .map(|r| {
                let (lo, c) = &r.snapshots[0];
                usize::try_from(x - lo).ok().and_then(|i| c.get(i)).copied().unwrap_or(0) as f64
            })
            .collect();
        let (mean, se) = brwre::stats::jackknife_mean(&counts);
        let u = f.ln_value(x).exp();
        assert!((mean - u).abs() <= 4.0 * se, "x {x}: {mean} vs {u} (se {se})");
    }
}

#[test]
fn median_never_exceeds_the_breakpoint() {
    let law = EnvironmentLaw::two_point(0.5, 1.0, 0.5);
    let env = sample_environment(&law, Window::new(-300, 300), 12).unwrap();
    let times = [4.0, 6.0, 8.0];
    let medians = estimate_median(&env, &times, 400, 13).unwrap();
    let run = run_pam(&env, InitialCondition::Delta, 8.0, &PamConfig::new(&env), &times).unwrap();
    for (m, f) in medians.iter().zip(&run.snapshots) {
        assert!(m.median <= breakpoint(f).unwrap().0, "t {}: median {} above breakpoint", m.t, m.median);
    }
}

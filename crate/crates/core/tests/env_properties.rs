use brwre::env::{load_environment, sample_environment, save_environment, EnvironmentLaw, Window};
use proptest::prelude::*;

fn law() -> impl Strategy<Value = EnvironmentLaw> {
    prop_oneof![
        (0.05..3.0f64, 0.1..3.0f64, 0.05..0.95f64).prop_map(|(lo, d, p)| EnvironmentLaw::two_point(lo, lo + d, p)),
        (0.05..3.0f64, 0.1..3.0f64).prop_map(|(lo, d)| EnvironmentLaw::uniform(lo, lo + d)),
    ]
}

proptest! {
    #[test]
    fn samples_stay_in_the_support(law in law(), seed in any::<u64>(), lo in -500i64..0) {
        let env = sample_environment(&law, Window::new(lo, lo + 300), seed).unwrap();
        let min = env.xi.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(env.ei() <= min && env.max_xi() <= env.es());
    }

    #[test]
    fn shifted_law_translates_samples(law in law(), seed in any::<u64>(), h in 0.0..2.0f64) {
        let w = Window::new(-50, 50);
        let a = sample_environment(&law, w, seed).unwrap();
        let b = sample_environment(&law.clone().with_shift(h), w, seed).unwrap();
        for (x, y) in a.xi.iter().zip(&b.xi) {
            prop_assert_eq!(x + h, *y);
        }
    }

    #[test]
    fn stored_environments_reload_bit_exactly(law in law(), seed in any::<u64>()) {
        let env = sample_environment(&law, Window::new(-20, 20), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        save_environment(&env, &path).unwrap();
        prop_assert_eq!(load_environment(&path).unwrap(), env);
    }
}

#[test]
fn site_means_concentrate() {
    let law = EnvironmentLaw::default_two_point();
    let n = 10_000;
    let sd = law.variance().sqrt();
    let seeds = 200;
    let inside = (0..seeds)
        .filter(|&s| {
            let env = sample_environment(&law, Window::new(1, n), s).unwrap();
            let mean = env.xi.iter().sum::<f64>() / n as f64;
            (mean - law.mean()).abs() <= 4.0 * sd / (n as f64).sqrt()
        })
        .count();
    assert!(inside as f64 >= 0.99 * seeds as f64, "{inside} of {seeds}");
}

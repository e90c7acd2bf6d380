use brwre::env::{sample_environment, Environment, EnvironmentLaw, Window};
use brwre::pam::{breakpoint, run_pam, InitialCondition, PamConfig, PamState};

fn env(seed: u64) -> Environment {
    sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-2000, 1500), seed).unwrap()
}

#[test]
fn chunked_resume_through_serialization_is_bit_exact() {
    let env = env(1);
    let mut cfg = PamConfig::new(&env);
    cfg.tn_max = Some(60);
    let schedule = [5.0, 17.5, 30.0];
    let whole = run_pam(&env, InitialCondition::Delta, 30.0, &cfg, &schedule).unwrap();

    let mut state = PamState::new(InitialCondition::Delta, 30.0, cfg, &schedule).unwrap();
    for chunk in [1usize, 77, 300, 5].iter().cycle() {
        if state.done() {
            break;
        }
        state.advance_steps(&env, *chunk).unwrap();
        let text = serde_json::to_string(&state).unwrap();
        state = serde_json::from_str(&text).unwrap();
    }
    assert_eq!(state.finish(), whole);
}

#[test]
fn tilt_is_only_a_gauge() {
    let env = env(2);
    let plain = PamConfig::new(&env);
    let tilted = PamConfig { tilt: 1.2, ..plain };
    let a = run_pam(&env, InitialCondition::Delta, 20.0, &plain, &[20.0]).unwrap();
    let b = run_pam(&env, InitialCondition::Delta, 20.0, &tilted, &[20.0]).unwrap();
    let (fa, fb) = (&a.snapshots[0], &b.snapshots[0]);
    for x in -30..=30 {
        let (la, lb) = (fa.ln_value(x), fb.ln_value(x));
        assert!((la - lb).abs() <= 1e-9 * la.abs().max(1.0), "x {x}: {la} vs {lb}");
    }
}

#[test]
fn first_passage_times_match_breakpoints() {
    let env = env(3);
    let mut cfg = PamConfig::new(&env);
    cfg.tn_max = Some(150);
    let times: Vec<f64> = (1..=8).map(|k| 10.0 * k as f64).collect();
    let run = run_pam(&env, InitialCondition::Delta, 80.0, &cfg, &times).unwrap();
    let tn = &run.tn.as_ref().unwrap().times;
    assert!(tn.windows(2).all(|w| w[0] <= w[1]));
    for f in &run.snapshots {
        let (m, _) = breakpoint(f).unwrap();
        for n in 0..tn.len() as i64 {
            if n <= m {
                assert!(tn[n as usize] <= f.time, "T_{n} = {} after t = {} with m = {m}", tn[n as usize], f.time);
            } else {
                assert!(tn[n as usize] > f.time - 1e-9);
            }
        }
    }
}

#[test]
fn tail_ratio_decays_exponentially_in_space() {
    let env = env(4);
    let mut cfg = PamConfig::new(&env);
    cfg.tilt = 1.4;
    let t = 400.0;
    let run = run_pam(&env, InitialCondition::Delta, t, &cfg, &[t]).unwrap();
    let f = &run.snapshots[0];
    let x0 = (1.9 * t) as i64;
    let base = f.tail_log_sum(x0);
    let h_max = t.cbrt() as i64;
    let hs: Vec<f64> = (1..=h_max).map(|h| h as f64).collect();
    let logs: Vec<f64> = (1..=h_max).map(|h| f.tail_log_sum(x0 + h) - base).collect();
    let (_, slope, _) = brwre::stats::linear_fit(&hs, &logs);
    assert!(logs.iter().all(|l| *l < 0.0));
    assert!((-3.0..-0.5).contains(&slope), "slope {slope}");
}

use brwre::env::{sample_environment, zeta_of, EnvironmentLaw, Window, ZetaView};
use brwre::hitmgf::log_mgf_avg;
use brwre::tilt::{legendre_empirical, solve_eta_empirical, Population, TiltConfig};

const V: f64 = 1.9;

fn zeta(seed: u64, n: i64) -> ZetaView {
    zeta_of(&sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-4000, n), seed).unwrap())
}

#[test]
fn legendre_is_the_supremum_over_a_grid() {
    let cfg = TiltConfig::default();
    let z = zeta(3, 500);
    let sol = solve_eta_empirical(&z, 500, V, &cfg).unwrap();
    let step = 0.005;
    let (best_eta, best) = (1..=600)
        .map(|k| -step * k as f64)
        .map(|eta| (eta, eta / V - log_mgf_avg(&z, 500, eta, &cfg.trunc).unwrap().value))
        .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    assert!(best <= sol.legendre + 1e-12);
    // The objective is flat to second order at its maximum.
    assert!(sol.legendre - best <= 0.5 * sol.d2 * step * step);
    assert!((best_eta - sol.eta_bar).abs() <= step);
    assert_eq!(legendre_empirical(&z, 500, V, &cfg).unwrap(), sol.legendre);
}

#[test]
fn empirical_tilt_concentrates_on_the_population_tilt() {
    let cfg = TiltConfig::default();
    let pop = Population::new(&EnvironmentLaw::default_two_point(), 1 << 17, 99).unwrap();
    let target = pop.solve(V).unwrap().eta_bar;
    for seed in 0..4 {
        let z = zeta(100 + seed, 10_000);
        for n in [100usize, 1000, 10_000] {
            let eta = solve_eta_empirical(&z, n, V, &cfg).unwrap().eta_bar;
            let scaled = (eta - target).abs() / ((n as f64).ln() / n as f64).sqrt();
            assert!(scaled <= 5.0, "seed {seed}, n {n}: scaled deviation {scaled}");
        }
    }
}

#[test]
fn appending_sites_moves_the_tilt_by_order_h_over_n() {
    let cfg = TiltConfig::default();
    let n = 2000usize;
    let hs = [10usize, 40, 160, (n as f64).powf(0.9) as usize];
    for seed in 0..3 {
        let z = zeta(200 + seed, (n + hs[3]) as i64);
        let base = solve_eta_empirical(&z, n, V, &cfg).unwrap().eta_bar;
        for h in hs {
            let moved = solve_eta_empirical(&z, n + h, V, &cfg).unwrap().eta_bar;
            let c = (moved - base).abs() * n as f64 / h as f64;
            assert!(c <= 10.0, "seed {seed}, h {h}: C = {c}");
        }
    }
}

#[test]
fn lyapunov_is_concave_and_strictly_so_beyond_vc() {
    let pop = Population::new(&EnvironmentLaw::default_two_point(), 1 << 15, 4).unwrap();
    let vc = pop.critical_velocity().value;
    let grid: Vec<f64> = (0..=40).map(|k| 0.075 * k as f64).collect();
    let lam: Vec<f64> = grid.iter().map(|&v| pop.lyapunov(v).unwrap()).collect();
    assert!((lam[0] - pop.es()).abs() <= 1e-12);
    for k in 1..grid.len() - 1 {
        let second = lam[k + 1] - 2.0 * lam[k] + lam[k - 1];
        assert!(second <= 1e-9, "v = {}: second difference {second}", grid[k]);
        if grid[k - 1] > vc + 0.1 {
            assert!(second < -1e-6, "v = {}: not strictly concave", grid[k]);
        }
        assert!(lam[k] < pop.es());
    }
}

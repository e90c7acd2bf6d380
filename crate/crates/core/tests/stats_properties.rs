use brwre::stats::{calibration_suite, jackknife, jackknife_mean, kolmogorov_sf, ks_statistic, linear_fit, normal_cdf, normal_quantile};
use proptest::prelude::*;

proptest! {
    #[test]
    fn quantile_inverts_cdf(p in 1e-10..(1.0 - 1e-10f64)) {
        let x = normal_quantile(p);
        prop_assert!((normal_cdf(x) - p).abs() <= 1e-9 * p.min(1.0 - p).max(1e-3));
        prop_assert!((normal_quantile(1.0 - p) + x).abs() <= 1e-7 * x.abs().max(1.0));
    }

    #[test]
    fn ks_statistic_is_a_sup_distance(mut xs in proptest::collection::vec(-3.0..3.0f64, 1..60)) {
        let d = ks_statistic(&xs, normal_cdf);
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let brute = xs
            .iter()
            .enumerate()
            .map(|(i, x)| ((i + 1) as f64 / n - normal_cdf(*x)).max(normal_cdf(*x) - i as f64 / n))
            .fold(0.0, f64::max);
        prop_assert!((d - brute).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&kolmogorov_sf(d * n.sqrt())));
    }

    #[test]
    fn fits_recover_exact_lines(a in -5.0..5.0f64, b in -3.0..3.0f64) {
        let x: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|x| a + b * x).collect();
        let (fa, fb, se) = linear_fit(&x, &y);
        prop_assert!((fa - a).abs() <= 1e-10 && (fb - b).abs() <= 1e-10 && se <= 1e-9);
    }

    #[test]
    fn jackknife_of_the_mean_is_the_standard_error(xs in proptest::collection::vec(-10.0..10.0f64, 3..40)) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (m, se) = jackknife_mean(&xs);
        prop_assert!((m - mean).abs() <= 1e-12);
        prop_assert!((se - (var / n).sqrt()).abs() <= 1e-9);
        let (gm, gse) = jackknife(&xs, |s| s.iter().sum::<f64>() / s.len() as f64);
        prop_assert!((gm - m).abs() <= 1e-9 && (gse - se).abs() <= 1e-9);
    }
}

#[test]
fn kolmogorov_reference_values() {
    // Tabulated Kolmogorov distribution: P(K > 1.36) ~ 0.0495, P(K > 1.63) ~ 0.0098.
    assert!((kolmogorov_sf(1.358) - 0.05).abs() < 5e-4);
    assert!((kolmogorov_sf(1.628) - 0.01).abs() < 2e-4);
    assert_eq!(kolmogorov_sf(0.0), 1.0);
}

#[test]
fn calibration_is_deterministic_and_green() {
    let a = calibration_suite(17).unwrap();
    assert_eq!(a, calibration_suite(17).unwrap());
    assert!(a.iter().all(|r| r.pass), "{a:#?}");
}

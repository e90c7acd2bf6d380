//! Rescaled path ensembles and the statistical suites run on them.
//!
//! Every function here is a deterministic function of its inputs; the only
//! randomness lives in [`calibration_suite`], which draws from a keyed stream.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Family-wise significance level of one ensemble.
pub const ALPHA: f64 = 0.01;

/// Mean and batch-means standard error of a stationary sequence.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let k = batches.min(n);
    if k < 2 {
        return (mean, f64::NAN);
    }
    let size = n / k;
    let means: Vec<f64> = (0..k).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let bm = means.iter().sum::<f64>() / k as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Delete-one jackknife estimate and standard error of `stat`.
pub fn jackknife(xs: &[f64], stat: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let n = xs.len();
    let full = stat(xs);
    if n < 2 {
        return (full, f64::NAN);
    }
    let mut buf = Vec::with_capacity(n - 1);
    let leave: Vec<f64> = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend_from_slice(&xs[..i]);
            buf.extend_from_slice(&xs[i + 1..]);
            stat(&buf)
        })
        .collect();
    let mean = leave.iter().sum::<f64>() / n as f64;
    let var = leave.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (full, var.sqrt())
}

/// Jackknife for the sample mean, in closed form (it reduces to s/sqrt(n)).
pub fn jackknife_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
///
/// Uses the alternating series for `x >= 1` and the theta-function form
/// below, each truncated at 100 terms.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        let mut s = 0.0;
        for k in 1..=100 {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            s += sign * (-2.0 * k * k * x * x).exp();
        }
        (2.0 * s).clamp(0.0, 1.0)
    } else {
        let pi2 = std::f64::consts::PI.powi(2);
        let mut s = 0.0;
        for k in 1..=100 {
            let m = (2 * k - 1) as f64;
            s += (-m * m * pi2 / (8.0 * x * x)).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS statistic and asymptotic p-value against the standard normal.
pub fn ks_normal(sample: &[f64]) -> (f64, f64) {
    let d = ks_statistic(sample, normal_cdf);
    (d, kolmogorov_sf((sample.len() as f64).sqrt() * d))
}

/// Ordinary least squares `y = a + b x`: `(a, b, se_b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let se = if x.len() > 2 && sxx > 0.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (a, b, se)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    covariance(a, b) / (covariance(a, a) * covariance(b, b)).sqrt()
}

/// What a rescaled ensemble was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Legendre,
    Pam,
    Breakpoint,
    Tn,
    Fkpp,
    Median,
    Synthetic,
}

/// Centering and normalization applied to raw series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescaling {
    /// Drift per unit of `t` subtracted from the raw series.
    pub rate: f64,
    /// Divisor applied after centering.
    pub scale: f64,
    pub description: String,
}

/// Paths `(raw(t) - rate * t) / scale` on a common grid, one per environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledPathEnsemble {
    pub source: Source,
    pub n: u64,
    pub grid: Vec<f64>,
    pub rescaling: Rescaling,
    pub env_index: Vec<u64>,
    pub paths: Vec<Vec<f64>>,
}

/// Builds an ensemble from raw series sampled on `grid` (which must start
/// at `t = 0`). A raw value at `t = 0` that does not rescale to zero is
/// rejected.
pub fn build_ensemble(source: Source, n: u64, grid: &[f64], raw: &[(u64, Vec<f64>)], rescaling: Rescaling) -> Result<RescaledPathEnsemble> {
    if !(rescaling.scale.is_finite() && rescaling.scale > 0.0) {
        return Err(Error::DegenerateVariance(rescaling.scale));
    }
    if grid.first() != Some(&0.0) {
        return Err(Error::InvalidArgument("ensemble grid must start at t = 0".into()));
    }
    let mut paths = Vec::with_capacity(raw.len());
    let mut env_index = Vec::with_capacity(raw.len());
    for (idx, series) in raw {
        if series.len() != grid.len() {
            return Err(Error::InvalidArgument(format!("series {idx} has {} points, grid has {}", series.len(), grid.len())));
        }
        let path: Vec<f64> = grid.iter().zip(series).map(|(t, r)| (r - rescaling.rate * t) / rescaling.scale).collect();
        if path[0].abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("series {idx} does not start at 0 after rescaling: {}", path[0])));
        }
        paths.push(path);
        env_index.push(*idx);
    }
    Ok(RescaledPathEnsemble { source, n, grid: grid.to_vec(), rescaling, env_index, paths })
}

impl RescaledPathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Values of every path at grid index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[j]).collect()
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        self.grid
            .iter()
            .position(|g| (g - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not on the ensemble grid")))
    }

    /// Bonferroni-corrected level across the positive grid times.
    pub fn bonferroni_level(&self) -> f64 {
        ALPHA / self.grid.iter().filter(|t| **t > 0.0).count().max(1) as f64
    }
}

/// Outcome of one test, serialized as a JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub source: Source,
    pub n: u64,
    pub t: Option<f64>,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub pass: bool,
    pub config: Value,
}

/// KS test of `path(t) / sqrt(t)` against the standard normal, passing when
/// the p-value exceeds `level`.
pub fn ks_marginal(ens: &RescaledPathEnsemble, t: f64, level: f64) -> Result<TestReport> {
    if ens.len() < 100 {
        return Err(Error::EnsembleTooSmall { got: ens.len(), need: 100 });
    }
    if t <= 0.0 {
        return Err(Error::InvalidArgument("KS marginal needs t > 0".into()));
    }
    let j = ens.index_of(t)?;
    let sample: Vec<f64> = ens.column(j).iter().map(|x| x / t.sqrt()).collect();
    let (d, p) = ks_normal(&sample);
    Ok(TestReport {
        test: "ks_marginal".into(),
        source: ens.source,
        n: ens.n,
        t: Some(t),
        statistic: d,
        p_value: Some(p),
        pass: p > level,
        config: json!({ "level": level, "size": ens.len(), "rescaling": ens.rescaling }),
    })
}

/// Covariance and increment diagnostics of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianReport {
    /// Largest `|Cov(s,t) - min(s,t)|` in units of its sampling SE.
    pub covariance: TestReport,
    /// Largest `|rho|` between disjoint consecutive increments.
    pub increments: TestReport,
}

pub const RHO_THRESHOLD: f64 = 0.15;

pub fn brownian_suite(ens: &RescaledPathEnsemble, rho_threshold: f64) -> Result<BrownianReport> {
    let times: Vec<usize> = (0..ens.grid.len()).filter(|&j| ens.grid[j] > 0.0).collect();
    if times.len() < 4 {
        return Err(Error::InvalidArgument(format!("Brownian suite needs at least 4 positive grid times, got {}", times.len())));
    }
    if ens.len() < 3 {
        return Err(Error::EnsembleTooSmall { got: ens.len(), need: 3 });
    }
    let size = ens.len() as f64;
    let cols: Vec<Vec<f64>> = times.iter().map(|&j| ens.column(j)).collect();
    let mut max_z = 0.0f64;
    let mut max_dev = 0.0f64;
    for a in 0..cols.len() {
        for b in a..cols.len() {
            let c = covariance(&cols[a], &cols[b]);
            let target = ens.grid[times[a]].min(ens.grid[times[b]]);
            let (saa, sbb) = (ens.grid[times[a]], ens.grid[times[b]]);
            // Gaussian sampling variance of a covariance estimate under the target.
            let se = ((saa * sbb + target * target) / size).sqrt();
            max_dev = max_dev.max((c - target).abs());
            max_z = max_z.max((c - target).abs() / se);
        }
    }
    let pairs = cols.len() * (cols.len() + 1) / 2;
    let z_crit = normal_quantile(1.0 - ALPHA / (2.0 * pairs as f64));
    let mut incs: Vec<Vec<f64>> = Vec::new();
    let mut prev = vec![0.0; ens.len()];
    for c in &cols {
        incs.push(c.iter().zip(&prev).map(|(x, p)| x - p).collect());
        prev = c.clone();
    }
    let max_rho = incs.windows(2).map(|w| correlation(&w[0], &w[1]).abs()).fold(0.0, f64::max);
    let cfg = json!({ "size": ens.len(), "times": times.iter().map(|&j| ens.grid[j]).collect::<Vec<_>>() });
    Ok(BrownianReport {
        covariance: TestReport {
            test: "brownian_covariance".into(),
            source: ens.source,
            n: ens.n,
            t: None,
            statistic: max_z,
            p_value: None,
            pass: max_z <= z_crit,
            config: json!({ "max_abs_deviation": max_dev, "z_critical": z_crit, "ensemble": cfg }),
        },
        increments: TestReport {
            test: "increment_correlation".into(),
            source: ens.source,
            n: ens.n,
            t: None,
            statistic: max_rho,
            p_value: None,
            pass: max_rho < rho_threshold,
            config: json!({ "threshold": rho_threshold, "ensemble": cfg }),
        },
    })
}

/// `Var ~ level * n^slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub slope_se: f64,
    /// Geometric mean of `Var / n`, the level with the slope pinned at one.
    pub level: f64,
}

/// Smallest ratio between the largest and smallest `n` of a scaling fit.
pub const MIN_SPAN: f64 = 8.0;

pub fn variance_scaling(ns: &[f64], variances: &[f64]) -> Result<ScalingFit> {
    if ns.len() != variances.len() || ns.len() < 4 {
        return Err(Error::InvalidArgument("variance scaling needs at least 4 values of n".into()));
    }
    let (lo, hi) = ns.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &n| (a.min(n), b.max(n)));
    if hi < MIN_SPAN * lo * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!("n values must span a factor {MIN_SPAN}, got [{lo}, {hi}]")));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::DegenerateVariance(*v));
    }
    let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ly: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let (_, slope, slope_se) = linear_fit(&lx, &ly);
    let level = (ly.iter().zip(&lx).map(|(y, x)| y - x).sum::<f64>() / ns.len() as f64).exp();
    Ok(ScalingFit { slope, slope_se, level })
}

/// Sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    covariance(xs, xs)
}

/// Fit `g = A + B ln t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub a: f64,
    pub b: f64,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub pass: bool,
}

pub const ENVELOPE_RESIDUAL: f64 = 3.0;

pub fn log_envelope_fit(t: &[f64], g: &[f64], max_residual: f64) -> Result<EnvelopeFit> {
    if t.len() != g.len() || t.len() < 2 {
        return Err(Error::InvalidArgument("envelope fit needs matching series of length >= 2".into()));
    }
    if let Some((tt, gg)) = t.iter().zip(g).find(|(_, g)| **g < 0.0) {
        return Err(Error::NegativeGap { t: *tt, gap: *gg });
    }
    if t.iter().any(|t| *t <= 0.0) {
        return Err(Error::InvalidArgument("envelope fit needs t > 0".into()));
    }
    let lt: Vec<f64> = t.iter().map(|t| t.ln()).collect();
    let (a, b, _) = linear_fit(&lt, g);
    let residuals: Vec<f64> = lt.iter().zip(g).map(|(l, g)| g - a - b * l).collect();
    let m = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(EnvelopeFit { a, b, residuals, max_residual: m, pass: b.is_finite() && m <= max_residual })
}

/// Fit `ln p(h) = a - c h` to positive tail probabilities; returns `(a, c)`.
pub fn exponential_tail_fit(h: &[f64], p: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = h.iter().zip(p).filter(|(_, p)| **p > 0.0).map(|(h, p)| (*h, p.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument("tail fit needs at least two positive probabilities".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (a, b, _) = linear_fit(&x, &y);
    Ok((a, -b))
}

/// Standard normal draws by inverse CDF from a calibration stream.
pub fn normal_sample(seed: u64, key: u64, n: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, Domain::Calibration, key);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            normal_quantile(u.max(f64::MIN_POSITIVE))
        })
        .collect()
}

/// Synthetic Brownian paths on `grid` (starting at 0).
pub fn brownian_paths(seed: u64, key: u64, grid: &[f64], count: usize) -> Vec<Vec<f64>> {
    let z = normal_sample(seed, key, count * grid.len());
    z.chunks(grid.len())
        .map(|zs| {
            let mut w = 0.0;
            let mut prev = 0.0;
            grid.iter()
                .zip(zs)
                .map(|(t, z)| {
                    w += (t - prev).sqrt() * z;
                    prev = *t;
                    w
                })
                .collect()
        })
        .collect()
}

/// Self-tests on synthetic inputs with known answers; these gate every
/// other report.
pub fn calibration_suite(seed: u64) -> Result<Vec<TestReport>> {
    let mut out = Vec::new();
    let report = |test: &str, statistic: f64, p: Option<f64>, pass: bool, config: Value| TestReport {
        test: test.into(),
        source: Source::Synthetic,
        n: 0,
        t: None,
        statistic,
        p_value: p,
        pass,
        config,
    };

    let d0 = ks_statistic(&[0.0], normal_cdf);
    out.push(report("ks_point_mass", d0, None, (d0 - 0.5).abs() < 1e-15, json!({ "sample": [0.0] })));

    let mut worst = 0.0f64;
    for k in 1..1000 {
        let p = k as f64 / 1000.0;
        let q = normal_quantile(p);
        worst = worst.max((q + normal_quantile(1.0 - p)).abs()).max(((normal_cdf(q) - p) / p).abs());
    }
    for e in [1e-12, 1e-9, 1e-6, 1e-3] {
        let q = normal_quantile(e);
        worst = worst.max(((normal_cdf(q) - e) / e).abs());
    }
    out.push(report("normal_quantile_symmetry", worst, None, worst < 1e-9, json!({ "grid": 999 })));

    let pvals: Vec<f64> = (0..200).map(|k| ks_normal(&normal_sample(seed, k, 500)).1).collect();
    let d = ks_statistic(&pvals, |x| x.clamp(0.0, 1.0));
    let p = kolmogorov_sf((pvals.len() as f64).sqrt() * d);
    out.push(report("ks_pvalue_uniformity", d, Some(p), p > ALPHA, json!({ "seeds": 200, "sample_size": 500 })));

    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let paths = brownian_paths(seed, 10_000, &grid, 2000);
    let raw: Vec<(u64, Vec<f64>)> = paths.into_iter().enumerate().map(|(i, p)| (i as u64, p)).collect();
    let ens = build_ensemble(Source::Synthetic, 1, &grid, &raw, Rescaling { rate: 0.0, scale: 1.0, description: "identity".into() })?;
    let b = brownian_suite(&ens, RHO_THRESHOLD)?;
    out.push(b.covariance);
    out.push(b.increments);
    let ks = ks_marginal(&ens, 1.0, ens.bonferroni_level())?;
    out.push(ks);

    let ns = [100usize, 200, 400, 800, 1600];
    let walks = 4000;
    let z = normal_sample(seed, 20_000, walks * 1600);
    let mut vars = Vec::new();
    for &n in &ns {
        let ends: Vec<f64> = z.chunks(1600).map(|w| w[..n].iter().sum()).collect();
        vars.push(variance(&ends));
    }
    let nf: Vec<f64> = ns.iter().map(|n| *n as f64).collect();
    let fit = variance_scaling(&nf, &vars)?;
    out.push(report(
        "variance_scaling_iid",
        fit.slope,
        None,
        (fit.slope - 1.0).abs() <= 0.05,
        json!({ "walks": walks, "n": ns, "level": fit.level }),
    ));

    let t: Vec<f64> = (4..=12).map(|t| t as f64).collect();
    let g: Vec<f64> = t.iter().map(|t| 2.0 * t.ln()).collect();
    let fit = log_envelope_fit(&t, &g, ENVELOPE_RESIDUAL)?;
    out.push(report("log_envelope_exact", fit.b, None, (fit.b - 2.0).abs() < 1e-12 && fit.a.abs() < 1e-12, json!({ "a": fit.a })));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_branches_agree() {
        for x in [0.8, 0.9, 1.0, 1.1, 1.2] {
            let a = {
                let mut s = 0.0;
                for k in 1..=100 {
                    let k = k as f64;
                    s += if k as u64 % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * k * k * x * x).exp();
                }
                2.0 * s
            };
            let b = {
                let pi2 = std::f64::consts::PI.powi(2);
                let s: f64 = (1..=100).map(|k| (-((2 * k - 1) as f64).powi(2) * pi2 / (8.0 * x * x)).exp()).sum();
                1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s
            };
            assert!((a - b).abs() < 1e-13, "{x}: {a} {b}");
        }
        // Tabulated 95% point of the Kolmogorov distribution.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn jackknife_mean_matches_generic() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0];
        let (m1, s1) = jackknife_mean(&xs);
        let (m2, s2) = jackknife(&xs, mean);
        assert!((m1 - m2).abs() < 1e-14 && (s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn ks_point_mass_is_half() {
        assert_eq!(ks_statistic(&[0.0], normal_cdf), 0.5);
    }

    #[test]
    fn envelope_zero_gap() {
        let t = [4.0, 6.0, 8.0, 12.0];
        let fit = log_envelope_fit(&t, &[0.0; 4], 3.0).unwrap();
        assert_eq!((fit.a, fit.b), (0.0, 0.0));
        assert!(matches!(log_envelope_fit(&t, &[0.0, -1.0, 0.0, 0.0], 3.0), Err(Error::NegativeGap { .. })));
    }

    #[test]
    fn ensemble_rejects_degenerate_scale() {
        let r = build_ensemble(Source::Pam, 1, &[0.0, 1.0], &[(0, vec![0.0, 1.0])], Rescaling { rate: 0.0, scale: 0.0, description: String::new() });
        assert!(matches!(r, Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn calibration_passes() {
        for r in calibration_suite(7).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }
}

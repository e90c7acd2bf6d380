//! Tilts, Legendre transforms and the Lyapunov exponent.
//!
//! The tilt `eta_bar(v) < 0` solves `L'(eta) = 1/v`, either for the
//! empirical average `Lbar_n` of one environment or for the population
//! function `L = E L_1`. From it:
//!
//! * Legendre transform `L*(1/v) = eta_bar/v - L(eta_bar)`,
//! * Lyapunov exponent `lambda(v) = es - v L*(1/v)` above the critical
//!   velocity `v_c = 1/L'(0-)`, and `es + v L(0)` below it,
//! * the front velocity `v_0`, the root of `lambda`.

use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentLaw, ZetaView};
use crate::error::{Error, Result};
use crate::hitmgf::{log_mgf_avg, log_mgf_sweep, Estimate, MgfEval, PopulationModel, TruncationConfig};
use crate::stats::batch_means;

/// Derivative at zero above which the critical velocity is reported as 0.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Solver settings for the tilt equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltConfig {
    /// Compact tilt range; solutions outside it are logged.
    pub delta: (f64, f64),
    /// Largest tilt tried by the root finder.
    pub eta_max: f64,
    pub residual_tol: f64,
    pub max_iter: usize,
    #[serde(skip, default)]
    pub trunc: TruncationConfig,
}

impl Default for TiltConfig {
    fn default() -> Self {
        Self { delta: (-10.0, -1e-3), eta_max: -1e-8, residual_tol: 1e-10, max_iter: 200, trunc: TruncationConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiltMode {
    Empirical { n: usize },
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltSolution {
    pub v: f64,
    pub eta_bar: f64,
    /// `eta_bar / v - L(eta_bar)`.
    pub legendre: f64,
    /// `L(eta_bar)`, `L'(eta_bar)`, `L''(eta_bar)` of the solved function.
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub mode: TiltMode,
    pub residual: f64,
    /// Whether `eta_bar` lies in the configured range.
    pub in_delta: bool,
    /// Monte Carlo standard error of `eta_bar` (population mode only).
    pub eta_se: f64,
    /// Standard error of `L(eta_bar)` (population mode only).
    pub value_se: f64,
}

/// Solves `f'(eta) = 1/v` for a convex, increasing-derivative `f` given as
/// `eta -> (f, f', f'')`.
fn solve_tilt<F>(f: F, v: f64, cfg: &TiltConfig) -> Result<(f64, [f64; 3], f64)>
where
    F: Fn(f64) -> Result<[f64; 3]>,
{
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!("velocity must be positive, got {v}")));
    }
    let target = 1.0 / v;
    let at_zero = f(0.0)?;
    if at_zero[1] < target {
        return Err(Error::NoSolution { v, d1_at_zero: at_zero[1] });
    }
    let mut hi = cfg.eta_max;
    let f_hi = f(hi)?;
    if f_hi[1] - target < 0.0 {
        if (f_hi[1] - target).abs() <= cfg.residual_tol {
            return Ok((hi, f_hi, (f_hi[1] - target).abs()));
        }
        return Err(Error::NoSolution { v, d1_at_zero: at_zero[1] });
    }
    let mut lo = -1.0;
    let mut f_lo = f(lo)?;
    while f_lo[1] > target {
        lo *= 2.0;
        if lo < -1e6 {
            return Err(Error::RootNotFound(format!("no lower bracket for v = {v}")));
        }
        f_lo = f(lo)?;
    }
    let (mut x, mut fx) = if (f_lo[1] - target).abs() < (f_hi[1] - target).abs() { (lo, f_lo) } else { (hi, f_hi) };
    for _ in 0..cfg.max_iter {
        let r = fx[1] - target;
        if r.abs() <= cfg.residual_tol {
            return Ok((x, fx, r.abs()));
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - r / fx[2];
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == x || hi - lo <= f64::EPSILON * lo.abs() {
            return Ok((x, fx, r.abs()));
        }
        x = next;
        fx = f(x)?;
    }
    Err(Error::RootNotFound(format!("tilt iteration did not converge for v = {v}")))
}

fn finish(v: f64, eta: f64, vals: [f64; 3], residual: f64, mode: TiltMode, cfg: &TiltConfig) -> TiltSolution {
    let in_delta = eta >= cfg.delta.0 && eta <= cfg.delta.1;
    if !in_delta {
        log::info!("tilt {eta} for v = {v} lies outside [{}, {}]", cfg.delta.0, cfg.delta.1);
    }
    TiltSolution {
        v,
        eta_bar: eta,
        legendre: eta / v - vals[0],
        value: vals[0],
        d1: vals[1],
        d2: vals[2],
        mode,
        residual,
        in_delta,
        eta_se: 0.0,
        value_se: 0.0,
    }
}

fn triple(e: MgfEval) -> [f64; 3] {
    [e.value, e.d1, e.d2]
}

/// Empirical tilt `eta_bar_n(v)` for `Lbar_n` over sites `1..=n`.
pub fn solve_eta_empirical(zeta: &ZetaView, n: usize, v: f64, cfg: &TiltConfig) -> Result<TiltSolution> {
    let f = |eta: f64| log_mgf_avg(zeta, n, eta, &cfg.trunc).map(triple);
    let (eta, vals, res) = solve_tilt(f, v, cfg)?;
    Ok(finish(v, eta, vals, res, TiltMode::Empirical { n }, cfg))
}

/// `(Lbar_n)*(1/v)`.
pub fn legendre_empirical(zeta: &ZetaView, n: usize, v: f64, cfg: &TiltConfig) -> Result<f64> {
    Ok(solve_eta_empirical(zeta, n, v, cfg)?.legendre)
}

/// Front velocity with its critical counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Velocities {
    pub v0: f64,
    pub v0_se: f64,
    pub vc: f64,
    pub vc_se: f64,
    /// `v0 - vc` exceeds three combined standard errors.
    pub vel_holds: bool,
}

/// Population-level tilt machinery over one sampled window.
#[derive(Debug, Clone)]
pub struct Population {
    pub model: PopulationModel,
    pub cfg: TiltConfig,
    at_zero: [Estimate; 3],
}

impl Population {
    pub fn new(law: &EnvironmentLaw, n_mc: usize, seed: u64) -> Result<Self> {
        Self::with_config(law, n_mc, seed, TiltConfig::default())
    }

    pub fn with_config(law: &EnvironmentLaw, n_mc: usize, seed: u64, cfg: TiltConfig) -> Result<Self> {
        let mut model = PopulationModel::new(law, n_mc, seed)?;
        model.cfg = cfg.trunc;
        let at_zero = model.eval(0.0)?;
        Ok(Self { model, cfg, at_zero })
    }

    pub fn es(&self) -> f64 {
        self.model.es
    }

    /// `L(0)` with its standard error.
    pub fn l_at_zero(&self) -> Estimate {
        self.at_zero[0]
    }

    /// `v_c = 1/L'(0-)`, or 0 when the derivative diverges.
    pub fn critical_velocity(&self) -> Estimate {
        let d = self.at_zero[1];
        if !d.value.is_finite() || d.value > DIVERGENCE_THRESHOLD {
            return Estimate { value: 0.0, se: 0.0 };
        }
        Estimate { value: 1.0 / d.value, se: d.se / (d.value * d.value) }
    }

    /// `eta_bar(v)` for the population function `L`.
    pub fn solve(&self, v: f64) -> Result<TiltSolution> {
        let vc = self.critical_velocity().value;
        if v <= vc {
            return Err(Error::BelowCritical { v, v_c: vc });
        }
        let f = |eta: f64| -> Result<[f64; 3]> {
            let e = self.model.eval(eta)?;
            Ok([e[0].value, e[1].value, e[2].value])
        };
        let (eta, vals, res) = solve_tilt(f, v, &self.cfg)?;
        let mut sol = finish(v, eta, vals, res, TiltMode::Population, &self.cfg);
        let est = self.model.eval(eta)?;
        sol.eta_se = est[1].se / est[2].value;
        sol.value_se = est[0].se;
        Ok(sol)
    }

    /// `lambda(v)` for `v >= 0`, using the linear branch on `[0, v_c]`.
    pub fn lyapunov(&self, v: f64) -> Result<f64> {
        Ok(self.lyapunov_with_slope(v)?.0)
    }

    /// `lambda(v)` and `lambda'(v) = L(eta_bar(v))`.
    fn lyapunov_with_slope(&self, v: f64) -> Result<(f64, f64, Option<TiltSolution>)> {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("velocity must be non-negative, got {v}")));
        }
        let es = self.es();
        let vc = self.critical_velocity().value;
        if v <= vc || v == 0.0 {
            let l0 = self.at_zero[0].value;
            return Ok((es + v * l0, l0, None));
        }
        let sol = self.solve(v)?;
        Ok((es - sol.eta_bar + v * sol.value, sol.value, Some(sol)))
    }

    /// Root `v_0` of `lambda`, searched up to `v_max`.
    pub fn zero_velocity(&self, v_max: f64) -> Result<Velocities> {
        let vc = self.critical_velocity();
        let mut lo = 0.0;
        let mut hi = 1.0f64.max(vc.value);
        let mut at_hi = self.lyapunov_with_slope(hi)?;
        while at_hi.0 > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > v_max {
                return Err(Error::RootNotFound(format!("lambda has no sign change on (0, {v_max}]")));
            }
            at_hi = self.lyapunov_with_slope(hi)?;
        }
        let (mut x, mut fx) = (hi, at_hi);
        for _ in 0..200 {
            if fx.0.abs() <= 1e-12 {
                break;
            }
            if fx.0 > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - fx.0 / fx.1;
            let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if next == x || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            x = next;
            fx = self.lyapunov_with_slope(x)?;
        }
        let v0_se = match fx.2 {
            Some(sol) => x * sol.value_se / sol.value.abs(),
            None => x * self.at_zero[0].se / self.at_zero[0].value.abs(),
        };
        let margin = 3.0 * (v0_se * v0_se + vc.se * vc.se).sqrt();
        Ok(Velocities { v0: x, v0_se, vc: vc.value, vc_se: vc.se, vel_holds: x - vc.value > margin })
    }

    /// `lambda` on a velocity grid together with `v_c`, `v_0` and the verdict.
    pub fn curve(&self, grid: &[f64], v_max: f64) -> Result<LyapunovCurve> {
        let vel = self.zero_velocity(v_max)?;
        let mut points = Vec::with_capacity(grid.len());
        for &v in grid {
            let (lambda, _, sol) = self.lyapunov_with_slope(v)?;
            points.push(CurvePoint { v, lambda, eta_bar: sol.map(|s| s.eta_bar), legendre: sol.map(|s| s.legendre) });
        }
        Ok(LyapunovCurve { points, v_c: vel.vc, v_0: vel.v0, vel_holds: vel.vel_holds })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub v: f64,
    pub lambda: f64,
    /// Absent on the linear branch `v <= v_c`.
    pub eta_bar: Option<f64>,
    pub legendre: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCurve {
    pub points: Vec<CurvePoint>,
    pub v_c: f64,
    pub v_0: f64,
    pub vel_holds: bool,
}

/// Population tilt for `law`, estimated from `n_mc` sampled sites.
pub fn solve_eta_population(law: &EnvironmentLaw, v: f64, n_mc: usize, seed: u64) -> Result<TiltSolution> {
    Population::new(law, n_mc, seed)?.solve(v)
}

pub fn lyapunov(law: &EnvironmentLaw, v: f64, n_mc: usize, seed: u64) -> Result<f64> {
    Population::new(law, n_mc, seed)?.lyapunov(v)
}

pub fn critical_velocity(law: &EnvironmentLaw, n_mc: usize, seed: u64) -> Result<f64> {
    Ok(Population::new(law, n_mc, seed)?.critical_velocity().value)
}

/// Default search limit for `v_0`.
pub const V_MAX: f64 = 1e3;

pub fn zero_velocity(law: &EnvironmentLaw, n_mc: usize, seed: u64) -> Result<(f64, bool)> {
    let vel = Population::new(law, n_mc, seed)?.zero_velocity(V_MAX)?;
    Ok((vel.v0, vel.vel_holds))
}

/// `lambda(v) = es - 1 + sqrt(1 + v^2) - v asinh(v)` for a constant rate `es`.
pub fn constant_lyapunov(es: f64, v: f64) -> f64 {
    es - 1.0 + (1.0 + v * v).sqrt() - v * v.asinh()
}

/// Variance constants of the invariance principles at velocity `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimates {
    pub v: f64,
    pub eta_bar: f64,
    /// `L(eta_bar)` over the long window.
    pub l_value: f64,
    pub sigma_v2: f64,
    /// `sqrt(sigma_v2 * v) / |L(eta_bar)|`.
    pub sigma_bar_v: f64,
    /// `|eta_bar_n| sqrt(sum_i L_i''(eta_bar_n))` with `n` the window length.
    pub sigma_n_zeta: f64,
    pub lag_cutoff: usize,
    /// Autocovariances of the V-terms at lags `0..=lag_cutoff`.
    pub autocov: Vec<f64>,
    pub sigma_v2_se: f64,
}

impl SigmaEstimates {
    /// Rebuilds `sigma_bar_v` from the stored components.
    pub fn assembled_sigma_bar(&self) -> f64 {
        (self.sigma_v2 * self.v).sqrt() / self.l_value.abs()
    }
}

fn autocov(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    (0..=max_lag.min(n - 1))
        .map(|j| (0..n - j).map(|i| (xs[i] - mean) * (xs[i + j] - mean)).sum::<f64>() / n as f64)
        .collect()
}

fn long_run_variance(gamma: &[f64]) -> f64 {
    gamma[0] + 2.0 * gamma[1..].iter().sum::<f64>()
}

pub const DEFAULT_LAG_CUTOFF: usize = 50;

/// `sigma_v^2`, `sigma_bar_v` and `sigma_n^zeta(v)` from the V-terms
/// `V_i = eta_bar/v - L_i(eta_bar)` on sites `1..=n`.
pub fn sigma_constants(zeta: &ZetaView, n: usize, v: f64, lag_cutoff: usize, cfg: &TiltConfig) -> Result<SigmaEstimates> {
    if n < 4 * lag_cutoff.max(1) {
        return Err(Error::InvalidArgument(format!("window of {n} sites is too short for lag {lag_cutoff}")));
    }
    let sol = solve_eta_empirical(zeta, n, v, cfg)?;
    let evals = log_mgf_sweep(zeta, 1, n, sol.eta_bar, &cfg.trunc)?;
    let vs: Vec<f64> = evals.iter().map(|e| sol.eta_bar / v - e.value).collect();
    let gamma = autocov(&vs, lag_cutoff);
    let sigma_v2 = long_run_variance(&gamma);
    let scale = 1.0 + vs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if !(sigma_v2 > 1e-14 * scale) {
        return Err(Error::DegenerateVariance(sigma_v2));
    }
    let tail_start = gamma.len().saturating_sub(10).max(1);
    let tail = 2.0 * gamma[tail_start..].iter().map(|g| g.abs()).sum::<f64>();
    if tail > 0.01 * sigma_v2 {
        log::warn!("covariance tail {tail:e} exceeds 1% of sigma_v^2 = {sigma_v2:e}");
    }

    let batches = 10;
    let size = n / batches;
    let per_batch: Vec<f64> = (0..batches)
        .map(|b| long_run_variance(&autocov(&vs[b * size..(b + 1) * size], lag_cutoff)))
        .collect();
    let (_, sigma_v2_se) = batch_means(&per_batch, batches);

    let l_value = sol.value;
    let sigma_n_zeta = sol.eta_bar.abs() * (n as f64 * sol.d2).sqrt();
    Ok(SigmaEstimates {
        v,
        eta_bar: sol.eta_bar,
        l_value,
        sigma_v2,
        sigma_bar_v: (sigma_v2 * v).sqrt() / l_value.abs(),
        sigma_n_zeta,
        lag_cutoff,
        autocov: gamma,
        sigma_v2_se,
    })
}

/// `sigma_n^zeta(v) = |eta_bar_n| sqrt(sum_{i<=n} L_i''(eta_bar_n))`.
pub fn sigma_n_zeta(zeta: &ZetaView, n: usize, v: f64, cfg: &TiltConfig) -> Result<f64> {
    let sol = solve_eta_empirical(zeta, n, v, cfg)?;
    Ok(sol.eta_bar.abs() * (n as f64 * sol.d2).sqrt())
}

/// Value at the real index `s >= 0` of a sequence given at integers,
/// by linear interpolation in the fractional part.
pub fn interpolate_index(s: f64, at: impl Fn(usize) -> Result<f64>) -> Result<f64> {
    let k = s.floor() as usize;
    let frac = s - k as f64;
    let lo = at(k)?;
    if frac == 0.0 {
        return Ok(lo);
    }
    Ok(lo + frac * (at(k + 1)? - lo))
}

/// `W_n(t) = t sqrt(n) ((Lbar_{nt})*(1/v) - L*(1/v)) / sigma_v` on `grid`.
pub fn w_n_path(
    zeta: &ZetaView,
    v: f64,
    n: usize,
    grid: &[f64],
    legendre_pop: f64,
    sigma_v: f64,
    cfg: &TiltConfig,
) -> Result<Vec<f64>> {
    let f = |k: usize| -> Result<f64> {
        if k == 0 {
            return Ok(0.0);
        }
        Ok(k as f64 * (legendre_empirical(zeta, k, v, cfg)? - legendre_pop))
    };
    let norm = sigma_v * (n as f64).sqrt();
    grid.iter().map(|&t| Ok(interpolate_index(n as f64 * t, f)? / norm)).collect()
}

/// `sum_{i <= nt} (L(eta_bar) - L_i(eta_bar)) / (sigma_v sqrt(n))`, the
/// explicit-sum approximation of `W_n(t)`.
pub fn w_n_explicit(
    zeta: &ZetaView,
    n: usize,
    grid: &[f64],
    eta_bar: f64,
    l_pop: f64,
    sigma_v: f64,
    cfg: &TruncationConfig,
) -> Result<Vec<f64>> {
    let k_max = grid.iter().map(|t| (n as f64 * t).ceil() as usize).max().unwrap_or(0);
    let evals = if k_max > 0 { log_mgf_sweep(zeta, 1, k_max, eta_bar, cfg)? } else { Vec::new() };
    let mut partial = vec![0.0];
    for e in &evals {
        partial.push(partial.last().unwrap() + (l_pop - e.value));
    }
    let norm = sigma_v * (n as f64).sqrt();
    grid.iter()
        .map(|&t| Ok(interpolate_index(n as f64 * t, |k| Ok(partial[k]))? / norm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_environment, zeta_of, Environment, Window};

    fn zeros() -> ZetaView {
        zeta_of(&Environment::constant(Window::new(-2000, 2000), 1.0))
    }

    #[test]
    fn constant_potential_tilts() {
        let cfg = TiltConfig::default();
        let s = solve_eta_empirical(&zeros(), 10, 1.0, &cfg).unwrap();
        assert!((s.eta_bar - (1.0 - 2f64.sqrt())).abs() < 1e-9);
        assert!(s.residual <= 1e-10);
        let s = solve_eta_empirical(&zeros(), 10, 2.0, &cfg).unwrap();
        assert!((s.eta_bar - (1.0 - 5f64.sqrt())).abs() < 1e-9);
        for v in [0.01, 0.1, 5.0] {
            assert!(solve_eta_empirical(&zeros(), 3, v, &cfg).is_ok());
        }
    }

    #[test]
    fn constant_reference_population() {
        let pop = Population::new(&EnvironmentLaw::constant(1.0), 100, 0).unwrap();
        assert_eq!(pop.critical_velocity().value, 0.0);
        let s = pop.solve(1.0).unwrap();
        assert!((s.eta_bar - (1.0 - 2f64.sqrt())).abs() < 1e-9);
        assert!((pop.lyapunov(1.0).unwrap() - (2f64.sqrt() - (1.0 + 2f64.sqrt()).ln())).abs() < 1e-9);
        assert_eq!(pop.lyapunov(0.0).unwrap(), 1.0);
        let vel = pop.zero_velocity(V_MAX).unwrap();
        assert!(vel.v0 > 1.4 && vel.v0 < 1.6);
        assert!(constant_lyapunov(1.0, vel.v0).abs() < 1e-9);
    }

    #[test]
    fn two_point_population_properties() {
        let pop = Population::new(&EnvironmentLaw::default_two_point(), 20_000, 3).unwrap();
        let vc = pop.critical_velocity().value;
        assert!(vc > 0.0);
        assert!(matches!(pop.solve(vc), Err(Error::BelowCritical { .. })));
        let vel = pop.zero_velocity(V_MAX).unwrap();
        assert!(pop.lyapunov(vel.v0).unwrap().abs() < 1e-8);
        let mut prev = f64::INFINITY;
        for k in 1..=5 {
            let v = vc + k as f64 * 0.3;
            let eta = pop.solve(v).unwrap().eta_bar;
            assert!(eta < prev);
            prev = eta;
        }
    }

    #[test]
    fn sigma_rejects_constant_potential() {
        let cfg = TiltConfig::default();
        assert!(matches!(sigma_constants(&zeros(), 1000, 1.0, 50, &cfg), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn sigma_bar_is_assembled() {
        let law = EnvironmentLaw::default_two_point();
        let env = sample_environment(&law, Window::new(-20_000, 20_000), 8).unwrap();
        let s = sigma_constants(&zeta_of(&env), 20_000, 2.0, 50, &TiltConfig::default()).unwrap();
        assert_eq!(s.sigma_bar_v, s.assembled_sigma_bar());
        assert!(s.sigma_v2 > 0.0);
    }

    #[test]
    fn w_path_starts_at_zero() {
        let law = EnvironmentLaw::default_two_point();
        let env = sample_environment(&law, Window::new(-20_000, 2_000), 8).unwrap();
        let z = zeta_of(&env);
        let cfg = TiltConfig::default();
        let w = w_n_path(&z, 2.0, 100, &[0.0, 0.5, 1.0], -0.1, 1.0, &cfg).unwrap();
        assert_eq!(w[0], 0.0);
        let e = w_n_explicit(&z, 100, &[0.0, 0.25], -0.5, -0.8, 1.0, &cfg.trunc).unwrap();
        assert_eq!(e[0], 0.0);
    }
}

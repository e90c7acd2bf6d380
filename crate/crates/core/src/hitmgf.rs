//! Hitting-time log moment generating functions.
//!
//! For the potential `psi = zeta + eta`, `L_i(eta)` is the log of
//! `E_{i-1}[exp(int_0^{H_i} psi(X_s) ds)]` for the rate-one walk started at
//! `i - 1`. First-step analysis gives the continued fraction
//!
//! ```text
//! a(x) = 1/2 / (1 - psi(x) - a(x-1)/2),      L_i = ln a(i-1)
//! ```
//!
//! which is run forward from a seed far to the left of `i - 1`. Errors in
//! `ln a` shrink by the factor `a(x) a(x-1) < 1` per site, so one sweep
//! yields every `L_i` to the right of the burn-in with no further loss.
//! Derivatives in `eta` are carried alongside in forward mode.

use crate::env::{sample_environment, zeta_of, EnvironmentLaw, Window, ZetaView};
use crate::error::{Error, Result};
use crate::stats::batch_means;

/// Window-doubling policy for the truncated continued fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConfig {
    /// Initial number of sites to the left of `i - 1`.
    pub m0: usize,
    pub growth: usize,
    /// Absolute tolerance on `L_i`.
    pub tol: f64,
    /// Hard cap on the window; reaching it logs a slow-convergence warning.
    pub max_window: usize,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self { m0: 64, growth: 2, tol: 1e-12, max_window: 1_000_000 }
    }
}

impl TruncationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m0 < 1 || self.growth < 2 || !(self.tol > 0.0) || self.max_window < self.m0 {
            return Err(Error::InvalidArgument(format!("bad truncation config {self:?}")));
        }
        Ok(())
    }
}

/// `L_i(eta)` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfEval {
    pub value: f64,
    /// Tilted mean of the hitting time.
    pub d1: f64,
    /// Tilted variance of the hitting time.
    pub d2: f64,
    /// Change of `value` under the last window doubling.
    pub trunc_bound: f64,
}

#[derive(Debug, Clone, Copy)]
struct State {
    a: f64,
    l: f64,
    g: f64,
    h: f64,
}

impl State {
    /// Fixed point of the recursion for the constant potential `psi`.
    fn fixed_point(psi: f64) -> Self {
        let c = 1.0 - psi;
        if c <= 1.0 {
            return State { a: 1.0, l: 0.0, g: f64::INFINITY, h: f64::INFINITY };
        }
        let s = (c * c - 1.0).sqrt();
        let a = 1.0 / (c + s);
        State { a, l: a.ln(), g: 1.0 / s, h: c / (s * s * s) }
    }

    #[inline]
    fn step(self, psi: f64) -> Self {
        let d = 1.0 - psi - 0.5 * self.a;
        let a = 0.5 / d;
        let n1 = 1.0 + 0.5 * self.a * self.g;
        let g = n1 / d;
        let h = 0.5 * self.a * (self.h + self.g * self.g) / d + g * g;
        State { a, l: -(2.0 * d).ln(), g, h }
    }

    fn to_eval(self, trunc_bound: f64) -> MgfEval {
        MgfEval { value: self.l, d1: self.g, d2: self.h, trunc_bound }
    }
}

fn check_eta(zeta: &ZetaView, eta: f64) -> Result<()> {
    if !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("eta = {eta}")));
    }
    if eta > 0.0 {
        let max_psi = zeta.max() + eta;
        if max_psi >= 0.0 {
            return Err(Error::NonFiniteMgf { eta, max_psi });
        }
    }
    Ok(())
}

/// Runs the recursion over `z` from the fixed-point seed of its minimum.
fn run(z: &[f64], eta: f64) -> State {
    let psi_min = z.iter().copied().fold(f64::INFINITY, f64::min) + eta;
    z.iter().fold(State::fixed_point(psi_min), |s, &zx| s.step(zx + eta))
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_infinite() && b.is_infinite())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    same(a, b) || (a - b).abs() < tol * a.abs().max(1.0)
}

/// Burn-in at the site `x_end`: returns the window `M`, the state at
/// `x_end` and the certificate.
fn burn_in(zeta: &ZetaView, x_end: i64, eta: f64, cfg: &TruncationConfig) -> Result<(usize, State, f64)> {
    cfg.validate()?;
    check_eta(zeta, eta)?;
    if x_end > zeta.x_hi() {
        return Err(Error::OutsideEnvironment(x_end));
    }
    if x_end < zeta.x_lo {
        return Err(Error::WindowUnderflow { site: x_end, x_lo: zeta.x_lo });
    }
    let available = (x_end - zeta.x_lo) as usize;
    let limit = available.min(cfg.max_window);
    let eval = |m: usize| {
        let z = zeta.range(x_end - m as i64, x_end).expect("window checked");
        run(z, eta)
    };

    let mut m = cfg.m0.min(limit);
    let mut prev = eval(m);
    let mut last_diff = f64::INFINITY;
    loop {
        let next = (m * cfg.growth).min(limit);
        if next == m {
            if limit == available && available < cfg.max_window {
                return Err(Error::WindowUnderflow { site: x_end - (m * cfg.growth) as i64, x_lo: zeta.x_lo });
            }
            log::warn!("slow convergence at site {}: window {m}, last change {last_diff:e}", x_end + 1);
            return Ok((m, prev, last_diff));
        }
        let cur = eval(next);
        let diff = if same(cur.l, prev.l) { 0.0 } else { (cur.l - prev.l).abs() };
        let half = 0.5 * cfg.tol;
        if diff < half && close(cur.g, prev.g, half) && close(cur.h, prev.h, half) {
            return Ok((next, cur, diff));
        }
        m = next;
        prev = cur;
        last_diff = diff;
    }
}

/// `L_i(eta)` at a single site.
pub fn log_mgf_site(zeta: &ZetaView, i: i64, eta: f64, cfg: &TruncationConfig) -> Result<MgfEval> {
    let (_, state, bound) = burn_in(zeta, i - 1, eta, cfg)?;
    Ok(state.to_eval(bound))
}

/// `L_i(eta)` for the `n` consecutive sites `first, ..., first + n - 1`.
///
/// The burn-in is certified at `first`; the contraction of the recursion
/// keeps every later site at least as accurate.
pub fn log_mgf_sweep(zeta: &ZetaView, first: i64, n: usize, eta: f64, cfg: &TruncationConfig) -> Result<Vec<MgfEval>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let last = first + n as i64 - 2;
    if last > zeta.x_hi() {
        return Err(Error::OutsideEnvironment(last + 1));
    }
    let (_, mut state, bound) = burn_in(zeta, first - 1, eta, cfg)?;
    let mut out = Vec::with_capacity(n);
    out.push(state.to_eval(bound));
    if n > 1 {
        let z = zeta.range(first, last).expect("range checked");
        for &zx in z {
            state = state.step(zx + eta);
            out.push(state.to_eval(bound));
        }
    }
    Ok(out)
}

/// Arithmetic mean of per-site evaluations; the bound is the largest one.
pub fn mean_eval(evals: &[MgfEval]) -> MgfEval {
    let n = evals.len() as f64;
    let mut m = MgfEval { value: 0.0, d1: 0.0, d2: 0.0, trunc_bound: 0.0 };
    for e in evals {
        m.value += e.value;
        m.d1 += e.d1;
        m.d2 += e.d2;
        m.trunc_bound = m.trunc_bound.max(e.trunc_bound);
    }
    m.value /= n;
    m.d1 /= n;
    m.d2 /= n;
    m
}

/// `(1/n) sum_{i=1}^n L_i(eta)`.
pub fn log_mgf_avg(zeta: &ZetaView, n: usize, eta: f64, cfg: &TruncationConfig) -> Result<MgfEval> {
    log_mgf_avg_from(zeta, 1, n, eta, cfg)
}

/// Mean of `L_i(eta)` over `first..first + n`.
pub fn log_mgf_avg_from(zeta: &ZetaView, first: i64, n: usize, eta: f64, cfg: &TruncationConfig) -> Result<MgfEval> {
    if n == 0 {
        return Err(Error::InvalidArgument("average over zero sites".into()));
    }
    Ok(mean_eval(&log_mgf_sweep(zeta, first, n, eta, cfg)?))
}

/// Sites kept to the left of site 1 in sampled windows.
pub const DEFAULT_BURN: i64 = 1 << 14;

/// Number of batches for batch-means standard errors.
pub const BATCHES: usize = 32;

/// Monte Carlo proxy for the annealed quantities: one long sampled window
/// `[1 - burn, n]`, reused for every `eta` so that curves in `eta` share
/// their randomness.
#[derive(Debug, Clone)]
pub struct PopulationModel {
    pub zeta: ZetaView,
    pub n: usize,
    pub es: f64,
    pub cfg: TruncationConfig,
    /// True for the constant reference law, where every `L_i` is the same.
    pub degenerate: bool,
}

/// Population estimate of one quantity with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl PopulationModel {
    /// Samples the window for `law`. The constant law is accepted here as a
    /// reference and yields `zeta = 0` with zero standard errors.
    pub fn new(law: &EnvironmentLaw, n: usize, seed: u64) -> Result<Self> {
        law.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("n_mc must be positive".into()));
        }
        let window = Window::new(1 - DEFAULT_BURN, n as i64);
        if law.is_degenerate() {
            let zeta = ZetaView { x_lo: window.lo, zeta: vec![0.0; window.len()] };
            return Ok(Self { zeta, n, es: law.es(), cfg: TruncationConfig::default(), degenerate: true });
        }
        let env = sample_environment(law, window, seed)?;
        Ok(Self { zeta: zeta_of(&env), n, es: law.es(), cfg: TruncationConfig::default(), degenerate: false })
    }

    /// Per-site evaluations at sites `1..=n`.
    pub fn sweep(&self, eta: f64) -> Result<Vec<MgfEval>> {
        if self.degenerate {
            return Ok(vec![log_mgf_site(&self.zeta, 1, eta, &self.cfg)?; self.n]);
        }
        log_mgf_sweep(&self.zeta, 1, self.n, eta, &self.cfg)
    }

    /// `L(eta)`, `L'(eta)`, `L''(eta)` with standard errors.
    pub fn eval(&self, eta: f64) -> Result<[Estimate; 3]> {
        let evals = self.sweep(eta)?;
        let est = |f: fn(&MgfEval) -> f64| {
            let xs: Vec<f64> = evals.iter().map(f).collect();
            if self.degenerate {
                Estimate { value: xs[0], se: 0.0 }
            } else {
                let (value, se) = batch_means(&xs, BATCHES);
                Estimate { value, se }
            }
        };
        Ok([est(|e| e.value), est(|e| e.d1), est(|e| e.d2)])
    }
}

/// Estimate of `L(eta) = E L_1(eta)` from a fresh window of `n_sites`.
pub fn log_mgf_population(law: &EnvironmentLaw, eta: f64, n_sites: usize, seed: u64) -> Result<Estimate> {
    if law.is_degenerate() {
        return Err(Error::InvalidLaw("a constant rate is not a random environment".into()));
    }
    Ok(PopulationModel::new(law, n_sites, seed)?.eval(eta)?[0])
}

/// Brute-force reference for [`log_mgf_site`]: solves the killed
/// tridiagonal system on `[i-1-M, i-1]` with `g(i) = 1` and `g(i-2-M) = 0`
/// by elimination from the right, in log scale, and returns `ln g(i-1)`.
pub fn oracle_dense(zeta: &ZetaView, i: i64, eta: f64, m: usize) -> Result<f64> {
    check_eta(zeta, eta)?;
    let x0 = i - 1 - m as i64;
    let z = zeta
        .range(x0, i - 1)
        .map_err(|site| Error::WindowUnderflow { site, x_lo: zeta.x_lo })?;
    let len = z.len();
    // Row x reads d_x g(x) - g(x+1)/2 - g(x-1)/2 = 0. Eliminating from the
    // right gives g(x) = alpha_x + beta_x g(x-1).
    let mut ln_alpha = vec![0.0; len];
    let mut beta = vec![0.0; len];
    let (mut ln_alpha_next, mut beta_next) = (0.0f64, 0.0f64);
    for k in (0..len).rev() {
        let d = 1.0 - (z[k] + eta);
        let piv = d - 0.5 * beta_next;
        if !(piv > 0.0) {
            return Err(Error::Singular { row: k });
        }
        ln_alpha[k] = (0.5f64).ln() + ln_alpha_next - piv.ln();
        beta[k] = 0.5 / piv;
        ln_alpha_next = ln_alpha[k];
        beta_next = beta[k];
    }
    let mut ln_g = ln_alpha[0];
    for k in 1..len {
        ln_g = ln_alpha[k] + (beta[k] * (ln_g - ln_alpha[k]).exp()).ln_1p();
    }
    Ok(ln_g)
}

/// `L(eta) = -arccosh(1 - eta)` for `zeta = 0`.
pub fn constant_potential_l(eta: f64) -> f64 {
    -(1.0 - eta).acosh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, EnvironmentLaw};

    fn zeros(lo: i64, hi: i64) -> ZetaView {
        zeta_of(&Environment::constant(Window::new(lo, hi), 2.0))
    }

    fn two_point(seed: u64) -> ZetaView {
        let env = sample_environment(&EnvironmentLaw::default_two_point(), Window::new(-3000, 300), seed).unwrap();
        zeta_of(&env)
    }

    #[test]
    fn constant_potential_closed_forms() {
        let z = zeros(-1000, 10);
        let cfg = TruncationConfig::default();
        let e = log_mgf_site(&z, 1, 0.0, &cfg).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.d1.is_infinite());
        let e = log_mgf_site(&z, 1, -1.0, &cfg).unwrap();
        assert!((e.value - (2.0 - 3f64.sqrt()).ln()).abs() < 1e-14);
        assert!((e.d1 - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        let c: f64 = 2.0;
        assert!((e.d2 - c / (c * c - 1.0).powf(1.5)).abs() < 1e-13);
        let avg = log_mgf_avg(&z, 7, -1.0, &cfg).unwrap();
        assert!((avg.value - constant_potential_l(-1.0)).abs() < 1e-14);
    }

    #[test]
    fn oracle_one_step_and_closed_form() {
        let z = two_point(1);
        let psi = z.get(4).unwrap() - 0.3;
        assert!((oracle_dense(&z, 5, -0.3, 0).unwrap() - (0.5 / (1.0 - psi)).ln()).abs() < 1e-15);
        let c = zeros(-500, 10);
        assert!((oracle_dense(&c, 1, -1.0, 200).unwrap() - (2.0 - 3f64.sqrt()).ln()).abs() < 1e-10);
    }

    #[test]
    fn site_matches_oracle_on_random_environments() {
        let cfg = TruncationConfig::default();
        for seed in 0..10 {
            let z = two_point(seed);
            for eta in [-2.0, -0.5, -0.1] {
                let a = log_mgf_site(&z, 1, eta, &cfg).unwrap().value;
                let b = oracle_dense(&z, 1, eta, 1000).unwrap();
                assert!((a - b).abs() < 1e-10, "seed {seed} eta {eta}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sweep_matches_individual_sites() {
        let z = two_point(3);
        let cfg = TruncationConfig::default();
        let sweep = log_mgf_sweep(&z, -5, 50, -0.4, &cfg).unwrap();
        for (k, e) in sweep.iter().enumerate() {
            let single = log_mgf_site(&z, -5 + k as i64, -0.4, &cfg).unwrap();
            assert!((e.value - single.value).abs() < 1e-12);
            assert!((e.d1 - single.d1).abs() < 1e-10 * single.d1);
            assert!((e.d2 - single.d2).abs() < 1e-9 * single.d2);
        }
        let avg = log_mgf_avg(&z, 1, -0.4, &cfg).unwrap();
        assert_eq!(avg.value, log_mgf_site(&z, 1, -0.4, &cfg).unwrap().value);
    }

    #[test]
    fn errors() {
        let z = two_point(0);
        let cfg = TruncationConfig::default();
        assert!(matches!(log_mgf_site(&z, 1, 0.5, &cfg), Err(Error::NonFiniteMgf { .. })));
        let short = zeros(0, 10);
        assert!(matches!(log_mgf_site(&z, -2990, -0.001, &cfg), Err(Error::WindowUnderflow { .. })));
        assert!(matches!(log_mgf_site(&short, -5, -1.0, &cfg), Err(Error::WindowUnderflow { .. })));
        // Strictly negative potential admits small positive tilts.
        let neg = ZetaView { x_lo: -2000, zeta: vec![-0.5; 2100] };
        let e = log_mgf_site(&neg, 1, 0.2, &cfg).unwrap();
        assert!((e.value - constant_potential_l(-0.3)).abs() < 1e-13);
    }

    #[test]
    fn population_rejects_constant_law() {
        assert!(log_mgf_population(&EnvironmentLaw::constant(1.0), -0.5, 100, 1).is_err());
        assert!(log_mgf_population(&EnvironmentLaw::two_point(2.0, 2.0, 0.5), -0.5, 100, 1).is_err());
    }

    #[test]
    fn population_at_zero_is_negative() {
        let e = log_mgf_population(&EnvironmentLaw::default_two_point(), 0.0, 2000, 5).unwrap();
        assert!(e.value < 0.0 && e.value.is_finite());
    }
}

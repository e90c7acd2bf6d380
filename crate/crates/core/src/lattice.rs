//! Scale-renormalized lattice integration.
//!
//! Linear problems `du/dt = Lap u + V u` with the discrete Laplacian
//! `Lap f(x) = (f(x+1) + f(x-1))/2 - f(x)` are stored as a [`LogField`]:
//!
//! ```text
//! u(x) = m(x) * exp(offset - tilt * x)
//! ```
//!
//! The mantissas `m` are renormalized so that their maximum stays in
//! `[1/2, 2]`; the log-scale lives in `offset`. The exponential `tilt`
//! keeps a front profile `u ~ exp(-tilt x)` flat in mantissa space, which
//! both keeps the tail far below the front representable and lets the
//! moving window drop sites that no longer matter. The tilted stencil is
//!
//! ```text
//! dm/dt = e^{-tilt}/2 m(x+1) + e^{tilt}/2 m(x-1) + (V(x) - 1) m(x).
//! ```
//!
//! The reaction problem `dw/dt = Lap w + xi w (1 - w)` is stored plainly in
//! `[0, 1]` ([`KppField`]). Both use classical fourth-order Runge-Kutta.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};

/// How the computational domain follows the solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MarginPolicy {
    /// Domain never changes; mass reaching an absorbing edge is an error.
    Fixed,
    /// Grow by `chunk` sites when an edge becomes non-negligible and drop
    /// chunks that have become negligible.
    Adaptive { chunk: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub margin: MarginPolicy,
    /// Largest edge mantissa, relative to the maximum, tolerated at an
    /// absorbing edge that cannot move.
    pub boundary_mass_tol: f64,
    /// Relative edge level that triggers growth under the adaptive policy.
    pub extend_tol: f64,
    /// Relative level below which edge chunks are dropped.
    pub trim_tol: f64,
}

impl IntegratorConfig {
    /// Default step `0.1 / (1 + max xi)` for the environment.
    pub fn for_env(env: &Environment) -> Self {
        Self::with_dt(default_dt(env.max_xi()))
    }

    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            margin: MarginPolicy::Adaptive { chunk: 64 },
            boundary_mass_tol: 1e-8,
            extend_tol: 1e-30,
            trim_tol: 1e-40,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.margin = MarginPolicy::Fixed;
        self
    }

    /// Enforces the stability guard `dt <= 0.25 / (1 + max xi)`.
    pub fn check(&self, max_xi: f64) -> Result<()> {
        let guard = 0.25 / (1.0 + max_xi.max(0.0));
        if !(self.dt > 0.0) || self.dt > guard * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("dt = {} violates the stability guard {guard}", self.dt)));
        }
        Ok(())
    }
}

pub fn default_dt(max_xi: f64) -> f64 {
    0.1 / (1.0 + max_xi.max(0.0))
}

/// Non-negative lattice function in renormalized, tilted log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogField {
    pub offset: f64,
    pub tilt: f64,
    pub x_lo: i64,
    pub values: Vec<f64>,
    pub time: f64,
}

impl LogField {
    /// `u = 1` at `x0` and zero elsewhere, on `[x0 - margin, x0 + margin]`.
    pub fn delta(x0: i64, margin: usize, tilt: f64) -> Self {
        let mut values = vec![0.0; 2 * margin + 1];
        values[margin] = 1.0;
        let mut f = Self { offset: tilt * x0 as f64, tilt, x_lo: x0 - margin as i64, values, time: 0.0 };
        f.renormalize();
        f
    }

    /// `u(x) = f(x)` on `[x_lo, x_hi]`; `f` must be non-negative.
    pub fn from_fn(x_lo: i64, x_hi: i64, tilt: f64, f: impl Fn(i64) -> f64) -> Self {
        // Work in log space so that large tilts cannot overflow.
        let logs: Vec<f64> = (x_lo..=x_hi).map(|x| f(x).ln() + tilt * x as f64).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let top = if top.is_finite() { top } else { 0.0 };
        let values = logs.iter().map(|l| (l - top).exp()).collect();
        Self { offset: top, tilt, x_lo, values, time: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x_hi(&self) -> i64 {
        self.x_lo + self.values.len() as i64 - 1
    }

    pub fn mantissa(&self, x: i64) -> f64 {
        if x < self.x_lo || x > self.x_hi() {
            0.0
        } else {
            self.values[(x - self.x_lo) as usize]
        }
    }

    /// `ln u(x)`; `-inf` outside the domain or where `u` vanishes.
    pub fn ln_value(&self, x: i64) -> f64 {
        self.offset - self.tilt * x as f64 + self.mantissa(x).ln()
    }

    pub fn max_mantissa(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Folds the maximum mantissa into the offset.
    pub fn renormalize(&mut self) {
        let m = self.max_mantissa();
        if m > 0.0 && m.is_finite() && m != 1.0 {
            self.offset += m.ln();
            let inv = 1.0 / m;
            self.values.iter_mut().for_each(|v| *v *= inv);
        }
    }

    fn renormalize_if_needed(&mut self) {
        let m = self.max_mantissa();
        if !(0.5..=2.0).contains(&m) {
            self.renormalize();
        }
    }

    /// `ln sum_{y >= x} u(y)` for every `x` of the domain.
    pub fn tail_log_sums(&self) -> Vec<f64> {
        self.tail_log_sums_from(self.x_lo)
    }

    /// `ln sum_{y >= x'} u(y)` for `x' = x, ..., x_hi`.
    pub fn tail_log_sums_from(&self, x: i64) -> Vec<f64> {
        if x > self.x_hi() {
            return Vec::new();
        }
        let k0 = (x.max(self.x_lo) - self.x_lo) as usize;
        let n = self.values.len();
        let mut out = vec![f64::NEG_INFINITY; n - k0];
        if self.tilt >= 0.0 {
            let decay = (-self.tilt).exp();
            let mut s = 0.0;
            for k in (k0..n).rev() {
                s = self.values[k] + decay * s;
                out[k - k0] = self.offset - self.tilt * (self.x_lo + k as i64) as f64 + s.ln();
            }
        } else {
            let mut acc = f64::NEG_INFINITY;
            for k in (k0..n).rev() {
                acc = log_add(acc, self.ln_value(self.x_lo + k as i64));
                out[k - k0] = acc;
            }
        }
        let pad = (self.x_lo - x).max(0) as usize;
        if pad > 0 {
            let first = out[0];
            out.splice(0..0, std::iter::repeat_n(first, pad));
        }
        out
    }

    /// `ln sum_{y >= x} u(y)`; `-inf` beyond the domain.
    pub fn tail_log_sum(&self, x: i64) -> f64 {
        if x > self.x_hi() {
            return f64::NEG_INFINITY;
        }
        self.tail_log_sums_from(x.max(self.x_lo))[0]
    }

    /// Log-linear interpolation of the tail at a real site.
    pub fn tail_log_sum_at(&self, x: f64) -> f64 {
        let k = x.floor();
        let frac = x - k;
        let a = self.tail_log_sum(k as i64);
        if frac == 0.0 {
            return a;
        }
        let b = self.tail_log_sum(k as i64 + 1);
        if b == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        a + frac * (b - a)
    }
}

/// `ln(e^a + e^b)`.
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Right edge treatment of a linear problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RightBoundary {
    /// Zero ghost value.
    Absorbing,
    /// `u = 1` held at the given site, just right of the domain.
    HeldAtOne(i64),
}

/// `du/dt = Lap u + (xi + shift) u` on the field's domain.
#[derive(Debug, Clone, Copy)]
pub struct LinearProblem<'a> {
    pub env: &'a Environment,
    pub shift: f64,
    pub right: RightBoundary,
    /// Site that left trims must keep inside the domain.
    pub pin: Option<i64>,
}

impl<'a> LinearProblem<'a> {
    pub fn pam(env: &'a Environment) -> Self {
        Self { env, shift: 0.0, right: RightBoundary::Absorbing, pin: None }
    }

    /// Potential `zeta + eta = xi - es + eta` with `u = 1` held at `n`.
    pub fn dirichlet(env: &'a Environment, eta: f64, n: i64) -> Self {
        Self { env, shift: eta - env.es(), right: RightBoundary::HeldAtOne(n), pin: None }
    }

    fn ghost_right(&self, field: &LogField) -> f64 {
        match self.right {
            RightBoundary::Absorbing => 0.0,
            RightBoundary::HeldAtOne(n) => (field.tilt * n as f64 - field.offset).exp(),
        }
    }

    fn absorbing_right(&self) -> bool {
        matches!(self.right, RightBoundary::Absorbing)
    }

    /// One Runge-Kutta step of length `dt`.
    pub fn step(&self, field: &mut LogField, dt: f64, cfg: &IntegratorConfig) -> Result<()> {
        cfg.check(self.env.max_xi() + self.shift.max(0.0))?;
        self.adapt(field, cfg)?;
        if let RightBoundary::HeldAtOne(n) = self.right {
            if field.x_hi() != n - 1 {
                return Err(Error::InvalidArgument(format!("domain must end at {} for the held boundary", n - 1)));
            }
        }
        let pot: Vec<f64> = self
            .env
            .slice(field.x_lo, field.x_hi())?
            .iter()
            .map(|xi| xi + self.shift - 1.0)
            .collect();
        let cp = 0.5 * (-field.tilt).exp();
        let cm = 0.5 * field.tilt.exp();
        let ghost = self.ghost_right(field);
        let rhs = |m: &[f64], g: f64, out: &mut [f64]| {
            let n = m.len();
            for k in 0..n {
                let left = if k > 0 { m[k - 1] } else { 0.0 };
                let right = if k + 1 < n { m[k + 1] } else { g };
                out[k] = cp * right + cm * left + pot[k] * m[k];
            }
        };
        // The held boundary is constant in time, so every stage sees the
        // same ghost.
        rk4(&mut field.values, dt, |m, out| rhs(m, ghost, out));
        field.time += dt;
        let floor = -1e-9 * field.max_mantissa();
        for (k, v) in field.values.iter_mut().enumerate() {
            if !v.is_finite() || *v < floor {
                return Err(Error::Unstable { t: field.time, site: field.x_lo + k as i64, value: *v });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        field.renormalize_if_needed();
        self.check_edges(field, cfg)
    }

    fn check_edges(&self, field: &LogField, cfg: &IntegratorConfig) -> Result<()> {
        let max = field.max_mantissa();
        let left = field.values[0];
        let right = *field.values.last().unwrap();
        let fixed_left = matches!(cfg.margin, MarginPolicy::Fixed) || field.x_lo <= self.env.window.lo;
        let fixed_right = matches!(cfg.margin, MarginPolicy::Fixed) || field.x_hi() >= self.env.window.hi;
        if fixed_left && left > cfg.boundary_mass_tol * max {
            return Err(Error::DomainTooSmall { boundary: left / max, tol: cfg.boundary_mass_tol });
        }
        if self.absorbing_right() && fixed_right && right > cfg.boundary_mass_tol * max {
            return Err(Error::DomainTooSmall { boundary: right / max, tol: cfg.boundary_mass_tol });
        }
        Ok(())
    }

    /// Moves the edges of the domain under the adaptive policy.
    fn adapt(&self, field: &mut LogField, cfg: &IntegratorConfig) -> Result<()> {
        let MarginPolicy::Adaptive { chunk } = cfg.margin else {
            return Ok(());
        };
        let max = field.max_mantissa();
        if max == 0.0 {
            return Ok(());
        }
        let w = self.env.window;
        if field.values[0] > cfg.extend_tol * max && field.x_lo > w.lo {
            let add = chunk.min((field.x_lo - w.lo) as usize);
            field.values.splice(0..0, std::iter::repeat_n(0.0, add));
            field.x_lo -= add as i64;
        } else if field.values.len() > 3 * chunk
            && self.pin.is_none_or(|p| field.x_lo + (chunk as i64) <= p)
            && field.values[..2 * chunk].iter().all(|v| *v < cfg.trim_tol * max)
        {
            field.values.drain(..chunk);
            field.x_lo += chunk as i64;
        }
        if self.absorbing_right() {
            let last = *field.values.last().unwrap();
            let n = field.values.len();
            if last > cfg.extend_tol * max && field.x_hi() < w.hi {
                let add = chunk.min((w.hi - field.x_hi()) as usize);
                field.values.extend(std::iter::repeat_n(0.0, add));
            } else if n > 3 * chunk && field.values[n - 2 * chunk..].iter().all(|v| *v < cfg.trim_tol * max) {
                field.values.truncate(n - chunk);
            }
        }
        Ok(())
    }

    /// Integrates to `t_end`, shortening the last step to land exactly.
    pub fn advance(&self, field: &mut LogField, t_end: f64, cfg: &IntegratorConfig) -> Result<()> {
        while field.time < t_end {
            let remaining = t_end - field.time;
            if remaining <= 1e-12 * t_end.max(1.0) {
                field.time = t_end;
                break;
            }
            let dt = if remaining < cfg.dt * (1.0 + 1e-9) { remaining } else { cfg.dt };
            self.step(field, dt, cfg)?;
            if dt == remaining {
                field.time = t_end;
            }
        }
        Ok(())
    }
}

/// One linear PAM step for `du/dt = Lap u + xi u` with absorbing edges.
pub fn step_linear(field: &mut LogField, env: &Environment, cfg: &IntegratorConfig) -> Result<()> {
    LinearProblem::pam(env).step(field, cfg.dt, cfg)
}

/// One step of the killed problem with potential `zeta + eta` on `x < n`
/// and `u(n) = 1`.
pub fn step_dirichlet(field: &mut LogField, env: &Environment, eta: f64, n: i64, cfg: &IntegratorConfig) -> Result<()> {
    LinearProblem::dirichlet(env, eta, n).step(field, cfg.dt, cfg)
}

/// Classical Runge-Kutta step for `y' = f(y)`.
fn rk4(y: &mut [f64], dt: f64, f: impl Fn(&[f64], &mut [f64])) {
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(&tmp, &mut k4);
    let c = dt / 6.0;
    for i in 0..n {
        y[i] += c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Clamping band around `[0, 1]` for the reaction problem.
pub const CLAMP_TOL: f64 = 1e-12;
/// Excursions beyond this are integration failures.
pub const UNSTABLE_TOL: f64 = 1e-9;

/// Solution of the reaction problem in plain `[0, 1]` storage, with
/// constant ghost values beyond each edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KppField {
    pub x_lo: i64,
    pub values: Vec<f64>,
    pub time: f64,
    pub left_ghost: f64,
    pub right_ghost: f64,
}

impl KppField {
    pub fn x_hi(&self) -> i64 {
        self.x_lo + self.values.len() as i64 - 1
    }

    pub fn value(&self, x: i64) -> f64 {
        if x < self.x_lo {
            self.left_ghost
        } else if x > self.x_hi() {
            self.right_ghost
        } else {
            self.values[(x - self.x_lo) as usize]
        }
    }
}

/// One step of `dw/dt = Lap w + xi w (1 - w)`.
pub fn step_reaction(field: &mut KppField, env: &Environment, dt: f64, cfg: &IntegratorConfig) -> Result<()> {
    cfg.check(env.max_xi())?;
    adapt_reaction(field, env, cfg);
    let xi = env.slice(field.x_lo, field.x_hi())?;
    let (gl, gr) = (field.left_ghost, field.right_ghost);
    rk4(&mut field.values, dt, |w, out| {
        let n = w.len();
        for k in 0..n {
            let left = if k > 0 { w[k - 1] } else { gl };
            let right = if k + 1 < n { w[k + 1] } else { gr };
            out[k] = 0.5 * (left + right) - w[k] + xi[k] * w[k] * (1.0 - w[k]);
        }
    });
    field.time += dt;
    for (k, v) in field.values.iter_mut().enumerate() {
        if !(*v >= -UNSTABLE_TOL && *v <= 1.0 + UNSTABLE_TOL) {
            return Err(Error::Unstable { t: field.time, site: field.x_lo + k as i64, value: *v });
        }
        *v = v.clamp(0.0, 1.0);
    }
    let edge_gap = |v: f64, g: f64| (v - g).abs();
    let fixed = matches!(cfg.margin, MarginPolicy::Fixed);
    let left = edge_gap(field.values[0], gl);
    let right = edge_gap(*field.values.last().unwrap(), gr);
    if (fixed || field.x_lo <= env.window.lo) && left > cfg.boundary_mass_tol {
        return Err(Error::DomainTooSmall { boundary: left, tol: cfg.boundary_mass_tol });
    }
    if (fixed || field.x_hi() >= env.window.hi) && right > cfg.boundary_mass_tol {
        return Err(Error::DomainTooSmall { boundary: right, tol: cfg.boundary_mass_tol });
    }
    Ok(())
}

fn adapt_reaction(field: &mut KppField, env: &Environment, cfg: &IntegratorConfig) {
    let MarginPolicy::Adaptive { chunk } = cfg.margin else {
        return;
    };
    let w = env.window;
    let (gl, gr) = (field.left_ghost, field.right_ghost);
    let n = field.values.len();
    // Both edges are judged on the same state so that mirrored problems
    // take mirrored decisions.
    let grow_left = (field.values[0] - gl).abs() > cfg.extend_tol && field.x_lo > w.lo;
    let trim_left = !grow_left && n > 3 * chunk && field.values[..2 * chunk].iter().all(|v| (v - gl).abs() < cfg.trim_tol);
    let grow_right = (field.values[n - 1] - gr).abs() > cfg.extend_tol && field.x_hi() < w.hi;
    let trim_right =
        !grow_right && n > 3 * chunk && field.values[n - 2 * chunk..].iter().all(|v| (v - gr).abs() < cfg.trim_tol);
    let (trim_left, trim_right) = if trim_left && trim_right && n <= 4 * chunk { (false, false) } else { (trim_left, trim_right) };
    if grow_right {
        let add = chunk.min((w.hi - field.x_hi()) as usize);
        field.values.extend(std::iter::repeat_n(gr, add));
    } else if trim_right {
        field.values.truncate(n - chunk);
    }
    if grow_left {
        let add = chunk.min((field.x_lo - w.lo) as usize);
        field.values.splice(0..0, std::iter::repeat_n(gl, add));
        field.x_lo -= add as i64;
    } else if trim_left {
        field.values.drain(..chunk);
        field.x_lo += chunk as i64;
    }
}

/// Integrates the reaction problem to `t_end`, landing exactly.
pub fn advance_reaction(field: &mut KppField, env: &Environment, t_end: f64, cfg: &IntegratorConfig) -> Result<()> {
    while field.time < t_end {
        let remaining = t_end - field.time;
        if remaining <= 1e-12 * t_end.max(1.0) {
            field.time = t_end;
            break;
        }
        let dt = if remaining < cfg.dt * (1.0 + 1e-9) { remaining } else { cfg.dt };
        step_reaction(field, env, dt, cfg)?;
        if dt == remaining {
            field.time = t_end;
        }
    }
    Ok(())
}

/// Observed order of a time integrator from runs at `dt`, `dt/2`, `dt/4`:
/// `log2(|y(dt) - y(dt/2)| / |y(dt/2) - y(dt/4)|)` in the max norm.
pub fn convergence_check(run: impl Fn(f64) -> Result<Vec<f64>>, dt: f64) -> Result<f64> {
    let a = run(dt)?;
    let b = run(dt / 2.0)?;
    let c = run(dt / 4.0)?;
    if a.len() != b.len() || b.len() != c.len() {
        return Err(Error::InvalidArgument("runs returned different lengths".into()));
    }
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    Ok((diff(&a, &b) / diff(&b, &c)).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Window;

    #[test]
    fn harmonic_constant_is_fixed() {
        let env = Environment::constant(Window::new(-50, 50), 0.0);
        let mut f = LogField::from_fn(-50, 50, 0.0, |_| 1.0);
        let mut cfg = IntegratorConfig::with_dt(0.1).fixed();
        cfg.boundary_mass_tol = f64::INFINITY;
        for _ in 0..3 {
            step_linear(&mut f, &env, &cfg).unwrap();
        }
        // The absorbing edges have not reached the middle yet.
        assert!(f.values[20..80].iter().all(|v| *v == 1.0));
        assert_eq!(f.offset, 0.0);
    }

    #[test]
    fn offset_tracks_growth() {
        let env = Environment::constant(Window::new(-200, 200), 1.5);
        let mut f = LogField::delta(0, 100, 0.0);
        let cfg = IntegratorConfig::with_dt(0.05);
        LinearProblem::pam(&env).advance(&mut f, 3.0, &cfg).unwrap();
        // Total mass is e^{1.5 t}.
        let total = f.tail_log_sum(f.x_lo);
        // RK4 error in the exponent is about 60 * (0.075)^5 / 120.
        assert!((total - 4.5).abs() < 3e-6, "{total}");
    }

    #[test]
    fn log_add_works() {
        assert_eq!(log_add(f64::NEG_INFINITY, 2.0), 2.0);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tail_sums_suffix_identity() {
        for tilt in [0.0, 0.7, -0.4] {
            let f = LogField::from_fn(-10, 10, tilt, |x| ((x as f64) * 0.3).cos().abs() + 0.1);
            let tails = f.tail_log_sums();
            for x in -10..10 {
                let lhs = tails[(x + 10) as usize].exp();
                let rhs = tails[(x + 11) as usize].exp() + f.ln_value(x).exp();
                assert!((lhs - rhs).abs() <= 1e-12 * lhs);
                assert!((f.tail_log_sum(x) - tails[(x + 10) as usize]).abs() < 1e-12);
            }
            assert_eq!(f.tail_log_sum(11), f64::NEG_INFINITY);
        }
    }

    #[test]
    fn reaction_equilibria() {
        let env = Environment::constant(Window::new(-100, 100), 1.0);
        let cfg = IntegratorConfig::with_dt(0.05).fixed();
        for level in [0.0, 1.0] {
            let mut f = KppField { x_lo: -20, values: vec![level; 41], time: 0.0, left_ghost: level, right_ghost: level };
            for _ in 0..100 {
                step_reaction(&mut f, &env, 0.05, &cfg).unwrap();
            }
            assert!(f.values.iter().all(|v| *v == level));
        }
    }

    #[test]
    fn stability_guard() {
        let env = Environment::constant(Window::new(-10, 10), 3.0);
        let mut f = LogField::delta(0, 5, 0.0);
        let cfg = IntegratorConfig::with_dt(0.1);
        assert!(matches!(step_linear(&mut f, &env, &cfg), Err(Error::InvalidArgument(_))));
    }
}

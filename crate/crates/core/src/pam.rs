//! Parabolic Anderson model runs and breakpoint extraction.
//!
//! `u(t, x)` is the expected number of particles at `x` at time `t`; the tail
//! `N(t, x) = sum_{y >= x} u(t, y)` is the expected number at or beyond `x`.
//! The breakpoint `m(t)` is the largest `x` with `N(t, x) >= 1/2`, and `T_n`
//! is the first time `N(t, n)` reaches `1/2`. All thresholds are compared in
//! log scale.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::{log_add, IntegratorConfig, LinearProblem, LogField, MarginPolicy};

/// Initial data of the linear problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    /// One particle at the origin.
    Delta,
    /// `c` particles at every site `x <= 0`, with `c >= 1`. Needs a positive
    /// tilt so that the infinite left tail is negligible in mantissa space.
    StepLeft { c: f64 },
}

impl InitialCondition {
    pub fn field(&self, tilt: f64) -> Result<LogField> {
        match *self {
            InitialCondition::Delta => Ok(LogField::delta(0, 64, tilt)),
            InitialCondition::StepLeft { c } => {
                if !(c >= 1.0) {
                    return Err(Error::InvalidArgument(format!("step height must be at least 1, got {c}")));
                }
                if !(tilt > 0.0) {
                    return Err(Error::InvalidArgument("step initial data need a positive tilt".into()));
                }
                // Far enough left that e^{tilt x} is below 1e-45.
                let width = (104.0 / tilt).ceil() as i64 + 64;
                let mut f = LogField::from_fn(-width, 64, tilt, |x| if x <= 0 { c } else { 0.0 });
                f.values.iter_mut().for_each(|v| if !v.is_finite() { *v = 0.0 });
                Ok(f)
            }
        }
    }
}

/// Settings of a PAM run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PamConfig {
    pub integrator: IntegratorConfig,
    /// Exponential gauge of the stored field; `|L(eta_bar(v))|` centres the
    /// window on the front of velocity `v`.
    pub tilt: f64,
    /// Record `T_n` for `n = 0..=tn_max`.
    pub tn_max: Option<i64>,
}

impl PamConfig {
    pub fn new(env: &Environment) -> Self {
        Self { integrator: IntegratorConfig::for_env(env), tilt: 0.0, tn_max: None }
    }
}

/// First-passage times of the tail at consecutive sites, detected step by
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnTracker {
    pub times: Vec<f64>,
    pub n_max: i64,
    prev_time: f64,
    /// Tail logs at `times.len()..` from the previous step. JSON has no
    /// infinities, so `-inf` is stored as `null`.
    #[serde(with = "neg_inf_as_null")]
    prev: Vec<f64>,
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        xs.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let xs = Vec::<Option<f64>>::deserialize(d)?;
        Ok(xs.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

const TRACK_AHEAD: usize = 8;

impl TnTracker {
    fn new(n_max: i64) -> Self {
        Self { times: Vec::new(), n_max, prev_time: 0.0, prev: Vec::new() }
    }

    fn next_site(&self) -> i64 {
        self.times.len() as i64
    }

    pub fn done(&self) -> bool {
        self.next_site() > self.n_max
    }

    fn observe(&mut self, field: &LogField) {
        if self.done() {
            return;
        }
        let t = field.time;
        let threshold = -LN_2;
        let n0 = self.next_site();
        let mut tails = field.tail_log_sums_from(n0);
        tails.truncate(TRACK_AHEAD);
        tails.resize(TRACK_AHEAD, f64::NEG_INFINITY);
        let mut k = 0;
        while k < TRACK_AHEAD && tails[k] >= threshold && !self.done() {
            let before = self.prev.get(k).copied().unwrap_or(f64::NEG_INFINITY);
            let time = if self.times.is_empty() && t == 0.0 {
                0.0
            } else if before.is_finite() && before < threshold {
                self.prev_time + (t - self.prev_time) * (threshold - before) / (tails[k] - before)
            } else {
                t
            };
            self.times.push(time);
            k += 1;
        }
        self.prev = tails[k..].to_vec();
        self.prev_time = t;
    }

    /// `T_n`, if the tail at `n` has crossed the threshold.
    pub fn get(&self, n: i64) -> Option<f64> {
        if n < 0 {
            return None;
        }
        self.times.get(n as usize).copied()
    }
}

/// Result of [`run_pam`]: snapshots at the schedule and the `T_n` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamRun {
    pub snapshots: Vec<LogField>,
    pub tn: Option<TnTracker>,
    pub horizon: f64,
}

/// Resumable state of a PAM integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamState {
    pub field: LogField,
    pub tn: Option<TnTracker>,
    pub snapshots: Vec<LogField>,
    pub schedule: Vec<f64>,
    pub next_sample: usize,
    pub horizon: f64,
    pub cfg: PamConfig,
}

impl PamState {
    pub fn new(u0: InitialCondition, horizon: f64, cfg: PamConfig, schedule: &[f64]) -> Result<Self> {
        if !(horizon >= 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be non-negative, got {horizon}")));
        }
        let mut schedule: Vec<f64> = schedule.iter().copied().filter(|t| *t <= horizon).collect();
        if schedule.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidArgument("sample times must be non-negative".into()));
        }
        schedule.sort_by(f64::total_cmp);
        schedule.dedup();
        let field = u0.field(cfg.tilt)?;
        let mut tn = cfg.tn_max.map(TnTracker::new);
        if let Some(tr) = tn.as_mut() {
            tr.observe(&field);
        }
        let mut state = Self { field, tn, snapshots: Vec::new(), schedule, next_sample: 0, horizon, cfg };
        state.take_due_snapshots();
        Ok(state)
    }

    fn take_due_snapshots(&mut self) {
        while self.next_sample < self.schedule.len() && self.schedule[self.next_sample] <= self.field.time {
            self.snapshots.push(self.field.clone());
            self.next_sample += 1;
        }
    }

    /// Integrates up to `t_stop` (capped at the horizon), landing exactly on
    /// every sample time on the way.
    pub fn advance(&mut self, env: &Environment, t_stop: f64) -> Result<()> {
        let t_stop = t_stop.min(self.horizon);
        while self.field.time < t_stop {
            self.step_once(env, t_stop)?;
        }
        Ok(())
    }

    /// Takes at most `steps` steps towards the horizon. The step sequence
    /// does not depend on how a run is split into calls, so a state saved
    /// between calls resumes bit for bit.
    pub fn advance_steps(&mut self, env: &Environment, steps: usize) -> Result<()> {
        for _ in 0..steps {
            if self.done() {
                break;
            }
            self.step_once(env, self.horizon)?;
        }
        Ok(())
    }

    pub fn done(&self) -> bool {
        self.field.time >= self.horizon
    }

    fn step_once(&mut self, env: &Environment, t_stop: f64) -> Result<()> {
        let problem = LinearProblem::pam(env);
        let cfg = self.cfg.integrator;
        let target = match self.schedule.get(self.next_sample) {
            Some(&s) if s < t_stop => s,
            _ => t_stop,
        };
        let remaining = target - self.field.time;
        let dt = if remaining < cfg.dt * (1.0 + 1e-9) { remaining } else { cfg.dt };
        if dt > 1e-12 * target.max(1.0) {
            problem.step(&mut self.field, dt, &cfg)?;
        }
        if dt == remaining || target - self.field.time <= 1e-12 * target.max(1.0) {
            self.field.time = target;
        }
        if let Some(tr) = self.tn.as_mut() {
            tr.observe(&self.field);
        }
        self.take_due_snapshots();
        Ok(())
    }

    pub fn finish(self) -> PamRun {
        PamRun { snapshots: self.snapshots, tn: self.tn, horizon: self.horizon }
    }
}

/// Integrates the PAM from `u0` to `horizon`, keeping the field at the
/// scheduled times.
pub fn run_pam(env: &Environment, u0: InitialCondition, horizon: f64, cfg: &PamConfig, schedule: &[f64]) -> Result<PamRun> {
    let mut state = PamState::new(u0, horizon, *cfg, schedule)?;
    state.advance(env, horizon)?;
    Ok(state.finish())
}

impl PamRun {
    /// Snapshot taken at time `t`.
    pub fn at(&self, t: f64) -> Option<&LogField> {
        self.snapshots.iter().find(|f| (f.time - t).abs() <= 1e-9 * t.max(1.0))
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|f| f.time).collect()
    }
}

/// `ln N(t, x)` of a field.
pub fn tail_log_sum(field: &LogField, x: i64) -> f64 {
    field.tail_log_sum(x)
}

/// Largest `x` with `ln N(t, x) >= level`, and the real crossing of the
/// log-tail between `x` and `x + 1`.
pub fn front_at_level(field: &LogField, level: f64) -> Result<(i64, f64)> {
    let tails = field.tail_log_sums();
    let Some(k) = tails.iter().rposition(|l| *l >= level) else {
        return Err(Error::FrontNotFormed(field.time));
    };
    let x = field.x_lo + k as i64;
    let here = tails[k];
    let next = tails.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
    let frac = if next == f64::NEG_INFINITY { 0.0 } else { (here - level) / (here - next) };
    Ok((x, x as f64 + frac.clamp(0.0, 1.0 - f64::EPSILON)))
}

/// Breakpoint `m(t)` and its interpolated variant.
pub fn breakpoint(field: &LogField) -> Result<(i64, f64)> {
    front_at_level(field, -LN_2)
}

/// `m_v(t)`: largest `x` with `N(t, x) >= exp(t lambda(v)) / 2`.
pub fn breakpoint_v(field: &LogField, lambda_v: f64) -> Result<(i64, f64)> {
    front_at_level(field, field.time * lambda_v - LN_2)
}

/// `U_v(t) = t lambda(v) - ln N(t, vt) - ln 2`, log-linear in space
/// between lattice sites.
pub fn u_v(field: &LogField, v: f64, lambda_v: f64) -> f64 {
    let t = field.time;
    t * lambda_v - field.tail_log_sum_at(v * t) - LN_2
}

/// `T_n` from a run.
pub fn breakpoint_inverse(run: &PamRun, n: i64) -> Result<f64> {
    run.tn
        .as_ref()
        .and_then(|tr| tr.get(n))
        .ok_or(Error::NotReached { n, horizon: run.horizon })
}

/// Front quantities on the snapshot times of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub times: Vec<f64>,
    pub m_bar: Vec<i64>,
    pub m_bar_interp: Vec<f64>,
    /// `(v, lambda(v))` pairs.
    pub velocities: Vec<(f64, f64)>,
    /// `m_bar_v[j][k]` for velocity `j` at time `k`.
    pub m_bar_v: Vec<Vec<i64>>,
    pub u_v: Vec<Vec<f64>>,
    pub tn: Vec<f64>,
}

impl FrontTrace {
    pub fn from_run(run: &PamRun, velocities: &[(f64, f64)]) -> Result<Self> {
        let mut tr = FrontTrace {
            times: run.times(),
            m_bar: Vec::new(),
            m_bar_interp: Vec::new(),
            velocities: velocities.to_vec(),
            m_bar_v: vec![Vec::new(); velocities.len()],
            u_v: vec![Vec::new(); velocities.len()],
            tn: run.tn.as_ref().map(|t| t.times.clone()).unwrap_or_default(),
        };
        for f in &run.snapshots {
            let (m, mi) = breakpoint(f)?;
            tr.m_bar.push(m);
            tr.m_bar_interp.push(mi);
            for (j, &(v, lam)) in velocities.iter().enumerate() {
                tr.m_bar_v[j].push(breakpoint_v(f, lam)?.0);
                tr.u_v[j].push(u_v(f, v, lam));
            }
        }
        Ok(tr)
    }
}

/// Restricted Feynman-Kac quantities `(ln Y, ln Y_approx, ln Y_less)` at
/// target `n` and velocity `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YValues {
    pub ln_y: f64,
    pub ln_y_approx: f64,
    pub ln_y_less: f64,
}

/// `Y_v(n) = E_0[exp(int_0^{H_n} (zeta + eta)); H_n <= n/v]`, the same
/// restricted to `H_n <= n/v - k`, and their difference.
///
/// The killed problem is run with potential `zeta` only; the factor
/// `e^{eta s}` enters through the Stieltjes sum over the increments of
/// `r(s, 0) = E_0[exp(int zeta); H_n <= s]`. `tilt` is the gauge of the
/// killed field, typically `-(Lbar_n)*(1/v)`.
pub fn y_restricted(env: &Environment, n: i64, v: f64, eta: f64, k: f64, tilt: f64, cfg: &IntegratorConfig) -> Result<YValues> {
    if !(v > 0.0) || n < 1 || !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("need v > 0, n >= 1, K > 0; got {v}, {n}, {k}")));
    }
    if eta > 0.0 {
        return Err(Error::InvalidArgument("the killed potential needs eta <= 0".into()));
    }
    let t_end = n as f64 / v;
    let t_split = t_end - k;
    let mut problem = LinearProblem::dirichlet(env, 0.0, n);
    problem.pin = Some(0);
    let mut field = LogField { offset: tilt * n as f64, tilt, x_lo: -64, values: vec![0.0; (n + 64) as usize], time: 0.0 };
    let mut cfg = *cfg;
    if let MarginPolicy::Fixed = cfg.margin {
        cfg.margin = MarginPolicy::Adaptive { chunk: 64 };
    }

    // Log of sum_k e^{eta s_mid} (r_{k+1} - r_k) on [0, split] and (split, end].
    let mut ln_less = f64::NEG_INFINITY;
    let mut ln_approx = f64::NEG_INFINITY;
    let mut prev_ln_r = f64::NEG_INFINITY;
    let mut prev_t = 0.0;
    let mut ln_r_split = f64::NEG_INFINITY;
    let marks = if t_split > 0.0 { vec![t_split, t_end] } else { vec![t_end] };
    for &mark in &marks {
        while field.time < mark {
            let remaining = mark - field.time;
            let dt = if remaining < cfg.dt * (1.0 + 1e-9) { remaining } else { cfg.dt };
            problem.step(&mut field, dt, &cfg)?;
            if dt == remaining {
                field.time = mark;
            }
            let ln_r = field.ln_value(0);
            if ln_r > prev_ln_r {
                let inc = if prev_ln_r == f64::NEG_INFINITY {
                    ln_r
                } else {
                    ln_r + (-(prev_ln_r - ln_r).exp_m1()).ln()
                };
                let term = inc + eta * 0.5 * (prev_t + field.time);
                if field.time <= t_split * (1.0 + 1e-12) && t_split > 0.0 {
                    ln_less = log_add(ln_less, term);
                } else {
                    ln_approx = log_add(ln_approx, term);
                }
            }
            prev_ln_r = prev_ln_r.max(ln_r);
            prev_t = field.time;
        }
        if mark == t_split {
            ln_r_split = field.ln_value(0);
        }
    }
    let ln_r_end = field.ln_value(0);
    if eta == 0.0 {
        // Exact subtraction of the two values of r.
        ln_less = ln_r_split;
        let ratio = (ln_r_split - ln_r_end).exp();
        ln_approx = if ratio < 1.0 { ln_r_end + (-ratio).ln_1p() } else { f64::NEG_INFINITY };
    }
    if ln_approx == f64::NEG_INFINITY || ln_approx.is_nan() {
        return Err(Error::Resolution { y: ln_r_end.exp(), y_less: ln_less.exp() });
    }
    Ok(YValues { ln_y: log_add(ln_less, ln_approx), ln_y_approx: ln_approx, ln_y_less: ln_less })
}

/// Flux reference for `r(t, 0)`: the killed forward density `p(s, y)` from
/// `0` on `y < n` gives `r(t, 0) = int_0^t p(s, n-1)/2 ds`.
pub fn hitting_probability_flux(env: &Environment, n: i64, t: f64, cfg: &IntegratorConfig) -> Result<f64> {
    let len = (n + 1 + 256) as usize;
    let x_lo = n - len as i64;
    let mut p = vec![0.0; len];
    p[(0 - x_lo) as usize] = 1.0;
    let pot: Vec<f64> = env.slice(x_lo, n - 1)?.iter().map(|xi| xi - env.es() - 1.0).collect();
    let flux = |p: &[f64]| 0.5 * p[len - 1];
    let mut time = 0.0;
    let mut total = 0.0;
    let rhs = |y: &[f64], out: &mut [f64]| {
        for k in 0..len {
            let left = if k > 0 { y[k - 1] } else { 0.0 };
            let right = if k + 1 < len { y[k + 1] } else { 0.0 };
            out[k] = 0.5 * (left + right) + pot[k] * y[k];
        }
    };
    while time < t {
        let dt = (t - time).min(cfg.dt);
        let before = flux(&p);
        // Simpson on each step for the flux integral.
        let mut mid = p.clone();
        rk4_plain(&mut mid, 0.5 * dt, &rhs);
        rk4_plain(&mut p, dt, &rhs);
        total += dt / 6.0 * (before + 4.0 * flux(&mid) + flux(&p));
        time += dt;
    }
    Ok(total)
}

fn rk4_plain(y: &mut [f64], dt: f64, f: &impl Fn(&[f64], &mut [f64])) {
    let n = y.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
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
    for i in 0..n {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Time-dependent barriers: on `[start_j, start_{j+1})` particles must stay in
/// `[lo_j, hi_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barriers {
    pub pieces: Vec<(f64, i64, i64)>,
}

impl Barriers {
    pub fn none() -> Self {
        Self { pieces: vec![(0.0, i64::MIN, i64::MAX)] }
    }

    pub fn constant(lo: i64, hi: i64) -> Self {
        Self { pieces: vec![(0.0, lo, hi)] }
    }

    /// Allowed interval at time `s`.
    pub fn at(&self, s: f64) -> (i64, i64) {
        let mut cur = (self.pieces[0].1, self.pieces[0].2);
        for &(start, lo, hi) in &self.pieces {
            if start <= s {
                cur = (lo, hi);
            }
        }
        cur
    }

    pub fn allows(&self, s: f64, x: i64) -> bool {
        let (lo, hi) = self.at(s);
        lo <= x && x <= hi
    }

    /// Times in `(0, t)` where the allowed interval changes.
    pub fn switch_times(&self, t: f64) -> Vec<f64> {
        self.pieces.iter().map(|p| p.0).filter(|s| *s > 0.0 && *s < t).collect()
    }
}

/// Half-width of the domain used by the second-moment quadrature.
pub const SECOND_MOMENT_HALF_WIDTH: i64 = 32;

/// Second moment of the number of particles at time `t` whose genealogy
/// stayed inside the barriers, for one particle started at 0:
/// `E[N] + 2 int_0^t sum_y q(s, y) xi(y) g(s, y)^2 ds`, with `q` the killed
/// forward density and `g(s, y)` the killed first moment from `(s, y)` to `t`.
/// Returns the second moment and the first moment.
pub fn second_moment_between(env: &Environment, barriers: &Barriers, t: f64, steps: usize) -> Result<(f64, f64)> {
    if !(t > 0.0 && t <= 4.0) {
        return Err(Error::InvalidArgument(format!("second moment limited to 0 < t <= 4, got {t}")));
    }
    let x_lo = -SECOND_MOMENT_HALF_WIDTH;
    let len = (2 * SECOND_MOMENT_HALF_WIDTH + 1) as usize;
    let xi = env.slice(x_lo, x_lo + len as i64 - 1)?;
    let switches = barriers.switch_times(t);
    // Grid that contains every switch time.
    let mut grid = vec![0.0];
    let mut marks = switches.clone();
    marks.push(t);
    let mut start = 0.0;
    for m in marks {
        let k = (((m - start) / t) * steps as f64).ceil().max(1.0) as usize;
        for j in 1..=k {
            grid.push(start + (m - start) * j as f64 / k as f64);
        }
        start = m;
    }
    let mask = |s: f64| -> Vec<bool> {
        let (lo, hi) = barriers.at(s);
        (0..len).map(|k| {
            let x = x_lo + k as i64;
            lo <= x && x <= hi
        }).collect()
    };
    let rhs_for = |allowed: Vec<bool>| {
        let xi = xi.to_vec();
        move |y: &[f64], out: &mut [f64]| {
            for k in 0..len {
                if !allowed[k] {
                    out[k] = 0.0;
                    continue;
                }
                let left = if k > 0 && allowed[k - 1] { y[k - 1] } else { 0.0 };
                let right = if k + 1 < len && allowed[k + 1] { y[k + 1] } else { 0.0 };
                out[k] = 0.5 * (left + right) + (xi[k] - 1.0) * y[k];
            }
        }
    };

    // Forward killed density.
    let mut q = vec![0.0; len];
    let origin = (0 - x_lo) as usize;
    if !mask(0.0)[origin] {
        return Ok((0.0, 0.0));
    }
    q[origin] = 1.0;
    let mut qs = vec![q.clone()];
    for w in grid.windows(2) {
        let allowed = mask(w[0]);
        let rhs = rhs_for(allowed);
        rk4_plain(&mut q, w[1] - w[0], &rhs);
        let after = mask(w[1]);
        for k in 0..len {
            if !after[k] {
                q[k] = 0.0;
            }
        }
        qs.push(q.clone());
    }
    let first = q.iter().sum::<f64>();

    // Backward killed first moment g(s, .) with g(t, .) = 1 on the allowed set.
    let mut g: Vec<f64> = mask(t).iter().map(|a| if *a { 1.0 } else { 0.0 }).collect();
    let mut gs = vec![g.clone()];
    for w in grid.windows(2).rev() {
        let rhs = rhs_for(mask(w[0]));
        rk4_plain(&mut g, w[1] - w[0], &rhs);
        let allowed = mask(w[0]);
        for k in 0..len {
            if !allowed[k] {
                g[k] = 0.0;
            }
        }
        gs.push(g.clone());
    }
    gs.reverse();

    let integrand: Vec<f64> = qs
        .iter()
        .zip(&gs)
        .map(|(q, g)| (0..len).map(|k| q[k] * xi[k] * g[k] * g[k]).sum())
        .collect();
    let trapezoid = |stride: usize| {
        let idx: Vec<usize> = (0..grid.len()).step_by(stride).collect();
        if *idx.last().unwrap() != grid.len() - 1 {
            return None;
        }
        Some(idx.windows(2).map(|w| 0.5 * (grid[w[1]] - grid[w[0]]) * (integrand[w[0]] + integrand[w[1]])).sum::<f64>())
    };
    let fine = trapezoid(1).expect("full grid");
    if let Some(coarse) = trapezoid(2) {
        if (fine - coarse).abs() > 0.01 * fine.abs() {
            log::warn!("second-moment quadrature changed by more than 1% under refinement: {coarse} -> {fine}");
        }
    }
    Ok((first + 2.0 * fine, first))
}

/// `|ln N(n/v0, n) - sum_{i<=n} (L_i - L)|` for each `n`, where `partial[n]`
/// holds `sum_{i<=n} (L_i(eta_bar(v0)) - L(eta_bar(v0)))`.
pub fn explicit_log_n_check(run: &PamRun, v0: f64, n_grid: &[i64], partial: &[f64]) -> Result<Vec<(i64, f64)>> {
    n_grid
        .iter()
        .map(|&n| {
            let t = n as f64 / v0;
            let field = run.at(t).ok_or_else(|| Error::InvalidArgument(format!("no snapshot at t = {t}")))?;
            let s = partial
                .get(n as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("no partial sum for n = {n}")))?;
            Ok((n, (field.tail_log_sum(n) - s).abs()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Window;

    #[test]
    fn delta_start_front_and_tn() {
        let env = Environment::constant(Window::new(-500, 500), 1.0);
        let mut cfg = PamConfig::new(&env);
        cfg.tn_max = Some(5);
        let run = run_pam(&env, InitialCondition::Delta, 4.0, &cfg, &[0.0, 2.0, 4.0]).unwrap();
        let f0 = run.at(0.0).unwrap();
        assert_eq!(breakpoint(f0).unwrap().0, 0);
        assert_eq!(breakpoint_inverse(&run, 0).unwrap(), 0.0);
        for f in &run.snapshots {
            let (m, mi) = breakpoint(f).unwrap();
            assert!(mi >= m as f64 && mi < m as f64 + 1.0);
            if let Ok(tm) = breakpoint_inverse(&run, m) {
                assert!(tm <= f.time + 1e-12);
            }
        }
    }

    #[test]
    fn front_level_errors_when_absent() {
        let f = LogField::from_fn(0, 3, 0.0, |_| 1e-3);
        assert!(matches!(breakpoint(&f), Err(Error::FrontNotFormed(_))));
    }

    #[test]
    fn u_v_vanishes_on_its_front() {
        let env = Environment::constant(Window::new(-500, 500), 1.0);
        let cfg = PamConfig::new(&env);
        let run = run_pam(&env, InitialCondition::Delta, 10.0, &cfg, &[10.0]).unwrap();
        let f = &run.snapshots[0];
        let lam = -0.2;
        let (_, mi) = breakpoint_v(f, lam).unwrap();
        let v = mi / f.time;
        assert!(u_v(f, v, lam).abs() < 1e-9);
    }

    #[test]
    fn barriers_lookup() {
        let b = Barriers { pieces: vec![(0.0, -1, 1), (0.5, -2, 0)] };
        assert_eq!(b.at(0.2), (-1, 1));
        assert_eq!(b.at(0.7), (-2, 0));
        assert!(!b.allows(0.7, 1));
        assert_eq!(b.switch_times(1.0), vec![0.5]);
    }

    #[test]
    fn second_moment_without_branching() {
        let env = Environment::constant(Window::new(-100, 100), 0.0);
        let (m2, m1) = second_moment_between(&env, &Barriers::none(), 1.0, 200).unwrap();
        assert!((m2 - m1).abs() < 1e-12);
        assert!((m1 - 1.0).abs() < 1e-9);
    }
}

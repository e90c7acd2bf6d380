//! Randomized discrete Fisher-KPP equation
//! `dw/dt = Lap w + xi w (1 - w)` with Heaviside-type data, its front, and
//! the duality `w(t, x) = P_x(M(t) >= 0)` with the branching walk.

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Window};
use crate::error::{Error, Result};
use crate::lattice::{advance_reaction, IntegratorConfig, KppField, MarginPolicy};
use crate::sim;

/// Initial data for the reaction problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KppInitial {
    /// `1` on `x <= 0`.
    StepLeft,
    /// `1` on `x >= 0`.
    StepRight,
    /// `1` on `lo..=hi`.
    Indicator { lo: i64, hi: i64 },
    Zero,
}

impl KppInitial {
    pub fn value(&self, x: i64) -> f64 {
        let on = match *self {
            KppInitial::StepLeft => x <= 0,
            KppInitial::StepRight => x >= 0,
            KppInitial::Indicator { lo, hi } => (lo..=hi).contains(&x),
            KppInitial::Zero => false,
        };
        if on {
            1.0
        } else {
            0.0
        }
    }

    fn ghosts(&self) -> (f64, f64) {
        match self {
            KppInitial::StepLeft => (1.0, 0.0),
            KppInitial::StepRight => (0.0, 1.0),
            _ => (0.0, 0.0),
        }
    }

    /// Initial field: the whole environment for a fixed margin, otherwise
    /// one chunk around the support edges.
    pub fn field(&self, env: &Environment, cfg: &IntegratorConfig) -> Result<KppField> {
        let w = env.window;
        let (lo, hi) = match cfg.margin {
            MarginPolicy::Fixed => (w.lo, w.hi),
            MarginPolicy::Adaptive { chunk } => {
                let c = chunk as i64;
                let (a, b) = match *self {
                    KppInitial::Indicator { lo, hi } => (lo.min(hi), hi.max(lo)),
                    _ => (0, 0),
                };
                ((a - c).max(w.lo), (b + c).min(w.hi))
            }
        };
        if lo > hi || !w.contains(0) && !matches!(self, KppInitial::Indicator { .. }) {
            return Err(Error::OutsideEnvironment(0));
        }
        let (left_ghost, right_ghost) = self.ghosts();
        Ok(KppField { x_lo: lo, values: (lo..=hi).map(|x| self.value(x)).collect(), time: 0.0, left_ghost, right_ghost })
    }
}

/// One front observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub t: f64,
    pub m_hat: i64,
    pub m_hat_interp: f64,
}

/// Solution snapshots at the schedule times and the front at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KppRun {
    pub initial: KppInitial,
    pub env_seed: u64,
    pub env_window: Window,
    pub snapshots: Vec<KppField>,
    /// Empty for data whose front is unbounded.
    pub fronts: Vec<FrontPoint>,
}

impl KppRun {
    pub fn at(&self, t: f64) -> Option<&KppField> {
        self.snapshots.iter().find(|f| (f.time - t).abs() <= 1e-12 * t.max(1.0))
    }
}

/// Solves up to the largest schedule time, storing a snapshot at each.
pub fn run_fkpp(env: &Environment, w0: KppInitial, schedule: &[f64], cfg: &IntegratorConfig) -> Result<KppRun> {
    let mut times: Vec<f64> = schedule.to_vec();
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument("schedule times must be finite and non-negative".into()));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut field = w0.field(env, cfg)?;
    let mut snapshots = Vec::with_capacity(times.len());
    for &t in &times {
        advance_reaction(&mut field, env, t, cfg)?;
        snapshots.push(field.clone());
    }
    let fronts = if w0.ghosts().1 >= 0.5 {
        Vec::new()
    } else {
        snapshots
            .iter()
            .filter_map(|f| front(f).ok().map(|(m, i)| FrontPoint { t: f.time, m_hat: m, m_hat_interp: i }))
            .collect()
    };
    Ok(KppRun { initial: w0, env_seed: env.seed, env_window: env.window, snapshots, fronts })
}

/// Largest site with `w >= 1/2`, and a linear interpolation of the crossing
/// between it and its right neighbour.
pub fn front(field: &KppField) -> Result<(i64, f64)> {
    if field.right_ghost >= 0.5 {
        return Err(Error::InvalidArgument("front is unbounded: w >= 1/2 at +infinity".into()));
    }
    let m = match field.values.iter().rposition(|w| *w >= 0.5) {
        Some(k) => field.x_lo + k as i64,
        None if field.left_ghost >= 0.5 => field.x_lo - 1,
        None => return Err(Error::FrontNotFormed(field.time)),
    };
    let (a, b) = (field.value(m), field.value(m + 1));
    Ok((m, m as f64 + (a - 0.5) / (a - b)))
}

/// One row of the duality table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityRow {
    pub x: i64,
    pub w: f64,
    pub p_hat: f64,
    /// Binomial standard deviation of `p_hat` under `p = w`.
    pub sigma: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub within: bool,
}

/// Compares `w(t, x)` for data `1` on `x >= 0` with the fraction of
/// simulated walks from `x` with a particle at or beyond `0` at time `t`.
pub fn duality_check(env: &Environment, xs: &[i64], t: f64, replicas: usize, seed: u64, cfg: &IntegratorConfig) -> Result<Vec<DualityRow>> {
    let run = run_fkpp(env, KppInitial::StepRight, &[t], cfg)?;
    let field = &run.snapshots[0];
    xs.iter()
        .map(|&x| {
            let w = field.value(x);
            let p_hat = sim::hit_probability(env, x, 0, t, replicas, seed, x as u64, sim::DEFAULT_CAP)?;
            let sigma = (w * (1.0 - w) / replicas as f64).sqrt();
            let (ci_low, ci_high) = (p_hat - 3.0 * sigma, p_hat + 3.0 * sigma);
            Ok(DualityRow { x, w, p_hat, sigma, ci_low, ci_high, within: w >= ci_low && w <= ci_high })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_environment, EnvironmentLaw};

    #[test]
    fn zero_stays_zero() {
        let env = Environment::constant(Window::new(-200, 200), 1.0);
        let run = run_fkpp(&env, KppInitial::Zero, &[1.0, 3.0], &IntegratorConfig::for_env(&env)).unwrap();
        assert!(run.snapshots.iter().all(|f| f.values.iter().all(|w| *w == 0.0)));
    }

    #[test]
    fn front_at_time_zero() {
        let env = Environment::constant(Window::new(-200, 200), 1.0);
        let run = run_fkpp(&env, KppInitial::StepLeft, &[0.0], &IntegratorConfig::for_env(&env)).unwrap();
        assert_eq!(run.fronts[0].m_hat, 0);
    }

    #[test]
    fn front_uses_sup_on_non_monotone_profile() {
        let f = KppField { x_lo: 0, values: vec![1.0, 0.2, 0.7, 0.1, 0.0], time: 1.0, left_ghost: 1.0, right_ghost: 0.0 };
        let (m, interp) = front(&f).unwrap();
        assert_eq!(m, 2);
        assert!((interp - (2.0 + 0.2 / 0.6)).abs() < 1e-12);
    }

    #[test]
    fn reflection_is_exact() {
        let law = EnvironmentLaw::default_two_point();
        let env = sample_environment(&law, Window::new(-300, 300), 5).unwrap();
        let cfg = IntegratorConfig::for_env(&env);
        let a = run_fkpp(&env, KppInitial::StepRight, &[2.0, 5.0], &cfg).unwrap();
        let b = run_fkpp(&env.reflected(), KppInitial::StepLeft, &[2.0, 5.0], &cfg).unwrap();
        for (fa, fb) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(fa.x_lo, -fb.x_hi());
            assert_eq!(fa.values.len(), fb.values.len());
            for x in fa.x_lo..=fa.x_hi() {
                assert_eq!(fa.value(x).to_bits(), fb.value(-x).to_bits(), "x = {x}");
            }
        }
    }
}

//! Exact simulation of the branching random walk in a fixed environment.
//!
//! Each particle at `x` waits an exponential time of rate `1 + xi(x)`; then
//! one uniform decides between a jump to the left, a jump to the right
//! (each with rate 1/2) and a split into two particles at `x` (rate
//! `xi(x)`). Particles evolve independently, so each replica is run
//! depth-first with an explicit stack and no global event queue.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::pam::Barriers;
use crate::rng::{self, Domain};

/// Default population cap per replica.
pub const DEFAULT_CAP: usize = 2_000_000;

/// Optional per-particle bookkeeping carried along genealogies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tracking {
    /// Barriers the genealogy must respect.
    pub barriers: Option<Barriers>,
    /// Leading-particle check: `T_k` table, `alpha * psi(k)` slack, and the
    /// breakpoint `m` whose reaching time `T_m` is the inspection time.
    pub leading: Option<LeadingPlan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadingPlan {
    /// `T_k` for `k = 0..`.
    pub tn: Vec<f64>,
    pub m_bar: i64,
    pub params: PsiParams,
}

/// `psi(k) = c + c1 (1 v ln k)` with slack multiplier `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiParams {
    pub c: f64,
    pub c1: f64,
    pub alpha: f64,
}

impl Default for PsiParams {
    fn default() -> Self {
        Self { c: 5.0, c1: 2.0, alpha: 3.0 }
    }
}

impl PsiParams {
    pub fn psi(&self, k: i64) -> f64 {
        self.c + self.c1 * (k.max(1) as f64).ln().max(1.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Particle {
    x: i64,
    s: f64,
    inside: bool,
    max_site: i64,
    leading_ok: bool,
    /// Position at the inspection time, once reached.
    at_inspection: Option<i64>,
}

/// Outcome of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replica {
    /// Occupation `(x_lo, counts)` at each schedule time.
    pub snapshots: Vec<(i64, Vec<u64>)>,
    /// Maximal occupied site at each schedule time.
    pub max: Vec<i64>,
    pub pop: Vec<u64>,
    /// Particles at the horizon whose genealogy stayed inside the barriers.
    pub inside: u64,
    /// Leading particles at the horizon.
    pub leading: u64,
    /// Particles at the horizon at or beyond the leading-particle front.
    pub beyond_front: u64,
    pub truncated: bool,
}

fn occupy(snap: &mut (i64, Vec<u64>), x: i64) {
    let (lo, counts) = snap;
    if counts.is_empty() {
        *lo = x;
        counts.push(0);
    }
    if x < *lo {
        let add = (*lo - x) as usize;
        counts.splice(0..0, std::iter::repeat_n(0, add));
        *lo = x;
    }
    let k = (x - *lo) as usize;
    if k >= counts.len() {
        counts.resize(k + 1, 0);
    }
    counts[k] += 1;
}

/// Initial particle configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimInitial {
    /// One particle at the site.
    Single(i64),
    /// `(site, count)` pairs.
    Counts(Vec<(i64, u32)>),
}

impl SimInitial {
    fn sites(&self) -> Vec<i64> {
        match self {
            SimInitial::Single(x) => vec![*x],
            SimInitial::Counts(c) => c.iter().flat_map(|(x, k)| std::iter::repeat_n(*x, *k as usize)).collect(),
        }
    }
}

/// Settings shared by all replicas of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    /// Times at which occupations are recorded; the horizon is always last.
    pub schedule: Vec<f64>,
    pub cap: usize,
    pub tracking: Tracking,
}

impl SimConfig {
    pub fn new(horizon: f64) -> Self {
        Self { horizon, schedule: vec![horizon], cap: DEFAULT_CAP, tracking: Tracking::default() }
    }

    pub fn with_schedule(mut self, schedule: &[f64]) -> Self {
        let mut s: Vec<f64> = schedule.iter().copied().filter(|t| *t < self.horizon).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s.push(self.horizon);
        self.schedule = s;
        self
    }
}

fn xi_at(env: &Environment, x: i64) -> Result<f64> {
    env.xi_at(x).ok_or(Error::OutsideEnvironment(x))
}

/// Runs one replica with its own keyed stream.
pub fn simulate_replica(env: &Environment, u0: &SimInitial, cfg: &SimConfig, seed: u64, replica: u64) -> Result<Replica> {
    let mut rng = rng::stream(seed, Domain::Replica, replica);
    run_replica(env, u0, cfg, &mut rng)
}

fn run_replica(env: &Environment, u0: &SimInitial, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Replica> {
    let horizon = cfg.horizon;
    let nt = cfg.schedule.len();
    let mut out = Replica {
        snapshots: vec![(0, Vec::new()); nt],
        max: vec![i64::MIN; nt],
        pop: vec![0; nt],
        inside: 0,
        leading: 0,
        beyond_front: 0,
        truncated: false,
    };
    let barriers = cfg.tracking.barriers.as_ref();
    let leading = cfg.tracking.leading.as_ref();
    let inspection = leading.map(|l| l.tn.get(l.m_bar.max(0) as usize).copied().unwrap_or(f64::INFINITY));
    let switches = barriers.map(|b| b.switch_times(horizon)).unwrap_or_default();

    let mut stack: Vec<Particle> = u0
        .sites()
        .into_iter()
        .map(|x| Particle {
            x,
            s: 0.0,
            inside: barriers.is_none_or(|b| b.allows(0.0, x)),
            max_site: x,
            leading_ok: true,
            at_inspection: if inspection == Some(0.0) { Some(x) } else { None },
        })
        .collect();
    let mut created = stack.len();
    if created > cfg.cap {
        return Err(Error::CapExceeded { cap: cfg.cap });
    }

    while let Some(mut p) = stack.pop() {
        loop {
            let xi = xi_at(env, p.x)?;
            let rate = 1.0 + xi;
            let u: f64 = rng.random();
            let tau = -(1.0 - u).ln() / rate;
            let end = p.s + tau;
            // Record the current position at every schedule time the
            // segment [s, end) covers.
            for (j, &t) in cfg.schedule.iter().enumerate() {
                if t >= p.s && (t < end || (t == horizon && end >= horizon)) {
                    occupy(&mut out.snapshots[j], p.x);
                    out.max[j] = out.max[j].max(p.x);
                    out.pop[j] += 1;
                }
            }
            if let Some(ti) = inspection {
                if p.at_inspection.is_none() && ti >= p.s && ti < end {
                    p.at_inspection = Some(p.x);
                }
            }
            if let Some(b) = barriers {
                if p.inside && switches.iter().any(|&w| w > p.s && w < end.min(horizon) && !b.allows(w, p.x)) {
                    p.inside = false;
                }
            }
            if end >= horizon {
                if p.inside {
                    out.inside += 1;
                }
                if let Some(l) = leading {
                    if p.x >= l.m_bar && p.at_inspection.is_some_and(|y| y >= l.m_bar) {
                        out.beyond_front += 1;
                        if p.leading_ok {
                            out.leading += 1;
                        }
                    }
                }
                break;
            }
            p.s = end;
            let v: f64 = rng.random();
            let left = 0.5 / rate;
            if v < 2.0 * left {
                p.x += if v < left { -1 } else { 1 };
                if let Some(b) = barriers {
                    if p.inside && !b.allows(p.s, p.x) {
                        p.inside = false;
                    }
                }
                if p.x > p.max_site {
                    p.max_site = p.x;
                    if let Some(l) = leading {
                        let k = p.x;
                        if k >= 1 && k < l.m_bar {
                            let tk = l.tn.get(k as usize).copied().unwrap_or(f64::INFINITY);
                            if p.s < tk - l.params.alpha * l.params.psi(k) {
                                p.leading_ok = false;
                            }
                        }
                    }
                }
            } else {
                created += 1;
                if created > cfg.cap {
                    out.truncated = true;
                    return Ok(out);
                }
                stack.push(p);
            }
        }
    }
    Ok(out)
}

/// Independent replicas `0..replicas`, results in replica order.
pub fn simulate(env: &Environment, u0: &SimInitial, cfg: &SimConfig, seed: u64, replicas: usize) -> Result<Vec<Replica>> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| simulate_replica(env, u0, cfg, seed, r))
        .collect()
}

/// Whether some particle of the walk started at `x` sits at `target` or
/// beyond at time `t`. Stops at the first such particle.
pub fn reaches(env: &Environment, x: i64, target: i64, t: f64, cap: usize, rng: &mut ChaCha8Rng) -> Result<bool> {
    let mut stack = vec![(x, 0.0f64)];
    let mut created = 1usize;
    while let Some((mut y, mut s)) = stack.pop() {
        loop {
            let xi = xi_at(env, y)?;
            let rate = 1.0 + xi;
            let u: f64 = rng.random();
            s += -(1.0 - u).ln() / rate;
            if s >= t {
                if y >= target {
                    return Ok(true);
                }
                break;
            }
            let v: f64 = rng.random();
            let left = 0.5 / rate;
            if v < 2.0 * left {
                y += if v < left { -1 } else { 1 };
            } else {
                created += 1;
                if created > cap {
                    return Err(Error::CapExceeded { cap });
                }
                stack.push((y, s));
            }
        }
    }
    Ok(false)
}

/// Fraction of replicas with `M(t) >= target` from start `x`, keyed by
/// `key` so that different starts use disjoint streams.
pub fn hit_probability(env: &Environment, x: i64, target: i64, t: f64, replicas: usize, seed: u64, key: u64, cap: usize) -> Result<f64> {
    let hits: Result<Vec<bool>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, Domain::Replica, key.wrapping_mul(1 << 32).wrapping_add(r));
            reaches(env, x, target, t, cap, &mut rng)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / replicas as f64)
}

/// Quenched median `m(t)` of `M(t)` with a binomial band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianEstimate {
    pub t: f64,
    pub median: i64,
    /// Half-width of the 95% binomial band on the exceedance probability.
    pub half_width: f64,
    /// Largest `x` with exceedance at least `1/2 + half_width`.
    pub lower: i64,
    /// Largest `x` with exceedance at least `1/2 - half_width`.
    pub upper: i64,
    pub truncated: bool,
}

/// Largest `x` with `P(M >= x) >= level` among the sample `maxima`.
pub fn quantile_front(maxima: &[i64], level: f64) -> i64 {
    let mut sorted = maxima.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let n = sorted.len() as f64;
    // sorted[k] is the largest x with at least k+1 samples >= x.
    let need = (level * n).ceil().max(1.0) as usize;
    sorted[need.min(sorted.len()) - 1]
}

pub fn estimate_median(env: &Environment, times: &[f64], replicas: usize, seed: u64) -> Result<Vec<MedianEstimate>> {
    if replicas < 100 {
        return Err(Error::EnsembleTooSmall { got: replicas, need: 100 });
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let cfg = SimConfig::new(horizon).with_schedule(times);
    let reps = simulate(env, &SimInitial::Single(0), &cfg, seed, replicas)?;
    medians_from(&reps, &cfg.schedule, times)
}

/// Median estimates at `times` (a subset of `schedule`) from replicas.
pub fn medians_from(reps: &[Replica], schedule: &[f64], times: &[f64]) -> Result<Vec<MedianEstimate>> {
    let n = reps.len() as f64;
    let hw = 1.96 * (0.25 / n).sqrt();
    let truncated = reps.iter().any(|r| r.truncated);
    if truncated {
        log::warn!("population cap reached; median estimates are tainted");
    }
    times
        .iter()
        .map(|&t| {
            let j = schedule
                .iter()
                .position(|s| (s - t).abs() <= 1e-12 * t.max(1.0))
                .ok_or_else(|| Error::InvalidArgument(format!("time {t} not on the schedule")))?;
            let maxima: Vec<i64> = reps.iter().map(|r| r.max[j]).collect();
            Ok(MedianEstimate {
                t,
                median: quantile_front(&maxima, 0.5),
                half_width: hw,
                lower: quantile_front(&maxima, 0.5 + hw),
                upper: quantile_front(&maxima, 0.5 - hw),
                truncated,
            })
        })
        .collect()
}

/// Fraction of replicas with at least one leading particle at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadingEstimate {
    pub probability: f64,
    pub se: f64,
    /// Leading particles never outnumber those beyond the front.
    pub dominated: bool,
}

pub fn leading_count(
    env: &Environment,
    t: f64,
    tn: &[f64],
    m_bar: i64,
    params: PsiParams,
    replicas: usize,
    seed: u64,
) -> Result<LeadingEstimate> {
    if m_bar >= 0 && (m_bar as usize) >= tn.len() {
        return Err(Error::InvalidArgument(format!("T_n table ends before m = {m_bar}")));
    }
    let mut cfg = SimConfig::new(t);
    cfg.tracking.leading = Some(LeadingPlan { tn: tn.to_vec(), m_bar, params });
    let reps = simulate(env, &SimInitial::Single(0), &cfg, seed, replicas)?;
    let hits = reps.iter().filter(|r| r.leading >= 1).count() as f64;
    let p = hits / replicas as f64;
    Ok(LeadingEstimate {
        probability: p,
        se: (p * (1.0 - p) / replicas as f64).sqrt(),
        dominated: reps.iter().all(|r| r.leading <= r.beyond_front),
    })
}

/// Empirical second moment of the barrier-respecting count at `t`, with its
/// jackknife standard error; also returns the first moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub first: f64,
    pub first_se: f64,
    pub second: f64,
    pub second_se: f64,
    pub truncated: bool,
}

pub fn empirical_second_moment(env: &Environment, barriers: &Barriers, t: f64, replicas: usize, seed: u64) -> Result<MomentEstimate> {
    if !(t > 0.0 && t <= 4.0) {
        return Err(Error::InvalidArgument(format!("second moment limited to 0 < t <= 4, got {t}")));
    }
    let mut cfg = SimConfig::new(t);
    cfg.tracking.barriers = Some(barriers.clone());
    let reps = simulate(env, &SimInitial::Single(0), &cfg, seed, replicas)?;
    let counts: Vec<f64> = reps.iter().map(|r| r.inside as f64).collect();
    let squares: Vec<f64> = counts.iter().map(|c| c * c).collect();
    let (first, first_se) = crate::stats::jackknife_mean(&counts);
    let (second, second_se) = crate::stats::jackknife_mean(&squares);
    Ok(MomentEstimate { first, first_se, second, second_se, truncated: reps.iter().any(|r| r.truncated) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Window;

    #[test]
    fn conservation_and_reproducibility() {
        let env = Environment::constant(Window::new(-200, 200), 1.0);
        let cfg = SimConfig::new(2.0).with_schedule(&[0.5, 1.0]);
        let a = simulate(&env, &SimInitial::Single(0), &cfg, 3, 20).unwrap();
        let b = simulate(&env, &SimInitial::Single(0), &cfg, 3, 20).unwrap();
        assert_eq!(a, b);
        for r in &a {
            for (j, (_, counts)) in r.snapshots.iter().enumerate() {
                assert_eq!(counts.iter().sum::<u64>(), r.pop[j]);
            }
        }
    }

    #[test]
    fn cap_sets_truncation_flag() {
        let env = Environment::constant(Window::new(-200, 200), 2.0);
        let mut cfg = SimConfig::new(4.0);
        cfg.cap = 50;
        let r = simulate_replica(&env, &SimInitial::Single(0), &cfg, 1, 0).unwrap();
        assert!(r.truncated);
    }

    #[test]
    fn psi_defaults() {
        let p = PsiParams::default();
        assert_eq!(p.psi(1), 7.0);
        assert!((p.psi(100) - (5.0 + 2.0 * 100f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn quantile_front_picks_largest() {
        assert_eq!(quantile_front(&[0, 1, 2, 3], 0.5), 2);
        assert_eq!(quantile_front(&[5, 5, 5, 5], 0.5), 5);
    }

    #[test]
    fn median_needs_replicas() {
        let env = Environment::constant(Window::new(-20, 20), 1.0);
        assert!(matches!(estimate_median(&env, &[1.0], 10, 0), Err(Error::EnsembleTooSmall { .. })));
    }
}

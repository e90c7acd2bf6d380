//! Random branching environments.
//!
//! An [`Environment`] is a realization of i.i.d. bounded branching rates
//! `xi(x)` on a finite window of the lattice. Site values are drawn from keyed
//! streams (see [`crate::rng`]), so any sub-window regenerates bit-exactly
//! from `(law, seed)` alone. [`ZetaView`] is the shifted potential
//! `zeta = xi - es`, which is non-positive everywhere.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Current version of the environment file format.
pub const SCHEMA_VERSION: u32 = 1;

const PROB_TOL: f64 = 1e-12;

/// Distribution family of a single site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LawKind {
    /// `low` with probability `p_low`, otherwise `high`.
    TwoPoint { low: f64, high: f64, p_low: f64 },
    UniformInterval { low: f64, high: f64 },
    FiniteDiscrete { points: Vec<f64>, probs: Vec<f64> },
    /// Deterministic rate. Only usable as a closed-form reference; it cannot
    /// be sampled as a random environment.
    Constant { value: f64 },
}

/// Law of the i.i.d. branching rates, with an optional additive shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentLaw {
    #[serde(flatten)]
    pub kind: LawKind,
    #[serde(default)]
    pub shift: f64,
}

impl EnvironmentLaw {
    pub fn two_point(low: f64, high: f64, p_low: f64) -> Self {
        Self { kind: LawKind::TwoPoint { low, high, p_low }, shift: 0.0 }
    }

    pub fn uniform(low: f64, high: f64) -> Self {
        Self { kind: LawKind::UniformInterval { low, high }, shift: 0.0 }
    }

    pub fn discrete(points: Vec<f64>, probs: Vec<f64>) -> Self {
        Self { kind: LawKind::FiniteDiscrete { points, probs }, shift: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        Self { kind: LawKind::Constant { value }, shift: 0.0 }
    }

    /// Two-point law on `{1, 2}` with equal weights.
    pub fn default_two_point() -> Self {
        Self::two_point(1.0, 2.0, 0.5)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    /// Atoms with positive mass (before the shift) and their weights.
    fn atoms(&self) -> Vec<(f64, f64)> {
        match &self.kind {
            LawKind::TwoPoint { low, high, p_low } => vec![(*low, *p_low), (*high, 1.0 - p_low)]
                .into_iter()
                .filter(|(_, p)| *p > 0.0)
                .collect(),
            LawKind::FiniteDiscrete { points, probs } => points
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(x, p)| (*x, *p))
                .collect(),
            LawKind::Constant { value } => vec![(*value, 1.0)],
            LawKind::UniformInterval { .. } => Vec::new(),
        }
    }

    /// Essential supremum of the (shifted) rate.
    pub fn es(&self) -> f64 {
        let top = match &self.kind {
            LawKind::UniformInterval { high, .. } => *high,
            _ => self.atoms().iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max),
        };
        top + self.shift
    }

    /// Essential infimum of the (shifted) rate.
    pub fn ei(&self) -> f64 {
        let bottom = match &self.kind {
            LawKind::UniformInterval { low, .. } => *low,
            _ => self.atoms().iter().map(|a| a.0).fold(f64::INFINITY, f64::min),
        };
        bottom + self.shift
    }

    pub fn mean(&self) -> f64 {
        let m = match &self.kind {
            LawKind::UniformInterval { low, high } => 0.5 * (low + high),
            _ => self.atoms().iter().map(|(x, p)| x * p).sum(),
        };
        m + self.shift
    }

    pub fn variance(&self) -> f64 {
        match &self.kind {
            LawKind::UniformInterval { low, high } => (high - low).powi(2) / 12.0,
            _ => {
                let m = self.mean() - self.shift;
                self.atoms().iter().map(|(x, p)| p * (x - m).powi(2)).sum()
            }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, LawKind::Constant { .. })
    }

    /// Checks the parameters. A `Constant` law passes when its value is
    /// positive; every other family must satisfy `0 < ei < es < inf`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLaw(m));
        if !self.shift.is_finite() || self.shift < 0.0 {
            return bad(format!("shift must be finite and non-negative, got {}", self.shift));
        }
        match &self.kind {
            LawKind::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return bad(format!("constant rate must be positive, got {value}"));
                }
                return Ok(());
            }
            LawKind::TwoPoint { low, high, p_low } => {
                if !(0.0..=1.0).contains(p_low) {
                    return bad(format!("p_low = {p_low} is not a probability"));
                }
                if !low.is_finite() || !high.is_finite() {
                    return bad("support points must be finite".into());
                }
            }
            LawKind::UniformInterval { low, high } => {
                if !low.is_finite() || !high.is_finite() || low > high {
                    return bad(format!("bad interval [{low}, {high}]"));
                }
            }
            LawKind::FiniteDiscrete { points, probs } => {
                if points.is_empty() || points.len() != probs.len() {
                    return bad("points and probs must be non-empty and of equal length".into());
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad("probabilities must lie in [0, 1]".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return bad(format!("probabilities sum to {total}, not 1"));
                }
                if points.iter().any(|x| !x.is_finite()) {
                    return bad("support points must be finite".into());
                }
            }
        }
        let (ei, es) = (self.ei(), self.es());
        if !(ei > 0.0) {
            return bad(format!("essential infimum must be positive, got {ei}"));
        }
        if !(ei < es) {
            return bad(format!("law is degenerate: ei = {ei}, es = {es}"));
        }
        Ok(())
    }

    /// Maps a uniform variate to a rate; `quantile(u) - shift` does not
    /// depend on the shift, so shifted samples are exact translates.
    fn quantile(&self, u: f64) -> f64 {
        let base = match &self.kind {
            LawKind::TwoPoint { low, high, p_low } => {
                if u < *p_low {
                    *low
                } else {
                    *high
                }
            }
            LawKind::UniformInterval { low, high } => low + (high - low) * u,
            LawKind::FiniteDiscrete { points, probs } => {
                let mut acc = 0.0;
                let mut out = *points.last().expect("validated non-empty");
                for (x, p) in points.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        out = *x;
                        break;
                    }
                }
                out
            }
            LawKind::Constant { value } => *value,
        };
        base + self.shift
    }
}

/// Inclusive integer interval of lattice sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: i64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// A realization of the branching rates on a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub window: Window,
    pub xi: Vec<f64>,
    pub seed: u64,
    pub law: EnvironmentLaw,
}

/// Draws `xi(x)` independently for every site of `window`.
pub fn sample_environment(law: &EnvironmentLaw, window: Window, seed: u64) -> Result<Environment> {
    law.validate()?;
    if law.is_degenerate() {
        return Err(Error::InvalidLaw("a constant rate is not a random environment".into()));
    }
    if window.is_empty() {
        return Err(Error::InvalidArgument(format!("empty window [{}, {}]", window.lo, window.hi)));
    }
    let xi = (window.lo..=window.hi)
        .map(|x| law.quantile(rng::keyed_uniform(seed, Domain::Environment, x as u64)))
        .collect();
    Ok(Environment { window, xi, seed, law: law.clone() })
}

impl Environment {
    /// Deterministic environment `xi = value` on `window`.
    pub fn constant(window: Window, value: f64) -> Self {
        Self { window, xi: vec![value; window.len()], seed: 0, law: EnvironmentLaw::constant(value) }
    }

    /// Environment with explicit rates; `es` is taken from `law`.
    pub fn from_values(x_lo: i64, xi: Vec<f64>, law: EnvironmentLaw) -> Result<Self> {
        if xi.is_empty() {
            return Err(Error::InvalidArgument("no rates given".into()));
        }
        let window = Window::new(x_lo, x_lo + xi.len() as i64 - 1);
        Ok(Self { window, xi, seed: 0, law })
    }

    pub fn es(&self) -> f64 {
        self.law.es()
    }

    pub fn ei(&self) -> f64 {
        self.law.ei()
    }

    pub fn xi_at(&self, x: i64) -> Option<f64> {
        self.window.contains(x).then(|| self.xi[(x - self.window.lo) as usize])
    }

    /// Rates on the sites `lo..=hi`.
    pub fn slice(&self, lo: i64, hi: i64) -> Result<&[f64]> {
        if !self.window.contains(lo) {
            return Err(Error::OutsideEnvironment(lo));
        }
        if !self.window.contains(hi) {
            return Err(Error::OutsideEnvironment(hi));
        }
        let a = (lo - self.window.lo) as usize;
        let b = (hi - self.window.lo) as usize;
        Ok(&self.xi[a..=b])
    }

    pub fn max_xi(&self) -> f64 {
        self.xi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// The mirrored environment `x -> xi(-x)`.
    pub fn reflected(&self) -> Self {
        let mut xi = self.xi.clone();
        xi.reverse();
        Self {
            window: Window::new(-self.window.hi, -self.window.lo),
            xi,
            seed: self.seed,
            law: self.law.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_environment(self, path)
    }
}

/// `zeta(x) = xi(x) - es` on the environment window.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaView {
    pub x_lo: i64,
    pub zeta: Vec<f64>,
}

pub fn zeta_of(env: &Environment) -> ZetaView {
    let es = env.es();
    ZetaView { x_lo: env.window.lo, zeta: env.xi.iter().map(|x| x - es).collect() }
}

impl ZetaView {
    pub fn x_hi(&self) -> i64 {
        self.x_lo + self.zeta.len() as i64 - 1
    }

    pub fn get(&self, x: i64) -> Option<f64> {
        if x < self.x_lo || x > self.x_hi() {
            None
        } else {
            Some(self.zeta[(x - self.x_lo) as usize])
        }
    }

    /// Values on `lo..=hi`, or the first missing site.
    pub fn range(&self, lo: i64, hi: i64) -> std::result::Result<&[f64], i64> {
        if lo < self.x_lo {
            return Err(lo);
        }
        if hi > self.x_hi() {
            return Err(hi);
        }
        Ok(&self.zeta[(lo - self.x_lo) as usize..=(hi - self.x_lo) as usize])
    }

    pub fn max(&self) -> f64 {
        self.zeta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.zeta.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Serialize, Deserialize)]
struct EnvironmentFile {
    schema_version: u32,
    law: EnvironmentLaw,
    window: [i64; 2],
    seed: u64,
    values: Vec<f64>,
}

/// The stored form of an environment. Unknown top-level keys are ignored on
/// load, so callers may attach metadata.
pub fn environment_json(env: &Environment) -> serde_json::Value {
    let file = EnvironmentFile {
        schema_version: SCHEMA_VERSION,
        law: env.law.clone(),
        window: [env.window.lo, env.window.hi],
        seed: env.seed,
        values: env.xi.clone(),
    };
    serde_json::to_value(file).expect("environment serializes")
}

pub fn save_environment(env: &Environment, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&environment_json(env))?)?;
    Ok(())
}

pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment> {
    let text = fs::read_to_string(path)?;
    parse_environment(&text)
}

pub fn parse_environment(text: &str) -> Result<Environment> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("unreadable environment file: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Schema("missing schema_version".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion { found: version as u32, expected: SCHEMA_VERSION });
    }
    let file: EnvironmentFile =
        serde_json::from_value(value).map_err(|e| Error::Schema(format!("environment file: {e}")))?;
    let window = Window::new(file.window[0], file.window[1]);
    if window.len() != file.values.len() {
        return Err(Error::Schema(format!(
            "window holds {} sites but {} values are stored",
            window.len(),
            file.values.len()
        )));
    }
    Ok(Environment { window, xi: file.values, seed: file.seed, law: file.law })
}

//! Experiment configuration files.

use std::path::Path;

use brwre::env::{EnvironmentLaw, Window};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything a subcommand needs; echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub law: EnvironmentLaw,
    pub seed: u64,
    /// Sampled environment window `[lo, hi]`.
    pub window: [i64; 2],
    #[serde(default)]
    pub lyapunov: LyapunovSection,
    #[serde(default)]
    pub pam: PamSection,
    #[serde(default)]
    pub fkpp: FkppSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    pub velocities: Vec<f64>,
    pub population_sites: usize,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self { velocities: (1..=40).map(|k| k as f64 * 0.1).collect(), population_sites: 1 << 18 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PamSection {
    pub horizon: f64,
    pub times: Vec<f64>,
    /// Exponential gauge of the stored field.
    pub tilt: f64,
    /// Largest `n` of the `T_n` table.
    pub tn_max: Option<i64>,
    /// Wall-clock seconds between checkpoints; none disables them.
    pub checkpoint_seconds: Option<f64>,
    /// Velocities for `m_bar_v` and `U_v` in the front trace; `lambda` is
    /// estimated from `lyapunov.population_sites` sites.
    pub velocities: Vec<f64>,
}

impl Default for PamSection {
    fn default() -> Self {
        Self { horizon: 50.0, times: vec![10.0, 20.0, 30.0, 40.0, 50.0], tilt: 0.0, tn_max: None, checkpoint_seconds: None, velocities: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FkppSection {
    pub times: Vec<f64>,
    pub duality_time: f64,
    pub duality_sites: Vec<i64>,
    pub duality_replicas: usize,
}

impl Default for FkppSection {
    fn default() -> Self {
        Self {
            times: vec![5.0, 10.0, 20.0, 40.0, 60.0],
            duality_time: 4.0,
            duality_sites: brwre::verify::DUALITY_SITES.to_vec(),
            duality_replicas: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub replicas: usize,
    pub cap: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { horizon: 4.0, times: vec![1.0, 2.0, 3.0, 4.0], replicas: 1000, cap: brwre::sim::DEFAULT_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub mgf_tol: f64,
    /// Time step override; the default is derived from the largest rate.
    pub dt: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { mgf_tol: 1e-12, dt: None }
    }
}

impl ExperimentConfig {
    pub fn window(&self) -> Window {
        Window::new(self.window[0], self.window[1])
    }

    /// Parses and validates, reporting the JSON path of a bad field.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Usage(format!("config field `{path}`: {}", e.inner()))
        })?;
        cfg.law.validate().map_err(|e| CliError::Usage(format!("config field `law`: {e}")))?;
        if cfg.window[0] > cfg.window[1] {
            return Err(CliError::Usage("config field `window`: lo exceeds hi".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// SHA-256 of the canonical JSON form, as hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"law": {"kind": "two-point", "low": 1.0, "high": 2.0, "p_low": 0.5}, "seed": 3, "window": [-10, 10]}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.sim, SimSection::default());
        assert_eq!(cfg.hash(), ExperimentConfig::parse(MINIMAL).unwrap().hash());
    }

    #[test]
    fn missing_field_names_its_path() {
        let err = ExperimentConfig::parse(r#"{"law": {"kind": "two-point", "low": 1.0, "high": 2.0}, "seed": 1, "window": [0, 1]}"#)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("law") && msg.contains("p_low"), "{msg}");
    }

    #[test]
    fn nested_type_error_names_its_path() {
        let text = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sim\": {\"replicas\": \"many\"}");
        let msg = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(msg.contains("sim.replicas"), "{msg}");
    }
}

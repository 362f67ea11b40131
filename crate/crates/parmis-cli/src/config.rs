//! Experiment configuration: schema-validated TOML with unknown keys
//! rejected everywhere.

use serde::{Deserialize, Serialize};
use std::path::Path;

use parmis::optimizer::{ParmisConfig, ScalarizedConfig};
use parmis::policy::PolicyArchitecture;
use parmis::socsim::{Calibration, ObjectiveId, WorkloadSpec};
use parmis::{workloads, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Parmis,
    Random,
    Scalarized,
    Nsga2,
    Governors,
}

/// Overrides for the policy architecture (head sizes are fixed by the
/// decision space; only the trunk is configurable).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyOverrides {
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarizedSection {
    /// Number of evenly spaced weight vectors (two-objective runs).
    pub weights_points: usize,
    /// Evaluations per weight vector; defaults to budget / weights_points.
    pub per_weight_budget: Option<usize>,
    #[serde(flatten)]
    pub inner: ScalarizedConfig,
}

impl Default for ScalarizedSection {
    fn default() -> Self {
        ScalarizedSection { weights_points: 5, per_weight_budget: None, inner: ScalarizedConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nsga2Section {
    pub population: usize,
}

impl Default for Nsga2Section {
    fn default() -> Self {
        Nsga2Section { population: 20 }
    }
}

/// One experiment: a strategy, applications, objectives, seeds, and budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    /// Built-in workload names or paths to workload TOML files.
    pub apps: Vec<String>,
    /// Objective names; order defines the objective-vector layout.
    pub objectives: Vec<String>,
    pub seeds: Vec<u64>,
    /// Total true evaluations per seed.
    pub budget: usize,
    pub out_dir: String,
    #[serde(default)]
    pub policy: PolicyOverrides,
    #[serde(default)]
    pub simulator: Calibration,
    #[serde(default)]
    pub parmis: ParmisConfig,
    #[serde(default)]
    pub scalarized: ScalarizedSection,
    #[serde(default)]
    pub nsga2: Nsga2Section,
}

/// Everything resolved and validated, ready to run.
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub apps: Vec<WorkloadSpec>,
    pub objectives: Vec<ObjectiveId>,
    pub arch: PolicyArchitecture,
}

/// FNV-1a over the canonical config text; stable across platforms.
pub fn fnv1a_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ResolvedExperiment> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::input(format!("config: {e}")))?;
        config.resolve()
    }

    pub fn resolve(self) -> Result<ResolvedExperiment> {
        if self.apps.is_empty() {
            return Err(Error::input("config needs at least one app"));
        }
        if self.seeds.is_empty() {
            return Err(Error::input("config needs at least one seed"));
        }
        if self.budget == 0 {
            return Err(Error::input("budget must be >= 1"));
        }
        let objectives = self
            .objectives
            .iter()
            .map(|s| s.parse::<ObjectiveId>())
            .collect::<Result<Vec<_>>>()?;
        if objectives.len() < 2 {
            return Err(Error::input("config needs at least two objectives"));
        }
        let apps = self
            .apps
            .iter()
            .map(|a| workloads::resolve(a))
            .collect::<Result<Vec<_>>>()?;

        let mut arch = PolicyArchitecture::default();
        if let Some(hidden) = &self.policy.hidden {
            arch.hidden = hidden.clone();
        }
        arch.validate()?;

        // canonical serialization for the hash: independent of input formatting
        let canonical = toml::to_string(&self).map_err(|e| Error::Serde(e.to_string()))?;
        let config_hash = fnv1a_hash(&canonical);

        Ok(ResolvedExperiment { config: self, config_hash, apps, objectives, arch })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
strategy = "random"
apps = ["balanced_mix"]
objectives = ["time", "energy"]
seeds = [0]
budget = 5
out_dir = "runs/x"
"#;

    #[test]
    fn minimal_config_parses() {
        let config: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        let resolved = config.resolve().unwrap();
        assert_eq!(resolved.objectives.len(), 2);
        assert_eq!(resolved.apps[0].name, "balanced_mix");
        assert_eq!(resolved.arch.hidden, vec![8, 8]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("budget = 5", "budget = 5\nbudgett = 7");
        assert!(toml::from_str::<ExperimentConfig>(&bad).is_err());
        let bad_nested = format!("{MINIMAL}\n[parmis]\nnot_a_key = 1\n");
        assert!(toml::from_str::<ExperimentConfig>(&bad_nested).is_err());
    }

    #[test]
    fn bad_objective_rejected() {
        let bad = MINIMAL.replace("\"energy\"", "\"joules\"");
        let config: ExperimentConfig = toml::from_str(&bad).unwrap();
        assert!(config.resolve().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        let b: ExperimentConfig =
            toml::from_str(&MINIMAL.replace("budget = 5", "budget = 6")).unwrap();
        assert_ne!(
            a.resolve().unwrap().config_hash,
            b.resolve().unwrap().config_hash
        );
    }
}

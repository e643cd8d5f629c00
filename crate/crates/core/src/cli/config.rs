//! Experiment configuration files and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{RouteRule, TransformKind};
use crate::dynamics::{Integrator, SimConfig};
use crate::error::{Error, Result};

/// Task parameters. Unset fields take the per-experiment defaults; figure
/// caption names are accepted as aliases.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    #[serde(alias = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(alias = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(alias = "N_h", alias = "n_h", skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Small-random init scale (multiplier on fan-scaled Gaussian init).
    #[serde(alias = "sigma0", alias = "gain", skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    /// Value of every mode in decoupled starts.
    #[serde(alias = "B0", skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(alias = "P", skip_serializing_if = "Option::is_none")]
    pub p_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    #[serde(alias = "sigma0_grid", skip_serializing_if = "Option::is_none")]
    pub scale_grid: Option<Vec<f64>>,
    /// Largest step used in scale sweeps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<f64>,
    /// Scale sweeps use step `min(step_cap, step_stiffness / scale⁴)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_stiffness: Option<f64>,
    /// Step count of the scale sweep in the transform bench.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<RouteRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<TransformKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    /// Std of the ReLU reference network's initial entries.
    #[serde(alias = "relu_sigma0", skip_serializing_if = "Option::is_none")]
    pub relu_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

/// Overrides of the experiment's default simulation settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(alias = "lambda", alias = "lr", alias = "eta", skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<Integrator>,
}

impl SimParams {
    pub fn apply(&self, mut base: SimConfig) -> SimConfig {
        if let Some(v) = self.tau {
            base.tau = v;
        }
        if let Some(v) = self.step {
            base.step = v;
        }
        if let Some(v) = self.steps {
            base.steps = v;
        }
        if let Some(v) = self.record_every {
            base.record_every = v;
        }
        if let Some(v) = self.top_k {
            base.top_k = v;
        }
        if let Some(v) = self.integrator {
            base.integrator = v;
        }
        base
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Seeds of the repeated runs; empty means the experiment default.
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub task: TaskParams,
    pub sim: SimParams,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        let empty = |name: &str| Error::InvalidConfig(format!("{name} must not be empty"));
        if t.p_grid.as_ref().is_some_and(Vec::is_empty) {
            return Err(empty("p_grid"));
        }
        if t.k_grid.as_ref().is_some_and(Vec::is_empty) {
            return Err(empty("k_grid"));
        }
        if let Some(g) = &t.scale_grid {
            if g.is_empty() {
                return Err(empty("scale_grid"));
            }
            if g.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::InvalidConfig("scale_grid values must be positive".into()));
            }
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        Ok(())
    }

    /// Configured seeds, or `0..n` when none are given.
    pub fn seeds_or(&self, n: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..n).collect()
        } else {
            self.seeds.clone()
        }
    }
}

/// Parse a comma-separated seed list with optional ranges: `0,3,5-7`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Parse(format!("invalid seed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub seed: Option<u64>,
    pub status: String,
    pub files: Vec<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub quick: bool,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    /// Every file written by the run except the manifest itself.
    pub files: Vec<String>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caption_aliases() {
        let cfg = ExperimentConfig::from_toml_str(
            "experiment = \"routing\"\nseeds = [1, 2]\n[task]\nM = 7\nK = 4\nsigma0 = 0.2\nN_h = 64\n[sim]\nlambda = 0.02\nintegrator = \"rk4\"\n",
        )
        .unwrap();
        assert_eq!(cfg.task.m, Some(7));
        assert_eq!(cfg.task.k, Some(4));
        assert_eq!(cfg.task.hidden, Some(64));
        assert_eq!(cfg.task.init_scale, Some(0.2));
        let sim = cfg.sim.apply(SimConfig::default());
        assert_eq!(sim.step, 0.02);
        assert_eq!(sim.integrator, Integrator::Rk4);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("[task]\nk_grid = []\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[task]\nscale_grid = [0.1, -1.0]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("seeds = [1, 1]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[task]\nbogus = 1\n").is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0,3,5-7").unwrap(), vec![0, 3, 5, 6, 7]);
        assert_eq!(parse_seed_list("4").unwrap(), vec![4]);
        assert!(parse_seed_list("").is_err());
        assert!(parse_seed_list("3-1").is_err());
        assert!(parse_seed_list("x").is_err());
    }
}

//! Run configuration: an optional JSON file overlaid by command-line flags,
//! then resolved against per-dataset defaults.
//!
//! JSON schema (every key optional; flags win):
//!
//! ```json
//! {
//!   "dataset": "mnist" | "mnist-subset" | "blobs" | "xor",
//!   "data_dir": "path/to/idx/files",
//!   "plan": "desk-mlp" | { "input_dim": 784, "n_classes": 10, "components": [...] },
//!   "mode": "al-seq" | "al-pipe" | "bp",
//!   "bp_loss": "cross-entropy" | "mse",
//!   "epochs": 20,
//!   "batch_size": 128,
//!   "lr": 0.0001,
//!   "lr_drops": [80, 120, 160, 180],
//!   "lr_factor": 0.5,
//!   "seed": 1,
//!   "out": "runs/example"
//! }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use assoc_learn::al::NetworkPlan;
use assoc_learn::bp::BpLoss;
use assoc_learn::train::TrainMode;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "AL_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    MnistSubset,
    Blobs,
    Xor,
}

impl DatasetKind {
    pub fn needs_files(self) -> bool {
        matches!(self, DatasetKind::Mnist | DatasetKind::MnistSubset)
    }

    fn default_plan(self) -> &'static str {
        match self {
            DatasetKind::Mnist | DatasetKind::MnistSubset => "desk-mlp",
            DatasetKind::Blobs => "toy",
            DatasetKind::Xor => "xor",
        }
    }

    fn default_batch_size(self) -> usize {
        match self {
            DatasetKind::Xor => 4,
            _ => 128,
        }
    }

    fn default_lr(self) -> f64 {
        match self {
            DatasetKind::Mnist | DatasetKind::MnistSubset => 1e-4,
            DatasetKind::Blobs => 1e-3,
            DatasetKind::Xor => 1e-2,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::MnistSubset => "mnist-subset",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Xor => "xor",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "mnist-subset" => Ok(DatasetKind::MnistSubset),
            "blobs" => Ok(DatasetKind::Blobs),
            "xor" => Ok(DatasetKind::Xor),
            other => Err(format!(
                "unknown dataset {other:?}; expected mnist, mnist-subset, blobs or xor"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanSpec {
    Named(String),
    Inline(NetworkPlan),
}

impl PlanSpec {
    pub fn resolve(&self) -> Result<NetworkPlan, String> {
        let plan = match self {
            PlanSpec::Named(name) => NetworkPlan::named(name).map_err(|e| e.to_string())?,
            PlanSpec::Inline(plan) => plan.clone(),
        };
        plan.validate().map_err(|e| e.to_string())?;
        Ok(plan)
    }
}

/// Partially specified configuration, as read from a file or from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub dataset: Option<DatasetKind>,
    pub data_dir: Option<PathBuf>,
    pub plan: Option<PlanSpec>,
    pub mode: Option<TrainMode>,
    pub bp_loss: Option<BpLoss>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_drops: Option<Vec<usize>>,
    pub lr_factor: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl PartialConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(self, other: PartialConfig) -> PartialConfig {
        PartialConfig {
            dataset: other.dataset.or(self.dataset),
            data_dir: other.data_dir.or(self.data_dir),
            plan: other.plan.or(self.plan),
            mode: other.mode.or(self.mode),
            bp_loss: other.bp_loss.or(self.bp_loss),
            epochs: other.epochs.or(self.epochs),
            batch_size: other.batch_size.or(self.batch_size),
            lr: other.lr.or(self.lr),
            lr_drops: other.lr_drops.or(self.lr_drops),
            lr_factor: other.lr_factor.or(self.lr_factor),
            seed: other.seed.or(self.seed),
            out: other.out.or(self.out),
        }
    }
}

/// Fully resolved configuration; written to the run directory as-is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub plan_name: Option<String>,
    pub plan: NetworkPlan,
    pub mode: TrainMode,
    pub bp_loss: BpLoss,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_drops: Vec<usize>,
    pub lr_factor: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    /// Fills defaults and checks everything that can be checked before loading
    /// data. `env_data_dir` is the value of [`DATA_DIR_ENV`], if set.
    pub fn resolve(partial: PartialConfig, env_data_dir: Option<PathBuf>) -> Result<Self, String> {
        let seed = partial.seed.ok_or("--seed is required")?;
        let dataset = partial.dataset.unwrap_or(DatasetKind::MnistSubset);
        let mode = partial.mode.unwrap_or(TrainMode::AlSequential);
        let spec = partial
            .plan
            .unwrap_or_else(|| PlanSpec::Named(dataset.default_plan().to_string()));
        let plan = spec.resolve()?;
        let plan_name = match &spec {
            PlanSpec::Named(n) => Some(n.clone()),
            PlanSpec::Inline(_) => None,
        };

        let data_dir = if dataset.needs_files() {
            let dir = partial
                .data_dir
                .or(env_data_dir)
                .ok_or_else(|| format!("dataset {dataset} needs --data-dir or {DATA_DIR_ENV}"))?;
            if !dir.is_dir() {
                return Err(format!("data directory {} does not exist", dir.display()));
            }
            Some(dir)
        } else {
            partial.data_dir
        };

        let batch_size = partial.batch_size.unwrap_or(dataset.default_batch_size());
        if batch_size == 0 {
            return Err("--batch-size must be positive".into());
        }
        let lr = partial.lr.unwrap_or(dataset.default_lr());
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(format!("--lr must be a non-negative number, got {lr}"));
        }
        let lr_factor = partial.lr_factor.unwrap_or(0.5);
        if !(lr_factor.is_finite() && lr_factor > 0.0) {
            return Err(format!("lr factor must be positive, got {lr_factor}"));
        }
        let out = partial
            .out
            .unwrap_or_else(|| PathBuf::from(format!("runs/{dataset}-{mode}-seed{seed}")));

        Ok(Self {
            dataset,
            data_dir,
            plan_name,
            plan,
            mode,
            bp_loss: partial.bp_loss.unwrap_or_default(),
            epochs: partial.epochs.unwrap_or(20),
            batch_size,
            lr,
            lr_drops: partial.lr_drops.unwrap_or_else(|| vec![80, 120, 160, 180]),
            lr_factor,
            seed,
            out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded() -> PartialConfig {
        PartialConfig {
            seed: Some(3),
            ..Default::default()
        }
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::resolve(PartialConfig::default(), None).is_err());
    }

    #[test]
    fn xor_defaults() {
        let cfg = RunConfig::resolve(
            PartialConfig {
                dataset: Some(DatasetKind::Xor),
                ..seeded()
            },
            None,
        )
        .unwrap();
        assert_eq!(cfg.plan_name.as_deref(), Some("xor"));
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.out, PathBuf::from("runs/xor-al-seq-seed3"));
    }

    #[test]
    fn mnist_requires_an_existing_directory() {
        let partial = PartialConfig {
            dataset: Some(DatasetKind::Mnist),
            ..seeded()
        };
        assert!(RunConfig::resolve(partial.clone(), None).is_err());
        assert!(RunConfig::resolve(partial.clone(), Some("/definitely/not/here".into())).is_err());
        let dir = std::env::temp_dir();
        let cfg = RunConfig::resolve(partial, Some(dir.clone())).unwrap();
        assert_eq!(cfg.data_dir, Some(dir));
    }

    #[test]
    fn flags_override_file_values() {
        let file: PartialConfig = serde_json::from_str(
            r#"{"epochs": 7, "lr": 0.5, "mode": "bp", "plan": "toy", "dataset": "blobs"}"#,
        )
        .unwrap();
        let flags = PartialConfig {
            epochs: Some(2),
            ..seeded()
        };
        let cfg = RunConfig::resolve(file.overlay(flags), None).unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.mode, TrainMode::Bp);
    }

    #[test]
    fn inline_plans_and_unknown_keys() {
        let file: PartialConfig = serde_json::from_str(
            r#"{"dataset": "xor", "plan": {"input_dim": 2, "n_classes": 2, "components": [{"s_out": 3, "t_out": 3, "b_hidden": [4]}]}}"#,
        )
        .unwrap();
        let cfg = RunConfig::resolve(file.overlay(seeded()), None).unwrap();
        assert_eq!(cfg.plan.components.len(), 1);
        assert!(cfg.plan_name.is_none());
        assert!(serde_json::from_str::<PartialConfig>(r#"{"epoch": 3}"#).is_err());
    }
}

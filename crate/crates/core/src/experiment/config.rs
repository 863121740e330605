use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coop::{ContextMode, CoopConfig};
use crate::corpus::BalancePolicy;
use crate::metrics::{balanced_accuracy, quadratic_kappa};
use crate::model::{LoraTarget, ModelConfig, UpdateMode};
use crate::synth::{RelevanceMix, SynthTaskSpec};
use crate::train::{TrainConfig, TuneGrid};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    BalancedAccuracy,
    QuadraticKappa,
}

impl MetricKind {
    pub fn evaluate(self, truth: &[usize], preds: &[usize], k: usize) -> Result<f64> {
        match self {
            MetricKind::BalancedAccuracy => balanced_accuracy(truth, preds, k),
            MetricKind::QuadraticKappa => quadratic_kappa(truth, preds, k),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::BalancedAccuracy => "balanced_accuracy",
            MetricKind::QuadraticKappa => "quadratic_kappa",
        }
    }
}

/// Files that replace the generated ones for a task. Anything left out is
/// synthesized from the world spec.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskPaths {
    pub corpus: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub train_dataset: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    /// Organ of the synthetic world this task is drawn from.
    pub organ: String,
    pub metric: MetricKind,
    #[serde(default = "default_corpus_size")]
    pub corpus_size: usize,
    pub mix: RelevanceMix,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default)]
    pub paths: TaskPaths,
}

fn default_corpus_size() -> usize {
    2000
}

fn default_test_per_class() -> usize {
    25
}

fn default_train_per_class() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSettings {
    /// Use this corpus instead of generating one.
    pub corpus: Option<PathBuf>,
    pub corpus_size: usize,
    /// Probability that a generated caption's class matches its image.
    pub class_fidelity: f64,
    pub train: TrainConfig,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        PretrainSettings {
            corpus: None,
            corpus_size: 2000,
            class_fidelity: 0.3,
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSettings {
    pub rank: usize,
    pub alpha: f64,
    pub target: LoraTarget,
}

impl Default for LoraSettings {
    fn default() -> Self {
        LoraSettings {
            rank: 4,
            alpha: 8.0,
            target: LoraTarget::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoopSettings {
    /// Task names to run CoOp on; empty means all.
    pub tasks: Vec<String>,
    pub lengths: Vec<usize>,
    pub modes: Vec<ContextMode>,
    pub shots: Vec<usize>,
    /// Number of few-shot sets (and context initializations) per cell.
    pub seeds: usize,
    pub train: CoopConfig,
    pub tune: Option<TuneGrid>,
}

impl Default for CoopSettings {
    fn default() -> Self {
        CoopSettings {
            tasks: Vec::new(),
            lengths: vec![4, 16],
            modes: vec![ContextMode::Unified, ContextMode::Csc],
            shots: vec![1, 2, 4, 8],
            seeds: 10,
            train: CoopConfig::default(),
            tune: Some(TuneGrid {
                lrs: vec![1e-3, 3e-3, 1e-2],
                weight_decays: vec![1e-4, 1e-2],
                probe_epochs: 5,
            }),
        }
    }
}

/// Everything a run depends on. `seed` is the master seed: it seeds the
/// world, model initialization and base pretraining; repetition `r` trains
/// with `seed + r` and few-shot set `i` is drawn with `seed + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub world: SynthTaskSpec,
    pub model: ModelConfig,
    pub pretrain: PretrainSettings,
    pub tasks: Vec<TaskConfig>,
    /// Shots per class for continued pretraining, strictly increasing.
    pub shots: Vec<usize>,
    pub repetitions: usize,
    /// `seed` and `lr`/`weight_decay` are overridden per repetition and by
    /// tuning respectively.
    pub train: TrainConfig,
    pub tune: Option<TuneGrid>,
    pub lora: LoraSettings,
    /// Balance TAPT pairs by keyword pseudo-label before taking shots.
    pub balance: Option<BalancePolicy>,
    pub coop: Option<CoopSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let task = |name: &str, metric, mix: [f64; 4]| TaskConfig {
            name: name.into(),
            organ: name.into(),
            metric,
            corpus_size: default_corpus_size(),
            mix: RelevanceMix {
                task: mix[0],
                domain_only: mix[1],
                off_domain: mix[2],
                noise: mix[3],
            },
            test_per_class: default_test_per_class(),
            train_per_class: default_train_per_class(),
            paths: TaskPaths::default(),
        };
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            world: SynthTaskSpec::default(),
            model: ModelConfig::default(),
            pretrain: PretrainSettings::default(),
            tasks: vec![
                task("breast", MetricKind::BalancedAccuracy, [0.15, 0.25, 0.55, 0.05]),
                task("colon", MetricKind::BalancedAccuracy, [0.25, 0.3, 0.35, 0.1]),
                task("prostate", MetricKind::QuadraticKappa, [0.2, 0.3, 0.4, 0.1]),
            ],
            shots: vec![1, 4, 16, 64, 128],
            repetitions: 5,
            train: TrainConfig::default(),
            tune: Some(TuneGrid::default()),
            lora: LoraSettings::default(),
            balance: None,
            coop: Some(CoopSettings::default()),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Canonical JSON of the whole config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// sha256 of the canonical JSON with `out` blanked, so the same
    /// experiment hashes the same wherever it is written.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let located = ExperimentConfig {
            out: PathBuf::new(),
            ..self.clone()
        };
        hex::encode(Sha256::digest(located.canonical_json().as_bytes()))
    }

    pub fn task(&self, name: &str) -> Result<&TaskConfig> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no task named {name:?}")))
    }

    pub fn coop_tasks(&self) -> Vec<&TaskConfig> {
        match &self.coop {
            None => Vec::new(),
            Some(c) if c.tasks.is_empty() => self.tasks.iter().collect(),
            Some(c) => self.tasks.iter().filter(|t| c.tasks.contains(&t.name)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.world.validate()?;
        self.train.validate()?;
        self.pretrain.train.validate()?;
        if self.tasks.is_empty() {
            return bad("no tasks configured".into());
        }
        if self.shots.is_empty() || self.shots[0] == 0 || self.shots.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("shots must be positive and strictly increasing, got {:?}", self.shots));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.train.update_mode == UpdateMode::Frozen {
            return bad("update_mode frozen trains nothing".into());
        }
        let mut names = std::collections::HashSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return bad(format!("duplicate task {:?}", t.name));
            }
            if t.name.is_empty() || t.name.contains(['/', '\\']) || t.name.starts_with('.') {
                return bad(format!("task name {:?} is not a plain directory name", t.name));
            }
            self.world.organ_index(&t.organ)?;
            t.mix.validate()?;
            if t.corpus_size == 0 || t.test_per_class == 0 || t.train_per_class == 0 {
                return bad(format!("task {:?}: sizes must be >= 1", t.name));
            }
            let p = &t.paths;
            for path in [&p.corpus, &p.keywords, &p.prompts, &p.test_dataset, &p.train_dataset]
                .into_iter()
                .flatten()
            {
                if !path.exists() {
                    return bad(format!("task {:?}: {} does not exist", t.name, path.display()));
                }
            }
        }
        if let Some(p) = &self.pretrain.corpus {
            if !p.exists() {
                return bad(format!("pretraining corpus {} does not exist", p.display()));
            }
        }
        if let Some(c) = &self.coop {
            for name in &c.tasks {
                self.task(name)?;
            }
            if c.lengths.is_empty() || c.lengths.contains(&0) {
                return bad("coop lengths must be non-empty and >= 1".into());
            }
            if c.modes.is_empty() || c.shots.is_empty() || c.shots.contains(&0) || c.seeds == 0 {
                return bad("coop needs modes, positive shots and at least one seed".into());
            }
            for t in self.coop_tasks() {
                let max = c.shots.iter().max().expect("non-empty");
                if t.paths.train_dataset.is_none() && *max > t.train_per_class {
                    return bad(format!(
                        "task {:?}: coop shots {max} exceed train_per_class {}",
                        t.name, t.train_per_class
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_roundtrips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
        let moved = ExperimentConfig {
            out: "elsewhere".into(),
            ..c.clone()
        };
        assert_eq!(moved.config_hash(), c.config_hash());
        assert_ne!(ExperimentConfig { seed: 9, ..c.clone() }.config_hash(), c.config_hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 3, "shots": [2, 8]}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.tasks.len(), 3);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn rejects_bad_shots_and_missing_files() {
        let mut c = ExperimentConfig {
            shots: vec![4, 4],
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        c.shots = vec![1, 2];
        c.tasks[0].paths.corpus = Some("/nonexistent/corpus.jsonl".into());
        assert!(c.validate().unwrap_err().to_string().contains("does not exist"));
    }
}

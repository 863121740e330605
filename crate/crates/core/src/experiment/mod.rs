//! Experiment orchestration: a fixed stage graph writing artifacts under
//! one output directory, with stage skipping keyed on config stamps.
//!
//! Layout under `out/`:
//!
//! ```text
//! synth/pretrain.jsonl, synth/<task>/{corpus.jsonl, keywords.json, prompts.json, test.json, train.json}
//! pretrain/{base.json, loss.csv}
//! retrieve/<task>/{domain,task}.json      rank/<task>/{domain,task}.json
//! adapt/<task>/{rows.json, tune-*.json, *.csv, tapt-max.json}
//! zeroshot/rows.json                      coop/<task>/rows.json
//! report/{fig2.csv, fig3.csv, manifest.json}
//! ```
//!
//! Every stage directory holds a `stamp` file, written last. A stage whose
//! stamp matches the one derived from the current config is skipped.

mod config;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

pub use config::{
    CoopSettings, ExperimentConfig, LoraSettings, MetricKind, PretrainSettings, TaskConfig, TaskPaths,
};
pub use report::{aggregate, is_coop_method, AggregateRow, Provenance, ResultRow, RunReport};

use crate::corpus::RetrievalMode;
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Pretrain,
    Retrieve,
    Rank,
    Adapt,
    Zeroshot,
    Coop,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Pretrain,
        Stage::Retrieve,
        Stage::Rank,
        Stage::Adapt,
        Stage::Zeroshot,
        Stage::Coop,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Pretrain => "pretrain",
            Stage::Retrieve => "retrieve",
            Stage::Rank => "rank",
            Stage::Adapt => "adapt",
            Stage::Zeroshot => "zeroshot",
            Stage::Coop => "coop",
            Stage::Report => "report",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Synth => &[],
            Stage::Pretrain | Stage::Retrieve => &[Stage::Synth],
            Stage::Rank => &[Stage::Retrieve, Stage::Pretrain],
            Stage::Adapt => &[Stage::Rank],
            Stage::Zeroshot => &[Stage::Pretrain],
            Stage::Coop => &[Stage::Adapt],
            Stage::Report => &[Stage::Zeroshot, Stage::Adapt, Stage::Coop],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

/// Where each artifact lives. Task inputs given in the config are used in
/// place; the rest are generated under `synth/`.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn stamp(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("stamp")
    }

    pub fn pretrain_corpus(&self, config: &ExperimentConfig) -> PathBuf {
        config
            .pretrain
            .corpus
            .clone()
            .unwrap_or_else(|| self.stage_dir(Stage::Synth).join("pretrain.jsonl"))
    }

    fn synth_task(&self, task: &TaskConfig, file: &str) -> PathBuf {
        self.stage_dir(Stage::Synth).join(&task.name).join(file)
    }

    pub fn corpus(&self, task: &TaskConfig) -> PathBuf {
        task.paths.corpus.clone().unwrap_or_else(|| self.synth_task(task, "corpus.jsonl"))
    }

    pub fn keywords(&self, task: &TaskConfig) -> PathBuf {
        task.paths.keywords.clone().unwrap_or_else(|| self.synth_task(task, "keywords.json"))
    }

    pub fn prompts(&self, task: &TaskConfig) -> PathBuf {
        task.paths.prompts.clone().unwrap_or_else(|| self.synth_task(task, "prompts.json"))
    }

    pub fn test_dataset(&self, task: &TaskConfig) -> PathBuf {
        task.paths.test_dataset.clone().unwrap_or_else(|| self.synth_task(task, "test.json"))
    }

    pub fn train_dataset(&self, task: &TaskConfig) -> PathBuf {
        task.paths.train_dataset.clone().unwrap_or_else(|| self.synth_task(task, "train.json"))
    }

    pub fn base_model(&self) -> PathBuf {
        self.stage_dir(Stage::Pretrain).join("base.json")
    }

    pub fn retrieval(&self, task: &TaskConfig, mode: RetrievalMode) -> PathBuf {
        self.stage_dir(Stage::Retrieve).join(&task.name).join(mode_file(mode))
    }

    pub fn ranked(&self, task: &TaskConfig, mode: RetrievalMode) -> PathBuf {
        self.stage_dir(Stage::Rank).join(&task.name).join(mode_file(mode))
    }

    pub fn adapt_dir(&self, task: &TaskConfig) -> PathBuf {
        self.stage_dir(Stage::Adapt).join(&task.name)
    }

    /// TAPT model at the largest shots, first repetition; CoOp's adapted
    /// starting point.
    pub fn adapted_model(&self, task: &TaskConfig) -> PathBuf {
        self.adapt_dir(task).join("tapt-max.json")
    }

    pub fn zeroshot_rows(&self) -> PathBuf {
        self.stage_dir(Stage::Zeroshot).join("rows.json")
    }

    pub fn coop_rows(&self, task: &TaskConfig) -> PathBuf {
        self.stage_dir(Stage::Coop).join(&task.name).join("rows.json")
    }

    pub fn fig2(&self) -> PathBuf {
        self.stage_dir(Stage::Report).join("fig2.csv")
    }

    pub fn fig3(&self) -> PathBuf {
        self.stage_dir(Stage::Report).join("fig3.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.stage_dir(Stage::Report).join("manifest.json")
    }
}

fn mode_file(mode: RetrievalMode) -> &'static str {
    match mode {
        RetrievalMode::Domain => "domain.json",
        RetrievalMode::Task => "task.json",
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub(crate) fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Stamp per stage: a hash of the code version, the config sections the
/// stage reads, the contents of external input files, and the stamps of
/// its upstream stages.
pub fn stage_stamps(config: &ExperimentConfig) -> Result<BTreeMap<Stage, String>> {
    let json = |v: serde_json::Value| v.to_string();
    let mut external = Vec::new();
    if let Some(p) = &config.pretrain.corpus {
        external.push(file_digest(p)?);
    }
    for t in &config.tasks {
        let p = &t.paths;
        for path in [&p.corpus, &p.keywords, &p.prompts, &p.test_dataset, &p.train_dataset]
            .into_iter()
            .flatten()
        {
            external.push(file_digest(path)?);
        }
    }
    let own = |stage: Stage| -> String {
        match stage {
            Stage::Synth => json(serde_json::json!({
                "seed": config.seed,
                "world": config.world,
                "pretrain_corpus": config.pretrain.corpus,
                "pretrain_size": config.pretrain.corpus_size,
                "class_fidelity": config.pretrain.class_fidelity,
                "tasks": config.tasks,
                "external": external,
            })),
            Stage::Pretrain => json(serde_json::json!({ "model": config.model, "train": config.pretrain.train })),
            Stage::Retrieve | Stage::Rank | Stage::Zeroshot | Stage::Report => String::new(),
            Stage::Adapt => json(serde_json::json!({
                "shots": config.shots,
                "repetitions": config.repetitions,
                "train": config.train,
                "tune": config.tune,
                "lora": config.lora,
                "balance": config.balance,
            })),
            Stage::Coop => json(serde_json::json!({ "coop": config.coop })),
        }
    };
    let mut stamps: BTreeMap<Stage, String> = BTreeMap::new();
    for stage in Stage::ALL {
        let mut parts: Vec<Vec<u8>> = vec![VERSION.into(), stage.name().into(), own(stage).into()];
        for up in stage.upstream() {
            parts.push(stamps[up].as_bytes().to_vec());
        }
        let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        stamps.insert(stage, sha256_hex(&refs));
    }
    Ok(stamps)
}

/// A configured run bound to its output directory.
pub struct Experiment {
    config: ExperimentConfig,
    layout: Layout,
    stamps: BTreeMap<Stage, String>,
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, force: bool) -> Result<Self> {
        config.validate()?;
        let stamps = stage_stamps(&config)?;
        let layout = Layout::new(config.out.clone());
        Ok(Experiment {
            config,
            layout,
            stamps,
            force,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn stamp(&self, stage: Stage) -> &str {
        &self.stamps[&stage]
    }

    fn is_current(&self, stage: Stage) -> bool {
        std::fs::read_to_string(self.layout.stamp(stage)).is_ok_and(|s| s.trim() == self.stamp(stage))
    }

    /// Run one stage, unless its stamp is current and `force` is off.
    /// Upstream stages must already be current. Errors carry the stage name.
    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        self.run_stage_inner(stage).map_err(|e| Error::Stage {
            stage: stage.name(),
            source: Box::new(e),
        })
    }

    fn run_stage_inner(&self, stage: Stage) -> Result<StageOutcome> {
        for &up in stage.upstream() {
            if !self.is_current(up) {
                return Err(Error::InvalidArgument(format!(
                    "upstream stage {up} has not been run with this config"
                )));
            }
        }
        if !self.force && self.is_current(stage) {
            log::info!("stage {stage}: up to date, skipping");
            return Ok(StageOutcome::Skipped);
        }
        log::info!("stage {stage}: running");
        let dir = self.layout.stage_dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stamp = self.layout.stamp(stage);
        // A stale stamp must not survive a failed rerun.
        if stamp.exists() {
            std::fs::remove_file(&stamp).map_err(|e| Error::io(&stamp, e))?;
        }
        match stage {
            Stage::Synth => stages::synth(self)?,
            Stage::Pretrain => stages::pretrain(self)?,
            Stage::Retrieve => stages::retrieve(self)?,
            Stage::Rank => stages::rank(self)?,
            Stage::Adapt => stages::adapt(self)?,
            Stage::Zeroshot => stages::zeroshot(self)?,
            Stage::Coop => stages::coop(self)?,
            Stage::Report => {
                stages::report(self)?;
            }
        }
        std::fs::write(&stamp, format!("{}\n", self.stamp(stage))).map_err(|e| Error::io(&stamp, e))?;
        Ok(StageOutcome::Ran)
    }

    /// Every stage in order, then the report.
    pub fn run_all(&self) -> Result<RunReport> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        self.load_report()
    }

    pub fn load_report(&self) -> Result<RunReport> {
        RunReport::load(&self.layout.manifest())
    }
}

/// Run the full stage graph for `config`.
pub fn run_experiment(config: &ExperimentConfig, force: bool) -> Result<RunReport> {
    Experiment::new(config.clone(), force)?.run_all()
}

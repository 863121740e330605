use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use super::{file_digest, Experiment, Provenance, ResultRow, RunReport, Stage, TaskConfig};
use crate::coop::{coop_class_embeddings, sample_few_shot, train_coop, tune_coop, CoopConfig, PromptContext};
use crate::corpus::{
    assign_pseudo_labels, balance_by_label, load_corpus, match_keywords, save_corpus, CaptionRecord, KeywordSpec,
    RetrievalMember, RetrievalMode, RetrievalSet, TaskDataset,
};
use crate::model::{rank_pairs, DualEncoderModel, UpdateMode, Vocabulary};
use crate::synth::{generate_corpus, generate_pretraining_corpus, generate_task_dataset, Split, SynthTaskSpec};
use crate::train::{collect_pairs, select_training_subset, train_adapt, tune_hyperparams, ShotSpec, TrainConfig};
use crate::zeroshot::{build_class_embeddings, predict_dataset, ClassEmbeddings, PromptBank};
use crate::{par, Error, Result};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

impl Experiment {
    fn world(&self) -> SynthTaskSpec {
        SynthTaskSpec {
            seed: self.config.seed,
            ..self.config.world.clone()
        }
    }

    fn load_base(&self) -> Result<DualEncoderModel> {
        DualEncoderModel::load(&self.layout.base_model())
    }

    fn load_task_inputs(&self, task: &TaskConfig) -> Result<(KeywordSpec, PromptBank, TaskDataset)> {
        Ok((
            KeywordSpec::load(&self.layout.keywords(task))?,
            PromptBank::load(&self.layout.prompts(task))?,
            TaskDataset::load(&self.layout.test_dataset(task))?,
        ))
    }
}

fn evaluate(model: &DualEncoderModel, classes: &ClassEmbeddings, test: &TaskDataset, task: &TaskConfig) -> Result<f64> {
    let preds = predict_dataset(model, test, classes)?;
    task.metric.evaluate(&test.labels(), &preds, test.num_classes())
}

pub(super) fn synth(exp: &Experiment) -> Result<()> {
    let world = exp.world();
    let cfg = &exp.config;
    if cfg.pretrain.corpus.is_none() {
        let records = generate_pretraining_corpus(&world, cfg.pretrain.corpus_size, cfg.pretrain.class_fidelity)?;
        save_corpus(&exp.layout.pretrain_corpus(cfg), &records)?;
    }
    for task in &cfg.tasks {
        let p = &task.paths;
        if p.corpus.is_none() {
            let path = exp.layout.corpus(task);
            ensure_parent(&path)?;
            let corpus = generate_corpus(&world, &task.organ, task.corpus_size, &task.mix)?;
            save_corpus(&path, &corpus.records)?;
            write_json(&path.with_file_name("strata.json"), &corpus.counts)?;
        }
        if p.keywords.is_none() {
            let spec = world.keyword_spec(&task.organ)?;
            let path = exp.layout.keywords(task);
            ensure_parent(&path)?;
            spec.save(&path)?;
        }
        if p.prompts.is_none() {
            let path = exp.layout.prompts(task);
            ensure_parent(&path)?;
            world.prompt_bank(&task.organ)?.save(&path)?;
        }
        if p.test_dataset.is_none() {
            let path = exp.layout.test_dataset(task);
            ensure_parent(&path)?;
            generate_task_dataset(&world, &task.organ, task.test_per_class, Split::Test)?.save(&path)?;
        }
        if p.train_dataset.is_none() {
            let path = exp.layout.train_dataset(task);
            ensure_parent(&path)?;
            generate_task_dataset(&world, &task.organ, task.train_per_class, Split::Train)?.save(&path)?;
        }
    }
    Ok(())
}

pub(super) fn pretrain(exp: &Experiment) -> Result<()> {
    let cfg = &exp.config;
    let records = load_corpus(&exp.layout.pretrain_corpus(cfg))?;
    // Prompt words join the vocabulary so zero-shot prompts never fall back
    // to the unknown token.
    let mut texts: Vec<String> = records.iter().map(|r| r.caption.clone()).collect();
    for task in &cfg.tasks {
        let bank = PromptBank::load(&exp.layout.prompts(task))?;
        for class in bank.classes() {
            texts.extend(bank.prompts(&class).expect("class from bank"));
        }
    }
    let vocab = Vocabulary::build(texts.iter().map(String::as_str));
    let model_config = crate::model::ModelConfig {
        init_seed: cfg.seed,
        ..cfg.model.clone()
    };
    let model = DualEncoderModel::new(model_config, vocab)?;
    let pairs = collect_pairs(&all_members(&records), &records)?;
    let train = TrainConfig {
        seed: cfg.seed,
        ..cfg.pretrain.train.clone()
    };
    let (base, trace) = train_adapt(&model, &pairs, &train)?;
    trace.write_csv(&exp.layout.stage_dir(Stage::Pretrain).join("loss.csv"))?;
    base.save(&exp.layout.base_model())
}

fn all_members(records: &[CaptionRecord]) -> Vec<RetrievalMember> {
    records
        .iter()
        .map(|r| RetrievalMember {
            id: r.id.clone(),
            matched: Vec::new(),
            score: None,
            label: None,
        })
        .collect()
}

pub(super) fn retrieve(exp: &Experiment) -> Result<()> {
    for task in &exp.config.tasks {
        let corpus = load_corpus(&exp.layout.corpus(task))?;
        let spec = KeywordSpec::load(&exp.layout.keywords(task))?;
        for mode in [RetrievalMode::Domain, RetrievalMode::Task] {
            let set = match_keywords(&corpus, &spec, mode);
            log::info!("{}: {mode:?} retrieval kept {} of {} pairs", task.name, set.len(), corpus.len());
            let path = exp.layout.retrieval(task, mode);
            ensure_parent(&path)?;
            set.save(&path)?;
        }
    }
    Ok(())
}

pub(super) fn rank(exp: &Experiment) -> Result<()> {
    let base = exp.load_base()?;
    for task in &exp.config.tasks {
        let corpus = load_corpus(&exp.layout.corpus(task))?;
        for mode in [RetrievalMode::Domain, RetrievalMode::Task] {
            let set = RetrievalSet::load(&exp.layout.retrieval(task, mode))?;
            let ranked = rank_pairs(&set, &corpus, &base)?;
            let path = exp.layout.ranked(task, mode);
            ensure_parent(&path)?;
            ranked.save(&path)?;
        }
    }
    Ok(())
}

/// Ranked pool a method draws its shots from.
fn pool(exp: &Experiment, task: &TaskConfig, mode: RetrievalMode, corpus: &[CaptionRecord]) -> Result<Vec<RetrievalMember>> {
    let ranked = RetrievalSet::load(&exp.layout.ranked(task, mode))?;
    match (mode, exp.config.balance) {
        (RetrievalMode::Task, Some(policy)) => {
            let spec = KeywordSpec::load(&exp.layout.keywords(task))?;
            let labeled = assign_pseudo_labels(&ranked, corpus, &spec)?;
            let target = *exp.config.shots.last().expect("validated non-empty");
            balance_by_label(&labeled, &spec, target, policy)
        }
        _ => Ok(ranked.members),
    }
}

fn method_name(mode: RetrievalMode) -> &'static str {
    match mode {
        RetrievalMode::Domain => "dapt",
        RetrievalMode::Task => "tapt",
    }
}

pub(super) fn adapt(exp: &Experiment) -> Result<()> {
    let cfg = &exp.config;
    let base = exp.load_base()?;
    let start = match cfg.train.update_mode {
        UpdateMode::Lora => {
            let mut m = base.clone();
            m.inject_lora(cfg.lora.target, cfg.lora.rank, cfg.lora.alpha, cfg.seed)?;
            m
        }
        _ => base,
    };
    let max_shots = *cfg.shots.last().expect("validated non-empty");
    for task in &cfg.tasks {
        let dir = exp.layout.adapt_dir(task);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let corpus = load_corpus(&exp.layout.corpus(task))?;
        let (_, bank, test) = exp.load_task_inputs(task)?;
        let mut rows = Vec::new();
        for mode in [RetrievalMode::Domain, RetrievalMode::Task] {
            let method = method_name(mode);
            let pool = pool(exp, task, mode, &corpus)?;
            for &shots in &cfg.shots {
                let subset = select_training_subset(&pool, ShotSpec::new(shots, test.num_classes())?);
                if subset.members.is_empty() {
                    return Err(Error::InvalidArgument(format!("{}: {method} retrieval is empty", task.name)));
                }
                let pairs = collect_pairs(&subset.members, &corpus)?;
                let mut train = TrainConfig {
                    seed: cfg.seed,
                    ..cfg.train.clone()
                };
                if let Some(grid) = &cfg.tune {
                    let outcome = tune_hyperparams(&start, &pairs, &train, grid)?;
                    write_json(&dir.join(format!("tune-{method}-s{shots}.json")), &outcome)?;
                    train.lr = outcome.lr;
                    train.weight_decay = outcome.weight_decay;
                }
                let reps: Vec<usize> = (0..cfg.repetitions).collect();
                let keep = mode == RetrievalMode::Task && shots == max_shots;
                let results = par::try_map(&reps, |&r| {
                    let config = TrainConfig {
                        seed: cfg.seed + r as u64,
                        ..train.clone()
                    };
                    let (model, trace) = train_adapt(&start, &pairs, &config)?;
                    let classes = build_class_embeddings(&model, &bank)?;
                    let value = evaluate(&model, &classes, &test, task)?;
                    Ok((value, trace, (keep && r == 0).then_some(model)))
                })?;
                for (r, (value, trace, model)) in results.into_iter().enumerate() {
                    trace.write_csv(&dir.join(format!("{method}-s{shots}-r{r}.csv")))?;
                    if let Some(model) = model {
                        model.save(&exp.layout.adapted_model(task))?;
                    }
                    rows.push(ResultRow {
                        task: task.name.clone(),
                        method: method.into(),
                        shots,
                        repetition: r,
                        metric: task.metric.name().into(),
                        value,
                        pairs: pairs.len(),
                        truncated: subset.truncated,
                    });
                }
            }
        }
        write_json(&dir.join("rows.json"), &rows)?;
    }
    Ok(())
}

pub(super) fn zeroshot(exp: &Experiment) -> Result<()> {
    let base = exp.load_base()?;
    let mut rows = Vec::new();
    for task in &exp.config.tasks {
        let (_, bank, test) = exp.load_task_inputs(task)?;
        let classes = build_class_embeddings(&base, &bank)?;
        rows.push(ResultRow {
            task: task.name.clone(),
            method: "baseline".into(),
            shots: 0,
            repetition: 0,
            metric: task.metric.name().into(),
            value: evaluate(&base, &classes, &test, task)?,
            pairs: 0,
            truncated: false,
        });
    }
    write_json(&exp.layout.zeroshot_rows(), &rows)
}

pub(super) fn coop(exp: &Experiment) -> Result<()> {
    let Some(settings) = &exp.config.coop else {
        return Ok(());
    };
    let seed = exp.config.seed;
    let base = exp.load_base()?;
    for task in exp.config.coop_tasks() {
        let adapted = DualEncoderModel::load(&exp.layout.adapted_model(task))?;
        let test = TaskDataset::load(&exp.layout.test_dataset(task))?;
        let train_set = TaskDataset::load(&exp.layout.train_dataset(task))?;
        let classnames = test.classes.clone();
        let k = test.num_classes();
        let mut rows = Vec::new();
        for (tag, model) in [("coop", &base), ("tapt+coop", &adapted)] {
            for &mode in &settings.modes {
                for &length in &settings.lengths {
                    let method = format!("{tag}-{mode}-m{length}");
                    for &shots in &settings.shots {
                        let mut config = CoopConfig {
                            seed,
                            ..settings.train.clone()
                        };
                        if let Some(grid) = &settings.tune {
                            let few = sample_few_shot(&train_set, shots, seed)?;
                            let ctx = PromptContext::init(mode, length, k, model.config().d_tok, seed)?;
                            let outcome = tune_coop(model, &ctx, &few, &classnames, &config, grid)?;
                            config.lr = outcome.lr;
                            config.weight_decay = outcome.weight_decay;
                        }
                        let seeds: Vec<u64> = (0..settings.seeds as u64).map(|i| seed + i).collect();
                        let values = par::try_map(&seeds, |&s| {
                            let few = sample_few_shot(&train_set, shots, s)?;
                            let ctx = PromptContext::init(mode, length, k, model.config().d_tok, s)?;
                            let run = CoopConfig { seed: s, ..config.clone() };
                            let (ctx, _) = train_coop(model, &ctx, &few, &classnames, &run)?;
                            let classes = coop_class_embeddings(model, &ctx, &classnames)?;
                            Ok((evaluate(model, &classes, &test, task)?, few.items.len()))
                        })?;
                        for (i, (value, n)) in values.into_iter().enumerate() {
                            rows.push(ResultRow {
                                task: task.name.clone(),
                                method: method.clone(),
                                shots,
                                repetition: i,
                                metric: task.metric.name().into(),
                                value,
                                pairs: n,
                                truncated: false,
                            });
                        }
                    }
                }
            }
        }
        write_json(&exp.layout.coop_rows(task), &rows)?;
    }
    Ok(())
}

pub(super) fn report(exp: &Experiment) -> Result<RunReport> {
    let cfg = &exp.config;
    let mut rows: Vec<ResultRow> = read_json(&exp.layout.zeroshot_rows())?;
    for task in &cfg.tasks {
        rows.extend(read_json::<Vec<ResultRow>>(&exp.layout.adapt_dir(task).join("rows.json"))?);
    }
    for task in cfg.coop_tasks() {
        rows.extend(read_json::<Vec<ResultRow>>(&exp.layout.coop_rows(task))?);
    }
    let mut checkpoints = std::collections::BTreeMap::new();
    checkpoints.insert("base".to_string(), file_digest(&exp.layout.base_model())?);
    for task in &cfg.tasks {
        checkpoints.insert(format!("{}/tapt-max", task.name), file_digest(&exp.layout.adapted_model(task))?);
    }
    let provenance = Provenance {
        version: super::VERSION.into(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        repetition_seeds: (0..cfg.repetitions as u64).map(|r| cfg.seed + r).collect(),
        few_shot_seeds: cfg
            .coop
            .as_ref()
            .map(|c| (0..c.seeds as u64).map(|i| cfg.seed + i).collect())
            .unwrap_or_default(),
        checkpoints,
        stamps: exp.stamps.iter().map(|(s, h)| (s.name().to_string(), h.clone())).collect(),
    };
    let report = RunReport::new(rows, provenance)?;
    report.write_csv(&exp.layout.fig2(), false)?;
    report.write_csv(&exp.layout.fig3(), true)?;
    report.save(&exp.layout.manifest())?;
    Ok(report)
}

//! CoOp prompt learning: continuous context vectors in front of class-name
//! tokens, trained through the frozen text encoder.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::{words, LabeledImage, TaskDataset};
use crate::model::{DualEncoderModel, ModelVars, UpdateMode};
use crate::train::{cosine_lr, select_hyperparams, AdamW, AdamWConfig, EpochLoss, LossTrace, TuneGrid, TuneOutcome};
use crate::zeroshot::ClassEmbeddings;
use crate::{Error, Result};

/// Standard deviation of the context initialization.
pub const CONTEXT_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// One context shared by every class.
    Unified,
    /// A separate context per class.
    Csc,
}

impl std::fmt::Display for ContextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContextMode::Unified => "unified",
            ContextMode::Csc => "csc",
        })
    }
}

/// Learnable context vectors: `M × d_tok` (unified) or `K·M × d_tok` (csc,
/// class `k` owns rows `k·M .. (k+1)·M`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub mode: ContextMode,
    pub length: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub vectors: Tensor,
}

impl PromptContext {
    pub fn init(mode: ContextMode, length: usize, num_classes: usize, d_tok: usize, seed: u64) -> Result<Self> {
        if length == 0 || num_classes == 0 || d_tok == 0 {
            return Err(Error::InvalidArgument(
                "context length, class count and width must be >= 1".into(),
            ));
        }
        let rows = match mode {
            ContextMode::Unified => length,
            ContextMode::Csc => length * num_classes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PromptContext {
            mode,
            length,
            num_classes,
            seed,
            vectors: crate::model::gaussian_tensor(&mut rng, vec![rows, d_tok], CONTEXT_INIT_STD),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.vectors.numel()
    }

    fn rows_for(&self, class: usize) -> Vec<usize> {
        let start = match self.mode {
            ContextMode::Unified => 0,
            ContextMode::Csc => class * self.length,
        };
        (start..start + self.length).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Token ids of each class name (no padding). Unknown words are kept as the
/// unknown id and logged.
pub fn class_tokens(model: &DualEncoderModel, classnames: &[String]) -> Vec<Vec<u32>> {
    classnames
        .iter()
        .map(|c| {
            let unknown: Vec<String> = words(c).into_iter().filter(|w| !model.vocab().contains(w)).collect();
            if !unknown.is_empty() {
                log::warn!("class name {c:?} has words outside the vocabulary: {unknown:?}");
            }
            model.vocab().encode_words(c)
        })
        .collect()
}

/// Class embeddings `[K, d_emb]` from `[context ‖ class tokens]` sequences.
pub fn context_class_embeddings(
    tape: &mut Tape,
    model: &DualEncoderModel,
    vars: &ModelVars,
    context: &PromptContext,
    ctx: Var,
    tokens: &[Vec<u32>],
) -> Result<Var> {
    if tokens.len() != context.num_classes {
        return Err(Error::shape(
            "coop_logits",
            format!("context built for {} classes, got {}", context.num_classes, tokens.len()),
        ));
    }
    let mut parts = Vec::with_capacity(2 * tokens.len());
    let mut segments = Vec::with_capacity(tokens.len());
    let mut offset = 0;
    for (k, ids) in tokens.iter().enumerate() {
        parts.push(tape.index_select(ctx, context.rows_for(k))?);
        let mut len = context.length;
        if !ids.is_empty() {
            parts.push(tape.index_select(vars.token_embedding(), ids.iter().map(|&i| i as usize).collect())?);
            len += ids.len();
        }
        segments.push((offset, offset + len));
        offset += len;
    }
    let rows = tape.concat(parts)?;
    model.text_from_embedded(tape, vars, rows, segments)
}

/// `scale · cos(image, class)` for image embeddings `[B, d_emb]`.
#[allow(clippy::too_many_arguments)]
pub fn coop_logits(
    tape: &mut Tape,
    model: &DualEncoderModel,
    vars: &ModelVars,
    context: &PromptContext,
    ctx: Var,
    tokens: &[Vec<u32>],
    image_embeddings: Var,
    scale: f64,
) -> Result<Var> {
    let classes = context_class_embeddings(tape, model, vars, context, ctx, tokens)?;
    let ct = tape.transpose(classes)?;
    let cos = tape.matmul(image_embeddings, ct)?;
    tape.scale(cos, scale)
}

/// Evaluate the learned class embeddings without a gradient.
pub fn coop_class_embeddings(
    model: &DualEncoderModel,
    context: &PromptContext,
    classnames: &[String],
) -> Result<ClassEmbeddings> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, UpdateMode::Frozen);
    let ctx = tape.constant(context.vectors.clone());
    let tokens = class_tokens(model, classnames);
    let out = context_class_embeddings(&mut tape, model, &vars, context, ctx, &tokens)?;
    let value = tape.value(out);
    Ok(ClassEmbeddings {
        classes: classnames.to_vec(),
        vectors: (0..classnames.len()).map(|k| value.row(k).to_vec()).collect(),
    })
}

/// `shots` labeled images per class, drawn without replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSet {
    pub shots: usize,
    pub seed: u64,
    pub items: Vec<LabeledImage>,
}

pub fn sample_few_shot(dataset: &TaskDataset, shots: usize, seed: u64) -> Result<FewShotSet> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(shots * dataset.num_classes());
    for (label, class) in dataset.classes.iter().enumerate() {
        let pool: Vec<&LabeledImage> = dataset.items.iter().filter(|i| i.label == label).collect();
        if pool.len() < shots {
            return Err(Error::InsufficientItems {
                class: class.clone(),
                available: pool.len(),
                requested: shots,
            });
        }
        items.extend(pool.choose_multiple(&mut rng, shots).map(|&i| i.clone()));
    }
    Ok(FewShotSet { shots, seed, items })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for CoopConfig {
    fn default() -> Self {
        CoopConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-2,
            weight_decay: 1e-4,
            logit_scale: 100.0,
            seed: 0,
        }
    }
}

impl CoopConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("logit scale must be positive, got {}", self.logit_scale)));
        }
        Ok(())
    }
}

/// Optimize only the context vectors with cross-entropy over the few-shot
/// set. The model is borrowed immutably, so its parameters cannot change.
pub fn train_coop(
    model: &DualEncoderModel,
    context: &PromptContext,
    few_shot: &FewShotSet,
    classnames: &[String],
    config: &CoopConfig,
) -> Result<(PromptContext, LossTrace)> {
    run_coop(model, context, few_shot, classnames, config, config.epochs)
}

fn run_coop(
    model: &DualEncoderModel,
    context: &PromptContext,
    few_shot: &FewShotSet,
    classnames: &[String],
    config: &CoopConfig,
    stop_after: usize,
) -> Result<(PromptContext, LossTrace)> {
    config.validate()?;
    if few_shot.items.is_empty() {
        return Err(Error::InvalidArgument("empty few-shot set".into()));
    }
    let images: Vec<_> = few_shot.items.iter().map(|i| &i.image).collect();
    let image_embs = model.encode_images(&images)?;
    let tokens = class_tokens(model, classnames);
    let mut context = context.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let mut trace = LossTrace::default();
    for epoch in 0..stop_after.min(config.epochs) {
        let lr = cosine_lr(config.lr, epoch, config.epochs);
        let mut order: Vec<usize> = (0..few_shot.items.len()).collect();
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| image_embs[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| few_shot.items[i].label).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, UpdateMode::Frozen);
            let ctx = tape.param(context.vectors.clone());
            let x = tape.constant(Tensor::from_rows(&rows)?);
            let step = (|| {
                let logits = coop_logits(&mut tape, model, &vars, &context, ctx, &tokens, x, config.logit_scale)?;
                let loss = tape.softmax_cross_entropy(logits, labels)?;
                let grads = tape.backward(loss)?;
                let g = grads.get(ctx).expect("context is a gradient leaf");
                opt.step(&mut [&mut context.vectors], &[g], lr)?;
                tape.value(loss).item()
            })();
            total += step.map_err(|e| match e {
                Error::NonFinite(_) | Error::ZeroNorm => Error::Diverged { epoch, batch: b },
                other => other,
            })?;
        }
        trace.epochs.push(EpochLoss {
            epoch,
            mean_loss: total / batches.len() as f64,
            lr,
        });
    }
    Ok((context, trace))
}

/// Pick lr and weight decay for CoOp from short probes, with the same rule
/// as for continued pretraining.
pub fn tune_coop(
    model: &DualEncoderModel,
    context: &PromptContext,
    few_shot: &FewShotSet,
    classnames: &[String],
    base: &CoopConfig,
    grid: &TuneGrid,
) -> Result<TuneOutcome> {
    if grid.probe_epochs == 0 {
        return Err(Error::InvalidArgument("probe_epochs must be >= 1".into()));
    }
    select_hyperparams(&grid.lrs, &grid.weight_decays, |lr, wd| {
        let config = CoopConfig {
            lr,
            weight_decay: wd,
            ..base.clone()
        };
        let (_, trace) = run_coop(model, context, few_shot, classnames, &config, grid.probe_epochs)?;
        Ok(trace.final_loss().expect("at least one probe epoch"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::corpus::ImageGrid;
    use crate::model::{ModelConfig, Vocabulary};

    fn model() -> DualEncoderModel {
        let vocab = Vocabulary::build(["bright dark"]);
        let config = ModelConfig {
            max_len: 4,
            d_tok: 4,
            d_hidden: 6,
            d_emb: 5,
            image_height: 2,
            image_width: 2,
            image_channels: 1,
            init_seed: 4,
        };
        DualEncoderModel::new(config, vocab).unwrap()
    }

    fn dataset(n: usize) -> TaskDataset {
        let items = (0..2 * n)
            .map(|i| {
                let label = i % 2;
                let v = if label == 0 { 0.9 } else { 0.1 } + (i / 2) as f64 * 0.001;
                LabeledImage {
                    id: format!("i{i}"),
                    label,
                    image: ImageGrid::new(2, 2, 1, vec![v; 4]).unwrap(),
                }
            })
            .collect();
        TaskDataset::new("t".into(), vec!["bright".into(), "dark".into()], items).unwrap()
    }

    #[test]
    fn context_shapes() {
        let u = PromptContext::init(ContextMode::Unified, 4, 3, 4, 0).unwrap();
        assert_eq!(u.vectors.shape(), [4, 4]);
        let c = PromptContext::init(ContextMode::Csc, 16, 4, 4, 0).unwrap();
        assert_eq!(c.vectors.shape(), [64, 4]);
        let u16 = PromptContext::init(ContextMode::Unified, 16, 4, 4, 0).unwrap();
        assert_eq!(u16.parameter_count() * 4, c.parameter_count());
        assert_eq!(u, PromptContext::init(ContextMode::Unified, 4, 3, 4, 0).unwrap());
    }

    #[test]
    fn identical_classnames_identical_logits() {
        let m = model();
        let ctx = PromptContext {
            vectors: Tensor::zeros(vec![4, 4]).unwrap(),
            ..PromptContext::init(ContextMode::Unified, 4, 2, 4, 0).unwrap()
        };
        let ce = coop_class_embeddings(&m, &ctx, &["dark".into(), "dark".into()]).unwrap();
        assert_eq!(ce.vectors[0], ce.vectors[1]);
    }

    #[test]
    fn logits_bounded_and_gradient_checks() {
        let m = model();
        let context = PromptContext::init(ContextMode::Csc, 2, 2, 4, 1).unwrap();
        let ds = dataset(2);
        let embs = m.encode_images(&ds.images()).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, UpdateMode::Frozen);
        let ctx = tape.param(context.vectors.clone());
        let x = tape.constant(Tensor::from_rows(&embs).unwrap());
        let tokens = class_tokens(&m, &ds.classes);
        let logits = coop_logits(&mut tape, &m, &vars, &context, ctx, &tokens, x, 10.0).unwrap();
        assert!(tape.value(logits).data().iter().all(|v| v.abs() <= 10.0 + 1e-12));
        let loss = tape.softmax_cross_entropy(logits, ds.labels()).unwrap();
        assert!(finite_diff_check(&tape, loss, 1e-6).unwrap() < 1e-4);
    }

    #[test]
    fn sampling_is_seeded_without_replacement() {
        let ds = dataset(10);
        let a = sample_few_shot(&ds, 3, 7).unwrap();
        assert_eq!(a.items.len(), 6);
        assert_eq!(a, sample_few_shot(&ds, 3, 7).unwrap());
        let mut ids: Vec<&str> = a.items.iter().map(|i| i.id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 6);
        assert_eq!(sample_few_shot(&ds, 1, 0).unwrap().items.len(), 2);
        assert!(matches!(sample_few_shot(&ds, 11, 0), Err(Error::InsufficientItems { .. })));
    }

    #[test]
    fn training_moves_only_context() {
        let m = model();
        let digest = m.base_digest();
        let ds = dataset(4);
        let fs = sample_few_shot(&ds, 4, 0).unwrap();
        let ctx = PromptContext::init(ContextMode::Unified, 4, 2, 4, 0).unwrap();
        let config = CoopConfig {
            epochs: 5,
            ..CoopConfig::default()
        };
        let (trained, trace) = train_coop(&m, &ctx, &fs, &ds.classes, &config).unwrap();
        assert_eq!(trace.epochs.len(), 5);
        assert_ne!(trained.vectors, ctx.vectors);
        assert_eq!(m.base_digest(), digest);

        let zero = CoopConfig {
            epochs: 0,
            ..CoopConfig::default()
        };
        assert_eq!(train_coop(&m, &ctx, &fs, &ds.classes, &zero).unwrap().0, ctx);
    }
}

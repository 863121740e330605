use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::contrastive_loss;
use super::optim::{cosine_lr, AdamW, AdamWConfig};
use super::subset::TrainingPair;
use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::ImageGrid;
use crate::model::{DualEncoderModel, ModelVars, UpdateMode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub update_mode: UpdateMode,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 50,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            update_mode: UpdateMode::Full,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            log::warn!("batch size {} gives a constant zero contrastive loss", self.batch_size);
            return Err(Error::InvalidArgument(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.update_mode == UpdateMode::Frozen {
            return Err(Error::InvalidArgument("frozen update mode trains nothing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Mean training loss and learning rate per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
}

impl LossTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// CSV with header `epoch,mean_loss,lr`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.epochs {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let epochs = r.deserialize().collect::<std::result::Result<Vec<EpochLoss>, _>>()?;
        Ok(LossTrace { epochs })
    }
}

/// The graph of one contrastive training step.
pub struct StepGraph {
    pub tape: Tape,
    pub vars: ModelVars,
    pub loss: Var,
}

/// Encode one batch with `model` bound under `mode` and attach the loss.
pub fn build_step(
    model: &DualEncoderModel,
    images: &[&ImageGrid],
    tokens: &[Vec<u32>],
    mode: UpdateMode,
    temperature: f64,
) -> Result<StepGraph> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, mode);
    let x = model.image_forward_grids(&mut tape, &vars, images)?;
    let y = model.text_forward(&mut tape, &vars, tokens)?;
    let loss = contrastive_loss(&mut tape, x, y, temperature)?;
    Ok(StepGraph { tape, vars, loss })
}

/// Shuffled index batches for one epoch. A final batch smaller than 2 is
/// dropped unless it is the only one.
fn epoch_batches(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        batches.pop();
    }
    batches
}

fn diverged(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(_) | Error::ZeroNorm => Error::Diverged { epoch, batch },
        other => other,
    }
}

/// Continued contrastive pretraining. Returns the adapted copy of `model`
/// and one loss entry per epoch.
pub fn train_adapt(
    model: &DualEncoderModel,
    pairs: &[TrainingPair],
    config: &TrainConfig,
) -> Result<(DualEncoderModel, LossTrace)> {
    run_epochs(model, pairs, config, config.epochs)
}

/// Train under `config`'s schedule but stop after `stop_after` epochs.
pub(crate) fn run_epochs(
    model: &DualEncoderModel,
    pairs: &[TrainingPair],
    config: &TrainConfig,
    stop_after: usize,
) -> Result<(DualEncoderModel, LossTrace)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if pairs.len() == 1 {
        log::warn!("a single training pair gives a constant zero contrastive loss");
    }
    let mut model = model.clone();
    let tokens: Vec<Vec<u32>> = pairs.iter().map(|p| model.tokenize(&p.caption)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let mut trace = LossTrace::default();

    for epoch in 0..stop_after.min(config.epochs) {
        let lr = cosine_lr(config.lr, epoch, config.epochs);
        let batches = epoch_batches(&mut rng, pairs.len(), config.batch_size);
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let images: Vec<&ImageGrid> = batch.iter().map(|&i| &pairs[i].image).collect();
            let toks: Vec<Vec<u32>> = batch.iter().map(|&i| tokens[i].clone()).collect();
            let loss = step(&mut model, &mut opt, &images, &toks, config, lr).map_err(|e| diverged(e, epoch, b))?;
            total += loss;
        }
        let mean_loss = total / batches.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: batches.len() - 1,
            });
        }
        log::debug!("epoch {epoch}: loss {mean_loss:.6} lr {lr:.3e}");
        trace.epochs.push(EpochLoss { epoch, mean_loss, lr });
    }
    Ok((model, trace))
}

fn step(
    model: &mut DualEncoderModel,
    opt: &mut AdamW,
    images: &[&ImageGrid],
    tokens: &[Vec<u32>],
    config: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let graph = build_step(model, images, tokens, config.update_mode, config.temperature)?;
    let loss = graph.tape.value(graph.loss).item()?;
    let grads = graph.tape.backward(graph.loss)?;
    let mut slots = model.trainable_mut(&graph.vars, config.update_mode)?;
    let grad_refs: Vec<&Tensor> = slots
        .iter()
        .map(|(v, _)| grads.get(*v).expect("trainable leaves have gradients"))
        .collect();
    let mut params: Vec<&mut Tensor> = slots.iter_mut().map(|(_, t)| &mut **t).collect();
    opt.step(&mut params, &grad_refs, lr)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LoraTarget, ModelConfig, Vocabulary};

    fn setup() -> (DualEncoderModel, Vec<TrainingPair>) {
        let words = ["red", "green", "blue", "dark"];
        let vocab = Vocabulary::build(words);
        let config = ModelConfig {
            max_len: 4,
            d_tok: 6,
            d_hidden: 8,
            d_emb: 5,
            image_height: 2,
            image_width: 2,
            image_channels: 3,
            init_seed: 1,
        };
        let model = DualEncoderModel::new(config, vocab).unwrap();
        let pairs = (0..12)
            .map(|i| {
                let c = i % 3;
                let mut data = vec![0.1; 12];
                for px in 0..4 {
                    data[px * 3 + c] = 0.9;
                }
                TrainingPair {
                    id: format!("p{i}"),
                    image: ImageGrid::new(2, 2, 3, data).unwrap(),
                    caption: words[c].into(),
                }
            })
            .collect();
        (model, pairs)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 15,
            lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases_on_separable_pairs() {
        let (model, pairs) = setup();
        let (_, trace) = train_adapt(&model, &pairs, &cfg()).unwrap();
        assert_eq!(trace.epochs.len(), 15);
        assert!(trace.final_loss().unwrap() < trace.epochs[0].mean_loss);
        assert_eq!(trace.epochs[0].lr, 1e-2);
    }

    #[test]
    fn deterministic_per_seed() {
        let (model, pairs) = setup();
        let (a, ta) = train_adapt(&model, &pairs, &cfg()).unwrap();
        let (b, tb) = train_adapt(&model, &pairs, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let other = TrainConfig { seed: 9, ..cfg() };
        assert_ne!(train_adapt(&model, &pairs, &other).unwrap().0, a);
    }

    #[test]
    fn lora_mode_keeps_base_weights() {
        let (mut model, pairs) = setup();
        model.inject_lora(LoraTarget::AllDense, 2, 2.0, 0).unwrap();
        let before = model.base_digest();
        let config = TrainConfig {
            update_mode: UpdateMode::Lora,
            ..cfg()
        };
        let (trained, _) = train_adapt(&model, &pairs, &config).unwrap();
        assert_eq!(trained.base_digest(), before);
        assert_ne!(trained, model);
    }

    #[test]
    fn lora_mode_without_overlay_errors() {
        let (model, pairs) = setup();
        let config = TrainConfig {
            update_mode: UpdateMode::Lora,
            ..cfg()
        };
        assert!(train_adapt(&model, &pairs, &config).is_err());
    }

    #[test]
    fn rejects_batch_of_one() {
        let (model, pairs) = setup();
        let config = TrainConfig { batch_size: 1, ..cfg() };
        assert!(train_adapt(&model, &pairs, &config).is_err());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (model, pairs) = setup();
        let config = TrainConfig { lr: 1e30, ..cfg() };
        assert!(matches!(train_adapt(&model, &pairs, &config), Err(Error::Diverged { .. })));
    }

    #[test]
    fn short_final_batch_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(&mut rng, 9, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4]);
        let b = epoch_batches(&mut rng, 10, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        assert_eq!(epoch_batches(&mut rng, 1, 4).len(), 1);
    }

    #[test]
    fn trace_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let trace = LossTrace {
            epochs: vec![
                EpochLoss { epoch: 0, mean_loss: 1.25, lr: 1e-3 },
                EpochLoss { epoch: 1, mean_loss: 0.75, lr: 5e-4 },
            ],
        };
        let p = dir.path().join("trace.csv");
        trace.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("epoch,mean_loss,lr\n"));
        assert_eq!(LossTrace::read_csv(&p).unwrap(), trace);
    }
}

//! Continued contrastive pretraining: loss, optimizer, schedule, subset
//! selection, hyperparameter probes and the training loop.

mod adapt;
mod loss;
mod optim;
mod subset;
mod tune;

pub use adapt::{build_step, train_adapt, EpochLoss, LossTrace, StepGraph, TrainConfig};
pub use loss::{contrastive_loss, contrastive_loss_value};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use subset::{collect_pairs, select_training_subset, ShotSpec, TrainingPair, TrainingSubset};
pub use tune::{select_hyperparams, tune_hyperparams, Probe, TuneGrid, TuneOutcome};

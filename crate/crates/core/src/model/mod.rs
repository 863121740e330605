//! Toy dual encoder: vocabulary, text and image branches, LoRA overlays,
//! checkpoints, and alignment ranking.

mod dense;
mod encoder;
mod rank;
mod vocab;

pub(crate) use dense::gaussian as gaussian_tensor;
pub use dense::{Dense, LoraOverlay, ParamKind, UpdateMode};
pub use encoder::{DualEncoderModel, LoraTarget, ModelConfig, ModelVars};
pub use rank::{alignment_score, rank_pairs};
pub use vocab::{tokenize, Vocabulary, CLASS_ID, PAD_ID, UNK_ID};

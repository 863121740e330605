//! Annotation-free adaptation of dual-encoder vision-language models.
//!
//! Pipeline: keyword retrieval of image-caption pairs ([`corpus`]),
//! alignment ranking with a dual encoder ([`model`]), contrastive continued
//! pretraining ([`train`]), and evaluation by zero-shot prompt ensembling
//! ([`zeroshot`]) and CoOp prompt learning ([`coop`]). [`synth`] generates a
//! miniature world to run all of it on; [`experiment`] orchestrates sweeps.

pub mod autodiff;
pub mod coop;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod par;
pub mod synth;
pub mod train;
pub mod zeroshot;

pub use error::{Error, Result};

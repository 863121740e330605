//! Zero-shot classification with prompt ensembling.

use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::dot;
use crate::corpus::{words, ImageGrid, TaskDataset};
use crate::model::DualEncoderModel;
use crate::{Error, Result};

const BUNDLED: &[(&str, &str)] = &[
    ("bach", include_str!("../data/prompts/bach.json")),
    ("mhist", include_str!("../data/prompts/mhist.json")),
    ("sicap", include_str!("../data/prompts/sicap.json")),
    ("synthetic-breast", include_str!("../data/prompts/synthetic-breast.json")),
    ("synthetic-colon", include_str!("../data/prompts/synthetic-colon.json")),
    ("synthetic-prostate", include_str!("../data/prompts/synthetic-prostate.json")),
];

/// Prompt templates with one `{}` slot and alternative descriptions per
/// class. Class order defines label indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptBank {
    pub templates: Vec<String>,
    pub classnames: IndexMap<String, Vec<String>>,
}

impl PromptBank {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::InvalidArgument("prompt bank has no templates".into()));
        }
        for t in &self.templates {
            if t.matches("{}").count() != 1 {
                return Err(Error::InvalidArgument(format!("template {t:?} must contain exactly one {{}}")));
            }
        }
        if self.classnames.is_empty() {
            return Err(Error::InvalidArgument("prompt bank has no classes".into()));
        }
        for (class, descs) in &self.classnames {
            if descs.is_empty() {
                return Err(Error::InvalidArgument(format!("class {class:?} has no descriptions")));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> Vec<String> {
        self.classnames.keys().cloned().collect()
    }

    /// Distinct filled-in prompts for one class, sorted.
    pub fn prompts(&self, class: &str) -> Option<BTreeSet<String>> {
        let descs = self.classnames.get(class)?;
        Some(
            self.templates
                .iter()
                .flat_map(|t| descs.iter().map(move |d| t.replacen("{}", d, 1)))
                .collect(),
        )
    }

    /// Shipped banks: `bach`, `mhist`, `sicap`, and `synthetic-<organ>` for
    /// the default synthetic world.
    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| serde_json::from_str(text).expect("bundled prompt bank parses"))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bank: PromptBank = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One unit text embedding per class, in bank order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbeddings {
    pub classes: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

/// Encode every distinct (template × description) prompt per class, sum the
/// unit embeddings in sorted prompt order and renormalize. Listing order and
/// repeated entries therefore have no effect on the result.
pub fn build_class_embeddings(model: &DualEncoderModel, bank: &PromptBank) -> Result<ClassEmbeddings> {
    bank.validate()?;
    let mut classes = Vec::new();
    let mut vectors = Vec::new();
    for class in bank.classnames.keys() {
        let prompts = bank.prompts(class).expect("class comes from the bank");
        for p in &prompts {
            let unknown: Vec<String> = words(p).into_iter().filter(|w| !model.vocab().contains(w)).collect();
            if !unknown.is_empty() {
                log::warn!("prompt {p:?} has words outside the vocabulary: {unknown:?}");
            }
        }
        let tokens: Vec<Vec<u32>> = prompts.iter().map(|p| model.tokenize(p)).collect();
        let embs = model.encode_texts(&tokens)?;
        let mut sum = vec![0.0; model.d_emb()];
        for e in &embs {
            for (s, v) in sum.iter_mut().zip(e) {
                *s += v;
            }
        }
        let norm = dot(&sum, &sum).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroClassEmbedding(class.clone()));
        }
        classes.push(class.clone());
        vectors.push(sum.iter().map(|v| v / norm).collect());
    }
    Ok(ClassEmbeddings { classes, vectors })
}

/// Index of the largest score; the first wins on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Cosine score against each class embedding for an already-encoded image.
pub fn classify_embedding(image_embedding: &[f64], classes: &ClassEmbeddings) -> (usize, Vec<f64>) {
    let scores: Vec<f64> = classes.vectors.iter().map(|c| dot(image_embedding, c)).collect();
    (argmax(&scores), scores)
}

pub fn classify_zero_shot(
    model: &DualEncoderModel,
    image: &ImageGrid,
    classes: &ClassEmbeddings,
) -> Result<(usize, Vec<f64>)> {
    if classes.vectors.len() < 2 {
        return Err(Error::InvalidArgument("zero-shot classification needs at least 2 classes".into()));
    }
    let emb = model.encode_image(image)?;
    Ok(classify_embedding(&emb, classes))
}

/// Predicted label for every item of `dataset`.
pub fn predict_dataset(model: &DualEncoderModel, dataset: &TaskDataset, classes: &ClassEmbeddings) -> Result<Vec<usize>> {
    if classes.vectors.len() != dataset.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "{} class embeddings for a {}-class dataset",
            classes.vectors.len(),
            dataset.num_classes()
        )));
    }
    let embs = model.encode_images(&dataset.images())?;
    Ok(embs.iter().map(|e| classify_embedding(e, classes).0).collect())
}

use std::collections::HashMap;

use super::encoder::DualEncoderModel;
use crate::autodiff::dot;
use crate::corpus::{CaptionRecord, ImageGrid, RetrievalSet};
use crate::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

/// Dot product of two unit embeddings.
pub fn alignment_score(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("alignment_score", format!("{} vs {}", x.len(), y.len())));
    }
    for v in [x, y] {
        let n = dot(v, v).sqrt();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NonUnit(n));
        }
    }
    Ok(dot(x, y))
}

/// Score every member with `model` and sort by score descending, then id
/// ascending.
pub fn rank_pairs(retrieval: &RetrievalSet, corpus: &[CaptionRecord], model: &DualEncoderModel) -> Result<RetrievalSet> {
    let by_id: HashMap<&str, &CaptionRecord> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();
    let records = retrieval
        .members
        .iter()
        .map(|m| {
            by_id
                .get(m.id.as_str())
                .copied()
                .ok_or_else(|| Error::MissingRecord(m.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let images = records.iter().map(|r| r.image.load()).collect::<Result<Vec<_>>>()?;
    let image_refs: Vec<&ImageGrid> = images.iter().map(|c| c.as_ref()).collect();
    let tokens: Vec<Vec<u32>> = records.iter().map(|r| model.tokenize(&r.caption)).collect();
    let xs = model.encode_images(&image_refs)?;
    let ys = model.encode_texts(&tokens)?;

    let mut out = retrieval.clone();
    for ((m, x), y) in out.members.iter_mut().zip(&xs).zip(&ys) {
        m.score = Some(alignment_score(x, y)?);
    }
    out.members.sort_by(|a, b| {
        let (sa, sb) = (a.score.unwrap_or(f64::NEG_INFINITY), b.score.unwrap_or(f64::NEG_INFINITY));
        sb.total_cmp(&sa).then_with(|| a.id.cmp(&b.id))
    });
    Ok(out)
}

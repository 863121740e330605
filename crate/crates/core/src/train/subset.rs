use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, ImageGrid, RetrievalMember};
use crate::{Error, Result};

/// Training size expressed as shots per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSpec {
    pub shots: usize,
    pub num_classes: usize,
}

impl ShotSpec {
    pub fn new(shots: usize, num_classes: usize) -> Result<Self> {
        if shots == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument("shots and num_classes must be >= 1".into()));
        }
        Ok(ShotSpec { shots, num_classes })
    }

    pub fn total(&self) -> usize {
        self.shots * self.num_classes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSubset {
    pub members: Vec<RetrievalMember>,
    pub requested: usize,
    /// Fewer members were available than requested.
    pub truncated: bool,
}

/// The first `shots × num_classes` members of a ranked list, or all of them
/// when fewer are available.
pub fn select_training_subset(ranked: &[RetrievalMember], shots: ShotSpec) -> TrainingSubset {
    let requested = shots.total();
    let truncated = ranked.len() < requested;
    if truncated {
        log::warn!(
            "requested {requested} pairs ({} shots x {} classes) but only {} are available",
            shots.shots,
            shots.num_classes,
            ranked.len()
        );
    }
    TrainingSubset {
        members: ranked.iter().take(requested).cloned().collect(),
        requested,
        truncated,
    }
}

/// An image-caption pair ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub image: ImageGrid,
    pub caption: String,
}

/// Look up and load the records behind `members`, preserving order.
pub fn collect_pairs(members: &[RetrievalMember], corpus: &[CaptionRecord]) -> Result<Vec<TrainingPair>> {
    let by_id: HashMap<&str, &CaptionRecord> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();
    members
        .iter()
        .map(|m| {
            let r = by_id
                .get(m.id.as_str())
                .ok_or_else(|| Error::MissingRecord(m.id.clone()))?;
            Ok(TrainingPair {
                id: r.id.clone(),
                image: r.image.load()?.into_owned(),
                caption: r.caption.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn members(n: usize) -> Vec<RetrievalMember> {
        (0..n)
            .map(|i| RetrievalMember {
                id: format!("m{i:03}"),
                matched: vec![],
                score: Some(1.0 - i as f64 / 1000.0),
                label: None,
            })
            .collect()
    }

    #[test]
    fn takes_shots_times_classes() {
        let s = select_training_subset(&members(200), ShotSpec::new(16, 4).unwrap());
        assert_eq!(s.members.len(), 64);
        assert_eq!(s.members[63].id, "m063");
        assert!(!s.truncated);
    }

    #[test]
    fn truncates_to_available() {
        let s = select_training_subset(&members(10), ShotSpec::new(500, 4).unwrap());
        assert_eq!(s.members.len(), 10);
        assert!(s.truncated);
        assert_eq!(s.requested, 2000);
    }

    #[test]
    fn single_pair() {
        let s = select_training_subset(&members(10), ShotSpec::new(1, 1).unwrap());
        assert_eq!(s.members.len(), 1);
        assert!(ShotSpec::new(0, 3).is_err());
    }
}

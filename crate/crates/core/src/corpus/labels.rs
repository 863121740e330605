use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::keywords::{KeywordSpec, RetrievalMember, RetrievalMode, RetrievalSet};
use super::record::CaptionRecord;
use super::text::{find_phrase, words};
use crate::{Error, Result};

/// Label each task-mode member with the class whose keyword occurs first in
/// its caption; equal positions fall back to class order in `spec`. Members
/// without any class keyword are left unlabeled.
pub fn assign_pseudo_labels(
    retrieval: &RetrievalSet,
    corpus: &[CaptionRecord],
    spec: &KeywordSpec,
) -> Result<RetrievalSet> {
    if retrieval.mode != RetrievalMode::Task {
        return Err(Error::InvalidArgument("pseudo-labels need a task-mode retrieval".into()));
    }
    let captions: HashMap<&str, &str> = corpus.iter().map(|r| (r.id.as_str(), r.caption.as_str())).collect();
    let classes: Vec<(&String, Vec<Vec<String>>)> = spec
        .class_keywords
        .iter()
        .map(|(c, ks)| (c, ks.iter().map(|k| words(k)).collect()))
        .collect();

    let mut out = retrieval.clone();
    for member in &mut out.members {
        let caption = captions
            .get(member.id.as_str())
            .ok_or_else(|| Error::MissingRecord(member.id.clone()))?;
        let caption = words(caption);
        let mut best: Option<(usize, &String)> = None;
        for (class, phrases) in &classes {
            let pos = phrases.iter().filter_map(|p| find_phrase(&caption, p)).min();
            if let Some(pos) = pos {
                // Strict `<` keeps the earlier class on equal positions.
                if best.is_none_or(|(b, _)| pos < b) {
                    best = Some((pos, class));
                }
            }
        }
        member.label = best.map(|(_, c)| c.clone());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalancePolicy {
    Truncate,
    Oversample,
}

/// Equalize class counts of a labeled retrieval.
///
/// `Truncate` keeps the first `target` members of each class. `Oversample`
/// repeats members of classes below `target` cyclically, in ranked order,
/// until they reach it. The result lists all first copies in the input
/// order, then the second copies, and so on, so that taking a prefix still
/// favours highly-ranked pairs.
pub fn balance_by_label(
    retrieval: &RetrievalSet,
    spec: &KeywordSpec,
    target_per_class: usize,
    policy: BalancePolicy,
) -> Result<Vec<RetrievalMember>> {
    let mut by_class: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, m) in retrieval.members.iter().enumerate() {
        let label = m
            .label
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("member {:?} is unlabeled", m.id)))?;
        by_class.entry(label).or_default().push(i);
    }
    // (copy round, input position)
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for class in spec.classes() {
        let members = by_class.get(class).map(Vec::as_slice).unwrap_or(&[]);
        match policy {
            BalancePolicy::Truncate => {
                picks.extend(members.iter().take(target_per_class).map(|&i| (0, i)));
            }
            BalancePolicy::Oversample => {
                if members.is_empty() {
                    return Err(Error::EmptyClass(class.to_string()));
                }
                let total = members.len().max(target_per_class);
                picks.extend((0..total).map(|k| (k / members.len(), members[k % members.len()])));
            }
        }
    }
    picks.sort_unstable();
    Ok(picks.into_iter().map(|(_, i)| retrieval.members[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::keywords::match_keywords;
    use crate::corpus::{ImageGrid, ImageSource};

    fn rec(id: &str, caption: &str) -> CaptionRecord {
        CaptionRecord {
            id: id.into(),
            image: ImageSource::Inline(ImageGrid::zeros(1, 1, 1).unwrap()),
            caption: caption.into(),
            source: String::new(),
        }
    }

    fn labeled(labels: &[(&str, &str)]) -> RetrievalSet {
        RetrievalSet {
            mode: RetrievalMode::Task,
            members: labels
                .iter()
                .map(|(id, l)| RetrievalMember {
                    id: id.to_string(),
                    matched: vec![],
                    score: None,
                    label: Some(l.to_string()),
                })
                .collect(),
        }
    }

    fn two_class_spec() -> KeywordSpec {
        KeywordSpec {
            task_name: "t".into(),
            site_keywords: vec!["breast".into()],
            class_keywords: [("a".to_string(), vec!["a".to_string()]), ("b".to_string(), vec!["b".to_string()])]
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn earliest_keyword_wins() {
        let bach = KeywordSpec::bundled("bach").unwrap();
        let corpus = [
            rec("x", "breast invasive carcinoma"),
            rec("y", "breast lesion, benign, not invasive"),
        ];
        let task = match_keywords(&corpus, &bach, RetrievalMode::Task);
        let labeled = assign_pseudo_labels(&task, &corpus, &bach).unwrap();
        assert_eq!(labeled.members[0].label.as_deref(), Some("invasive"));
        assert_eq!(labeled.members[1].label.as_deref(), Some("benign"));
    }

    #[test]
    fn same_position_falls_back_to_class_order() {
        // Two classes sharing a keyword match at the same position.
        let spec = KeywordSpec {
            task_name: "t".into(),
            site_keywords: vec!["breast".into()],
            class_keywords: [
                ("first".to_string(), vec!["lesion".to_string()]),
                ("second".to_string(), vec!["lesion".to_string()]),
            ]
            .into_iter()
            .collect(),
        };
        let corpus = [rec("x", "breast lesion")];
        let task = match_keywords(&corpus, &spec, RetrievalMode::Task);
        let labeled = assign_pseudo_labels(&task, &corpus, &spec).unwrap();
        assert_eq!(labeled.members[0].label.as_deref(), Some("first"));
    }

    #[test]
    fn domain_retrieval_rejected() {
        let bach = KeywordSpec::bundled("bach").unwrap();
        let set = RetrievalSet {
            mode: RetrievalMode::Domain,
            members: vec![],
        };
        assert!(assign_pseudo_labels(&set, &[], &bach).is_err());
    }

    #[test]
    fn truncate_keeps_highest_ranked() {
        let set = labeled(&[("a1", "a"), ("b1", "b"), ("a2", "a"), ("a3", "a"), ("b2", "b"), ("a4", "a"), ("a5", "a")]);
        let out = balance_by_label(&set, &two_class_spec(), 2, BalancePolicy::Truncate).unwrap();
        let ids: Vec<&str> = out.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["a1", "b1", "a2", "b2"]);
    }

    #[test]
    fn oversample_repeats_small_class() {
        let set = labeled(&[("a1", "a"), ("a2", "a"), ("b1", "b"), ("a3", "a")]);
        let out = balance_by_label(&set, &two_class_spec(), 3, BalancePolicy::Oversample).unwrap();
        let ids: Vec<&str> = out.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["a1", "a2", "b1", "a3", "b1", "b1"]);
    }

    #[test]
    fn oversample_empty_class_errors() {
        let set = labeled(&[("a1", "a"), ("a2", "a"), ("a3", "a")]);
        let err = balance_by_label(&set, &two_class_spec(), 3, BalancePolicy::Oversample).unwrap_err();
        assert_eq!(err.to_string(), "empty class b");
    }
}

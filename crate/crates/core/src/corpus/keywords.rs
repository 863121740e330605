use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::record::CaptionRecord;
use super::text::{find_phrase, words};
use crate::{par, Error, Result};

/// Site keywords and per-class keywords for one downstream task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordSpec {
    pub task_name: String,
    pub site_keywords: Vec<String>,
    /// Class order is significant: it breaks pseudo-label ties.
    pub class_keywords: IndexMap<String, Vec<String>>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("bach", include_str!("../../data/keywords/bach.json")),
    ("mhist", include_str!("../../data/keywords/mhist.json")),
    ("sicap", include_str!("../../data/keywords/sicap.json")),
];

impl KeywordSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("keyword spec {:?}: {m}", self.task_name)));
        if self.site_keywords.is_empty() {
            return bad("no site keywords".into());
        }
        if self.class_keywords.is_empty() {
            return bad("no classes".into());
        }
        for (class, list) in &self.class_keywords {
            if list.is_empty() {
                return bad(format!("class {class:?} has no keywords"));
            }
        }
        let all = self.site_keywords.iter().chain(self.class_keywords.values().flatten());
        for k in all {
            if k.trim() != k || k.is_empty() {
                return bad(format!("keyword {k:?} has surrounding whitespace or is empty"));
            }
            if k.to_lowercase() != *k {
                return bad(format!("keyword {k:?} is not lowercase"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: KeywordSpec = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// The shipped keyword tables: `bach`, `mhist`, `sicap`.
    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text).expect("bundled keyword spec parses"))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.class_keywords.keys().map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Domain,
    Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMember {
    pub id: String,
    pub matched: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Records selected by keyword matching, optionally scored and sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSet {
    pub mode: RetrievalMode,
    pub members: Vec<RetrievalMember>,
}

impl RetrievalSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.id.as_str())
    }

    /// True when every member has a score and scores never increase.
    pub fn is_ranked(&self) -> bool {
        self.members.iter().all(|m| m.score.is_some())
            && self
                .members
                .windows(2)
                .all(|w| w[0].score >= w[1].score)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

struct CompiledSpec {
    site: Vec<(String, Vec<String>)>,
    classes: Vec<Vec<(String, Vec<String>)>>,
}

impl CompiledSpec {
    fn new(spec: &KeywordSpec) -> Self {
        let compile = |k: &String| (k.clone(), words(k));
        CompiledSpec {
            site: spec.site_keywords.iter().map(compile).collect(),
            classes: spec
                .class_keywords
                .values()
                .map(|list| list.iter().map(compile).collect())
                .collect(),
        }
    }
}

/// Select records whose caption contains a site keyword (domain mode), and
/// additionally a class keyword (task mode), as whole-word phrases after
/// normalization. Members keep corpus order; scores are unset.
pub fn match_keywords(corpus: &[CaptionRecord], spec: &KeywordSpec, mode: RetrievalMode) -> RetrievalSet {
    let compiled = CompiledSpec::new(spec);
    let matches = par::map(corpus, |record| match_record(record, &compiled, mode));
    RetrievalSet {
        mode,
        members: matches.into_iter().flatten().collect(),
    }
}

fn match_record(record: &CaptionRecord, spec: &CompiledSpec, mode: RetrievalMode) -> Option<RetrievalMember> {
    let caption = words(&record.caption);
    let hits = |list: &[(String, Vec<String>)]| -> Vec<String> {
        list.iter()
            .filter(|(_, phrase)| find_phrase(&caption, phrase).is_some())
            .map(|(k, _)| k.clone())
            .collect()
    };
    let mut matched = hits(&spec.site);
    if matched.is_empty() {
        return None;
    }
    if mode == RetrievalMode::Task {
        let class_hits: Vec<String> = spec.classes.iter().flat_map(|c| hits(c)).collect();
        if class_hits.is_empty() {
            return None;
        }
        for k in class_hits {
            if !matched.contains(&k) {
                matched.push(k);
            }
        }
    }
    Some(RetrievalMember {
        id: record.id.clone(),
        matched,
        score: None,
        label: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ImageGrid, ImageSource};

    pub(crate) fn rec(id: &str, caption: &str) -> CaptionRecord {
        CaptionRecord {
            id: id.into(),
            image: ImageSource::Inline(ImageGrid::zeros(1, 1, 3).unwrap()),
            caption: caption.into(),
            source: "test".into(),
        }
    }

    #[test]
    fn bundled_specs_are_valid() {
        for name in KeywordSpec::bundled_names() {
            KeywordSpec::bundled(name).unwrap().validate().unwrap();
        }
        let bach = KeywordSpec::bundled("bach").unwrap();
        assert_eq!(bach.site_keywords, ["breast"]);
        assert_eq!(bach.classes().collect::<Vec<_>>(), ["normal", "benign", "in situ", "invasive"]);
    }

    #[test]
    fn task_match_records_keywords() {
        let bach = KeywordSpec::bundled("bach").unwrap();
        let corpus = [rec("a", "ductal carcinoma in situ of the breast")];
        let r = match_keywords(&corpus, &bach, RetrievalMode::Task);
        assert_eq!(r.members.len(), 1);
        assert_eq!(r.members[0].matched, ["breast", "in situ"]);
    }

    #[test]
    fn no_site_keyword_no_match() {
        let bach = KeywordSpec::bundled("bach").unwrap();
        let corpus = [rec("a", "sessile serrated lesion of colon")];
        assert!(match_keywords(&corpus, &bach, RetrievalMode::Domain).is_empty());
    }

    #[test]
    fn whole_word_rule() {
        let mhist = KeywordSpec::bundled("mhist").unwrap();
        let corpus = [rec("a", "Colonoscopy findings"), rec("b", "colon cancer")];
        let r = match_keywords(&corpus, &mhist, RetrievalMode::Domain);
        assert_eq!(r.ids().collect::<Vec<_>>(), ["b"]);
    }

    #[test]
    fn hyphenated_keyword_matches_normalized_caption() {
        let sicap = KeywordSpec::bundled("sicap").unwrap();
        let corpus = [rec("a", "Prostate: non-cancerous glands")];
        let r = match_keywords(&corpus, &sicap, RetrievalMode::Task);
        // No stemming: "glands" does not match "gland".
        assert_eq!(r.members[0].matched, ["prostate", "non-cancerous"]);
    }

    #[test]
    fn validation_catches_bad_keywords() {
        let mut spec = KeywordSpec::bundled("bach").unwrap();
        spec.site_keywords = vec![" breast".into()];
        assert!(spec.validate().is_err());
        let mut spec = KeywordSpec::bundled("bach").unwrap();
        spec.class_keywords.insert("x".into(), vec![]);
        assert!(spec.validate().is_err());
        let mut spec = KeywordSpec::bundled("bach").unwrap();
        spec.site_keywords = vec!["Breast".into()];
        assert!(spec.validate().is_err());
    }
}

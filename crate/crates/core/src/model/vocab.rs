use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::words;
use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLASS_ID: u32 = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<class>"];

/// Word-level vocabulary. Ids 0–2 are reserved for padding, unknown words
/// and the class placeholder; real words follow in sorted order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Every normalized word across `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(words).collect();
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is valid")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::InvalidArgument("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a single normalized word; unknown words map to [`UNK_ID`].
    pub fn id(&self, word: &str) -> u32 {
        match self.index.get(word) {
            Some(&id) if id > CLASS_ID => id,
            _ => UNK_ID,
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.id(word) != UNK_ID
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Ids of the words of `text`, unpadded.
    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        words(text).iter().map(|w| self.id(w)).collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Normalize, split, map through `vocab`, then truncate or pad with
/// [`PAD_ID`] to exactly `max_len`.
pub fn tokenize(caption: &str, vocab: &Vocabulary, max_len: usize) -> Result<Vec<u32>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let mut ids = vocab.encode_words(caption);
    ids.resize(max_len, PAD_ID);
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["invasive carcinoma of the breast", "benign"])
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = vocab();
        assert_eq!(v.token(PAD_ID), Some("<pad>"));
        assert_eq!(v.token(UNK_ID), Some("<unk>"));
        assert_eq!(v.token(CLASS_ID), Some("<class>"));
        assert_eq!(v.len(), 3 + 6);
        // Reserved strings typed into a caption are not special.
        assert_eq!(v.id("<pad>"), UNK_ID);
    }

    #[test]
    fn tokenize_pads_and_maps() {
        let v = vocab();
        let t = tokenize("Invasive carcinoma", &v, 5).unwrap();
        assert_eq!(t, [v.id("invasive"), v.id("carcinoma"), 0, 0, 0]);
        assert!(t[0] > CLASS_ID && t[1] > CLASS_ID);
    }

    #[test]
    fn unknown_word_is_one() {
        let v = vocab();
        assert_eq!(tokenize("sarcoma", &v, 2).unwrap(), [UNK_ID, PAD_ID]);
    }

    #[test]
    fn truncates() {
        let v = vocab();
        let t = tokenize("invasive carcinoma of the breast", &v, 3).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[2], v.id("of"));
        assert!(tokenize("x", &v, 0).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = vocab();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<Vocabulary>(r#"["a","b"]"#).is_err());
    }
}

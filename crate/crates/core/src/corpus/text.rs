/// Lowercase, turn every non-alphanumeric character into a space, and
/// collapse whitespace runs. Idempotent.
pub fn normalize_text(caption: &str) -> String {
    let spaced: String = caption
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized words of `text`.
pub fn words(text: &str) -> Vec<String> {
    normalize_text(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Position of the first whole-word occurrence of `phrase` in `haystack`,
/// both given as word sequences.
pub fn find_phrase(haystack: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return None;
    }
    haystack.windows(phrase.len()).position(|w| w == phrase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_text("Invasive Carcinoma, Breast."), "invasive carcinoma breast");
        assert_eq!(normalize_text("In-Situ  lesion"), "in situ lesion");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  ...  "), "");
        assert_eq!(normalize_text("Non-cancerous\tgland\n"), "non cancerous gland");
    }

    #[test]
    fn whole_word_phrase_search() {
        let hay = words("Colonoscopy shows colon cancer");
        assert_eq!(find_phrase(&hay, &words("colon")), Some(2));
        assert_eq!(find_phrase(&words("colonoscopy only"), &words("colon")), None);
        assert_eq!(find_phrase(&words("ductal carcinoma in situ"), &words("in situ")), Some(2));
        assert_eq!(find_phrase(&words("in the situ"), &words("in situ")), None);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,60}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }
    }
}

//! Small text helpers shared across modules.

/// Lowercases, maps every non-alphanumeric character to a space and
/// collapses runs of whitespace.
pub fn fold(s: &str) -> String {
    let mapped: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-insensitive substring test on folded text.
pub fn contains_folded(haystack: &str, needle: &str) -> bool {
    let needle = fold(needle);
    !needle.is_empty() && fold(haystack).contains(&needle)
}

pub const STOPWORDS: &[&str] = &[
    "a",
    "an",
    "the",
    "of",
    "for",
    "and",
    "or",
    "in",
    "on",
    "at",
    "to",
    "by",
    "with",
    "from",
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "do",
    "does",
    "did",
    "what",
    "which",
    "who",
    "whom",
    "whose",
    "when",
    "where",
    "why",
    "how",
    "must",
    "should",
    "can",
    "could",
    "would",
    "will",
    "shall",
    "may",
    "might",
    "that",
    "this",
    "these",
    "those",
    "it",
    "its",
    "as",
    "into",
    "about",
    "their",
    "there",
    "has",
    "have",
    "had",
    "not",
    "no",
    "any",
    "all",
    "some",
    "stand",
    "require",
    "required",
    "according",
];

pub fn is_stopword(w: &str) -> bool {
    STOPWORDS.contains(&w)
}

/// Order-preserving de-duplication (case-insensitive on folded form).
pub fn dedup_folded(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items
        .into_iter()
        .filter(|s| {
            let key = fold(s);
            !key.is_empty() && seen.insert(key)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_strips_case_punctuation_and_spacing() {
        assert_eq!(fold("  New   York, N.Y.! "), "new york n y");
        assert_eq!(fold("“GAAP”"), "gaap");
        assert_eq!(fold("?"), "");
    }

    #[test]
    fn dedup_keeps_first_spelling() {
        let out = dedup_folded(["GAAP".to_string(), "gaap".into(), "Tax".into(), "".into()]);
        assert_eq!(out, vec!["GAAP", "Tax"]);
    }
}

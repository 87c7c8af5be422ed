//! Text normalization shared by grounding checks, retrieval and metrics.
//!
//! Three distinct normalizers live here because each consumer has its own
//! contract:
//!
//! * [`normalize_for_grounding`] keeps punctuation and only folds case,
//!   Unicode composition and whitespace, so quoted evidence can be located
//!   inside a document body.
//! * [`tokenize`] is the retrieval tokenizer (lowercase, split on
//!   non-alphanumeric characters).
//! * [`normalize_answer`] is the answer-matching normalizer used by the
//!   QA metrics (lowercase, punctuation removed, articles dropped).

use unicode_normalization::UnicodeNormalization;

/// Lowercase, NFC-compose and collapse whitespace runs into single spaces.
/// Leading and trailing whitespace is removed.
pub fn normalize_for_grounding(text: &str) -> String {
    let composed: String = text.nfc().collect();
    let lowered = composed.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Retrieval tokenizer: lowercase, split on any non-alphanumeric character,
/// drop empty tokens. No stemming and no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Answer normalization: lowercase, remove punctuation and symbols, drop the
/// articles `a`, `an`, `the` and collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// English function words ignored by the lexical overlap judge when it
/// counts content tokens of a claim.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

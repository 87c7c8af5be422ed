//! Sentence segmentation with bracketed citation markers (`[1]`, `[1][3]`).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    /// Sentence with citation markers removed.
    pub text: String,
    /// 1-based document indices, deduplicated, in order of appearance.
    pub citations: Vec<usize>,
    /// 0-based position within the long answer.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segmentation {
    pub statements: Vec<Statement>,
    /// Bracket groups that looked like markers but were not `[n]` with n >= 1.
    pub unparseable_markers: usize,
}

const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "apr", "aug", "ave", "co", "corp", "dec", "dept", "dr", "e.g", "eg", "est", "etc",
    "feb", "fig", "gen", "gov", "i.e", "ie", "inc", "jan", "jr", "jul", "jun", "lt", "ltd", "mar",
    "mr", "mrs", "ms", "mt", "no", "nov", "oct", "prof", "rev", "sen", "sep", "sept", "sr", "st",
    "u.k", "u.s", "u.s.a", "vol", "vs",
];

pub fn segment_statements(long_answer: &str) -> Vec<Statement> {
    segment_statements_detailed(long_answer).statements
}

pub fn segment_statements_detailed(long_answer: &str) -> Segmentation {
    let chars: Vec<char> = long_answer.chars().collect();
    let mut out = Segmentation::default();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut end = i + 1;
            // keep runs like "?!" or "..." and closing quotes with the sentence
            while end < chars.len() && matches!(chars[end], '.' | '?' | '!' | '"' | '\'' | '\u{201d}' | '\u{2019}' | ')') {
                end += 1;
            }
            let at_boundary = end == chars.len() || chars[end].is_whitespace();
            if at_boundary && !(c == '.' && is_abbreviation(&chars[start..i])) {
                end = absorb_trailing_markers(&chars, end);
                push_sentence(&mut out, &chars[start..end]);
                start = end;
                i = end;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        push_sentence(&mut out, &chars[start..]);
    }
    out
}

/// The word ending right before a period is a known abbreviation or a
/// single-letter initial.
fn is_abbreviation(before: &[char]) -> bool {
    let word_start = before.iter().rposition(|c| c.is_whitespace()).map_or(0, |p| p + 1);
    let word: String = before[word_start..]
        .iter()
        .collect::<String>()
        .trim_start_matches(['(', '"', '\''])
        .to_owned();
    if word.chars().count() == 1 && word.chars().all(|c| c.is_uppercase()) {
        return true;
    }
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

/// Markers written after the terminator (`... in 1900. [2] Next ...`)
/// belong to the sentence they follow.
fn absorb_trailing_markers(chars: &[char], mut end: usize) -> usize {
    let mut j = end;
    loop {
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        match marker_at(chars, j) {
            Some(after) => {
                let mut k = after;
                while let Some(next) = marker_at(chars, k) {
                    k = next;
                }
                if k == chars.len() || chars[k].is_whitespace() {
                    end = k;
                    j = k;
                } else {
                    return end;
                }
            }
            None => return end,
        }
    }
}

fn marker_at(chars: &[char], at: usize) -> Option<usize> {
    if chars.get(at) != Some(&'[') {
        return None;
    }
    let close = chars[at + 1..].iter().position(|&c| c == ']')? + at + 1;
    let inner = &chars[at + 1..close];
    (!inner.is_empty() && inner.iter().all(char::is_ascii_digit)).then_some(close + 1)
}

enum Bracket {
    Citation(usize),
    Unparseable,
    Text,
}

fn classify(inner: &str) -> Bracket {
    if !inner.is_empty() && inner.chars().all(|c| c.is_ascii_digit()) {
        return match inner.parse::<usize>() {
            Ok(n) if n >= 1 => Bracket::Citation(n),
            _ => Bracket::Unparseable,
        };
    }
    let markerish = inner.chars().all(|c| c.is_ascii_digit() || matches!(c, ',' | ' ' | '-'));
    if (markerish && inner.chars().any(|c| c.is_ascii_digit())) || inner.trim().is_empty() {
        Bracket::Unparseable
    } else {
        Bracket::Text
    }
}

fn push_sentence(out: &mut Segmentation, raw: &[char]) {
    let raw: String = raw.iter().collect();
    let mut citations = Vec::new();
    let mut text = String::with_capacity(raw.len());
    let mut rest = raw.as_str();
    while let Some(open) = rest.find('[') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find(']') {
            Some(close) => {
                match classify(&after[..close]) {
                    Bracket::Citation(n) => {
                        if !citations.contains(&n) {
                            citations.push(n);
                        }
                    }
                    Bracket::Unparseable => out.unparseable_markers += 1,
                    Bracket::Text => text.push_str(&rest[open..open + close + 2]),
                }
                rest = &after[close + 1..];
            }
            None => {
                text.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    text.push_str(rest);
    let text = tidy(&text);
    if text.chars().any(char::is_alphanumeric) {
        let position = out.statements.len();
        out.statements.push(Statement { text, citations, position });
    }
}

/// Collapse whitespace and drop spaces left before punctuation by marker removal.
fn tidy(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = String::with_capacity(collapsed.len());
    for c in collapsed.chars() {
        if matches!(c, '.' | ',' | ';' | ':' | '!' | '?') && out.ends_with(' ') {
            out.pop();
        }
        out.push(c);
    }
    out
}

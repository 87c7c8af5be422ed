use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Document, SelfReasoningTrajectory};
use crate::text::normalize_for_grounding;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingItem {
    /// 0-based position in the evidence list.
    pub evidence_index: usize,
    pub doc_index: usize,
    pub passed: bool,
    /// Byte offset of the match inside the normalized document body.
    pub offset: Option<usize>,
    /// Byte length of the normalized snippet.
    pub length: usize,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub items: Vec<GroundingItem>,
    pub all_passed: bool,
}

impl GroundingReport {
    pub fn failures(&self) -> impl Iterator<Item = &GroundingItem> {
        self.items.iter().filter(|i| !i.passed)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("evidence[{evidence_index}] cites document {doc_index} but only {available} were given")]
pub struct IndexOutOfRange {
    pub evidence_index: usize,
    pub doc_index: usize,
    pub available: usize,
}

/// Check that every evidence snippet is a contiguous substring of the cited
/// document body after lowercasing, NFC composition and whitespace collapse.
pub fn validate_evidence_grounding(
    t: &SelfReasoningTrajectory,
    docs: &[Document],
) -> Result<GroundingReport, IndexOutOfRange> {
    let mut items = Vec::with_capacity(t.eap.len());
    for (evidence_index, ev) in t.eap.iter().enumerate() {
        if ev.doc_index == 0 || ev.doc_index > docs.len() {
            return Err(IndexOutOfRange {
                evidence_index,
                doc_index: ev.doc_index,
                available: docs.len(),
            });
        }
        let body = normalize_for_grounding(&docs[ev.doc_index - 1].body);
        let snippet = normalize_for_grounding(&ev.cite_content);
        let offset = if snippet.is_empty() { None } else { body.find(&snippet) };
        let reason = match offset {
            Some(_) => None,
            None if snippet.is_empty() => Some("snippet is empty after normalization".into()),
            None => Some(format!("snippet not found in document {}", ev.doc_index)),
        };
        items.push(GroundingItem {
            evidence_index,
            doc_index: ev.doc_index,
            passed: offset.is_some(),
            offset,
            length: snippet.len(),
            reason,
        });
    }
    let all_passed = items.iter().all(|i| i.passed);
    Ok(GroundingReport { items, all_passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::testing::trajectory;

    fn docs() -> Vec<Document> {
        let mk = |id: &str, body: &str, rank| Document {
            id: id.into(),
            title: id.into(),
            body: body.into(),
            rank,
            score: 1.0 / rank as f64,
        };
        vec![
            mk("a", "Catch Me If You Can was released in December 2002.", 1),
            mk("b", "Principal photography began in February 2002 in Los Angeles.", 2),
        ]
    }

    #[test]
    fn exact_copy_passes_with_offset() {
        let t = trajectory("2002", &[("began in February 2002", 2)]);
        let r = validate_evidence_grounding(&t, &docs()).unwrap();
        assert!(r.all_passed);
        let normalized = normalize_for_grounding(&docs()[1].body);
        let off = r.items[0].offset.unwrap();
        assert_eq!(&normalized[off..off + r.items[0].length], "began in february 2002");
    }

    #[test]
    fn case_and_whitespace_differences_pass() {
        let t = trajectory("2002", &[("PRINCIPAL   photography\nbegan", 2)]);
        assert!(validate_evidence_grounding(&t, &docs()).unwrap().all_passed);
    }

    #[test]
    fn single_token_substitution_fails() {
        // "began" -> "started" on a real snippet from doc 2
        let t = trajectory("2002", &[("photography started in February 2002", 2)]);
        let r = validate_evidence_grounding(&t, &docs()).unwrap();
        assert!(!r.all_passed);
        assert_eq!(r.failures().count(), 1);
        assert!(r.items[0].reason.is_some());
    }

    #[test]
    fn wrong_document_fails() {
        let t = trajectory("2002", &[("began in February 2002", 1)]);
        assert!(!validate_evidence_grounding(&t, &docs()).unwrap().all_passed);
    }

    #[test]
    fn index_beyond_docs_is_error() {
        let t = trajectory("2002", &[("began", 3)]);
        let err = validate_evidence_grounding(&t, &docs()).unwrap_err();
        assert_eq!(err.available, 2);
        assert_eq!(err.doc_index, 3);
    }
}

//! Local lexical retrieval and the retriever contract.

mod bm25;
mod persist;

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{Index, Posting, BM25_B, BM25_K1};

use crate::robustness::Perturbation;
use crate::trajectory::Document;

/// Number of documents retrieved per question unless configured otherwise.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("corpus line {line}: {message}")]
    CorpusParse { line: usize, message: String },
    #[error("invalid index file: {0}")]
    InvalidIndexFile(String),
    #[error("remote retriever failed: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(alias = "text")]
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<CorpusDoc>,
}

impl Corpus {
    pub fn new(docs: Vec<CorpusDoc>) -> Result<Self, RetrievalError> {
        let corpus = Corpus { docs };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Read JSONL with one `{id, title, text}` object per line. Blank lines
    /// are skipped.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, RetrievalError> {
        let mut docs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: CorpusDoc = serde_json::from_str(&line).map_err(|e| {
                RetrievalError::CorpusParse { line: i + 1, message: e.to_string() }
            })?;
            docs.push(doc);
        }
        Corpus::new(docs)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut seen = HashSet::with_capacity(self.docs.len());
        for d in &self.docs {
            if !seen.insert(d.id.as_str()) {
                return Err(RetrievalError::DuplicateId(d.id.clone()));
            }
            if d.body.trim().is_empty() {
                return Err(RetrievalError::EmptyBody(d.id.clone()));
            }
        }
        Ok(())
    }
}

/// A query paired with its ranked documents. When `perturbation` is set the
/// `docs` order is the presentation order and no longer follows rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub question_id: String,
    pub query: String,
    pub docs: Vec<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

impl RetrievalResult {
    /// Invariants of an unperturbed result: ranks are `1..=len`, scores are
    /// non-increasing, ids are distinct.
    pub fn check_ranked(&self) -> Result<(), String> {
        let mut ids = HashSet::new();
        for (i, d) in self.docs.iter().enumerate() {
            if d.rank != i + 1 {
                return Err(format!("document {} has rank {} at position {}", d.id, d.rank, i + 1));
            }
            if !ids.insert(d.id.as_str()) {
                return Err(format!("document {} appears twice", d.id));
            }
            if i > 0 && d.score > self.docs[i - 1].score {
                return Err(format!("score increases at rank {}", d.rank));
            }
        }
        Ok(())
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.docs.iter().map(|d| d.id.as_str()).collect()
    }
}

/// Anything that can produce top-k documents for a query. [`Index`] is the
/// local implementation; an external retrieval service can be wired in by
/// implementing this trait.
pub trait Retriever: Send + Sync {
    fn retrieve(
        &self,
        question_id: &str,
        query: &str,
        k: usize,
    ) -> Result<RetrievalResult, RetrievalError>;
}

impl Retriever for Index {
    fn retrieve(
        &self,
        question_id: &str,
        query: &str,
        k: usize,
    ) -> Result<RetrievalResult, RetrievalError> {
        Ok(RetrievalResult {
            question_id: question_id.to_owned(),
            query: query.to_owned(),
            docs: self.search(query, k),
            perturbation: None,
        })
    }
}

pub fn build_index(corpus: &Corpus) -> Result<Index, RetrievalError> {
    Index::build(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_corpus_reads_text_field() {
        let data = "{\"id\":\"a\",\"title\":\"A\",\"text\":\"alpha\"}\n\n{\"id\":\"b\",\"title\":\"B\",\"text\":\"beta\"}\n";
        let c = Corpus::from_jsonl(data.as_bytes()).unwrap();
        assert_eq!(c.docs.len(), 2);
        assert_eq!(c.docs[1].body, "beta");
    }

    #[test]
    fn corpus_errors() {
        assert!(matches!(Corpus::new(vec![]), Err(RetrievalError::EmptyCorpus)));
        let d = |id: &str, body: &str| CorpusDoc { id: id.into(), title: String::new(), body: body.into() };
        assert!(matches!(
            Corpus::new(vec![d("x", "one"), d("x", "two")]),
            Err(RetrievalError::DuplicateId(id)) if id == "x"
        ));
        assert!(matches!(Corpus::new(vec![d("x", "  ")]), Err(RetrievalError::EmptyBody(_))));
        let bad = "{\"id\":\"a\"}\n";
        assert!(matches!(
            Corpus::from_jsonl(bad.as_bytes()),
            Err(RetrievalError::CorpusParse { line: 1, .. })
        ));
    }
}

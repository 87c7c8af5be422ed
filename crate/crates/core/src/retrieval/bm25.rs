//! Okapi BM25 over an in-memory inverted index.
//!
//! score(d, q) = sum over distinct query terms t present in d of
//!   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
//! with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), which is always positive.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Corpus, CorpusDoc, RetrievalError};
use crate::text::tokenize;
use crate::trajectory::Document;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the document in corpus order.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub(super) docs: Vec<CorpusDoc>,
    pub(super) postings: BTreeMap<String, Vec<Posting>>,
    pub(super) doc_lengths: Vec<u32>,
    pub(super) avg_doc_length: f64,
}

impl Index {
    pub fn build(corpus: &Corpus) -> Result<Index, RetrievalError> {
        corpus.validate()?;
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.docs.len());
        for (i, doc) in corpus.docs.iter().enumerate() {
            let tokens = tokenize(&doc.body);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc: i as u32, tf: count });
            }
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Index { docs: corpus.docs.clone(), postings, doc_lengths, avg_doc_length })
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.docs.iter().position(|d| d.id == doc_id).map(|i| self.doc_lengths[i])
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn docs(&self) -> &[CorpusDoc] {
        &self.docs
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores of every document with at least one query term.
    pub fn scores(&self, query: &str) -> HashMap<u32, f64> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(list.len());
            for p in list {
                let tf = p.tf as f64;
                let dl = self.doc_lengths[p.doc as usize] as f64;
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_doc_length);
                *scores.entry(p.doc).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    /// Top-k documents by score, ties broken by ascending doc id. Only
    /// documents with a positive score are returned.
    pub fn search(&self, query: &str, k: usize) -> Vec<Document> {
        let mut ranked: Vec<(u32, f64)> =
            self.scores(query).into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0 as usize].id.cmp(&self.docs[b.0 as usize].id))
        });
        ranked
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (doc, score))| {
                let d = &self.docs[doc as usize];
                Document {
                    id: d.id.clone(),
                    title: d.title.clone(),
                    body: d.body.clone(),
                    rank: i + 1,
                    score,
                }
            })
            .collect()
    }
}

pub(super) fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::DEFAULT_K;

    fn toy() -> Corpus {
        let d = |id: &str, body: &str| CorpusDoc { id: id.into(), title: id.to_uppercase(), body: body.into() };
        Corpus::new(vec![
            d("d1", "the cat sat on the mat"),
            d("d2", "the dog chased the cat"),
            d("d3", "dogs and cats live together"),
        ])
        .unwrap()
    }

    #[test]
    fn term_statistics_match_hand_count() {
        let idx = Index::build(&toy()).unwrap();
        assert_eq!(idx.num_docs(), 3);
        // "the": d1, d2; "cat": d1, d2; "cats": d3; "dog": d2; "dogs": d3
        assert_eq!(idx.doc_freq("the"), 2);
        assert_eq!(idx.doc_freq("cat"), 2);
        assert_eq!(idx.doc_freq("cats"), 1);
        assert_eq!(idx.doc_freq("dog"), 1);
        assert_eq!(idx.doc_freq("mat"), 1);
        assert_eq!(idx.doc_freq("bird"), 0);
        assert_eq!(idx.doc_length("d1"), Some(6));
        assert_eq!(idx.doc_length("d2"), Some(5));
        assert_eq!(idx.doc_length("d3"), Some(5));
        assert!((idx.avg_doc_length() - 16.0 / 3.0).abs() < 1e-12);
        assert_eq!(idx.postings["the"], vec![Posting { doc: 0, tf: 2 }, Posting { doc: 1, tf: 2 }]);
    }

    #[test]
    fn no_shared_terms_gives_empty_result() {
        let idx = Index::build(&toy()).unwrap();
        assert!(idx.search("zebra giraffe", DEFAULT_K).is_empty());
        assert!(idx.search("", DEFAULT_K).is_empty());
    }

    #[test]
    fn ties_break_on_doc_id() {
        let d = |id: &str| CorpusDoc { id: id.into(), title: String::new(), body: "same words here".into() };
        let idx = Index::build(&Corpus::new(vec![d("zz"), d("aa"), d("mm")]).unwrap()).unwrap();
        let ids: Vec<_> = idx.search("words", 3).into_iter().map(|d| d.id).collect();
        assert_eq!(ids, ["aa", "mm", "zz"]);
    }

    #[test]
    fn rebuilding_is_deterministic() {
        let a = Index::build(&toy()).unwrap();
        let b = Index::build(&toy()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.search("the cat", 3), b.search("the cat", 3));
    }

    #[test]
    fn repeated_query_terms_count_once() {
        let idx = Index::build(&toy()).unwrap();
        assert_eq!(idx.search("cat", 3), idx.search("cat cat CAT", 3));
    }
}

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{is_stopword, tokenize};

/// Ordered from least to most supportive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportVerdict {
    None,
    Partial,
    Full,
}

/// Decides how well `premise` supports `claim`. Must be deterministic for a
/// fixed configuration.
pub trait SupportJudge: Send + Sync {
    fn judge(&self, premise: &str, claim: &str) -> SupportVerdict;
}

impl<J: SupportJudge + ?Sized> SupportJudge for &J {
    fn judge(&self, premise: &str, claim: &str) -> SupportVerdict {
        (**self).judge(premise, claim)
    }
}

impl<J: SupportJudge + ?Sized> SupportJudge for Box<J> {
    fn judge(&self, premise: &str, claim: &str) -> SupportVerdict {
        (**self).judge(premise, claim)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("judge thresholds must satisfy 0 <= partial ({partial}) <= full ({full}) <= 1")]
pub struct InvalidThresholds {
    pub full: f64,
    pub partial: f64,
}

/// Content-word recall of the claim against the premise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalOverlapJudge {
    pub theta_full: f64,
    pub theta_partial: f64,
}

pub const DEFAULT_THETA_FULL: f64 = 0.85;
pub const DEFAULT_THETA_PARTIAL: f64 = 0.4;

impl Default for LexicalOverlapJudge {
    fn default() -> Self {
        LexicalOverlapJudge { theta_full: DEFAULT_THETA_FULL, theta_partial: DEFAULT_THETA_PARTIAL }
    }
}

pub fn lexical_overlap_judge(theta_full: f64, theta_partial: f64) -> Result<LexicalOverlapJudge, InvalidThresholds> {
    LexicalOverlapJudge::new(theta_full, theta_partial)
}

impl LexicalOverlapJudge {
    pub fn new(theta_full: f64, theta_partial: f64) -> Result<Self, InvalidThresholds> {
        let ok = (0.0..=1.0).contains(&theta_partial)
            && (0.0..=1.0).contains(&theta_full)
            && theta_partial <= theta_full;
        if !ok {
            return Err(InvalidThresholds { full: theta_full, partial: theta_partial });
        }
        Ok(LexicalOverlapJudge { theta_full, theta_partial })
    }

    /// Fraction of distinct claim content tokens found in the premise, or
    /// `None` when the claim has no content tokens.
    pub fn content_recall(premise: &str, claim: &str) -> Option<f64> {
        let claim_tokens: BTreeSet<String> =
            tokenize(claim).into_iter().filter(|t| !is_stopword(t)).collect();
        if claim_tokens.is_empty() {
            return None;
        }
        let premise_tokens: BTreeSet<String> = tokenize(premise).into_iter().collect();
        let shared = claim_tokens.iter().filter(|t| premise_tokens.contains(*t)).count();
        Some(shared as f64 / claim_tokens.len() as f64)
    }
}

impl SupportJudge for LexicalOverlapJudge {
    fn judge(&self, premise: &str, claim: &str) -> SupportVerdict {
        match LexicalOverlapJudge::content_recall(premise, claim) {
            None => SupportVerdict::None,
            Some(r) if r >= self.theta_full => SupportVerdict::Full,
            Some(r) if r >= self.theta_partial => SupportVerdict::Partial,
            Some(_) => SupportVerdict::None,
        }
    }
}

/// Verdicts looked up by exact `(premise, claim)` pair, with a fallback.
#[derive(Debug, Clone, Default)]
pub struct TableJudge {
    table: HashMap<(String, String), SupportVerdict>,
    fallback: Option<SupportVerdict>,
}

impl TableJudge {
    pub fn new() -> Self {
        TableJudge::default()
    }

    pub fn with(mut self, premise: &str, claim: &str, verdict: SupportVerdict) -> Self {
        self.insert(premise, claim, verdict);
        self
    }

    pub fn insert(&mut self, premise: &str, claim: &str, verdict: SupportVerdict) {
        self.table.insert((premise.to_owned(), claim.to_owned()), verdict);
    }

    pub fn fallback(mut self, verdict: SupportVerdict) -> Self {
        self.fallback = Some(verdict);
        self
    }
}

impl SupportJudge for TableJudge {
    fn judge(&self, premise: &str, claim: &str) -> SupportVerdict {
        self.table
            .get(&(premise.to_owned(), claim.to_owned()))
            .copied()
            .or(self.fallback)
            .unwrap_or(SupportVerdict::None)
    }
}

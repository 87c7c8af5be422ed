use serde::{Deserialize, Serialize};

use super::judge::{SupportJudge, SupportVerdict};
use super::statements::Statement;
use crate::text::normalize_answer;
use crate::trajectory::{Document, FactLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub value: f64,
}

/// A named metric with per-item values; `aggregate` is their mean (0 when
/// there are no items).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub aggregate: f64,
    pub per_item: Vec<ItemScore>,
    pub n: usize,
}

impl MetricReport {
    pub fn from_items(metric: impl Into<String>, per_item: Vec<ItemScore>) -> Self {
        let n = per_item.len();
        let aggregate = if n == 0 { 0.0 } else { per_item.iter().map(|i| i.value).sum::<f64>() / n as f64 };
        MetricReport { metric: metric.into(), aggregate, per_item, n }
    }

    pub fn empty(metric: impl Into<String>) -> Self {
        MetricReport::from_items(metric, Vec::new())
    }

    /// Concatenate items. The merged aggregate is the n-weighted mean.
    pub fn merge(&self, other: &MetricReport) -> MetricReport {
        let mut items = self.per_item.clone();
        items.extend(other.per_item.iter().cloned());
        MetricReport::from_items(self.metric.clone(), items)
    }
}

/// 1 when any alias of any gold set is contained in the normalized
/// prediction, else 0.
pub fn short_form_accuracy(prediction: &str, gold: &[Vec<String>]) -> f64 {
    let pred = normalize_answer(prediction);
    let hit = gold.iter().flatten().any(|alias| contains_alias(&pred, alias));
    if hit {
        1.0
    } else {
        0.0
    }
}

fn contains_alias(normalized_text: &str, alias: &str) -> bool {
    let a = normalize_answer(alias);
    !a.is_empty() && normalized_text.contains(&a)
}

/// Fraction of gold aspects with at least one alias in the normalized answer.
pub fn em_recall(long_answer: &str, gold: &[Vec<String>]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    matched_aspects(long_answer, gold) as f64 / gold.len() as f64
}

pub fn matched_aspects(long_answer: &str, gold: &[Vec<String>]) -> usize {
    let text = normalize_answer(long_answer);
    gold.iter().filter(|aliases| aliases.iter().any(|a| contains_alias(&text, a))).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeverScore {
    pub value: f64,
    pub unmappable: bool,
}

/// Case-insensitive class mapping ignoring whitespace, underscores and
/// surrounding punctuation.
pub fn map_fact_label(prediction: &str) -> Option<FactLabel> {
    let squashed: String = prediction
        .trim_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .collect::<String>()
        .to_lowercase();
    FactLabel::ALL.into_iter().find(|l| l.as_str().to_lowercase() == squashed)
}

pub fn fever_accuracy(prediction: &str, gold: FactLabel) -> FeverScore {
    match map_fact_label(prediction) {
        Some(label) => FeverScore { value: if label == gold { 1.0 } else { 0.0 }, unmappable: false },
        None => FeverScore { value: 0.0, unmappable: true },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingCitation {
    pub statement: usize,
    pub citation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationReport {
    pub report: MetricReport,
    pub dangling: Vec<DanglingCitation>,
}

fn dangling_of(s: &Statement, docs: &[Document]) -> Vec<DanglingCitation> {
    s.citations
        .iter()
        .filter(|&&c| c == 0 || c > docs.len())
        .map(|&c| DanglingCitation { statement: s.position, citation: c })
        .collect()
}

/// 1 when the concatenated bodies of all cited documents fully support the
/// statement. Uncited statements and statements with a dangling citation
/// score 0.
fn statement_recall(s: &Statement, docs: &[Document], judge: &dyn SupportJudge) -> f64 {
    if s.citations.is_empty() || !dangling_of(s, docs).is_empty() {
        return 0.0;
    }
    let premise = s.citations.iter().map(|&c| docs[c - 1].body.as_str()).collect::<Vec<_>>().join("\n");
    if judge.judge(&premise, &s.text) == SupportVerdict::Full {
        1.0
    } else {
        0.0
    }
}

pub fn citation_recall(statements: &[Statement], docs: &[Document], judge: &dyn SupportJudge) -> CitationReport {
    let items = statements
        .iter()
        .map(|s| ItemScore { id: format!("s{}", s.position), value: statement_recall(s, docs, judge) })
        .collect();
    CitationReport {
        report: MetricReport::from_items("citation_recall", items),
        dangling: statements.iter().flat_map(|s| dangling_of(s, docs)).collect(),
    }
}

/// One item per citation: 1 when its statement has recall 1 and the cited
/// document alone at least partially supports the statement.
pub fn citation_precision(statements: &[Statement], docs: &[Document], judge: &dyn SupportJudge) -> CitationReport {
    let mut items = Vec::new();
    for s in statements {
        let recall = statement_recall(s, docs, judge);
        for &c in &s.citations {
            let value = if recall == 1.0 && c >= 1 && c <= docs.len() {
                match judge.judge(&docs[c - 1].body, &s.text) {
                    SupportVerdict::Full | SupportVerdict::Partial => 1.0,
                    SupportVerdict::None => 0.0,
                }
            } else {
                0.0
            };
            items.push(ItemScore { id: format!("s{}c{}", s.position, c), value });
        }
    }
    CitationReport {
        report: MetricReport::from_items("citation_precision", items),
        dangling: statements.iter().flat_map(|s| dangling_of(s, docs)).collect(),
    }
}

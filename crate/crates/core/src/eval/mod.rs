//! Metrics: short-form accuracy, EM recall, citation recall/precision and
//! fact-verification accuracy, plus the statement extraction they need.

mod judge;
mod metrics;
mod statements;

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use judge::{
    lexical_overlap_judge, InvalidThresholds, LexicalOverlapJudge, SupportJudge, SupportVerdict, TableJudge,
    DEFAULT_THETA_FULL, DEFAULT_THETA_PARTIAL,
};
pub use metrics::{
    citation_precision, citation_recall, em_recall, fever_accuracy, map_fact_label, matched_aspects,
    short_form_accuracy, CitationReport, DanglingCitation, FeverScore, ItemScore, MetricReport,
};
pub use statements::{segment_statements, segment_statements_detailed, Segmentation, Statement};

use crate::pipeline::{PipelineRecord, RecordStatus};
use crate::trajectory::{Document, ModelOutput, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldAnswers {
    Aspects(Vec<Vec<String>>),
    Aliases(Vec<String>),
}

impl GoldAnswers {
    pub fn aspects(&self) -> Vec<Vec<String>> {
        match self {
            GoldAnswers::Aspects(a) => a.clone(),
            GoldAnswers::Aliases(a) => vec![a.clone()],
        }
    }
}

/// One line of a gold file: `{question_id, gold_answers}` or
/// `{question_id, class}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<GoldAnswers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold line {line}: {message}")]
    GoldParse { line: usize, message: String },
    #[error("results line {line}: {message}")]
    ResultsParse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_gold<R: BufRead>(reader: R) -> Result<HashMap<String, GoldEntry>, EvalError> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: GoldEntry = serde_json::from_str(&line)
            .map_err(|err| EvalError::GoldParse { line: i + 1, message: err.to_string() })?;
        if e.gold_answers.is_none() && e.class.is_none() {
            return Err(EvalError::GoldParse { line: i + 1, message: "needs gold_answers or class".into() });
        }
        out.insert(e.question_id.clone(), e);
    }
    Ok(out)
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<PipelineRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|err| EvalError::ResultsParse { line: i + 1, message: err.to_string() })?,
        );
    }
    Ok(out)
}

/// Metric reports for one task plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task: TaskKind,
    pub n: usize,
    pub metrics: BTreeMap<String, MetricReport>,
    /// Records whose question has no gold entry; they are not scored.
    pub missing_gold: Vec<String>,
    /// Records that did not parse or failed; they score 0.
    pub not_ok: usize,
    pub unmappable_predictions: usize,
    pub dangling_citations: usize,
    pub unparseable_markers: usize,
}

impl EvalSummary {
    pub fn aggregates(&self) -> BTreeMap<String, f64> {
        self.metrics.iter().map(|(k, v)| (k.clone(), v.aggregate)).collect()
    }
}

pub fn metric_names(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::ShortQa => &["accuracy"],
        TaskKind::LongQa => &["em_recall", "citation_recall", "citation_precision"],
        TaskKind::FactVerification => &["accuracy"],
    }
}

/// Per-item scores of one generated output under `task`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEval {
    pub values: Vec<(&'static str, f64)>,
    pub unmappable: bool,
    pub dangling: usize,
    pub unparseable_markers: usize,
}

pub fn score_output(
    task: TaskKind,
    output: Option<&ModelOutput>,
    docs: &[Document],
    gold: &[Vec<String>],
    judge: &dyn SupportJudge,
) -> ItemEval {
    let mut item = ItemEval { values: Vec::new(), unmappable: false, dangling: 0, unparseable_markers: 0 };
    match task {
        TaskKind::ShortQa => {
            let v = output.map_or(0.0, |o| short_form_accuracy(&o.final_answer, gold));
            item.values.push(("accuracy", v));
        }
        TaskKind::FactVerification => {
            let label = gold.first().and_then(|s| s.first()).and_then(|s| map_fact_label(s));
            let v = match (output, label) {
                (Some(o), Some(l)) => {
                    let s = fever_accuracy(&o.final_answer, l);
                    item.unmappable = s.unmappable;
                    s.value
                }
                _ => 0.0,
            };
            item.values.push(("accuracy", v));
        }
        TaskKind::LongQa => match output {
            Some(o) => {
                let seg = segment_statements_detailed(&o.trajectory.tap.analysis);
                let recall = citation_recall(&seg.statements, docs, judge);
                let precision = citation_precision(&seg.statements, docs, judge);
                item.dangling = recall.dangling.len();
                item.unparseable_markers = seg.unparseable_markers;
                item.values.push(("em_recall", em_recall(&o.trajectory.tap.analysis, gold)));
                item.values.push(("citation_recall", recall.report.aggregate));
                item.values.push(("citation_precision", precision.report.aggregate));
            }
            None => {
                for m in metric_names(task) {
                    item.values.push((m, 0.0));
                }
            }
        },
    }
    item
}

fn gold_aspects(entry: &GoldEntry) -> Vec<Vec<String>> {
    match (&entry.gold_answers, &entry.class) {
        (Some(g), _) => g.aspects(),
        (None, Some(c)) => vec![vec![c.clone()]],
        (None, None) => Vec::new(),
    }
}

/// Score pipeline records against a gold map. Long-form citation scores
/// are per-record means, then averaged across records.
pub fn evaluate_results(
    records: &[PipelineRecord],
    gold: &HashMap<String, GoldEntry>,
    task: TaskKind,
    judge: &dyn SupportJudge,
) -> EvalSummary {
    let mut per_metric: BTreeMap<&str, Vec<ItemScore>> =
        metric_names(task).iter().map(|m| (*m, Vec::new())).collect();
    let mut summary = EvalSummary {
        task,
        n: 0,
        metrics: BTreeMap::new(),
        missing_gold: Vec::new(),
        not_ok: 0,
        unmappable_predictions: 0,
        dangling_citations: 0,
        unparseable_markers: 0,
    };
    for r in records {
        let Some(entry) = gold.get(&r.question_id) else {
            summary.missing_gold.push(r.question_id.clone());
            continue;
        };
        let aspects = gold_aspects(entry);
        if task == TaskKind::FactVerification
            && aspects.first().and_then(|s| s.first()).and_then(|s| map_fact_label(s)).is_none()
        {
            log::warn!("gold for {} is not a fact-verification class", r.question_id);
        }
        summary.n += 1;
        let output = match r.status {
            RecordStatus::Ok => r.output.as_ref(),
            _ => {
                summary.not_ok += 1;
                None
            }
        };
        let item = score_output(task, output, &r.retrieval.docs, &aspects, judge);
        summary.unmappable_predictions += item.unmappable as usize;
        summary.dangling_citations += item.dangling;
        summary.unparseable_markers += item.unparseable_markers;
        for (name, value) in item.values {
            per_metric
                .get_mut(name)
                .expect("metric registered for task")
                .push(ItemScore { id: r.question_id.clone(), value });
        }
    }
    summary.metrics = per_metric
        .into_iter()
        .map(|(name, items)| (name.to_owned(), MetricReport::from_items(name, items)))
        .collect();
    summary
}

//! Quality control of teacher-generated records.
//!
//! For each record: the answer gate runs first and drops incorrect answers.
//! Correct long-form records additionally need citation recall >= δ_r and
//! citation precision >= δ_p to be kept. Correct short-form and
//! fact-verification records are kept directly. The output preserves input
//! order. Polarity plays no role, so an uncited long-form negative fails the
//! citation gate.

use serde::{Deserialize, Serialize};

use super::{CandidateRecord, Polarity};
use crate::eval::{
    citation_precision, citation_recall, fever_accuracy, map_fact_label, matched_aspects, segment_statements,
    short_form_accuracy, SupportJudge,
};
use crate::trajectory::{Document, Question, SelfReasoningTrajectory, TaskKind};

pub const DEFAULT_DELTA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcThresholds {
    pub delta_p: f64,
    pub delta_r: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        QcThresholds { delta_p: DEFAULT_DELTA, delta_r: DEFAULT_DELTA }
    }
}

/// Decides whether a record's answer is correct.
pub trait AnswerChecker: Send + Sync {
    fn is_correct(&self, question: &Question, trajectory: &SelfReasoningTrajectory) -> bool;
}

/// Binds answer correctness to each task's own metric: containment for
/// short QA, exact class for fact verification, and at least
/// `long_form_floor` matched gold aspects in the analysis for long QA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAnswerChecker {
    pub long_form_floor: usize,
}

impl Default for TaskAnswerChecker {
    fn default() -> Self {
        TaskAnswerChecker { long_form_floor: 1 }
    }
}

impl AnswerChecker for TaskAnswerChecker {
    fn is_correct(&self, q: &Question, t: &SelfReasoningTrajectory) -> bool {
        match q.task_kind {
            TaskKind::ShortQa => short_form_accuracy(&t.tap.answer, &q.gold_answers) == 1.0,
            TaskKind::FactVerification => {
                let gold = q.gold_answers.first().and_then(|s| s.first()).and_then(|s| map_fact_label(s));
                gold.is_some_and(|g| fever_accuracy(&t.tap.answer, g).value == 1.0)
            }
            TaskKind::LongQa => {
                !q.gold_answers.is_empty()
                    && matched_aspects(&t.tap.analysis, &q.gold_answers) >= self.long_form_floor.max(1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcScores {
    pub answer_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citation_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citation_precision: Option<f64>,
}

/// A kept record of the filtered dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsrRecord {
    pub question: Question,
    /// Presentation order as shown to the teacher.
    pub docs: Vec<Document>,
    pub trajectory: SelfReasoningTrajectory,
    pub polarity: Polarity,
    pub qc_scores: QcScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcDecision {
    pub index: usize,
    pub question_id: String,
    pub kept: bool,
    /// `incorrect_answer`, `citation_recall`, `citation_precision`,
    /// `citation_recall+precision`, or `kept_long_form` / `kept`.
    pub reason: String,
    pub scores: QcScores,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub total: usize,
    pub kept: usize,
    pub kept_long_form: usize,
    pub kept_other: usize,
    pub dropped_incorrect: usize,
    /// Correct long-form records failing either citation threshold.
    pub dropped_citation: usize,
    pub below_recall: usize,
    pub below_precision: usize,
    pub polarity_mismatch_seen: usize,
    pub delta_p: f64,
    pub delta_r: f64,
    pub decisions: Vec<QcDecision>,
}

pub fn qc_filter(
    records: &[CandidateRecord],
    thresholds: QcThresholds,
    judge: &dyn SupportJudge,
    checker: &dyn AnswerChecker,
) -> (Vec<DsrRecord>, QcReport) {
    let mut report = QcReport {
        total: records.len(),
        delta_p: thresholds.delta_p,
        delta_r: thresholds.delta_r,
        ..QcReport::default()
    };
    let mut kept = Vec::new();
    for (index, rec) in records.iter().enumerate() {
        let q = &rec.sample.question;
        report.polarity_mismatch_seen += rec.polarity_mismatch as usize;
        let mut scores = QcScores { answer_correct: checker.is_correct(q, &rec.trajectory), citation_recall: None, citation_precision: None };
        let reason = if !scores.answer_correct {
            report.dropped_incorrect += 1;
            "incorrect_answer"
        } else if q.task_kind == TaskKind::LongQa {
            let statements = segment_statements(&rec.trajectory.tap.analysis);
            let s_r = citation_recall(&statements, &rec.sample.docs, judge).report.aggregate;
            let s_p = citation_precision(&statements, &rec.sample.docs, judge).report.aggregate;
            scores.citation_recall = Some(s_r);
            scores.citation_precision = Some(s_p);
            let recall_ok = s_r >= thresholds.delta_r;
            let precision_ok = s_p >= thresholds.delta_p;
            report.below_recall += !recall_ok as usize;
            report.below_precision += !precision_ok as usize;
            match (recall_ok, precision_ok) {
                (true, true) => {
                    report.kept_long_form += 1;
                    "kept_long_form"
                }
                (false, true) => "citation_recall",
                (true, false) => "citation_precision",
                (false, false) => "citation_recall+precision",
            }
        } else {
            report.kept_other += 1;
            "kept"
        };
        let is_kept = reason.starts_with("kept");
        if !is_kept && scores.answer_correct {
            report.dropped_citation += 1;
        }
        if is_kept {
            kept.push(DsrRecord {
                question: q.clone(),
                docs: rec.sample.docs.clone(),
                trajectory: rec.trajectory.clone(),
                polarity: rec.sample.polarity,
                qc_scores: scores,
            });
        }
        report.decisions.push(QcDecision {
            index,
            question_id: q.id.clone(),
            kept: is_kept,
            reason: reason.to_owned(),
            scores,
        });
    }
    report.kept = kept.len();
    (kept, report)
}

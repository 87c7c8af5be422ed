//! Self-reasoning trajectories and the records they are generated against.
//!
//! A trajectory is the relevance judgment, the evidence list and the
//! analysis, always in that order. Its canonical wire form is a flat JSON
//! object:
//!
//! ```text
//! {"relevant":true,"relevant_reason":"...","evidence":[{"cite_content":"...",
//!  "reason_for_cite":"...","doc_index":1}],"analysis":"...","answer":"..."}
//! ```

mod grounding;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grounding::{validate_evidence_grounding, GroundingItem, GroundingReport};
pub use parse::{extract_object, parse_trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ShortQa,
    LongQa,
    FactVerification,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ShortQa => "short_qa",
            TaskKind::LongQa => "long_qa",
            TaskKind::FactVerification => "fact_verification",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short_qa" => Ok(TaskKind::ShortQa),
            "long_qa" => Ok(TaskKind::LongQa),
            "fact_verification" => Ok(TaskKind::FactVerification),
            other => Err(format!(
                "unknown task kind `{other}` (expected short_qa, long_qa or fact_verification)"
            )),
        }
    }
}

/// The three fact-verification classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactLabel {
    Supported,
    Refuted,
    NotEnoughInfo,
}

impl FactLabel {
    pub const ALL: [FactLabel; 3] = [FactLabel::Supported, FactLabel::Refuted, FactLabel::NotEnoughInfo];

    pub fn as_str(self) -> &'static str {
        match self {
            FactLabel::Supported => "Supported",
            FactLabel::Refuted => "Refuted",
            FactLabel::NotEnoughInfo => "NotEnoughInfo",
        }
    }

    /// Exact class name, as required of a well-formed answer field.
    pub fn from_exact(s: &str) -> Option<FactLabel> {
        FactLabel::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for FactLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    /// One alias set per required answer aspect. For fact verification this
    /// holds a single set containing the class label.
    #[serde(default)]
    pub gold_answers: Vec<Vec<String>>,
    pub task_kind: TaskKind,
}

impl Question {
    /// Gold class for fact-verification questions.
    pub fn gold_label(&self) -> Option<FactLabel> {
        self.gold_answers
            .first()
            .and_then(|set| set.first())
            .and_then(|s| FactLabel::from_exact(s))
    }
}

/// A retrieved text unit. `rank` and `score` are the retrieval rank and
/// score; the position in a presented list may differ after perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(alias = "text")]
    pub body: String,
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgment {
    pub relevant: bool,
    pub relevant_reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub cite_content: String,
    pub reason_for_cite: String,
    /// 1-based position in the presented document list.
    pub doc_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    /// Long-form answer, possibly carrying `[n]` citation markers.
    pub analysis: String,
    /// Short-form answer or fact-verification class.
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "WireTrajectory", try_from = "WireTrajectory")]
pub struct SelfReasoningTrajectory {
    pub rap: RelevanceJudgment,
    pub eap: Vec<EvidenceItem>,
    pub tap: Analysis,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("answer mismatch: trajectory answers {expected:?} but final answer is {actual:?}")]
    AnswerMismatch { expected: String, actual: String },
}

impl SelfReasoningTrajectory {
    pub fn new(
        rap: RelevanceJudgment,
        eap: Vec<EvidenceItem>,
        tap: Analysis,
    ) -> Result<Self, TrajectoryError> {
        let t = SelfReasoningTrajectory { rap, eap, tap };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let violation = |m: &str| Err(TrajectoryError::SchemaViolation(m.to_owned()));
        if self.rap.relevant_reason.trim().is_empty() {
            return violation("relevant_reason is empty");
        }
        if !self.rap.relevant && !self.eap.is_empty() {
            return violation("evidence must be empty when relevant is false");
        }
        for (i, item) in self.eap.iter().enumerate() {
            if item.cite_content.trim().is_empty() {
                return Err(TrajectoryError::SchemaViolation(format!(
                    "evidence[{i}].cite_content is empty"
                )));
            }
            if item.doc_index == 0 {
                return Err(TrajectoryError::SchemaViolation(format!(
                    "evidence[{i}].doc_index must be >= 1"
                )));
            }
        }
        if self.tap.answer.trim().is_empty() {
            return violation("answer is empty");
        }
        Ok(())
    }

    /// Task-specific checks on top of [`validate`](Self::validate): fact
    /// verification answers must be one of the three class names.
    pub fn validate_for_task(&self, kind: TaskKind) -> Result<(), TrajectoryError> {
        self.validate()?;
        if kind == TaskKind::FactVerification && FactLabel::from_exact(&self.tap.answer).is_none() {
            return Err(TrajectoryError::SchemaViolation(format!(
                "fact verification answer {:?} is not one of Supported, Refuted, NotEnoughInfo",
                self.tap.answer
            )));
        }
        Ok(())
    }

    /// Whether the model fell back on internal knowledge.
    pub fn is_internal_knowledge(&self) -> bool {
        !self.rap.relevant
    }
}

/// Canonical serialization: compact JSON, fixed field order, no trailing
/// newline. Equal trajectories always yield identical bytes.
pub fn serialize_trajectory(t: &SelfReasoningTrajectory) -> String {
    serde_json::to_string(&WireTrajectory::from(t.clone()))
        .expect("trajectory serialization is infallible")
}

/// Trajectory plus the short answer, generated in the same pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub trajectory: SelfReasoningTrajectory,
    pub final_answer: String,
}

pub fn concat_output(
    t: SelfReasoningTrajectory,
    short_answer: &str,
) -> Result<ModelOutput, TrajectoryError> {
    if t.tap.answer != short_answer {
        return Err(TrajectoryError::AnswerMismatch {
            expected: t.tap.answer.clone(),
            actual: short_answer.to_owned(),
        });
    }
    Ok(ModelOutput { final_answer: short_answer.to_owned(), trajectory: t })
}

impl ModelOutput {
    pub fn from_trajectory(t: SelfReasoningTrajectory) -> ModelOutput {
        let answer = t.tap.answer.clone();
        ModelOutput { trajectory: t, final_answer: answer }
    }
}

#[derive(Serialize, Deserialize)]
struct WireTrajectory {
    relevant: bool,
    relevant_reason: String,
    evidence: Vec<EvidenceItem>,
    analysis: String,
    answer: String,
}

impl From<SelfReasoningTrajectory> for WireTrajectory {
    fn from(t: SelfReasoningTrajectory) -> Self {
        WireTrajectory {
            relevant: t.rap.relevant,
            relevant_reason: t.rap.relevant_reason,
            evidence: t.eap,
            analysis: t.tap.analysis,
            answer: t.tap.answer,
        }
    }
}

impl TryFrom<WireTrajectory> for SelfReasoningTrajectory {
    type Error = TrajectoryError;

    fn try_from(w: WireTrajectory) -> Result<Self, Self::Error> {
        SelfReasoningTrajectory::new(
            RelevanceJudgment { relevant: w.relevant, relevant_reason: w.relevant_reason },
            w.evidence,
            Analysis { analysis: w.analysis, answer: w.answer },
        )
    }
}

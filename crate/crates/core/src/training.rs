//! Stage-wise masked training records and the stage schedule.
//!
//! Targets are the canonical trajectory serialization followed by
//! `"\nFinal answer: "` and the answer. Segments and masks are half-open
//! character (Unicode scalar) spans over `target_text`. Consumers compute
//! the likelihood only over unmasked target spans; `prompt_text` never
//! contributes loss.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::DsrRecord;
use crate::gateway::build_inference_prompt;
use crate::trajectory::{serialize_trajectory, SelfReasoningTrajectory};

pub const FINAL_ANSWER_PREFIX: &str = "\nFinal answer: ";
pub const STAGES: [u8; 3] = [1, 2, 3];
pub const DEFAULT_LEARNING_RATES: [f64; 3] = [5e-5, 3e-5, 1e-5];
pub const DEFAULT_EPOCHS: u32 = 3;
pub const DEFAULT_BATCH_SIZE: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLabel {
    Rap,
    Eap,
    Tap,
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: SegmentLabel,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("segmentation failed for {question_id}: {reason}")]
    SegmentationFailure { question_id: String, reason: String },
    #[error("stage must be 1, 2 or 3, got {0}")]
    InvalidStage(u8),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Labels excluded from the loss in `stage`. The answer is never masked.
pub fn stage_mask(stage: u8) -> Result<&'static [SegmentLabel], TrainingError> {
    match stage {
        1 => Ok(&[SegmentLabel::Eap, SegmentLabel::Tap]),
        2 => Ok(&[SegmentLabel::Tap]),
        3 => Ok(&[]),
        s => Err(TrainingError::InvalidStage(s)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMask {
    pub stage: u8,
    pub labels: Vec<SegmentLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub question_id: String,
    pub prompt_text: String,
    pub target_text: String,
    pub segments: Vec<Segment>,
    pub stage_masks: Vec<StageMask>,
}

/// One line of a stage's masked-record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedRecord {
    pub question_id: String,
    pub stage: u8,
    pub prompt_text: String,
    pub target_text: String,
    pub segments: Vec<Segment>,
    pub masked_labels: Vec<SegmentLabel>,
    pub masked_spans: Vec<Span>,
}

fn json(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Target text pieces in label order. Their concatenation must equal the
/// canonical serialization plus the final-answer suffix.
fn target_pieces(t: &SelfReasoningTrajectory) -> [(SegmentLabel, String); 4] {
    let evidence = serde_json::to_string(&t.eap).expect("evidence serialization is infallible");
    [
        (
            SegmentLabel::Rap,
            format!("{{\"relevant\":{},\"relevant_reason\":{},", t.rap.relevant, json(&t.rap.relevant_reason)),
        ),
        (SegmentLabel::Eap, format!("\"evidence\":{evidence},")),
        (SegmentLabel::Tap, format!("\"analysis\":{},\"answer\":{}}}", json(&t.tap.analysis), json(&t.tap.answer))),
        (SegmentLabel::Answer, format!("{FINAL_ANSWER_PREFIX}{}", t.tap.answer)),
    ]
}

/// Target text and its segments for one trajectory.
pub fn segment_target(t: &SelfReasoningTrajectory) -> Result<(String, Vec<Segment>), String> {
    let pieces = target_pieces(t);
    let mut target = String::new();
    let mut segments = Vec::with_capacity(4);
    let mut offset = 0;
    for (label, text) in &pieces {
        let len = text.chars().count();
        segments.push(Segment { label: *label, start: offset, end: offset + len });
        offset += len;
        target.push_str(text);
    }
    let expected = format!("{}{FINAL_ANSWER_PREFIX}{}", serialize_trajectory(t), t.tap.answer);
    if target != expected {
        return Err("segment pieces do not reproduce the canonical serialization".into());
    }
    Ok((target, segments))
}

pub fn training_record(r: &DsrRecord) -> Result<TrainingRecord, TrainingError> {
    let (target_text, segments) = segment_target(&r.trajectory).map_err(|reason| {
        TrainingError::SegmentationFailure { question_id: r.question.id.clone(), reason }
    })?;
    let (system, user) = build_inference_prompt(&r.question, &r.docs);
    Ok(TrainingRecord {
        question_id: r.question.id.clone(),
        prompt_text: format!("{system}\n\n{user}"),
        target_text,
        segments,
        stage_masks: STAGES
            .iter()
            .map(|&s| StageMask { stage: s, labels: stage_mask(s).expect("known stage").to_vec() })
            .collect(),
    })
}

impl TrainingRecord {
    pub fn for_stage(&self, stage: u8) -> Result<MaskedRecord, TrainingError> {
        let masked = stage_mask(stage)?;
        Ok(MaskedRecord {
            question_id: self.question_id.clone(),
            stage,
            prompt_text: self.prompt_text.clone(),
            target_text: self.target_text.clone(),
            segments: self.segments.clone(),
            masked_labels: masked.to_vec(),
            masked_spans: self
                .segments
                .iter()
                .filter(|s| masked.contains(&s.label))
                .map(|s| Span { start: s.start, end: s.end })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub question_id: String,
    pub reason: String,
}

/// Masked records for `stage`, in dataset order. Records whose segments
/// cannot be recovered are dropped and reported.
pub fn build_stage_records(
    dataset: &[DsrRecord],
    stage: u8,
) -> Result<(Vec<MaskedRecord>, Vec<DroppedRecord>), TrainingError> {
    stage_mask(stage)?;
    let mut out = Vec::with_capacity(dataset.len());
    let mut dropped = Vec::new();
    for r in dataset {
        match training_record(r) {
            Ok(t) => out.push(t.for_stage(stage)?),
            Err(TrainingError::SegmentationFailure { question_id, reason }) => {
                log::warn!("dropping {question_id}: {reason}");
                dropped.push(DroppedRecord { question_id, reason });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, dropped))
}

pub fn write_masked_records<W: Write>(records: &[MaskedRecord], mut out: W) -> Result<(), TrainingError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_masked_records<R: BufRead>(reader: R) -> Result<Vec<MaskedRecord>, TrainingError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub stage: u8,
    pub records_file: String,
    pub lr: f64,
    pub epochs: u32,
    pub batch_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stages: Vec<ScheduleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub stages: Vec<u8>,
    pub learning_rates: Vec<f64>,
    pub epochs: u32,
    pub batch_size: u32,
    /// Defaults to `stage{n}.jsonl` per stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records_files: Option<Vec<String>>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            stages: STAGES.to_vec(),
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            records_files: None,
        }
    }
}

pub fn default_records_file(stage: u8) -> String {
    format!("stage{stage}.jsonl")
}

impl StageSchedule {
    /// Learning rates positive and non-increasing, stages strictly
    /// increasing within 1..=3.
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::InvalidSchedule(m));
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        for (i, e) in self.stages.iter().enumerate() {
            stage_mask(e.stage)?;
            if !(e.lr.is_finite() && e.lr > 0.0) {
                return bad(format!("stage {} learning rate {} is not positive", e.stage, e.lr));
            }
            if e.epochs == 0 || e.batch_size == 0 {
                return bad(format!("stage {} needs positive epochs and batch size", e.stage));
            }
            if let Some(prev) = i.checked_sub(1).map(|j| &self.stages[j]) {
                if e.stage <= prev.stage {
                    return bad(format!("stage {} follows stage {}", e.stage, prev.stage));
                }
                if e.lr > prev.lr {
                    return bad(format!("learning rate increases at stage {}", e.stage));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serialization is infallible") + "\n"
    }

    pub fn load(text: &str) -> Result<StageSchedule, TrainingError> {
        let s: StageSchedule = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

pub fn emit_schedule(cfg: &ScheduleConfig) -> Result<StageSchedule, TrainingError> {
    if cfg.learning_rates.len() != cfg.stages.len() {
        return Err(TrainingError::InvalidSchedule(format!(
            "{} stages but {} learning rates",
            cfg.stages.len(),
            cfg.learning_rates.len()
        )));
    }
    if let Some(files) = &cfg.records_files {
        if files.len() != cfg.stages.len() {
            return Err(TrainingError::InvalidSchedule(format!(
                "{} stages but {} records files",
                cfg.stages.len(),
                files.len()
            )));
        }
    }
    let schedule = StageSchedule {
        stages: cfg
            .stages
            .iter()
            .zip(&cfg.learning_rates)
            .enumerate()
            .map(|(i, (&stage, &lr))| ScheduleEntry {
                stage,
                records_file: cfg
                    .records_files
                    .as_ref()
                    .map_or_else(|| default_records_file(stage), |f| f[i].clone()),
                lr,
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
            })
            .collect(),
    };
    schedule.validate()?;
    Ok(schedule)
}

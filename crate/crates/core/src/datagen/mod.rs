//! Training-data synthesis: positive and negative samples, teacher
//! trajectory generation, and quality control.

mod qc;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use qc::{
    qc_filter, AnswerChecker, DsrRecord, QcDecision, QcReport, QcScores, QcThresholds, TaskAnswerChecker,
    DEFAULT_DELTA,
};

use crate::gateway::{self, build_datagen_prompt, Backend, GatewayError, GenerationRequest};
use crate::pipeline::parallel_map;
use crate::retrieval::{RetrievalError, Retriever};
use crate::seed::{derive_seed, rng};
use crate::trajectory::{parse_trajectory, Document, Question, SelfReasoningTrajectory, TrajectoryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A question paired with a presented document list. Negative samples carry
/// documents retrieved for a different question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSample {
    pub question: Question,
    /// Presentation order; `rank` keeps the original retrieval rank.
    pub docs: Vec<Document>,
    pub polarity: Polarity,
    pub source_question_id: String,
    pub shuffle_seed: u64,
}

impl CandidateSample {
    pub fn check_polarity(&self) -> bool {
        match self.polarity {
            Polarity::Positive => self.source_question_id == self.question.id,
            Polarity::Negative => self.source_question_id != self.question.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub sample: CandidateSample,
    pub trajectory: SelfReasoningTrajectory,
    pub raw_teacher_output: String,
    /// Negative sample whose trajectory still claims relevance.
    #[serde(default)]
    pub polarity_mismatch: bool,
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("pool needs at least one question other than `{0}`")]
    PoolTooSmall(String),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("teacher failed: {0}")]
    TeacherFailed(GatewayError),
    #[error("unparseable teacher output: {0}")]
    UnparseableTeacherOutput(TrajectoryError),
}

fn shuffled(mut docs: Vec<Document>, rng: &mut impl Rng) -> Vec<Document> {
    docs.shuffle(rng);
    docs
}

/// Retrieve top-k for `q` and shuffle the presentation order with `rng_seed`.
pub fn make_positive_sample(
    q: &Question,
    retriever: &dyn Retriever,
    k: usize,
    rng_seed: u64,
) -> Result<CandidateSample, DatagenError> {
    let r = retriever.retrieve(&q.id, &q.text, k)?;
    let mut rng = rng(rng_seed);
    Ok(CandidateSample {
        question: q.clone(),
        docs: shuffled(r.docs, &mut rng),
        polarity: Polarity::Positive,
        source_question_id: q.id.clone(),
        shuffle_seed: rng_seed,
    })
}

/// Pair `q` with the shuffled top-k documents of a uniformly chosen other
/// question from `pool`.
pub fn make_negative_sample(
    q: &Question,
    pool: &[Question],
    retriever: &dyn Retriever,
    k: usize,
    rng_seed: u64,
) -> Result<CandidateSample, DatagenError> {
    let others: Vec<&Question> = pool.iter().filter(|p| p.id != q.id).collect();
    if others.is_empty() {
        return Err(DatagenError::PoolTooSmall(q.id.clone()));
    }
    let mut rng = rng(rng_seed);
    let source = others[rng.gen_range(0..others.len())];
    let r = retriever.retrieve(&source.id, &source.text, k)?;
    Ok(CandidateSample {
        question: q.clone(),
        docs: shuffled(r.docs, &mut rng),
        polarity: Polarity::Negative,
        source_question_id: source.id.clone(),
        shuffle_seed: rng_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub k: usize,
    /// Negative samples drawn per question.
    pub negatives_per_question: usize,
    pub master_seed: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub jobs: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            k: crate::retrieval::DEFAULT_K,
            negatives_per_question: 1,
            master_seed: 0,
            temperature: gateway::DEFAULT_TEMPERATURE,
            max_tokens: gateway::DEFAULT_MAX_TOKENS,
            jobs: 1,
        }
    }
}

/// One positive and `negatives_per_question` negatives per question, with
/// per-sample seeds derived from the master seed and sample index.
pub fn build_samples(
    questions: &[Question],
    retriever: &dyn Retriever,
    cfg: &DatagenConfig,
) -> Result<Vec<CandidateSample>, DatagenError> {
    let per_question = 1 + cfg.negatives_per_question;
    let mut samples = Vec::with_capacity(questions.len() * per_question);
    for (qi, q) in questions.iter().enumerate() {
        for j in 0..per_question {
            let seed = derive_seed(cfg.master_seed, (qi * per_question + j) as u64);
            let sample = if j == 0 {
                make_positive_sample(q, retriever, cfg.k, seed)?
            } else {
                make_negative_sample(q, questions, retriever, cfg.k, seed)?
            };
            samples.push(sample);
        }
    }
    Ok(samples)
}

pub fn generate_candidate(
    sample: CandidateSample,
    teacher: &dyn Backend,
    cfg: &DatagenConfig,
) -> Result<CandidateRecord, DatagenError> {
    let (system, user) =
        build_datagen_prompt(&sample.question, &sample.docs, &sample.question.gold_answers, sample.polarity);
    let req = GenerationRequest::new(system, user).with_sampling(
        cfg.temperature,
        cfg.max_tokens,
        Some(sample.shuffle_seed),
    );
    let response = gateway::generate(teacher, &req).map_err(DatagenError::TeacherFailed)?;
    let trajectory = parse_trajectory(&response.text).map_err(DatagenError::UnparseableTeacherOutput)?;
    let polarity_mismatch = sample.polarity == Polarity::Negative && trajectory.rap.relevant;
    Ok(CandidateRecord { sample, trajectory, raw_teacher_output: response.text, polarity_mismatch })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub samples: usize,
    pub generated: usize,
    pub dropped_unparseable: usize,
    pub teacher_failed: usize,
    pub polarity_mismatch: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_polarity: BTreeMap<String, usize>,
}

/// Generate candidates for every sample, dropping teacher failures and
/// unparseable outputs. Output order follows sample order.
pub fn generate_candidates(
    samples: Vec<CandidateSample>,
    teacher: &dyn Backend,
    cfg: &DatagenConfig,
) -> (Vec<CandidateRecord>, GenerationStats) {
    let mut stats = GenerationStats { samples: samples.len(), ..GenerationStats::default() };
    let results = parallel_map(&samples, cfg.jobs, |_, s| generate_candidate(s.clone(), teacher, cfg));
    let mut records = Vec::new();
    for (sample, result) in samples.iter().zip(results) {
        match result {
            Ok(r) => {
                stats.generated += 1;
                stats.polarity_mismatch += r.polarity_mismatch as usize;
                let key = match r.sample.polarity {
                    Polarity::Positive => "positive",
                    Polarity::Negative => "negative",
                };
                *stats.by_polarity.entry(key.into()).or_default() += 1;
                records.push(r);
            }
            Err(DatagenError::UnparseableTeacherOutput(e)) => {
                log::info!("dropping teacher output for {}: {e}", sample.question.id);
                stats.dropped_unparseable += 1;
            }
            Err(e) => {
                log::warn!("teacher failed for {}: {e}", sample.question.id);
                stats.teacher_failed += 1;
            }
        }
    }
    (records, stats)
}

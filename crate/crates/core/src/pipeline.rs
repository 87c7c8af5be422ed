//! Single-pass self-reasoning inference: retrieve, prompt, generate once,
//! parse, emit one record per question.

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{self, build_inference_prompt, Backend, GenerationRequest, FORMAT_REMINDER};
use crate::retrieval::{RetrievalResult, Retriever, DEFAULT_K};
use crate::trajectory::{parse_trajectory, ModelOutput, Question};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// Worker threads for batch runs.
    pub jobs: usize,
    /// Record wall-clock latency per question. Off by default so reruns are
    /// byte-identical.
    pub record_timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: DEFAULT_K,
            temperature: gateway::DEFAULT_TEMPERATURE,
            max_tokens: gateway::DEFAULT_MAX_TOKENS,
            seed: None,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    /// Both parse attempts failed.
    Unparseable,
    /// Retrieval or generation error.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub question_id: String,
    pub status: RecordStatus,
    pub retrieval: RetrievalResult,
    pub output: Option<ModelOutput>,
    /// Verbatim text of the last generation.
    pub raw_generation: String,
    pub generation_calls: u32,
    pub internal_knowledge: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<u64>,
}

pub fn answer_question(
    q: &Question,
    retriever: &dyn Retriever,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
) -> PipelineRecord {
    let started = Instant::now();
    let mut record = match retriever.retrieve(&q.id, &q.text, cfg.k) {
        Ok(retrieval) => answer_with_retrieval(q, retrieval, backend, cfg),
        Err(e) => PipelineRecord {
            question_id: q.id.clone(),
            status: RecordStatus::Failed,
            retrieval: RetrievalResult {
                question_id: q.id.clone(),
                query: q.text.clone(),
                docs: Vec::new(),
                perturbation: None,
            },
            output: None,
            raw_generation: String::new(),
            generation_calls: 0,
            internal_knowledge: false,
            errors: vec![format!("retrieval: {e}")],
            timing_ms: None,
        },
    };
    if cfg.record_timing {
        record.timing_ms = Some(started.elapsed().as_millis() as u64);
    }
    record
}

/// Generate against an already retrieved (possibly perturbed) document list.
/// One backend call on the happy path; one retry with a format reminder when
/// the generation does not parse.
pub fn answer_with_retrieval(
    q: &Question,
    retrieval: RetrievalResult,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
) -> PipelineRecord {
    let started = Instant::now();
    let (system, user) = build_inference_prompt(q, &retrieval.docs);
    let mut record = PipelineRecord {
        question_id: q.id.clone(),
        status: RecordStatus::Failed,
        retrieval,
        output: None,
        raw_generation: String::new(),
        generation_calls: 0,
        internal_knowledge: false,
        errors: Vec::new(),
        timing_ms: None,
    };

    let prompts = [user.clone(), format!("{user}\n\n{FORMAT_REMINDER}")];
    for user_prompt in prompts {
        let req = GenerationRequest::new(system.clone(), user_prompt).with_sampling(
            cfg.temperature,
            cfg.max_tokens,
            cfg.seed,
        );
        record.generation_calls += 1;
        let response = match gateway::generate(backend, &req) {
            Ok(r) => r,
            Err(e) => {
                record.status = RecordStatus::Failed;
                record.errors.push(format!("generation: {e}"));
                break;
            }
        };
        record.raw_generation = response.text;
        match parse_trajectory(&record.raw_generation) {
            Ok(t) => {
                record.internal_knowledge = t.is_internal_knowledge();
                record.output = Some(ModelOutput::from_trajectory(t));
                record.status = RecordStatus::Ok;
                break;
            }
            Err(e) => {
                record.status = RecordStatus::Unparseable;
                record.errors.push(format!("parse: {e}"));
            }
        }
    }
    if cfg.record_timing {
        record.timing_ms = Some(started.elapsed().as_millis() as u64);
    }
    record
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total: usize,
    /// Parsed records, including those answered from internal knowledge.
    pub ok: usize,
    pub internal_knowledge: usize,
    pub unparseable: usize,
    pub failed: usize,
}

impl BatchSummary {
    pub fn from_records(records: &[PipelineRecord]) -> Self {
        let mut s = BatchSummary { total: records.len(), ..BatchSummary::default() };
        for r in records {
            match r.status {
                RecordStatus::Ok => {
                    s.ok += 1;
                    if r.internal_knowledge {
                        s.internal_knowledge += 1;
                    }
                }
                RecordStatus::Unparseable => s.unparseable += 1,
                RecordStatus::Failed => s.failed += 1,
            }
        }
        s
    }
}

/// Run `f` over `items` on `jobs` threads, returning results in input order.
pub(crate) fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
    }
}

pub fn run_records(
    questions: &[Question],
    retriever: &dyn Retriever,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
) -> Vec<PipelineRecord> {
    parallel_map(questions, cfg.jobs, |_, q| answer_question(q, retriever, backend, cfg))
}

/// Answer every question and write one JSONL record per question in input
/// order. Only I/O failures on `out` are fatal.
pub fn run_batch<W: Write>(
    questions: &[Question],
    retriever: &dyn Retriever,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
    mut out: W,
) -> io::Result<BatchSummary> {
    let records = run_records(questions, retriever, backend, cfg);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(BatchSummary::from_records(&records))
}

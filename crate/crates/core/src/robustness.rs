//! Retrieval perturbations and the comparative robustness experiment.
//!
//! Perturbed results keep each document's original `rank` and `score`; the
//! `docs` vector is the presentation order and [`Perturbation`] records what
//! changed. Citation indices always refer to presentation order.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{score_output, ItemScore, MetricReport, SupportJudge};
use crate::gateway::Backend;
use crate::pipeline::{answer_with_retrieval, parallel_map, PipelineConfig, RecordStatus};
use crate::retrieval::{RetrievalResult, Retriever};
use crate::seed::{derive_seed, rng};
use crate::trajectory::Question;

pub const DEFAULT_NOISE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Shuffle,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    /// Zero-based presentation position.
    pub position: usize,
    pub original_doc_id: String,
    pub distractor_id: String,
    pub source_question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub seed: u64,
    /// For a shuffle: the original zero-based position of the document now
    /// shown at each position.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presentation_order: Vec<usize>,
    /// For noise: replaced zero-based positions, ascending.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replaced_positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replacements: Vec<Replacement>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustnessError {
    #[error("need {needed} distractor documents, only {available} available")]
    InsufficientDistractors { needed: usize, available: usize },
    #[error("noise fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
}

/// Permute presentation order uniformly at random.
pub fn shuffle_docs(r: &RetrievalResult, seed: u64) -> RetrievalResult {
    let mut order: Vec<usize> = (0..r.docs.len()).collect();
    order.shuffle(&mut rng(seed));
    RetrievalResult {
        question_id: r.question_id.clone(),
        query: r.query.clone(),
        docs: order.iter().map(|&i| r.docs[i].clone()).collect(),
        perturbation: Some(Perturbation {
            kind: PerturbationKind::Shuffle,
            seed,
            presentation_order: order,
            replaced_positions: Vec::new(),
            replacements: Vec::new(),
        }),
    }
}

/// Number of positions replaced for `fraction` of `n` documents, rounding
/// half up.
pub fn replacement_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 0.5).floor() as usize
}

/// Replace `replacement_count(fraction, len)` uniformly chosen positions by
/// distinct documents drawn without replacement from other questions'
/// results in `pool`. Candidates already present in `r` are excluded.
pub fn inject_noise(
    r: &RetrievalResult,
    pool: &[RetrievalResult],
    fraction: f64,
    seed: u64,
) -> Result<RetrievalResult, RobustnessError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(RobustnessError::InvalidFraction(fraction));
    }
    let n = r.docs.len();
    let m = replacement_count(fraction, n);
    let present: HashSet<&str> = r.docs.iter().map(|d| d.id.as_str()).collect();
    let mut seen = HashSet::new();
    let candidates: Vec<_> = pool
        .iter()
        .filter(|p| p.question_id != r.question_id)
        .flat_map(|p| p.docs.iter().map(move |d| (p.question_id.as_str(), d)))
        .filter(|(_, d)| !present.contains(d.id.as_str()) && seen.insert(d.id.as_str()))
        .collect();
    if candidates.len() < m {
        return Err(RobustnessError::InsufficientDistractors { needed: m, available: candidates.len() });
    }
    let mut g = rng(seed);
    let mut positions = index::sample(&mut g, n, m).into_vec();
    positions.sort_unstable();
    let picks = index::sample(&mut g, candidates.len(), m).into_vec();

    let mut docs = r.docs.clone();
    let mut replacements = Vec::with_capacity(m);
    for (&pos, &pick) in positions.iter().zip(&picks) {
        let (source, distractor) = candidates[pick];
        replacements.push(Replacement {
            position: pos,
            original_doc_id: docs[pos].id.clone(),
            distractor_id: distractor.id.clone(),
            source_question: source.to_owned(),
        });
        docs[pos] = distractor.clone();
    }
    Ok(RetrievalResult {
        question_id: r.question_id.clone(),
        query: r.query.clone(),
        docs,
        perturbation: Some(Perturbation {
            kind: PerturbationKind::Noise,
            seed,
            presentation_order: Vec::new(),
            replaced_positions: positions,
            replacements,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Baseline,
    Shuffled,
    Noisy,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Baseline => "baseline",
            Setting::Shuffled => "shuffled",
            Setting::Noisy => "noisy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub settings: Vec<Setting>,
    pub seeds: Vec<u64>,
    pub fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            settings: vec![Setting::Baseline, Setting::Shuffled, Setting::Noisy],
            seeds: vec![0],
            fraction: DEFAULT_NOISE_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub setting: Setting,
    pub seed: u64,
    pub question_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingRow {
    pub setting: Setting,
    /// Scored (question, seed) pairs.
    pub n: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Metric minus the baseline metric. Empty when no baseline row exists.
    pub deltas: BTreeMap<String, f64>,
    pub not_ok: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub seeds: Vec<u64>,
    pub fraction: f64,
    pub rows: Vec<SettingRow>,
    pub failures: Vec<QuestionFailure>,
}

impl RobustnessTable {
    pub fn row(&self, setting: Setting) -> Option<&SettingRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    /// Aligned plain-text rendering: one row per setting, one column per
    /// metric followed by its delta.
    pub fn to_text(&self) -> String {
        let metrics: Vec<&String> = self.rows.first().map(|r| r.metrics.keys().collect()).unwrap_or_default();
        let mut header = vec!["setting".to_owned(), "n".to_owned()];
        for m in &metrics {
            header.push((*m).clone());
            header.push(format!("Δ{m}"));
        }
        let mut lines = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.setting.to_string(), row.n.to_string()];
            for m in &metrics {
                cells.push(row.metrics.get(*m).map_or("-".into(), |v| format!("{v:.4}")));
                cells.push(row.deltas.get(*m).map_or("-".into(), |v| format!("{v:+.4}")));
            }
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let padded: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        }
        out
    }
}

/// Retrieve once per question, then answer every question under every
/// setting and seed. The unperturbed results double as the distractor pool.
/// Per-question failures are listed in the table and excluded from its
/// metrics. Generation uses the run seed as the sampling seed in every
/// setting.
pub fn run_robustness_experiment(
    questions: &[Question],
    retriever: &dyn Retriever,
    backend: &dyn Backend,
    judge: &dyn SupportJudge,
    cfg: &ExperimentConfig,
    pipeline: &PipelineConfig,
) -> RobustnessTable {
    let retrieved: Vec<Result<RetrievalResult, String>> = parallel_map(questions, pipeline.jobs, |_, q| {
        retriever.retrieve(&q.id, &q.text, pipeline.k).map_err(|e| format!("retrieval: {e}"))
    });
    let pool: Vec<RetrievalResult> = retrieved.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();

    let mut jobs = Vec::new();
    for &setting in &cfg.settings {
        for &seed in &cfg.seeds {
            for qi in 0..questions.len() {
                jobs.push((setting, seed, qi));
            }
        }
    }

    enum Outcome {
        Scored { values: Vec<(&'static str, f64)>, ok: bool },
        Failed(String),
    }

    let outcomes = parallel_map(&jobs, pipeline.jobs, |_, &(setting, seed, qi)| {
        let q = &questions[qi];
        let base = match &retrieved[qi] {
            Ok(r) => r,
            Err(e) => return Outcome::Failed(e.clone()),
        };
        let qseed = derive_seed(seed, qi as u64);
        let presented = match setting {
            Setting::Baseline => base.clone(),
            Setting::Shuffled => shuffle_docs(base, qseed),
            Setting::Noisy => match inject_noise(base, &pool, cfg.fraction, qseed) {
                Ok(r) => r,
                Err(e) => return Outcome::Failed(format!("noise: {e}")),
            },
        };
        let run_cfg = PipelineConfig { seed: Some(seed), record_timing: false, ..pipeline.clone() };
        let record = answer_with_retrieval(q, presented, backend, &run_cfg);
        let ok = record.status == RecordStatus::Ok;
        let output = if ok { record.output.as_ref() } else { None };
        let item = score_output(q.task_kind, output, &record.retrieval.docs, &q.gold_answers, judge);
        Outcome::Scored { values: item.values, ok }
    });

    let mut failures = Vec::new();
    let mut rows: Vec<SettingRow> = Vec::new();
    for &setting in &cfg.settings {
        let mut per_metric: BTreeMap<&str, Vec<ItemScore>> = BTreeMap::new();
        let mut row = SettingRow {
            setting,
            n: 0,
            metrics: BTreeMap::new(),
            deltas: BTreeMap::new(),
            not_ok: 0,
            failed: 0,
        };
        for (&(s, seed, qi), outcome) in jobs.iter().zip(&outcomes) {
            if s != setting {
                continue;
            }
            let qid = &questions[qi].id;
            match outcome {
                Outcome::Scored { values, ok } => {
                    row.n += 1;
                    row.not_ok += !ok as usize;
                    for (name, value) in values {
                        per_metric.entry(name).or_default().push(ItemScore { id: format!("{qid}@{seed}"), value: *value });
                    }
                }
                Outcome::Failed(error) => {
                    row.failed += 1;
                    failures.push(QuestionFailure { setting, seed, question_id: qid.clone(), error: error.clone() });
                }
            }
        }
        row.metrics = per_metric
            .into_iter()
            .map(|(name, items)| (name.to_owned(), MetricReport::from_items(name, items).aggregate))
            .collect();
        if !rows.iter().any(|r| r.setting == setting) {
            rows.push(row);
        }
    }
    if let Some(base) = rows.iter().find(|r| r.setting == Setting::Baseline).map(|r| r.metrics.clone()) {
        for row in &mut rows {
            row.deltas = row
                .metrics
                .iter()
                .filter_map(|(m, v)| base.get(m).map(|b| (m.clone(), v - b)))
                .collect();
        }
    }
    RobustnessTable { seeds: cfg.seeds.clone(), fraction: cfg.fraction, rows, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Document;

    fn result(qid: &str, ids: &[&str]) -> RetrievalResult {
        RetrievalResult {
            question_id: qid.into(),
            query: qid.into(),
            docs: ids
                .iter()
                .enumerate()
                .map(|(i, id)| Document {
                    id: (*id).into(),
                    title: String::new(),
                    body: format!("body {id}"),
                    rank: i + 1,
                    score: 10.0 - i as f64,
                })
                .collect(),
            perturbation: None,
        }
    }

    #[test]
    fn shuffle_keeps_ids_and_metadata() {
        let r = result("q", &["a", "b", "c", "d", "e"]);
        let s = shuffle_docs(&r, 9);
        assert_eq!(s, shuffle_docs(&r, 9));
        let order = &s.perturbation.as_ref().unwrap().presentation_order;
        for (pos, &orig) in order.iter().enumerate() {
            assert_eq!(s.docs[pos], r.docs[orig]);
        }
        let one = result("q", &["a"]);
        assert_eq!(shuffle_docs(&one, 3).docs, one.docs);
    }

    #[test]
    fn half_of_five_rounds_up() {
        assert_eq!(replacement_count(0.5, 5), 3);
        assert_eq!(replacement_count(0.5, 4), 2);
        assert_eq!(replacement_count(0.0, 5), 0);
        assert_eq!(replacement_count(1.0, 5), 5);
    }

    #[test]
    fn noise_replaces_recorded_positions_only() {
        let r = result("q1", &["a", "b", "c", "d", "e"]);
        let pool = vec![r.clone(), result("q2", &["a", "x", "y"]), result("q3", &["y", "z", "w"])];
        let n = inject_noise(&r, &pool, 0.5, 4).unwrap();
        let p = n.perturbation.as_ref().unwrap();
        assert_eq!(p.replaced_positions.len(), 3);
        for i in 0..5 {
            let replaced = p.replaced_positions.contains(&i);
            assert_eq!(n.docs[i] != r.docs[i], replaced);
        }
        let ids: HashSet<_> = n.doc_ids().into_iter().collect();
        assert_eq!(ids.len(), 5);
        assert!(p.replacements.iter().all(|x| ["x", "y", "z", "w"].contains(&x.distractor_id.as_str())));
        assert_eq!(n, inject_noise(&r, &pool, 0.5, 4).unwrap());
        assert_eq!(inject_noise(&r, &pool, 0.0, 4).unwrap().docs, r.docs);
    }

    #[test]
    fn noise_errors() {
        let r = result("q1", &["a", "b", "c"]);
        let pool = vec![result("q2", &["a", "x"])];
        assert_eq!(
            inject_noise(&r, &pool, 1.0, 0),
            Err(RobustnessError::InsufficientDistractors { needed: 3, available: 1 })
        );
        assert!(matches!(inject_noise(&r, &pool, 1.5, 0), Err(RobustnessError::InvalidFraction(_))));
        assert!(matches!(inject_noise(&r, &pool, f64::NAN, 0), Err(RobustnessError::InvalidFraction(_))));
    }
}

mod config;

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use selfreason::datagen::{
    build_samples, generate_candidates, qc_filter, CandidateRecord, DatagenConfig, DsrRecord, QcThresholds,
    TaskAnswerChecker,
};
use selfreason::eval::{evaluate_results, read_gold, read_results, LexicalOverlapJudge};
use selfreason::gateway::{Backend, HttpBackend, ScriptedBackend};
use selfreason::pipeline::{run_batch, PipelineConfig};
use selfreason::retrieval::{build_index, Corpus, Index};
use selfreason::robustness::{run_robustness_experiment, ExperimentConfig, Setting};
use selfreason::training::{
    build_stage_records, emit_schedule, write_masked_records, ScheduleConfig, DEFAULT_LEARNING_RATES,
};
use selfreason::{Question, TaskKind};

use config::Config;

#[derive(Parser)]
#[command(name = "selfreason", version, about = "Self-reasoning retrieval-augmented generation toolkit")]
struct Cli {
    /// JSON config file with a top-level "version": 1.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: number of processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer questions with retrieval and self-reasoning generation.
    Run {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate candidate training trajectories from a teacher backend.
    Datagen {
        #[command(flatten)]
        gen: GenArgs,
        /// Negative samples per question.
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter candidate records by answer correctness and citation quality.
    Qc {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        delta_p: Option<f64>,
        #[arg(long)]
        delta_r: Option<f64>,
        /// Write the full per-record report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score pipeline results against gold answers.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare baseline, shuffled and noisy retrieval.
    Robustness {
        #[command(flatten)]
        gen: GenArgs,
        /// Comma-separated subset of baseline,shuffled,noisy.
        #[arg(long, value_enum, value_delimiter = ',')]
        settings: Option<Vec<SettingArg>>,
        /// Comma-separated run seeds (default: --seed, else 0).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        fraction: Option<f64>,
        /// Write the comparison table JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the aligned text table here.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Emit stage-wise masked training records and the stage schedule.
    PrepTrain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated stages to emit.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<u8>>,
        /// Comma-separated learning rates, one per stage.
        #[arg(long, value_delimiter = ',')]
        lr: Option<Vec<f64>>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        batch_size: Option<u32>,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendArg,
    /// Scripted backend rules file.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scripted,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    ShortQa,
    LongQa,
    FactVerification,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::ShortQa => TaskKind::ShortQa,
            TaskArg::LongQa => TaskKind::LongQa,
            TaskArg::FactVerification => TaskKind::FactVerification,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Baseline,
    Shuffled,
    Noisy,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Baseline => Setting::Baseline,
            SettingArg::Shuffled => Setting::Shuffled,
            SettingArg::Noisy => Setting::Noisy,
        }
    }
}

/// Bad flag combination or invalid config; exits with status 2.
#[derive(Debug)]
struct UsageError {
    message: String,
    subcommand: Option<&'static str>,
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for UsageError {}

fn usage(subcommand: Option<&'static str>, message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError { message: message.into(), subcommand })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => {
                eprintln!("error: {}", u.message);
                let mut cmd = Cli::command();
                let usage = match u.subcommand.and_then(|s| cmd.find_subcommand_mut(s)) {
                    Some(sub) => sub.render_usage(),
                    None => cmd.render_usage(),
                };
                eprintln!("\n{usage}");
                ExitCode::from(2)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref()).map_err(|e| usage(None, format!("{e:#}")))?;
    let seed = cli.seed.or(cfg.seed);
    let jobs = cli
        .jobs
        .or(cfg.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    match cli.command {
        Command::Index { corpus, out } => {
            let corpus = Corpus::from_jsonl(open(&corpus)?).with_context(|| format!("loading {}", corpus.display()))?;
            let index = build_index(&corpus)?;
            let mut w = create(&out)?;
            index.write_to(&mut w)?;
            w.flush()?;
            print_json(&json!({
                "docs": index.num_docs(),
                "terms": index.num_terms(),
                "avg_doc_length": index.avg_doc_length(),
                "out": out,
            }))
        }
        Command::Run { gen, out } => {
            let (index, questions, backend) = load_generation(&gen, &cfg, "run")?;
            let pcfg = pipeline_config(&gen, &cfg, seed, jobs);
            let summary = run_batch(&questions, &index, backend.as_ref(), &pcfg, create(&out)?)?;
            print_json(&summary)
        }
        Command::Datagen { gen, negatives, out } => {
            let (index, questions, backend) = load_generation(&gen, &cfg, "datagen")?;
            let pcfg = pipeline_config(&gen, &cfg, seed, jobs);
            let dcfg = DatagenConfig {
                k: pcfg.k,
                negatives_per_question: negatives
                    .or(cfg.datagen.negatives_per_question)
                    .unwrap_or(DatagenConfig::default().negatives_per_question),
                master_seed: seed.unwrap_or(0),
                temperature: pcfg.temperature,
                max_tokens: pcfg.max_tokens,
                jobs,
            };
            let samples = build_samples(&questions, &index, &dcfg)?;
            let (records, stats) = generate_candidates(samples, backend.as_ref(), &dcfg);
            write_jsonl(&out, &records)?;
            print_json(&stats)
        }
        Command::Qc { input, out, delta_p, delta_r, report } => {
            let base = cfg.qc.unwrap_or_default();
            let thresholds = QcThresholds {
                delta_p: delta_p.unwrap_or(base.delta_p),
                delta_r: delta_r.unwrap_or(base.delta_r),
            };
            for (flag, v) in [("--delta-p", thresholds.delta_p), ("--delta-r", thresholds.delta_r)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(usage(Some("qc"), format!("{flag} must lie in [0, 1], got {v}")));
                }
            }
            let records: Vec<CandidateRecord> = read_jsonl(&input)?;
            let judge = judge(&cfg)?;
            let (kept, mut qc_report) = qc_filter(&records, thresholds, &judge, &TaskAnswerChecker::default());
            write_jsonl(&out, &kept)?;
            if let Some(path) = report {
                write_json(&path, &qc_report)?;
            }
            qc_report.decisions.clear();
            print_json(&qc_report)
        }
        Command::Eval { results, gold, task, out } => {
            let records = read_results(open(&results)?).with_context(|| format!("reading {}", results.display()))?;
            let gold = read_gold(open(&gold)?).with_context(|| format!("reading {}", gold.display()))?;
            let summary = evaluate_results(&records, &gold, task.into(), &judge(&cfg)?);
            if let Some(path) = out {
                write_json(&path, &summary)?;
            }
            print_json(&json!({
                "task": summary.task,
                "n": summary.n,
                "metrics": summary.aggregates(),
                "missing_gold": summary.missing_gold.len(),
                "not_ok": summary.not_ok,
                "unmappable_predictions": summary.unmappable_predictions,
                "dangling_citations": summary.dangling_citations,
                "unparseable_markers": summary.unparseable_markers,
            }))
        }
        Command::Robustness { gen, settings, seeds, fraction, out, table } => {
            let (index, questions, backend) = load_generation(&gen, &cfg, "robustness")?;
            let pcfg = pipeline_config(&gen, &cfg, seed, jobs);
            let defaults = ExperimentConfig::default();
            let ecfg = ExperimentConfig {
                settings: settings
                    .map(|s| s.into_iter().map(Setting::from).collect())
                    .or(cfg.robustness.settings.clone())
                    .unwrap_or(defaults.settings),
                seeds: seeds.or(cfg.robustness.seeds.clone()).unwrap_or_else(|| vec![seed.unwrap_or(0)]),
                fraction: fraction.or(cfg.robustness.fraction).unwrap_or(defaults.fraction),
            };
            if !(0.0..=1.0).contains(&ecfg.fraction) {
                return Err(usage(Some("robustness"), format!("--fraction must lie in [0, 1], got {}", ecfg.fraction)));
            }
            if ecfg.settings.is_empty() || ecfg.seeds.is_empty() {
                return Err(usage(Some("robustness"), "--settings and --seeds must be non-empty"));
            }
            let result =
                run_robustness_experiment(&questions, &index, backend.as_ref(), &judge(&cfg)?, &ecfg, &pcfg);
            if let Some(path) = out {
                write_json(&path, &result)?;
            }
            let text = result.to_text();
            if let Some(path) = table {
                fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            eprint!("{text}");
            print_json(&result)
        }
        Command::PrepTrain { input, out_dir, stages, lr, epochs, batch_size } => {
            let base = cfg.schedule.clone().unwrap_or_default();
            let scfg = ScheduleConfig {
                learning_rates: match (&lr, &stages) {
                    (Some(lr), _) => lr.clone(),
                    (None, Some(s)) => s
                        .iter()
                        .map(|&st| DEFAULT_LEARNING_RATES.get(usize::from(st).wrapping_sub(1)).copied().unwrap_or(0.0))
                        .collect(),
                    (None, None) => base.learning_rates.clone(),
                },
                stages: stages.unwrap_or(base.stages),
                epochs: epochs.unwrap_or(base.epochs),
                batch_size: batch_size.unwrap_or(base.batch_size),
                records_files: None,
            };
            let schedule = emit_schedule(&scfg).map_err(|e| usage(Some("prep-train"), e.to_string()))?;
            let dataset: Vec<DsrRecord> = read_jsonl(&input)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut per_stage = Vec::new();
            for entry in &schedule.stages {
                let (records, dropped) = build_stage_records(&dataset, entry.stage)?;
                write_masked_records(&records, create(&out_dir.join(&entry.records_file))?)?;
                per_stage.push(json!({
                    "stage": entry.stage,
                    "records": records.len(),
                    "dropped": dropped,
                }));
            }
            let schedule_path = out_dir.join("schedule.json");
            fs::write(&schedule_path, schedule.to_json())
                .with_context(|| format!("writing {}", schedule_path.display()))?;
            print_json(&json!({"stages": per_stage, "schedule": schedule_path}))
        }
    }
}

fn pipeline_config(gen: &GenArgs, cfg: &Config, seed: Option<u64>, jobs: usize) -> PipelineConfig {
    let d = PipelineConfig::default();
    PipelineConfig {
        k: gen.k.or(cfg.retrieval.k).unwrap_or(d.k),
        temperature: gen.temperature.or(cfg.generation.temperature).unwrap_or(d.temperature),
        max_tokens: gen.max_tokens.or(cfg.generation.max_tokens).unwrap_or(d.max_tokens),
        seed,
        jobs,
        record_timing: cfg.generation.record_timing.unwrap_or(d.record_timing),
    }
}

fn load_generation(
    gen: &GenArgs,
    cfg: &Config,
    subcommand: &'static str,
) -> Result<(Index, Vec<Question>, Box<dyn Backend>)> {
    let backend: Box<dyn Backend> = match gen.backend {
        BackendArg::Scripted => {
            let Some(script) = &gen.script else {
                return Err(usage(Some(subcommand), "--backend scripted requires --script <rules.json>"));
            };
            Box::new(ScriptedBackend::from_rules_file(script)?)
        }
        BackendArg::Http => Box::new(HttpBackend::from_env(cfg.http.clone().unwrap_or_default())?),
    };
    let index = Index::read_from(BufReader::new(
        File::open(&gen.index).with_context(|| format!("opening {}", gen.index.display()))?,
    ))
    .with_context(|| format!("loading index {}", gen.index.display()))?;
    let questions: Vec<Question> = read_jsonl(&gen.questions)?;
    Ok((index, questions, backend))
}

fn judge(cfg: &Config) -> Result<LexicalOverlapJudge> {
    let d = LexicalOverlapJudge::default();
    LexicalOverlapJudge::new(
        cfg.judge.theta_full.unwrap_or(d.theta_full),
        cfg.judge.theta_partial.unwrap_or(d.theta_partial),
    )
    .map_err(|e| usage(None, format!("judge thresholds: {e}")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

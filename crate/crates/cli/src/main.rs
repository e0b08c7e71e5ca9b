//! Operator surface: ingest corpora, build indexes, run repair methods,
//! evaluate logs, and sweep shot counts.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{resolve, FileConfig, ResolvedConfig};
use forestfix::evaluation::load_run_log;
use forestfix::forest::RepairTask;
use forestfix::llm::make_backend;
use forestfix::{
    build_index, compare, execute_run, execute_sweep, load_corpus, Error, LlmClient, ResponseCache,
    SplitLabel, TemplateSet,
};

// exit codes per error class
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_BACKEND: u8 = 4;
const EXIT_PARTIAL: u8 = 5;

#[derive(Parser)]
#[command(
    name = "forestfix",
    version,
    about = "Retrieval-augmented multi-tree program repair"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Config file (TOML); flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Retrieval corpus dataset (jsonl)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Task dataset (jsonl); gold fixes come from its `fixed` fields
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Corpus split label: train | test | custom
    #[arg(long)]
    split: Option<String>,
    /// Method: t3 | cot | tot | plan_and_solve | analogical
    #[arg(long)]
    method: Option<String>,
    /// Retrieved examples per prompt (k)
    #[arg(long)]
    shots: Option<usize>,
    /// BM25 k1
    #[arg(long)]
    k1: Option<f64>,
    /// BM25 b
    #[arg(long)]
    b: Option<f64>,
    /// Reasoning trees per stage (M)
    #[arg(long)]
    trees: Option<usize>,
    /// Candidate cap per tree (N)
    #[arg(long)]
    per_tree: Option<usize>,
    /// Vote selection size (n)
    #[arg(long)]
    top_n: Option<usize>,
    /// Candidate equality: normalized_exact | jaccard_cluster
    #[arg(long)]
    canon_mode: Option<String>,
    /// Jaccard merge threshold
    #[arg(long)]
    jaccard_tau: Option<f64>,
    /// Skip the cause-analysis forest
    #[arg(long)]
    no_cause: bool,
    /// Skip the plan-generation forest
    #[arg(long)]
    no_plan: bool,
    /// Sampling temperature
    #[arg(long)]
    temperature: Option<f64>,
    /// Patch samples per task (s)
    #[arg(long)]
    samples: Option<usize>,
    /// Output token budget per completion
    #[arg(long)]
    max_output: Option<usize>,
    /// Model identifier (pass-through)
    #[arg(long)]
    model_id: Option<String>,
    /// Run seed; per-task/per-tree seeds derive from it
    #[arg(long)]
    seed: Option<u64>,
    /// Task parallelism bound
    #[arg(long)]
    parallelism: Option<usize>,
    /// Backend: scripted | seeded | http
    #[arg(long)]
    backend: Option<String>,
    /// Script file for the scripted mock
    #[arg(long)]
    script: Option<PathBuf>,
    /// Weighted response table for the seeded mock
    #[arg(long)]
    table: Option<PathBuf>,
    /// Chat-completion endpoint URL (http backend)
    #[arg(long)]
    endpoint: Option<String>,
    /// Name of env var holding the API key (http backend)
    #[arg(long)]
    credential_env: Option<String>,
    /// Response cache root
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Templates directory overriding the built-ins
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Run output directory
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl RunFlags {
    fn to_file_config(&self) -> FileConfig {
        FileConfig {
            corpus: self.corpus.clone(),
            tasks: self.tasks.clone(),
            split: self.split.clone(),
            method: self.method.clone(),
            shots: self.shots,
            k1: self.k1,
            b: self.b,
            trees: self.trees,
            per_tree: self.per_tree,
            top_n: self.top_n,
            canon_mode: self.canon_mode.clone(),
            jaccard_tau: self.jaccard_tau,
            no_cause: if self.no_cause { Some(true) } else { None },
            no_plan: if self.no_plan { Some(true) } else { None },
            temperature: self.temperature,
            samples: self.samples,
            max_output: self.max_output,
            model_id: self.model_id.clone(),
            seed: self.seed,
            parallelism: self.parallelism,
            backend: self.backend.clone(),
            script: self.script.clone(),
            table: self.table.clone(),
            endpoint: self.endpoint.clone(),
            credential_env: self.credential_env.clone(),
            cache_dir: self.cache_dir.clone(),
            templates: self.templates.clone(),
            run_dir: self.run_dir.clone(),
        }
    }

    fn resolve(&self) -> Result<ResolvedConfig, Error> {
        let base = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        resolve(base.overlay(self.to_file_config()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a dataset, printing summary statistics
    Ingest {
        /// Dataset path (jsonl)
        corpus: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Build a BM25 index and save a snapshot
    Index {
        /// Dataset path (jsonl)
        corpus: PathBuf,
        /// Snapshot output path
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = forestfix::retrieval::DEFAULT_K1)]
        k1: f64,
        #[arg(long, default_value_t = forestfix::retrieval::DEFAULT_B)]
        b: f64,
    },
    /// Run a repair method over a task set
    Run {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Compute metrics over one or more run directories
    Eval {
        /// Run directories (each holding manifest.json + tasks.jsonl)
        #[arg(required = false)]
        runs: Vec<PathBuf>,
        /// Also write the report as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a shot-count sweep
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        /// Comma-separated shot counts, e.g. 1,3,5
        #[arg(long, value_delimiter = ',')]
        shot_counts: Vec<usize>,
        /// Sweep output directory
        #[arg(long)]
        sweep_dir: Option<PathBuf>,
    },
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Backend { .. } | Error::Protocol(_) => EXIT_BACKEND,
        _ => EXIT_USAGE,
    }
}

fn load_tasks(path: &Path) -> Result<Vec<RepairTask>, Error> {
    let corpus = load_corpus(path, SplitLabel::Test)?;
    Ok(corpus
        .examples()
        .iter()
        .map(RepairTask::from_example)
        .collect())
}

fn build_client(cfg: &ResolvedConfig) -> Result<LlmClient, Error> {
    let backend = make_backend(&cfg.backend)?;
    let cache = match &cfg.cache_dir {
        Some(dir) => Some(ResponseCache::open(dir)?),
        None => None,
    };
    Ok(LlmClient::new(backend, cache))
}

fn load_templates(cfg: &ResolvedConfig) -> Result<TemplateSet, Error> {
    match &cfg.templates {
        Some(dir) => TemplateSet::load(dir),
        None => Ok(TemplateSet::builtin()),
    }
}

fn cmd_ingest(corpus: &Path, split: &str) -> Result<(), Error> {
    let split = match split {
        "train" => SplitLabel::Train,
        "test" => SplitLabel::Test,
        "custom" => SplitLabel::Custom,
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    let c = load_corpus(corpus, split)?;
    let with_location = c
        .examples()
        .iter()
        .filter(|e| e.fault_location.is_some())
        .count();
    println!(
        "loaded {} example(s) from {} (split: {})",
        c.len(),
        corpus.display(),
        split
    );
    println!("with fault location: {with_location}");
    println!("content hash: {}", c.content_hash());
    Ok(())
}

fn cmd_index(corpus: &Path, out: &Path, k1: f64, b: f64) -> Result<(), Error> {
    let c = load_corpus(corpus, SplitLabel::Train)?;
    let index = build_index(&c, k1, b)?;
    index.save_snapshot(out)?;
    println!(
        "indexed {} doc(s), avg length {:.2}, snapshot at {}",
        index.doc_count(),
        index.avg_doc_length(),
        out.display()
    );
    Ok(())
}

fn cmd_run(flags: &RunFlags) -> Result<u8, Error> {
    let cfg = flags.resolve()?;
    let corpus = load_corpus(&cfg.corpus, cfg.split)?;
    let tasks = load_tasks(&cfg.tasks)?;
    if tasks.is_empty() {
        return Err(Error::Config("task set is empty".into()));
    }
    let index = if cfg.settings.shots > 0 && !corpus.is_empty() {
        Some(build_index(&corpus, cfg.k1, cfg.b)?)
    } else {
        None
    };
    let client = build_client(&cfg)?;
    let templates = load_templates(&cfg)?;
    let outcome = execute_run(
        &cfg.run_dir,
        &tasks,
        &corpus,
        index.as_ref(),
        &cfg.settings,
        &client,
        &templates,
    )?;
    println!(
        "run complete: {} executed, {} skipped (resume), {} backend call(s)",
        outcome.executed,
        outcome.skipped,
        client.backend_calls()
    );
    if !outcome.failed_tasks.is_empty() {
        eprintln!(
            "{} task(s) failed: {}",
            outcome.failed_tasks.len(),
            outcome.failed_tasks.join(", ")
        );
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn cmd_eval(runs: &[PathBuf], out: Option<&Path>) -> Result<(), Error> {
    if runs.is_empty() {
        return Err(Error::Config(
            "eval needs at least one run directory".into(),
        ));
    }
    let logs = runs
        .iter()
        .map(|p| load_run_log(p))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compare(&logs)?;
    print!("{}", report.render_table());
    if let Some(out) = out {
        let bytes =
            serde_json::to_vec_pretty(&report).map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(out, bytes).map_err(|source| Error::Io {
            path: out.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

fn cmd_sweep(
    flags: &RunFlags,
    shot_counts: &[usize],
    sweep_dir: Option<&Path>,
) -> Result<(), Error> {
    if shot_counts.is_empty() {
        return Err(Error::Config("sweep needs at least one shot count".into()));
    }
    let cfg = flags.resolve()?;
    let sweep_dir = sweep_dir.unwrap_or(&cfg.run_dir);
    let corpus = load_corpus(&cfg.corpus, cfg.split)?;
    let tasks = load_tasks(&cfg.tasks)?;
    let index = if corpus.is_empty() {
        None
    } else {
        Some(build_index(&corpus, cfg.k1, cfg.b)?)
    };
    let client = build_client(&cfg)?;
    let templates = load_templates(&cfg)?;
    let series = execute_sweep(
        sweep_dir,
        shot_counts,
        &tasks,
        &corpus,
        index.as_ref(),
        &cfg.settings,
        &client,
        &templates,
    )?;
    for point in &series {
        match point.repair_rate {
            Some(r) => println!(
                "shots {:>3}: repair rate {}",
                point.shots,
                forestfix::evaluation::percent(r)
            ),
            None => println!("shots {:>3}: failed", point.shots),
        }
    }
    println!(
        "series written to {}",
        sweep_dir.join("series.csv").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<u8, Error> = match &cli.command {
        Command::Ingest { corpus, split } => cmd_ingest(corpus, split).map(|_| 0),
        Command::Index { corpus, out, k1, b } => cmd_index(corpus, out, *k1, *b).map(|_| 0),
        Command::Run { flags } => cmd_run(flags),
        Command::Eval { runs, out } => cmd_eval(runs, out.as_deref()).map(|_| 0),
        Command::Sweep {
            flags,
            shot_counts,
            sweep_dir,
        } => cmd_sweep(flags, shot_counts, sweep_dir.as_deref()).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}

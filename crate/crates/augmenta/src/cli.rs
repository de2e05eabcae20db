//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use augmenta_core::augment::tables::Tables;
use augmenta_core::augment::{AugmenterSpec, Method, NonLlmMethod, Rate};
use augmenta_core::eval::{EvalResult, DEFAULT_K, DEFAULT_SEEDS};
use augmenta_core::instructgen::{run_generation_loop, GenerationConfig, InstructionPool};
use augmenta_core::model::{Instruction, Split, TaskDataset};
use augmenta_core::selector::{select_instruction, RewardRecord, TaskDescriptor, TrainHyper};
use clap::{Args, Parser, Subcommand};

use crate::augment::apply_to_dataset;
use crate::backend::{BackendConfig, LlmClient};
use crate::bundled::{generated_instructions, manual_instructions};
use crate::config::PipelineConfig;
use crate::harness::{evaluate, generate_rewards, EvalOptions, RewardGrid};
use crate::io::{
    load_tasks, pick_tasks, read_instructions, read_jsonl, read_pool, write_json, write_jsonl, write_pool,
    write_records,
};
use crate::pipeline::{run_pipeline, RunOptions, StageStatus};
use crate::report::{emit_report, RECORDS_FILE, RESULTS_FILE};
use crate::scorer_file::{load_scorer, save_scorer};

#[derive(Debug, Parser)]
#[command(
    name = "augmenta",
    version,
    about = "LLM-driven text augmentation with learned instruction selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow an instruction pool from seed instructions.
    GenInstructions(GenArgs),
    /// Augment the training split of one task.
    Augment(AugmentArgs),
    /// Reward every (task, instruction) pair on training tasks.
    GenRewards(RewardArgs),
    /// Fit the instruction scorer on a reward table.
    TrainScorer(TrainArgs),
    /// Pick the best pool instruction for a task.
    Select(SelectArgs),
    /// Evaluate one method on one task and merge into a results directory.
    Evaluate(EvaluateArgs),
    /// Run every stage from a config file.
    RunExperiment(ExperimentArgs),
    /// Render summary tables from a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Answer every request offline with the deterministic mock.
    #[arg(long)]
    pub mock: bool,
    /// Scripted replies for the mock (JSON rules).
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    /// Hard cap on prompt + completion tokens.
    #[arg(long)]
    pub budget_tokens: Option<u64>,
}

impl BackendArgs {
    fn apply(&self, mut cfg: BackendConfig) -> BackendConfig {
        if self.mock || self.mock_script.is_some() {
            cfg.mock = true;
        }
        if let Some(p) = &self.mock_script {
            cfg.mock_script = Some(p.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(u) = &self.base_url {
            cfg.base_url = u.clone();
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        if let Some(n) = self.max_parallel {
            cfg.max_parallel = n;
        }
        if self.budget_tokens.is_some() {
            cfg.budget_tokens = self.budget_tokens;
        }
        cfg
    }

    fn client(&self) -> Result<LlmClient, String> {
        LlmClient::new(self.apply(BackendConfig::default().from_env())).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Seed instructions; the bundled manual set when omitted.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub target: usize,
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the per-iteration log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// `original`, an algorithmic method name, or `llm:<instruction name>`.
    #[arg(long)]
    pub method: String,
    /// Where `llm:` names are looked up; the bundled sets when omitted.
    #[arg(long)]
    pub instructions: Option<PathBuf>,
    #[arg(long, default_value_t = augmenta_core::augment::DEFAULT_RATE)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub augment_seed: u64,
}

impl MethodArgs {
    fn spec(&self) -> Result<Option<AugmenterSpec>, String> {
        if self.method == "original" {
            return Ok(None);
        }
        let rate = Rate::new(self.rate).map_err(|e| e.to_string())?;
        let method = match self.method.strip_prefix("llm:") {
            Some(name) => Method::LlmInstruction(self.lookup(name)?),
            None => Method::NonLlm(self.method.parse::<NonLlmMethod>().map_err(|e| e.to_string())?),
        };
        Ok(Some(AugmenterSpec {
            rate,
            ..AugmenterSpec::new(method, self.augment_seed)
        }))
    }

    fn lookup(&self, name: &str) -> Result<Instruction, String> {
        let all = match &self.instructions {
            Some(p) => read_instructions(p).map_err(|e| e.to_string())?,
            None => manual_instructions()
                .into_iter()
                .chain(generated_instructions())
                .collect(),
        };
        all.into_iter()
            .find(|i| i.name == name)
            .ok_or_else(|| format!("no instruction named `{name}`"))
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub task: String,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Records JSONL.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS.to_vec())]
    pub seeds: Vec<u64>,
}

impl EvalArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            k: self.k,
            seeds: self.seeds.clone(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    /// Comma-separated task names; every task in the directory when omitted.
    #[arg(long, value_delimiter = ',')]
    pub task_names: Vec<String>,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Instructions per task; 0 rewards the whole pool.
    #[arg(long, default_value_t = 0)]
    pub per_task: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub rewards: PathBuf,
    /// Held-out reward records for early stopping.
    #[arg(long)]
    pub dev_rewards: Option<PathBuf>,
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub scorer: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value = "target-125m")]
    pub model_name: String,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub task: String,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Name recorded in the results; defaults to `--method`.
    #[arg(long)]
    pub method_id: Option<String>,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// train, dev or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub results_dir: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Skip stages whose checkpoint matches the current config.
    #[arg(long)]
    pub resume: bool,
    /// Overrides `paths.results_dir`; derived files follow it unless set explicitly.
    #[arg(long)]
    pub results_dir: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results_dir: PathBuf,
}

fn tasks_in(dir: &Path, names: &[String]) -> Result<Vec<TaskDataset>, String> {
    let all = load_tasks(dir).map_err(|e| e.to_string())?;
    if names.is_empty() {
        Ok(all)
    } else {
        pick_tasks(&all, names)
    }
}

fn one_task(dir: &Path, name: &str) -> Result<TaskDataset, String> {
    Ok(tasks_in(dir, &[name.to_string()])?.remove(0))
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}`")),
    }
}

fn gen_instructions(a: GenArgs) -> Result<(), String> {
    let client = a.backend.client()?;
    let seeds = match &a.seeds {
        Some(p) => read_instructions(p).map_err(|e| e.to_string())?,
        None => manual_instructions(),
    };
    let cfg = GenerationConfig {
        target_pool_size: a.target,
        similarity_threshold: a.threshold,
        max_iterations: a.max_iter,
        seed: a.seed,
        ..Default::default()
    };
    let out = run_generation_loop(&seeds, &cfg, &client).map_err(|e| e.to_string())?;
    write_pool(&a.out, &out.pool).map_err(|e| e.to_string())?;
    if let Some(log) = &a.log {
        write_json(log, &out).map_err(|e| e.to_string())?;
    }
    eprintln!(
        "pool: {} instructions after {} backend calls{}",
        out.pool.len(),
        out.backend_calls,
        if out.reached_target {
            ""
        } else {
            " (target not reached)"
        }
    );
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<(), String> {
    let task = one_task(&a.tasks, &a.task)?;
    let spec = a.method.spec()?.ok_or("`original` does not augment anything")?;
    let spec = AugmenterSpec {
        repeats: a.repeats,
        ..spec
    };
    let client = if spec.method.needs_backend() {
        Some(a.backend.client()?)
    } else {
        None
    };
    let records = apply_to_dataset(&spec, &task, &Tables::bundled(), client.as_ref()).map_err(|e| e.to_string())?;
    write_records(&a.out, &records).map_err(|e| e.to_string())?;
    eprintln!("wrote {} records", records.len());
    Ok(())
}

fn gen_rewards(a: RewardArgs) -> Result<(), String> {
    let client = a.backend.client()?;
    let pool = read_pool(&a.pool).map_err(|e| e.to_string())?;
    let tasks = tasks_in(&a.tasks, &a.task_names)?;
    let grid = match a.per_task {
        0 => RewardGrid::Full,
        n => RewardGrid::PerTask(n),
    };
    let run = generate_rewards(
        &tasks,
        &pool,
        grid,
        &a.eval.options(),
        &Tables::bundled(),
        &client,
        a.seed,
    );
    for s in &run.skipped {
        eprintln!("skipped {s}");
    }
    write_jsonl(&a.out, &run.records).map_err(|e| e.to_string())?;
    eprintln!("wrote {} rewards", run.records.len());
    if run.records.is_empty() {
        return Err("no reward was produced".into());
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), String> {
    let pool = read_pool(&a.pool).map_err(|e| e.to_string())?;
    let records: Vec<RewardRecord> = read_jsonl(&a.rewards).map_err(|e| e.to_string())?;
    let dev: Option<Vec<RewardRecord>> = match &a.dev_rewards {
        Some(p) => Some(read_jsonl(p).map_err(|e| e.to_string())?),
        None => None,
    };
    let tasks = tasks_in(&a.tasks, &[])?;
    let d = TrainHyper::default();
    let hyper = TrainHyper {
        n: a.n,
        m: a.m,
        lr: a.lr.unwrap_or(d.lr),
        epochs: a.epochs.unwrap_or(d.epochs),
        patience: a.patience.unwrap_or(d.patience),
        target_model_name: a.model_name.clone().unwrap_or(d.target_model_name.clone()),
        ..d
    };
    let out = augmenta_core::selector::train_scorer(&records, dev.as_deref(), &pool, &tasks, &hyper, a.seed)
        .map_err(|e| e.to_string())?;
    save_scorer(&a.out, &out.state, out.best_epoch).map_err(|e| e.to_string())?;
    let last = out.history.last().map_or(f64::NAN, |h| h.train_loss);
    eprintln!(
        "trained {} epochs, best epoch {}, loss {:.6} -> {:.6}",
        out.history.len(),
        out.best_epoch,
        out.initial_loss,
        last
    );
    Ok(())
}

fn select(a: SelectArgs) -> Result<(), String> {
    let state = load_scorer(&a.scorer).map_err(|e| e.to_string())?;
    let pool: InstructionPool = read_pool(&a.pool).map_err(|e| e.to_string())?;
    let task = one_task(&a.tasks, &a.task)?;
    let desc = TaskDescriptor::from_task(&task, &a.model_name, a.m).map_err(|e| e.to_string())?;
    let s = select_instruction(&state, &pool, &desc).map_err(|e| e.to_string())?;
    let line = serde_json::json!({
        "task": task.task_name,
        "index": s.index,
        "instruction": s.instruction.name,
        "body": s.instruction.body,
        "score": s.scores.get(s.index),
    });
    println!("{line}");
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), String> {
    let task = one_task(&a.tasks, &a.task)?;
    let spec = a.method.spec()?;
    let client = match &spec {
        Some(s) if s.method.needs_backend() => Some(a.backend.client()?),
        _ => None,
    };
    let id = a.method_id.clone().unwrap_or_else(|| a.method.method.clone());
    let split = parse_split(&a.split)?;
    let run = evaluate(
        &task,
        &id,
        spec.as_ref(),
        split,
        &a.eval.options(),
        &Tables::bundled(),
        client.as_ref(),
    )
    .map_err(|e| e.to_string())?;
    for (seed, msg) in &run.evaluation.failures {
        eprintln!("seed {seed} failed: {msg}");
    }

    // Replace any earlier lines for this (task, method) and keep the file sorted.
    let results_file = a.results_dir.join(RESULTS_FILE);
    let mut results: Vec<EvalResult> = if results_file.exists() {
        read_jsonl(&results_file).map_err(|e| e.to_string())?
    } else {
        Vec::new()
    };
    results.retain(|r| !(r.task_name == task.task_name && r.method_id == id));
    results.extend(run.evaluation.results.iter().cloned());
    results.sort_by(|a, b| (&a.task_name, &a.method_id, a.seed).cmp(&(&b.task_name, &b.method_id, b.seed)));
    write_jsonl(&results_file, &results).map_err(|e| e.to_string())?;
    let records_file = a.results_dir.join(RECORDS_FILE);
    let mut records = if records_file.exists() {
        crate::io::read_records(&records_file).map_err(|e| e.to_string())?
    } else {
        Vec::new()
    };
    records.retain(|r| !(r.task_name == task.task_name && r.method_id == id));
    records.extend(run.records);
    write_records(&records_file, &records).map_err(|e| e.to_string())?;
    let metric = run
        .evaluation
        .results
        .first()
        .map(|r| r.metric_name.as_str())
        .unwrap_or("-");
    println!(
        "{} {} {metric}: {:.4} over {} seeds",
        task.task_name,
        id,
        run.evaluation.mean,
        run.evaluation.results.len()
    );
    Ok(())
}

fn run_experiment(a: ExperimentArgs) -> Result<(), String> {
    let mut cfg = PipelineConfig::load(&a.config).map_err(|e| e.to_string())?;
    cfg.backend = a.backend.apply(cfg.backend);
    if let Some(d) = a.results_dir {
        cfg.paths.results_dir = d;
    }
    let out = run_pipeline(&cfg, RunOptions { resume: a.resume }).map_err(|e| e.to_string())?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    for (stage, status) in &out.stages {
        let s = match status {
            StageStatus::Ran => "done",
            StageStatus::Skipped => "skipped (checkpoint)",
        };
        eprintln!("{:<9} {s}", stage.as_str());
    }
    let u = &out.usage;
    eprintln!(
        "requests {} (mock {}, cache hits {}), tokens {}",
        u.request_count,
        u.mock_requests,
        u.cache_hits,
        u.total_tokens()
    );
    print!(
        "{}",
        std::fs::read_to_string(&out.report.summary_txt).map_err(|e| e.to_string())?
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), String> {
    let files = emit_report(&a.results_dir).map_err(|e| e.to_string())?;
    print!(
        "{}",
        std::fs::read_to_string(&files.summary_txt).map_err(|e| e.to_string())?
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::GenInstructions(a) => gen_instructions(a),
        Command::Augment(a) => augment(a),
        Command::GenRewards(a) => gen_rewards(a),
        Command::TrainScorer(a) => train(a),
        Command::Select(a) => select(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::RunExperiment(a) => run_experiment(a),
        Command::Report(a) => report(a),
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

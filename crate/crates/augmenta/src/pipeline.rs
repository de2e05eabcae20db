//! End-to-end experiment: grow the instruction pool, reward it on the
//! training tasks, train the scorer, evaluate every method on the test tasks
//! and write the report.
//!
//! Each stage leaves a marker in `<results_dir>/checkpoints/` holding a hash
//! of the config. With `resume`, a stage is skipped when its marker matches
//! and its outputs still exist; once one stage reruns, every later stage
//! reruns too.

use std::fs;
use std::path::{Path, PathBuf};

use augmenta_core::augment::tables::Tables;
use augmenta_core::augment::{AugmenterSpec, Method, Rate};
use augmenta_core::eval::{EvalResult, ReferenceError};
use augmenta_core::hashing::fnv1a64;
use augmenta_core::instructgen::{run_generation_loop, InstructionPool};
use augmenta_core::model::{AugmentationRecord, Split, TaskDataset};
use augmenta_core::rng::derive_seed;
use augmenta_core::selector::{
    empirical_select, llm_select, random_select, select_instruction, train_scorer, RewardRecord, ScorerState,
    Selection, SelectorKind, TaskDescriptor,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::ledger::UsageSnapshot;
use crate::backend::{BackendError, LlmClient};
use crate::bundled::manual_instructions;
use crate::config::{ConfigError, PipelineConfig};
use crate::harness::{evaluate, generate_rewards, MethodRun};
use crate::io::{
    load_tasks, pick_tasks, read_instructions, read_jsonl, read_pool, write_json, write_jsonl, write_pool,
    write_records, write_text, IoError,
};
use crate::report::{emit_report, ReportError, ReportFiles, RECORDS_FILE, RESULTS_FILE};
use crate::scorer_file::{load_scorer, save_scorer, ScorerFileError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pool,
    Rewards,
    Scorer,
    Evaluate,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pool => "pool",
            Stage::Rewards => "rewards",
            Stage::Scorer => "scorer",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("loading tasks: {0}")]
    Tasks(String),
    #[error("stage `{}` failed: {message}", stage.as_str())]
    Stage { stage: Stage, message: String },
}

fn stage_err(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

impl From<(Stage, IoError)> for PipelineError {
    fn from((stage, e): (Stage, IoError)) -> Self {
        stage_err(stage)(&e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub stages: Vec<(Stage, StageStatus)>,
    pub usage: UsageSnapshot,
    pub report: ReportFiles,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub resume: bool,
}

/// What each test task was given by each selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub task: String,
    pub selector: String,
    pub instruction: String,
    pub index: usize,
    pub fallback: bool,
}

pub const LEDGER_FILE: &str = "ledger.json";
pub const SELECTIONS_FILE: &str = "selections.json";

struct Checkpoints {
    dir: PathBuf,
    fingerprint: String,
    resume: bool,
    dirty: bool,
}

impl Checkpoints {
    fn marker(&self, s: Stage) -> PathBuf {
        self.dir.join(format!("{}.done", s.as_str()))
    }

    fn done(&mut self, s: Stage, outputs: &[&Path]) -> bool {
        let ok = self.resume
            && !self.dirty
            && fs::read_to_string(self.marker(s)).is_ok_and(|m| m.trim() == self.fingerprint)
            && outputs.iter().all(|p| p.exists());
        if !ok {
            self.dirty = true;
        }
        ok
    }

    fn mark(&self, s: Stage) -> Result<(), PipelineError> {
        write_text(&self.marker(s), &format!("{}\n", self.fingerprint)).map_err(|e| (s, e).into())
    }
}

fn config_fingerprint(cfg: &PipelineConfig) -> String {
    let v = serde_json::to_value(cfg).expect("config serializes");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Every method evaluated on a test task, as `(method_id, augmenter)`.
fn methods_for(
    cfg: &PipelineConfig,
    manual: &[augmenta_core::model::Instruction],
    selections: &[SelectionEntry],
    task: &str,
    pool: &InstructionPool,
) -> Vec<(String, Option<AugmenterSpec>)> {
    let eval = &cfg.evaluation;
    let rate = Rate::new(eval.rate).expect("validated rate");
    let spec = |method: Method| AugmenterSpec {
        rate,
        ..AugmenterSpec::new(method, eval.augment_seed)
    };
    let mut out: Vec<(String, Option<AugmenterSpec>)> = vec![("original".into(), None)];
    for m in &eval.non_llm_methods {
        out.push((m.as_str().into(), Some(spec(Method::NonLlm(*m)))));
    }
    if eval.manual {
        for ins in manual {
            out.push((
                format!("manual:{}", ins.name),
                Some(spec(Method::LlmInstruction(ins.clone()))),
            ));
        }
    }
    for s in selections.iter().filter(|s| s.task == task) {
        let ins = pool.instructions[s.index].clone();
        out.push((s.selector.clone(), Some(spec(Method::LlmInstruction(ins)))));
    }
    out
}

fn select_all(
    cfg: &PipelineConfig,
    tests: &[TaskDataset],
    pool: &InstructionPool,
    scorer: &ScorerState,
    rewards: &[RewardRecord],
    client: &LlmClient,
) -> Result<Vec<SelectionEntry>, PipelineError> {
    let sel = &cfg.selector;
    let err = stage_err(Stage::Evaluate);
    let mut out = Vec::new();
    for task in tests {
        let desc = TaskDescriptor::from_task(task, &sel.target_model_name, sel.m).map_err(|e| err(&e))?;
        let seed = derive_seed(sel.seed, fnv1a64(task.task_name.as_bytes()));
        let mut push = |name: &str, s: Selection| {
            out.push(SelectionEntry {
                task: task.task_name.clone(),
                selector: name.into(),
                instruction: s.instruction.name.clone(),
                index: s.index,
                fallback: s.fallback,
            })
        };
        push(
            "self_llmda",
            select_instruction(scorer, pool, &desc).map_err(|e| err(&e))?,
        );
        for kind in &cfg.evaluation.selectors {
            let s = match kind {
                SelectorKind::TaskInformed => continue,
                SelectorKind::RandomSelect => random_select(pool, seed).map_err(|e| err(&e))?,
                SelectorKind::EmpiricalSelect => empirical_select(pool, rewards).map_err(|e| err(&e))?,
                SelectorKind::LlmSelect => llm_select(pool, &desc, client, seed).map_err(|e| err(&e))?,
            };
            push(kind.as_str(), s);
        }
    }
    Ok(out)
}

/// Runs every stage. The backend is validated (API key included) before
/// anything else happens.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<PipelineOutcome, PipelineError> {
    let client = LlmClient::new(cfg.backend.clone().from_env())?;
    let split = cfg.split()?.clone();
    let all = load_tasks(&cfg.paths.tasks_dir).map_err(|e| PipelineError::Tasks(e.to_string()))?;
    let train = pick_tasks(&all, &split.train_tasks).map_err(PipelineError::Tasks)?;
    let tests = pick_tasks(&all, &split.test_tasks).map_err(PipelineError::Tasks)?;
    let tables = Tables::bundled();
    let results_dir = &cfg.paths.results_dir;
    fs::create_dir_all(results_dir).map_err(|e| PipelineError::Tasks(format!("{}: {e}", results_dir.display())))?;

    let mut cp = Checkpoints {
        dir: results_dir.join("checkpoints"),
        fingerprint: config_fingerprint(cfg),
        resume: opts.resume,
        dirty: false,
    };
    if !opts.resume {
        let _ = fs::remove_dir_all(&cp.dir);
    }
    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    let manual = match &cfg.paths.manual_file {
        Some(p) => read_instructions(p).map_err(|e| (Stage::Pool, e))?,
        None => manual_instructions(),
    };

    // Pool.
    let pool_file = cfg.paths.pool_file();
    let pool = if cfg.reuse_pool || cp.done(Stage::Pool, &[&pool_file]) {
        stages.push((Stage::Pool, StageStatus::Skipped));
        read_pool(&pool_file).map_err(|e| (Stage::Pool, e))?
    } else {
        let outcome = run_generation_loop(&manual, &cfg.generation, &client).map_err(|e| stage_err(Stage::Pool)(&e))?;
        if !outcome.reached_target {
            warnings.push(format!(
                "pool stopped at {} of {} instructions",
                outcome.pool.len(),
                cfg.generation.target_pool_size
            ));
        }
        write_pool(&pool_file, &outcome.pool).map_err(|e| (Stage::Pool, e))?;
        write_json(&results_dir.join("generation_log.json"), &outcome).map_err(|e| (Stage::Pool, e))?;
        cp.mark(Stage::Pool)?;
        stages.push((Stage::Pool, StageStatus::Ran));
        outcome.pool
    };

    // Rewards.
    let rewards_file = cfg.paths.rewards_file();
    let opts_eval = cfg.evaluation.options();
    let rewards: Vec<RewardRecord> = if cp.done(Stage::Rewards, &[&rewards_file]) {
        stages.push((Stage::Rewards, StageStatus::Skipped));
        read_jsonl(&rewards_file).map_err(|e| (Stage::Rewards, e))?
    } else {
        let run = generate_rewards(
            &train,
            &pool,
            cfg.selector.grid(),
            &opts_eval,
            &tables,
            &client,
            cfg.selector.seed,
        );
        let skipped: Vec<String> = run.skipped.iter().map(ToString::to_string).collect();
        write_json(&results_dir.join("rewards_skipped.json"), &skipped).map_err(|e| (Stage::Rewards, e))?;
        if run.records.is_empty() {
            return Err(stage_err(Stage::Rewards)(
                &"no (task, instruction) pair produced a reward",
            ));
        }
        warnings.extend(skipped.iter().map(|s| format!("reward skipped: {s}")));
        write_jsonl(&rewards_file, &run.records).map_err(|e| (Stage::Rewards, e))?;
        cp.mark(Stage::Rewards)?;
        stages.push((Stage::Rewards, StageStatus::Ran));
        run.records
    };

    // Scorer.
    let scorer_file = cfg.paths.scorer_file();
    let scorer = if cp.done(Stage::Scorer, &[&scorer_file]) {
        stages.push((Stage::Scorer, StageStatus::Skipped));
        load_scorer(&scorer_file).map_err(|e: ScorerFileError| stage_err(Stage::Scorer)(&e))?
    } else {
        let outcome = train_scorer(&rewards, None, &pool, &train, &cfg.selector.hyper(), cfg.selector.seed)
            .map_err(|e| stage_err(Stage::Scorer)(&e))?;
        save_scorer(&scorer_file, &outcome.state, outcome.best_epoch).map_err(|e| stage_err(Stage::Scorer)(&e))?;
        write_json(&results_dir.join("scorer_history.json"), &outcome.history).map_err(|e| (Stage::Scorer, e))?;
        cp.mark(Stage::Scorer)?;
        stages.push((Stage::Scorer, StageStatus::Ran));
        outcome.state
    };

    // Evaluation.
    let results_file = results_dir.join(RESULTS_FILE);
    let records_file = results_dir.join(RECORDS_FILE);
    let selections_file = results_dir.join(SELECTIONS_FILE);
    if cp.done(Stage::Evaluate, &[&results_file, &records_file, &selections_file]) {
        stages.push((Stage::Evaluate, StageStatus::Skipped));
    } else {
        let selections = select_all(cfg, &tests, &pool, &scorer, &rewards, &client)?;
        write_json(&selections_file, &selections).map_err(|e| (Stage::Evaluate, e))?;
        let work: Vec<(&TaskDataset, String, Option<AugmenterSpec>)> = tests
            .iter()
            .flat_map(|t| {
                methods_for(cfg, &manual, &selections, &t.task_name, &pool)
                    .into_iter()
                    .map(move |(id, spec)| (t, id, spec))
            })
            .collect();
        let runs: Vec<Result<MethodRun, augmenta_core::eval::EvalError<ReferenceError>>> = work
            .par_iter()
            .map(|(t, id, spec)| evaluate(t, id, spec.as_ref(), Split::Test, &opts_eval, &tables, Some(&client)))
            .collect();
        let mut results: Vec<EvalResult> = Vec::new();
        let mut records: Vec<AugmentationRecord> = Vec::new();
        let mut failed = Vec::new();
        for ((t, id, _), run) in work.iter().zip(runs) {
            match run {
                Ok(r) => {
                    for (seed, msg) in &r.evaluation.failures {
                        warnings.push(format!("{} / {id} seed {seed}: {msg}", t.task_name));
                    }
                    results.extend(r.evaluation.results);
                    records.extend(r.records);
                }
                Err(e) => failed.push(format!("{} / {id}: {e}", t.task_name)),
            }
        }
        results.sort_by(|a, b| (&a.task_name, &a.method_id, a.seed).cmp(&(&b.task_name, &b.method_id, b.seed)));
        write_jsonl(&results_file, &results).map_err(|e| (Stage::Evaluate, e))?;
        write_records(&records_file, &records).map_err(|e| (Stage::Evaluate, e))?;
        if !failed.is_empty() {
            write_ledger(results_dir, &client)?;
            return Err(stage_err(Stage::Evaluate)(&failed.join("; ")));
        }
        cp.mark(Stage::Evaluate)?;
        stages.push((Stage::Evaluate, StageStatus::Ran));
    }

    let report = emit_report(results_dir).map_err(|e: ReportError| stage_err(Stage::Report)(&e))?;
    cp.mark(Stage::Report)?;
    stages.push((Stage::Report, StageStatus::Ran));
    let usage = write_ledger(results_dir, &client)?;
    Ok(PipelineOutcome {
        stages,
        usage,
        report,
        warnings,
    })
}

fn write_ledger(results_dir: &Path, client: &LlmClient) -> Result<UsageSnapshot, PipelineError> {
    let usage = client.ledger().snapshot();
    write_json(&results_dir.join(LEDGER_FILE), &usage).map_err(|e| (Stage::Report, e))?;
    Ok(usage)
}

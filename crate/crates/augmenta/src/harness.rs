//! The few-shot protocol wired to real augmenters and the reference target
//! model.

use std::fmt;

use augmenta_core::augment::tables::Tables;
use augmenta_core::augment::{AugmenterSpec, Method};
use augmenta_core::eval::{
    evaluate_task, reward_split, EvalError, ReferenceConfig, ReferenceError, ReferenceTargetModel, TargetModel,
    TaskEvaluation, DEFAULT_K, DEFAULT_SEEDS,
};
use augmenta_core::instructgen::InstructionPool;
use augmenta_core::model::{AugmentationRecord, Split, TaskDataset};
use augmenta_core::rng::{derive_seed, RngStream};
use augmenta_core::selector::RewardRecord;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::apply_to_dataset;
use crate::backend::LlmClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub reference: ReferenceConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: DEFAULT_K,
            seeds: DEFAULT_SEEDS.to_vec(),
            reference: ReferenceConfig::default(),
        }
    }
}

/// Per-seed results plus every augmentation record that fed them.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub evaluation: TaskEvaluation,
    pub records: Vec<AugmentationRecord>,
}

/// Runs one method on one task. `spec == None` is the no-augmentation
/// baseline. For evaluation seed `s` the augmenter runs with seed
/// `derive_seed(spec.seed, s)` and its records are relabelled `method_id`.
pub fn evaluate(
    task: &TaskDataset,
    method_id: &str,
    spec: Option<&AugmenterSpec>,
    split: Split,
    opts: &EvalOptions,
    tables: &Tables,
    client: Option<&LlmClient>,
) -> Result<MethodRun, EvalError<ReferenceError>> {
    evaluate_with(
        task,
        method_id,
        spec,
        split,
        opts,
        tables,
        client,
        &reference_factory(opts),
    )
}

/// Fresh reference models seeded with the evaluation seed.
pub fn reference_factory(opts: &EvalOptions) -> impl Fn(u64) -> ReferenceTargetModel + Sync {
    let cfg = opts.reference;
    move |seed| ReferenceTargetModel::new(ReferenceConfig { seed, ..cfg })
}

/// [`evaluate`] with any target model.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with<M: TargetModel>(
    task: &TaskDataset,
    method_id: &str,
    spec: Option<&AugmenterSpec>,
    split: Split,
    opts: &EvalOptions,
    tables: &Tables,
    client: Option<&LlmClient>,
    factory: &(impl Fn(u64) -> M + Sync),
) -> Result<MethodRun, EvalError<M::Error>> {
    let mut records = Vec::new();
    let evaluation = evaluate_task(
        task,
        method_id,
        opts.k,
        &opts.seeds,
        split,
        factory,
        |few: &TaskDataset, seed| -> Result<Vec<AugmentationRecord>, crate::augment::AugmentError> {
            let Some(spec) = spec else {
                return Ok(Vec::new());
            };
            let seeded = AugmenterSpec {
                seed: derive_seed(spec.seed, seed),
                ..spec.clone()
            };
            let mut out = apply_to_dataset(&seeded, few, tables, client)?;
            for r in &mut out {
                r.method_id = method_id.to_string();
            }
            records.extend(out.iter().cloned());
            Ok(out)
        },
    )?;
    Ok(MethodRun { evaluation, records })
}

/// Which pool entries each training task is rewarded on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RewardGrid {
    #[default]
    Full,
    /// A seeded sample of this many instructions per task.
    PerTask(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPair {
    pub task: String,
    pub instruction: String,
    pub reason: String,
}

impl fmt::Display for SkippedPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}: {}", self.task, self.instruction, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardRun {
    pub records: Vec<RewardRecord>,
    pub skipped: Vec<SkippedPair>,
}

/// Instruction indices rewarded for task number `t`, ascending.
pub fn grid_indices(grid: RewardGrid, pool_len: usize, t: usize, seed: u64) -> Vec<usize> {
    match grid {
        RewardGrid::Full => (0..pool_len).collect(),
        RewardGrid::PerTask(n) => {
            let mut idx = RngStream::derive(seed, t as u64).sample_indices(pool_len, n);
            idx.sort_unstable();
            idx
        }
    }
}

/// Reward of instruction `j` on a task = mean metric over the seeds of a
/// target model trained on the task's few-shot set plus its `j`-augmented
/// copy, measured on dev (test when there is no dev split). Pairs whose
/// every seed failed are skipped and reported.
pub fn generate_rewards(
    tasks: &[TaskDataset],
    pool: &InstructionPool,
    grid: RewardGrid,
    opts: &EvalOptions,
    tables: &Tables,
    client: &LlmClient,
    seed: u64,
) -> RewardRun {
    generate_rewards_with(tasks, pool, grid, opts, tables, client, seed, &reference_factory(opts))
}

/// [`generate_rewards`] with any target model.
#[allow(clippy::too_many_arguments)]
pub fn generate_rewards_with<M: TargetModel>(
    tasks: &[TaskDataset],
    pool: &InstructionPool,
    grid: RewardGrid,
    opts: &EvalOptions,
    tables: &Tables,
    client: &LlmClient,
    seed: u64,
    factory: &(impl Fn(u64) -> M + Sync),
) -> RewardRun {
    let work: Vec<(&TaskDataset, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, task)| {
            grid_indices(grid, pool.len(), t, seed)
                .into_iter()
                .map(move |j| (task, j))
        })
        .collect();
    let outcomes: Vec<Result<RewardRecord, SkippedPair>> = work
        .par_iter()
        .map(|&(task, j)| {
            let ins = &pool.instructions[j];
            let spec = AugmenterSpec::new(Method::LlmInstruction(ins.clone()), seed);
            let id = Method::LlmInstruction(ins.clone()).id();
            evaluate_with(
                task,
                &id,
                Some(&spec),
                reward_split(task),
                opts,
                tables,
                Some(client),
                factory,
            )
            .map(|run| RewardRecord {
                task_name: task.task_name.clone(),
                instruction_name: ins.name.clone(),
                reward: run.evaluation.mean,
                seed,
            })
            .map_err(|e| SkippedPair {
                task: task.task_name.clone(),
                instruction: ins.name.clone(),
                reason: e.to_string(),
            })
        })
        .collect();
    let mut run = RewardRun::default();
    for o in outcomes {
        match o {
            Ok(r) => run.records.push(r),
            Err(s) => run.skipped.push(s),
        }
    }
    run
}

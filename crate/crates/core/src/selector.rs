//! Task-informed instruction selection.
//!
//! A scorer maps `(task descriptor, instruction)` to a real score `q`. The
//! reference scorer is linear over hashed text features and is trained with
//! a listwise softmax cross-entropy that rewards putting the empirically best
//! of `n` sampled instructions first. Inference is an argmax over the pool.
//!
//! The baselines (random, empirical-best, ask-the-LLM) are here as well so
//! they can be compared on equal footing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatRequest, Complete};
use crate::hashing::{hash_features, SparseVec};
use crate::instructgen::InstructionPool;
use crate::model::{Instruction, TaskDataset};
use crate::rng::RngStream;
use crate::text::{jaccard, rouge_l, tokenize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectorError {
    #[error("scorer expects {expected} weights, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("all rewards in the batch are equal")]
    DegenerateBatch,
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("score and reward vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("task `{task}` has rewards for {have} instructions, {need} needed")]
    InsufficientRewards { task: String, have: usize, need: usize },
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("task `{0}` has fewer training inputs than the descriptor needs")]
    ShortTask(String),
    #[error("no reward records")]
    NoRecords,
    #[error("instruction pool is empty")]
    EmptyPool,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
}

/// What the scorer sees about a task: its name, the target model and `m`
/// representative inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_name: String,
    pub target_model_name: String,
    pub rep_examples: Vec<String>,
}

impl TaskDescriptor {
    /// Uses the first `m` training inputs in file order.
    pub fn from_task(task: &TaskDataset, target_model_name: &str, m: usize) -> Result<Self, SelectorError> {
        if m == 0 || task.train.len() < m {
            return Err(SelectorError::ShortTask(task.task_name.clone()));
        }
        Ok(TaskDescriptor {
            task_name: task.task_name.clone(),
            target_model_name: target_model_name.to_string(),
            rep_examples: task.train[..m].iter().map(|e| e.input.clone()).collect(),
        })
    }

    pub fn m(&self) -> usize {
        self.rep_examples.len()
    }
}

/// The natural-language scoring prompt for a text-to-text scorer.
pub fn build_scoring_prompt(desc: &TaskDescriptor, ins: &Instruction) -> String {
    format!(
        "Given the dataset for task {} and the instruction data, determine if this is a suitable instruction \
         to address the task for model {}. Task Dataset: {} Instruction: {}. Is this instruction appropriate?",
        desc.task_name,
        desc.target_model_name,
        desc.rep_examples.join("\n"),
        ins.render()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_gram_max: usize,
    pub dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_gram_max: 1,
            dim: 256,
        }
    }
}

/// Number of scalar features appended after the three hashed blocks.
pub const N_SCALARS: usize = 3;

impl FeatureConfig {
    /// Three hashed blocks (instruction, examples, interaction) plus the
    /// scalars.
    pub fn total_dim(&self) -> usize {
        3 * self.dim + N_SCALARS
    }

    /// Index of scalar `k`: 0 = ROUGE-L(body, examples), 1 = body length/100,
    /// 2 = token Jaccard.
    pub fn scalar_index(&self, k: usize) -> usize {
        3 * self.dim + k
    }
}

/// Feature vector of an `(instruction, task)` pair.
///
/// Layout: `[0, dim)` hashed instruction body (unit L2 norm), `[dim, 2·dim)` hashed joined
/// examples (unit L2 norm), `[2·dim, 3·dim)` their elementwise product, then ROUGE-L of the
/// body against the joined examples, body token count / 100 and the Jaccard
/// overlap of the two token sets.
pub fn featurize_pair(desc: &TaskDescriptor, ins: &Instruction, cfg: &FeatureConfig) -> SparseVec {
    let body = tokenize(&ins.body);
    let examples = tokenize(&desc.rep_examples.join(" "));
    let hb = unit(hash_features(&body, cfg.n_gram_max, cfg.dim));
    let he = unit(hash_features(&examples, cfg.n_gram_max, cfg.dim));
    let inter = hb.hadamard(&he);
    let scalars = SparseVec::from_pairs(vec![
        (cfg.scalar_index(0), rouge_l(&body, &examples, 1.0)),
        (cfg.scalar_index(1), body.len() as f64 / 100.0),
        (cfg.scalar_index(2), jaccard(&body, &examples)),
    ]);
    hb.add(&he.offset(cfg.dim))
        .add(&inter.offset(2 * cfg.dim))
        .add(&scalars)
}

fn unit(v: SparseVec) -> SparseVec {
    let norm = libm::sqrt(v.entries().iter().map(|(_, x)| x * x).sum::<f64>());
    if norm > 0.0 {
        v.scale(1.0 / norm)
    } else {
        v
    }
}

/// Parameters of the linear reference scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerState {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_config: FeatureConfig,
    pub trained_on: String,
}

impl ScorerState {
    pub fn zeros(feature_config: FeatureConfig) -> Self {
        ScorerState {
            weights: vec![0.0; feature_config.total_dim()],
            bias: 0.0,
            feature_config,
            trained_on: String::new(),
        }
    }

    pub fn check(&self) -> Result<(), SelectorError> {
        let expected = self.feature_config.total_dim();
        if self.weights.len() != expected {
            return Err(SelectorError::DimMismatch {
                expected,
                found: self.weights.len(),
            });
        }
        Ok(())
    }

    pub fn score_features(&self, features: &SparseVec) -> f64 {
        features.dot(&self.weights) + self.bias
    }
}

/// `q = w · φ(desc, ins) + b`.
pub fn score(state: &ScorerState, desc: &TaskDescriptor, ins: &Instruction) -> Result<f64, SelectorError> {
    state.check()?;
    Ok(state.score_features(&featurize_pair(desc, ins, &state.feature_config)))
}

/// Index of the largest value, lowest index on ties. `None` when empty.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Winner of a reward batch: argmax with lowest-index ties. Fails when every
/// reward is within 1e-12 of the others.
pub fn winner(rewards: &[f64]) -> Result<usize, SelectorError> {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    if max - min <= 1e-12 {
        return Err(SelectorError::DegenerateBatch);
    }
    Ok(argmax(rewards).expect("non-empty"))
}

/// Numerically stable `log softmax(q)`.
pub fn log_softmax(q: &[f64]) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(q.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
    q.iter().map(|&x| x - lse).collect()
}

pub fn softmax(q: &[f64]) -> Vec<f64> {
    log_softmax(q).into_iter().map(libm::exp).collect()
}

fn check_batch(q: &[f64], rewards: &[f64]) -> Result<usize, SelectorError> {
    if q.len() != rewards.len() {
        return Err(SelectorError::LengthMismatch(q.len(), rewards.len()));
    }
    if q.len() < 2 {
        return Err(SelectorError::TooFewItems(q.len()));
    }
    winner(rewards)
}

/// `-Σ_j is_max(r_j) · log softmax(q)_j`, i.e. minus the log-probability the
/// softmax assigns to the best-rewarded item.
pub fn listwise_loss(q: &[f64], rewards: &[f64]) -> Result<f64, SelectorError> {
    let w = check_batch(q, rewards)?;
    Ok(-log_softmax(q)[w])
}

/// `∂L/∂q_j = softmax(q)_j − is_max(r_j)`.
pub fn loss_gradient(q: &[f64], rewards: &[f64]) -> Result<Vec<f64>, SelectorError> {
    let w = check_batch(q, rewards)?;
    let mut g = softmax(q);
    g[w] -= 1.0;
    Ok(g)
}

/// Gradient of the loss with respect to the linear scorer's weights and bias,
/// given each item's feature vector.
pub fn loss_gradient_params(
    state: &ScorerState,
    features: &[SparseVec],
    rewards: &[f64],
) -> Result<(f64, SparseVec, f64), SelectorError> {
    let q: Vec<f64> = features.iter().map(|f| state.score_features(f)).collect();
    let loss = listwise_loss(&q, rewards)?;
    let dq = loss_gradient(&q, rewards)?;
    let mut grad = SparseVec::new();
    for (f, &g) in features.iter().zip(&dq) {
        grad = grad.add(&f.scale(g));
    }
    let dbias = dq.iter().sum();
    Ok((loss, grad, dbias))
}

/// Measured downstream performance of one instruction on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub task_name: String,
    pub instruction_name: String,
    pub reward: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    /// Instructions sampled per training step.
    pub n: usize,
    /// Representative examples per task descriptor.
    pub m: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Task groups per gradient step.
    pub batch_size: usize,
    pub target_model_name: String,
    pub feature_config: FeatureConfig,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            n: 2,
            m: 2,
            lr: 0.05,
            epochs: 1000,
            patience: 100,
            batch_size: 1,
            target_model_name: "reference-linear".into(),
            feature_config: FeatureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean listwise loss over each task's full rewarded list after the epoch.
    pub train_loss: f64,
    /// Mean sampled-batch loss during the epoch.
    pub step_loss: f64,
    pub dev_quality: f64,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub state: ScorerState,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
}

/// Precomputed features and rewards for one task.
struct TaskGroup {
    features: Vec<SparseVec>,
    rewards: Vec<f64>,
}

fn build_groups(
    records: &[RewardRecord],
    pool: &InstructionPool,
    tasks: &[TaskDataset],
    hyper: &TrainHyper,
) -> Result<Vec<TaskGroup>, SelectorError> {
    // Mean reward per (task, instruction) in first-seen order of tasks.
    let mut order: Vec<&str> = Vec::new();
    let mut sums: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for r in records {
        if pool.get(&r.instruction_name).is_none() {
            continue;
        }
        if !order.contains(&r.task_name.as_str()) {
            order.push(&r.task_name);
        }
        let e = sums.entry((&r.task_name, &r.instruction_name)).or_insert((0.0, 0));
        e.0 += r.reward;
        e.1 += 1;
    }
    let mut groups = Vec::with_capacity(order.len());
    for name in order {
        let task = tasks
            .iter()
            .find(|t| t.task_name == name)
            .ok_or_else(|| SelectorError::UnknownTask(name.to_string()))?;
        let desc = TaskDescriptor::from_task(task, &hyper.target_model_name, hyper.m)?;
        let mut features = Vec::new();
        let mut rewards = Vec::new();
        for ins in &pool.instructions {
            if let Some(&(s, c)) = sums.get(&(name, ins.name.as_str())) {
                features.push(featurize_pair(&desc, ins, &hyper.feature_config));
                rewards.push(s / c as f64);
            }
        }
        if rewards.len() < hyper.n {
            return Err(SelectorError::InsufficientRewards {
                task: name.to_string(),
                have: rewards.len(),
                need: hyper.n,
            });
        }
        groups.push(TaskGroup { features, rewards });
    }
    Ok(groups)
}

/// One epoch's schedule: every task's rewarded instructions split at random
/// into groups of `n` (the last group topped up with other instructions of the
/// same task), all groups visited in a random order.
fn epoch_units(groups: &[TaskGroup], n: usize, rng: &mut RngStream) -> Vec<(usize, Vec<usize>)> {
    let mut units = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let mut items: Vec<usize> = (0..g.rewards.len()).collect();
        rng.shuffle(&mut items);
        for chunk in items.chunks(n) {
            let mut pick = chunk.to_vec();
            while pick.len() < n {
                let extra = items[rng.below(items.len())];
                if !pick.contains(&extra) {
                    pick.push(extra);
                }
            }
            units.push((gi, pick));
        }
    }
    rng.shuffle(&mut units);
    units
}

fn full_list_loss(state: &ScorerState, groups: &[TaskGroup]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for g in groups {
        let q: Vec<f64> = g.features.iter().map(|f| state.score_features(f)).collect();
        if let Ok(l) = listwise_loss(&q, &g.rewards) {
            total += l;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Whether the item at `chosen` has a reward within the top 20% of `rewards`.
pub fn in_top_fraction(rewards: &[f64], chosen: usize, fraction: f64) -> bool {
    let mut sorted = rewards.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = libm::ceil(fraction * sorted.len() as f64).max(1.0) as usize;
    rewards[chosen] >= sorted[k - 1]
}

fn dev_quality(state: &ScorerState, groups: &[TaskGroup]) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let hits = groups
        .iter()
        .filter(|g| {
            let q: Vec<f64> = g.features.iter().map(|f| state.score_features(f)).collect();
            argmax(&q).is_some_and(|i| in_top_fraction(&g.rewards, i, 0.2))
        })
        .count();
    hits as f64 / groups.len() as f64
}

/// Trains the linear scorer with plain SGD on the listwise loss.
///
/// An epoch is one pass over the reward records: each task's rewarded
/// instructions are split at random into groups of `n`, and the groups are
/// visited in a seeded order, `batch_size` groups per update. Batches whose rewards are all equal are
/// skipped. After every epoch the scorer is scored on `dev` (defaulting to
/// the training records): the fraction of tasks whose argmax instruction is
/// in the top 20% of measured rewards. The best epoch (ties broken by lower
/// training loss) is returned; training stops after `patience` epochs without
/// improvement.
pub fn train_scorer(
    records: &[RewardRecord],
    dev: Option<&[RewardRecord]>,
    pool: &InstructionPool,
    tasks: &[TaskDataset],
    hyper: &TrainHyper,
    seed: u64,
) -> Result<TrainOutcome, SelectorError> {
    let lr_ok = hyper.lr.is_finite() && hyper.lr > 0.0;
    if hyper.n < 2 || hyper.m == 0 || hyper.batch_size == 0 || !lr_ok {
        return Err(SelectorError::InvalidHyper(format!(
            "n={} m={} batch_size={} lr={}",
            hyper.n, hyper.m, hyper.batch_size, hyper.lr
        )));
    }
    if records.is_empty() {
        return Err(SelectorError::NoRecords);
    }
    let groups = build_groups(records, pool, tasks, hyper)?;
    let dev_groups = match dev {
        Some(d) if !d.is_empty() => build_groups(d, pool, tasks, &TrainHyper { n: 1, ..hyper.clone() })?,
        _ => build_groups(records, pool, tasks, hyper)?,
    };

    let mut state = ScorerState::zeros(hyper.feature_config);
    state.trained_on = format!("{} tasks", groups.len());
    let initial_loss = full_list_loss(&state, &groups);
    let mut best = state.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut rng = RngStream::new(seed);

    for epoch in 1..=hyper.epochs {
        let units = epoch_units(&groups, hyper.n, &mut rng);
        let mut step_loss = 0.0;
        let mut steps = 0;
        let mut skipped = 0;
        for (step, chunk) in units.chunks(hyper.batch_size).enumerate() {
            let mut grad = SparseVec::new();
            let mut dbias = 0.0;
            let mut used = 0;
            for (gi, pick) in chunk {
                let g = &groups[*gi];
                let feats: Vec<SparseVec> = pick.iter().map(|&i| g.features[i].clone()).collect();
                let rewards: Vec<f64> = pick.iter().map(|&i| g.rewards[i]).collect();
                match loss_gradient_params(&state, &feats, &rewards) {
                    Ok((loss, gw, gb)) => {
                        if !loss.is_finite() {
                            return Err(SelectorError::NonFiniteLoss { epoch, step });
                        }
                        step_loss += loss;
                        steps += 1;
                        used += 1;
                        grad = grad.add(&gw);
                        dbias += gb;
                    }
                    Err(SelectorError::DegenerateBatch) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if used > 0 {
                let scale = hyper.lr / used as f64;
                for &(i, v) in grad.entries() {
                    state.weights[i] -= scale * v;
                }
                state.bias -= scale * dbias;
            }
        }
        let train_loss = full_list_loss(&state, &groups);
        if !train_loss.is_finite() {
            return Err(SelectorError::NonFiniteLoss {
                epoch,
                step: usize::MAX,
            });
        }
        let quality = dev_quality(&state, &dev_groups);
        history.push(EpochStats {
            epoch,
            train_loss,
            step_loss: if steps > 0 { step_loss / steps as f64 } else { 0.0 },
            dev_quality: quality,
            skipped_batches: skipped,
        });
        if quality > best_key.0 || (quality == best_key.0 && train_loss < best_key.1) {
            best_key = (quality, train_loss);
            best = state.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience.max(1) {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        state: best,
        best_epoch,
        initial_loss,
        history,
    })
}

/// A chosen instruction plus the evidence behind the choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub instruction: Instruction,
    /// Per-pool-entry scores for scorer-based selection; empty otherwise.
    pub scores: Vec<f64>,
    /// Set when a baseline had to fall back to a random pick.
    pub fallback: bool,
}

/// Scores every pool entry and returns the argmax (lowest index on ties).
pub fn select_instruction(
    state: &ScorerState,
    pool: &InstructionPool,
    desc: &TaskDescriptor,
) -> Result<Selection, SelectorError> {
    state.check()?;
    let scores: Vec<f64> = pool
        .instructions
        .iter()
        .map(|ins| state.score_features(&featurize_pair(desc, ins, &state.feature_config)))
        .collect();
    select_by_scores(pool, scores)
}

/// Argmax selection from externally computed scores.
pub fn select_by_scores(pool: &InstructionPool, scores: Vec<f64>) -> Result<Selection, SelectorError> {
    let index = argmax(&scores).ok_or(SelectorError::EmptyPool)?;
    Ok(Selection {
        index,
        instruction: pool.instructions[index].clone(),
        scores,
        fallback: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    TaskInformed,
    RandomSelect,
    EmpiricalSelect,
    LlmSelect,
}

impl SelectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectorKind::TaskInformed => "task_informed",
            SelectorKind::RandomSelect => "random_select",
            SelectorKind::EmpiricalSelect => "empirical_select",
            SelectorKind::LlmSelect => "llm_select",
        }
    }
}

/// Uniform draw from the pool.
pub fn random_select(pool: &InstructionPool, seed: u64) -> Result<Selection, SelectorError> {
    if pool.is_empty() {
        return Err(SelectorError::EmptyPool);
    }
    let index = RngStream::new(seed).below(pool.len());
    Ok(Selection {
        index,
        instruction: pool.instructions[index].clone(),
        scores: Vec::new(),
        fallback: false,
    })
}

/// Instruction with the best mean reward over the training tasks. Pool
/// entries without any record are not eligible.
pub fn empirical_select(pool: &InstructionPool, records: &[RewardRecord]) -> Result<Selection, SelectorError> {
    if records.is_empty() {
        return Err(SelectorError::NoRecords);
    }
    let mut means = Vec::with_capacity(pool.len());
    for ins in &pool.instructions {
        let (sum, n) = records
            .iter()
            .filter(|r| r.instruction_name == ins.name)
            .fold((0.0, 0usize), |(s, n), r| (s + r.reward, n + 1));
        means.push(if n == 0 { f64::NEG_INFINITY } else { sum / n as f64 });
    }
    let index = argmax(&means).ok_or(SelectorError::EmptyPool)?;
    if means[index] == f64::NEG_INFINITY {
        return Err(SelectorError::NoRecords);
    }
    Ok(Selection {
        index,
        instruction: pool.instructions[index].clone(),
        scores: means,
        fallback: false,
    })
}

pub const LLM_SELECT_REPLY_HINT: &str = "Reply with the number of the most suitable instruction.";

/// Prompt listing the task and every pool entry, numbered from 0.
pub fn build_llm_select_prompt(pool: &InstructionPool, desc: &TaskDescriptor) -> String {
    let mut s = format!(
        "Given the dataset for task {} and the candidate data augmentation instructions below, choose the \
         instruction that is most suitable for improving model {} on this task.\nTask Dataset:\n{}\nInstructions:",
        desc.task_name,
        desc.target_model_name,
        desc.rep_examples.join("\n")
    );
    for (i, ins) in pool.instructions.iter().enumerate() {
        let _ = write!(s, "\n{}. {}", i, ins.render());
    }
    s.push('\n');
    s.push_str(LLM_SELECT_REPLY_HINT);
    s
}

/// First run of ASCII digits in `text`, as a number.
pub fn parse_choice(text: &str) -> Option<usize> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Asks the model to pick; falls back to [`random_select`] (flagged) when the
/// reply has no in-range number.
pub fn llm_select<C: Complete + ?Sized>(
    pool: &InstructionPool,
    desc: &TaskDescriptor,
    backend: &C,
    seed: u64,
) -> Result<Selection, C::Error> {
    if pool.is_empty() {
        // Callers check emptiness first.
        panic!("llm_select on an empty pool");
    }
    let reply = backend.complete(&ChatRequest::user(build_llm_select_prompt(pool, desc)))?;
    match parse_choice(&reply).filter(|&i| i < pool.len()) {
        Some(index) => Ok(Selection {
            index,
            instruction: pool.instructions[index].clone(),
            scores: Vec::new(),
            fallback: false,
        }),
        None => {
            let mut s = random_select(pool, seed).expect("non-empty pool");
            s.fallback = true;
            Ok(s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Example, Origin, TaskKind};
    use proptest::prelude::*;

    fn ins(name: &str, body: &str) -> Instruction {
        Instruction::new(name, body, Origin::LlmGenerated).unwrap()
    }

    fn desc(examples: &[&str]) -> TaskDescriptor {
        TaskDescriptor {
            task_name: "glue-rte".into(),
            target_model_name: "target-125m".into(),
            rep_examples: examples.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn scoring_prompt_slots_in_order() {
        let p = build_scoring_prompt(
            &desc(&["first premise", "second premise"]),
            &ins("Paraphrase", "Render the same text in different words."),
        );
        let slots = [
            "task glue-rte",
            "model target-125m",
            "Task Dataset: first premise\nsecond premise",
            "Instruction: Paraphrase: Render the same text in different words.",
            "Is this instruction appropriate?",
        ];
        let mut at = 0;
        for s in slots {
            let pos = p[at..].find(s).unwrap_or_else(|| panic!("missing {s}"));
            at += pos + s.len();
        }
        let one = build_scoring_prompt(&desc(&["only"]), &ins("A", "b"));
        assert!(one.contains("Task Dataset: only Instruction: A: b."));
    }

    #[test]
    fn features_scalars() {
        let cfg = FeatureConfig { n_gram_max: 1, dim: 16 };
        let d = desc(&["b c"]);
        let f = featurize_pair(&d, &ins("X", "a b"), &cfg);
        assert!((f.get(cfg.scalar_index(2)) - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.get(cfg.scalar_index(1)) - 0.02).abs() < 1e-15);
        // LCS("a b", "b c") = 1 → P = R = 1/2.
        assert!((f.get(cfg.scalar_index(0)) - 0.5).abs() < 1e-15);
        assert_eq!(f, featurize_pair(&d, &ins("X", "a b"), &cfg));
        let empty = Instruction {
            name: "E".into(),
            body: String::new(),
            origin: Origin::LlmGenerated,
        };
        let fe = featurize_pair(&d, &empty, &cfg);
        assert!(fe.entries().iter().all(|&(i, _)| i >= cfg.dim));
        assert_eq!(fe.get(cfg.scalar_index(1)), 0.0);
    }

    #[test]
    fn score_probes() {
        let cfg = FeatureConfig { n_gram_max: 1, dim: 16 };
        let d = desc(&["alpha beta", "gamma"]);
        let i = ins("X", "alpha gamma delta");
        let zero = ScorerState::zeros(cfg);
        assert_eq!(score(&zero, &d, &i).unwrap(), 0.0);
        let mut probe = ScorerState::zeros(cfg);
        probe.weights[cfg.scalar_index(0)] = 1.0;
        let expected = rouge_l(&tokenize(&i.body), &tokenize("alpha beta gamma"), 1.0);
        assert_eq!(score(&probe, &d, &i).unwrap(), expected);
        probe.weights.pop();
        assert!(matches!(score(&probe, &d, &i), Err(SelectorError::DimMismatch { .. })));
    }

    #[test]
    fn score_golden_dot_product() {
        // Reference: dense dot product over an independently assembled vector.
        let cfg = FeatureConfig { n_gram_max: 2, dim: 8 };
        let d = desc(&["the film was good", "i liked it"]);
        let i = ins("Swap", "swap the words");
        let mut state = ScorerState::zeros(cfg);
        for (k, w) in state.weights.iter_mut().enumerate() {
            *w = (k as f64 * 0.37).sin();
        }
        state.bias = 0.25;
        let body = tokenize(&i.body);
        let ex = tokenize("the film was good i liked it");
        let norm = |v: Vec<f64>| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let hb = norm(hash_features(&body, 2, 8).to_dense(8));
        let he = norm(hash_features(&ex, 2, 8).to_dense(8));
        let mut dense = vec![0.0; cfg.total_dim()];
        for k in 0..8 {
            dense[k] = hb[k];
            dense[8 + k] = he[k];
            dense[16 + k] = hb[k] * he[k];
        }
        dense[24] = rouge_l(&body, &ex, 1.0);
        dense[25] = 0.03;
        dense[26] = jaccard(&body, &ex);
        let expected: f64 = dense.iter().zip(&state.weights).map(|(a, b)| a * b).sum::<f64>() + 0.25;
        assert!((score(&state, &d, &i).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_closed_forms() {
        assert!((listwise_loss(&[0.0, 0.0], &[1.0, 0.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        let l = listwise_loss(&[2.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((l - libm::log1p(libm::exp(-2.0))).abs() < 1e-12);
        assert!((l - 0.126928).abs() < 1e-6);
        let big = listwise_loss(&[0.0, 10.0], &[1.0, 0.0]).unwrap();
        assert!((big - 10.0000454).abs() < 1e-7);
        assert_eq!(
            listwise_loss(&[0.0, 1.0], &[0.5, 0.5]),
            Err(SelectorError::DegenerateBatch)
        );
        assert_eq!(listwise_loss(&[0.0], &[0.5]), Err(SelectorError::TooFewItems(1)));
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(loss_gradient(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![-0.5, 0.5]);
        let g = loss_gradient(&[60.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-20));
    }

    #[test]
    fn top_fraction() {
        let r = [0.1, 0.9, 0.5, 0.3, 0.2];
        assert!(in_top_fraction(&r, 1, 0.2));
        assert!(!in_top_fraction(&r, 2, 0.2));
    }

    #[test]
    fn selection_rules() {
        let pool = InstructionPool::from_seeds(vec![ins("A", "short"), ins("B", "a much longer body here")]);
        let cfg = FeatureConfig { n_gram_max: 1, dim: 16 };
        let mut state = ScorerState::zeros(cfg);
        // All-zero scores tie: lowest index wins.
        assert_eq!(select_instruction(&state, &pool, &desc(&["x"])).unwrap().index, 0);
        state.weights[cfg.scalar_index(1)] = 1.0;
        let s = select_instruction(&state, &pool, &desc(&["x"])).unwrap();
        assert_eq!(s.instruction.name, "B");
        let single = InstructionPool::from_seeds(vec![ins("Only", "one")]);
        assert_eq!(select_instruction(&state, &single, &desc(&["x"])).unwrap().index, 0);
    }

    #[test]
    fn empirical_prefers_best_mean() {
        let pool = InstructionPool::from_seeds(vec![ins("A", "a"), ins("B", "b"), ins("C", "c")]);
        let rec = |i: &str, t: &str, r: f64| RewardRecord {
            task_name: t.into(),
            instruction_name: i.into(),
            reward: r,
            seed: 0,
        };
        let records = vec![rec("A", "t1", 0.5), rec("A", "t2", 0.7), rec("B", "t1", 0.9)];
        let s = empirical_select(&pool, &records).unwrap();
        assert_eq!(s.instruction.name, "B");
        assert!((s.scores[0] - 0.6).abs() < 1e-12);
        assert_eq!(s.scores[2], f64::NEG_INFINITY);
        assert_eq!(empirical_select(&pool, &[]), Err(SelectorError::NoRecords));
    }

    #[test]
    fn random_is_reproducible() {
        let pool = InstructionPool::from_seeds((0..10).map(|i| ins(&format!("I{i}"), "b")).collect());
        assert_eq!(random_select(&pool, 5).unwrap(), random_select(&pool, 5).unwrap());
    }

    struct Fixed(&'static str);

    impl Complete for Fixed {
        type Error = ();

        fn complete(&self, _req: &ChatRequest) -> Result<String, ()> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn llm_select_parsing() {
        let pool = InstructionPool::from_seeds((0..5).map(|i| ins(&format!("I{i}"), "b")).collect());
        let d = desc(&["x"]);
        let s = llm_select(&pool, &d, &Fixed("The best is 3."), 1).unwrap();
        assert_eq!((s.index, s.fallback), (3, false));
        let s = llm_select(&pool, &d, &Fixed("none of them"), 1).unwrap();
        assert!(s.fallback);
        assert_eq!(s.index, random_select(&pool, 1).unwrap().index);
        assert!(llm_select(&pool, &d, &Fixed("42"), 1).unwrap().fallback);
        let prompt = build_llm_select_prompt(&pool, &d);
        assert!(prompt.contains("\n0. I0: b\n"));
        assert!(prompt.ends_with(LLM_SELECT_REPLY_HINT));
    }

    fn tiny_task(name: &str, inputs: &[&str]) -> TaskDataset {
        TaskDataset {
            task_name: name.into(),
            kind: TaskKind::Classification,
            train: inputs
                .iter()
                .map(|s| Example::new(*s, "y", vec!["y".into(), "n".into()]))
                .collect(),
            dev: Vec::new(),
            test: Vec::new(),
        }
    }

    #[test]
    fn train_zero_epochs_and_errors() {
        let pool = InstructionPool::from_seeds(vec![ins("A", "alpha"), ins("B", "beta")]);
        let tasks = vec![tiny_task("t", &["alpha x", "y z"])];
        let records = vec![
            RewardRecord {
                task_name: "t".into(),
                instruction_name: "A".into(),
                reward: 0.9,
                seed: 0,
            },
            RewardRecord {
                task_name: "t".into(),
                instruction_name: "B".into(),
                reward: 0.1,
                seed: 0,
            },
        ];
        let hyper = TrainHyper {
            epochs: 0,
            ..Default::default()
        };
        let out = train_scorer(&records, None, &pool, &tasks, &hyper, 1).unwrap();
        assert!(out.state.weights.iter().all(|&w| w == 0.0));
        let hyper = TrainHyper {
            n: 3,
            ..Default::default()
        };
        assert!(matches!(
            train_scorer(&records, None, &pool, &tasks, &hyper, 1),
            Err(SelectorError::InsufficientRewards { .. })
        ));
        assert_eq!(
            train_scorer(&[], None, &pool, &tasks, &TrainHyper::default(), 1),
            Err(SelectorError::NoRecords)
        );
    }

    #[test]
    fn train_is_deterministic_and_learns() {
        let pool = InstructionPool::from_seeds(vec![ins("A", "alpha"), ins("B", "beta"), ins("C", "gamma")]);
        let tasks = vec![tiny_task("t", &["alpha x", "y z"]), tiny_task("u", &["beta q", "r s"])];
        let rec = |t: &str, i: &str, r: f64| RewardRecord {
            task_name: t.into(),
            instruction_name: i.into(),
            reward: r,
            seed: 0,
        };
        let records = vec![
            rec("t", "A", 0.9),
            rec("t", "B", 0.2),
            rec("t", "C", 0.1),
            rec("u", "A", 0.2),
            rec("u", "B", 0.8),
            rec("u", "C", 0.1),
        ];
        let hyper = TrainHyper {
            epochs: 30,
            ..Default::default()
        };
        let a = train_scorer(&records, None, &pool, &tasks, &hyper, 9).unwrap();
        let b = train_scorer(&records, None, &pool, &tasks, &hyper, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.history.last().unwrap().train_loss < a.initial_loss);
        assert_eq!(a.history[a.best_epoch - 1].dev_quality, 1.0);
    }

    fn finite_difference(q: &[f64], rewards: &[f64], j: usize, h: f64) -> f64 {
        let mut plus = q.to_vec();
        let mut minus = q.to_vec();
        plus[j] += h;
        minus[j] -= h;
        (listwise_loss(&plus, rewards).unwrap() - listwise_loss(&minus, rewards).unwrap()) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            q in proptest::collection::vec(-5.0f64..5.0, 2..6),
            seed: u64,
        ) {
            let mut rng = RngStream::new(seed);
            let rewards: Vec<f64> = q.iter().map(|_| rng.next_f64()).collect();
            prop_assume!(winner(&rewards).is_ok());
            let g = loss_gradient(&q, &rewards).unwrap();
            for (j, gj) in g.iter().enumerate() {
                let fd = finite_difference(&q, &rewards, j, 1e-5);
                prop_assert!((gj - fd).abs() <= 1e-6 * gj.abs().max(1e-3));
            }
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
            prop_assert!(listwise_loss(&q, &rewards).unwrap() >= 0.0);
        }

        #[test]
        fn pairwise_form(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let l = listwise_loss(&[a, b], &[1.0, 0.0]).unwrap();
            prop_assert!((l - libm::log1p(libm::exp(-(a - b)))).abs() < 1e-12);
        }

        #[test]
        fn shift_invariance(q in proptest::collection::vec(-5.0f64..5.0, 2..6), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            prop_assert_eq!(argmax(&q), argmax(&shifted));
            let rewards: Vec<f64> = (0..q.len()).map(|i| i as f64).collect();
            let d = listwise_loss(&q, &rewards).unwrap() - listwise_loss(&shifted, &rewards).unwrap();
            prop_assert!(d.abs() < 1e-9);
        }
    }
}

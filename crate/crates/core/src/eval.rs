//! Target models, task metrics and the few-shot evaluation protocol.
//!
//! A target model is fitted on original plus augmented pairs and predicts by
//! argmax over per-candidate scores. The reference model is a linear scorer
//! over hashed `(input token, candidate token)` features trained with softmax
//! cross-entropy over each example's candidate set.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::hashing::{bucket_and_sign, SparseVec};
use crate::model::{sample_few_shot, AugmentationRecord, ModelError, Split, TaskDataset, TaskKind};
use crate::rng::RngStream;
use crate::selector::{argmax, log_softmax, softmax};
use crate::text::tokenize;

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("gold has {0} labels, pred has {1}")]
    LengthMismatch(usize, usize),
    #[error("no labels to score")]
    Empty,
    #[error("a task group has no results")]
    EmptyGroup,
}

/// Macro-averaged F1 over every label seen in `gold` or `pred`.
pub fn macro_f1<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64, MetricError> {
    check_lengths(gold.len(), pred.len())?;
    let mut classes: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g == p {
            classes.entry(g).or_default().0 += 1;
        } else {
            classes.entry(p).or_default().1 += 1;
            classes.entry(g).or_default().2 += 1;
        }
    }
    let f1 = |&(tp, fp, fn_): &(usize, usize, usize)| {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    Ok(classes.values().map(f1).sum::<f64>() / classes.len() as f64)
}

/// Exact-match rate after trimming surrounding whitespace.
pub fn accuracy<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64, MetricError> {
    check_lengths(gold.len(), pred.len())?;
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.as_ref().trim() == p.as_ref().trim())
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

fn check_lengths(g: usize, p: usize) -> Result<(), MetricError> {
    if g != p {
        return Err(MetricError::LengthMismatch(g, p));
    }
    if g == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    MacroF1,
    Accuracy,
}

impl MetricName {
    pub fn for_kind(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Classification => MetricName::MacroF1,
            TaskKind::NonClassification => MetricName::Accuracy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::MacroF1 => "macro_f1",
            MetricName::Accuracy => "accuracy",
        }
    }

    pub fn compute<S: AsRef<str>>(self, gold: &[S], pred: &[S]) -> Result<f64, MetricError> {
        match self {
            MetricName::MacroF1 => macro_f1(gold, pred),
            MetricName::Accuracy => accuracy(gold, pred),
        }
    }
}

/// One `(task, method, seed)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(rename = "task")]
    pub task_name: String,
    #[serde(rename = "method")]
    pub method_id: String,
    pub seed: u64,
    #[serde(rename = "metric")]
    pub metric_name: MetricName,
    pub value: f64,
    pub n_test: usize,
}

/// Groups results by task name, sorted by name.
pub fn group_by_task(results: &[EvalResult]) -> Vec<Vec<EvalResult>> {
    let mut map: BTreeMap<&str, Vec<EvalResult>> = BTreeMap::new();
    for r in results {
        map.entry(&r.task_name).or_default().push(r.clone());
    }
    map.into_values().collect()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean over tasks of the per-task mean over seeds.
pub fn macro_average(groups: &[Vec<EvalResult>]) -> Result<f64, MetricError> {
    let per_task = groups
        .iter()
        .map(|g| mean(g.iter().map(|r| r.value)).ok_or(MetricError::EmptyGroup))
        .collect::<Result<Vec<f64>, _>>()?;
    mean(per_task).ok_or(MetricError::EmptyGroup)
}

/// A training triple for a target model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub input: String,
    pub output: String,
    pub candidates: Vec<String>,
}

/// Anything that can be fitted on pairs and then score candidate outputs.
pub trait TargetModel {
    type Error: Display;

    fn fit(&mut self, pairs: &[TrainPair]) -> Result<(), Self::Error>;

    /// One finite score per candidate, higher meaning more probable.
    fn candidate_scores(&self, input: &str, candidates: &[String]) -> Result<Vec<f64>, Self::Error>;
}

/// Argmax over candidate scores, lowest index on ties.
pub fn predict<M: TargetModel + ?Sized>(model: &M, input: &str, candidates: &[String]) -> Result<usize, M::Error> {
    let scores = model.candidate_scores(input, candidates)?;
    Ok(argmax(&scores).unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError<E: Display> {
    #[error("task `{0}` has no training examples")]
    EmptyTrain(String),
    #[error(transparent)]
    Data(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("target model: {0}")]
    Model(E),
    #[error("every seed failed for task `{task}`: {messages:?}")]
    AllSeedsFailed { task: String, messages: Vec<String> },
}

/// Original train pairs plus one pair per augmentation record (original label
/// and candidates), shuffled with `seed`.
pub fn training_pairs(original: &TaskDataset, augmented: &[AugmentationRecord], seed: u64) -> Vec<TrainPair> {
    let mut pairs: Vec<TrainPair> = original
        .train
        .iter()
        .map(|e| TrainPair {
            input: e.input.clone(),
            output: e.output.clone(),
            candidates: original.candidates_for(e),
        })
        .chain(augmented.iter().map(|r| TrainPair {
            input: r.augmented_input.clone(),
            output: r.original.output.clone(),
            candidates: original.candidates_for(&r.original),
        }))
        .collect();
    RngStream::new(seed).shuffle(&mut pairs);
    pairs
}

/// Fits `model` once on the union of original and augmented pairs. Returns
/// the number of pairs it saw.
pub fn train_target<M: TargetModel>(
    model: &mut M,
    original: &TaskDataset,
    augmented: &[AugmentationRecord],
    seed: u64,
) -> Result<usize, EvalError<M::Error>> {
    if original.train.is_empty() {
        return Err(EvalError::EmptyTrain(original.task_name.clone()));
    }
    let pairs = training_pairs(original, augmented, seed);
    model.fit(&pairs).map_err(EvalError::Model)?;
    Ok(pairs.len())
}

/// Predicts every example of `split` and scores with the task kind's metric.
pub fn score_split<M: TargetModel>(
    model: &M,
    task: &TaskDataset,
    split: Split,
) -> Result<(MetricName, f64, usize), EvalError<M::Error>> {
    let metric = MetricName::for_kind(task.kind);
    let examples = task.split(split);
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    for ex in examples {
        let cands = task.candidates_for(ex);
        let i = predict(model, &ex.input, &cands).map_err(EvalError::Model)?;
        gold.push(ex.output.clone());
        pred.push(cands.get(i).cloned().unwrap_or_default());
    }
    Ok((metric, metric.compute(&gold, &pred)?, gold.len()))
}

/// Per-seed results plus their mean and the seeds that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub results: Vec<EvalResult>,
    pub mean: f64,
    pub failures: Vec<(u64, String)>,
}

/// The split a reward is measured on: dev when the task has one, else test.
pub fn reward_split(task: &TaskDataset) -> Split {
    if task.dev.is_empty() {
        Split::Test
    } else {
        Split::Dev
    }
}

/// Runs the few-shot protocol for one task and method: per seed, sample `k`
/// training examples, augment them with `augment` (which may return nothing
/// for the no-augmentation baseline), fit a fresh model and score every
/// example of `split`. Fails only when every seed fails.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_task<M, F, A, E>(
    task: &TaskDataset,
    method_id: &str,
    k: usize,
    seeds: &[u64],
    split: Split,
    mut model_factory: F,
    mut augment: A,
) -> Result<TaskEvaluation, EvalError<M::Error>>
where
    M: TargetModel,
    F: FnMut(u64) -> M,
    A: FnMut(&TaskDataset, u64) -> Result<Vec<AugmentationRecord>, E>,
    E: Display,
{
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        let attempt = (|| -> Result<EvalResult, String> {
            let few = sample_few_shot(task, k, seed).map_err(|e| e.to_string())?;
            let records = augment(&few, seed).map_err(|e| e.to_string())?;
            let mut model = model_factory(seed);
            train_target(&mut model, &few, &records, seed).map_err(|e| e.to_string())?;
            let (metric_name, value, n_test) = score_split(&model, task, split).map_err(|e| e.to_string())?;
            Ok(EvalResult {
                task_name: task.task_name.clone(),
                method_id: method_id.to_string(),
                seed,
                metric_name,
                value,
                n_test,
            })
        })();
        match attempt {
            Ok(r) => results.push(r),
            Err(msg) => failures.push((seed, msg)),
        }
    }
    let Some(m) = mean(results.iter().map(|r| r.value)) else {
        return Err(EvalError::AllSeedsFailed {
            task: task.task_name.clone(),
            messages: failures.into_iter().map(|(s, m)| format!("seed {s}: {m}")).collect(),
        });
    };
    Ok(TaskEvaluation {
        results,
        mean: m,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            dim: 1 << 14,
            lr: 0.5,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReferenceError {
    #[error("training pair has no candidates")]
    NoCandidates,
    #[error("training output `{0}` is not among its candidates")]
    OutputNotCandidate(String),
    #[error("weights became non-finite")]
    NonFinite,
}

/// Linear model over hashed pair features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTargetModel {
    pub config: ReferenceConfig,
    pub weights: Vec<f64>,
}

impl ReferenceTargetModel {
    pub fn new(config: ReferenceConfig) -> Self {
        assert!(
            config.dim >= 2 && config.dim.is_power_of_two(),
            "dim must be a power of two >= 2"
        );
        ReferenceTargetModel {
            weights: vec![0.0; config.dim],
            config,
        }
    }

    /// Features of one `(input, candidate)` pair: every input-token ×
    /// candidate-token conjunction, the candidate's own tokens and the share
    /// of candidate tokens that also occur in the input. Hashed counts are
    /// scaled by the inverse square root of their number.
    pub fn pair_features(&self, input: &str, candidate: &str) -> SparseVec {
        let dim = self.config.dim;
        let xs: BTreeSet<String> = tokenize(input).into_inner().into_iter().collect();
        let cs: BTreeSet<String> = tokenize(candidate).into_inner().into_iter().collect();
        let mut pairs = Vec::with_capacity(xs.len() * cs.len() + cs.len() + 1);
        let mut key = String::new();
        for c in &cs {
            for x in &xs {
                key.clear();
                key.push_str(x);
                key.push('\u{1}');
                key.push_str(c);
                pairs.push(bucket_and_sign(&key, dim));
            }
        }
        let conj = SparseVec::from_pairs(pairs);
        let conj = conj.scale(1.0 / libm::sqrt((xs.len() * cs.len()).max(1) as f64));
        let bias = SparseVec::from_pairs(cs.iter().map(|c| bucket_and_sign(&format!("\u{2}{c}"), dim)).collect());
        let bias = bias.scale(1.0 / libm::sqrt(cs.len().max(1) as f64));
        let overlap = if cs.is_empty() {
            0.0
        } else {
            cs.iter().filter(|c| xs.contains(*c)).count() as f64 / cs.len() as f64
        };
        let (b, s) = bucket_and_sign("\u{3}overlap", dim);
        conj.add(&bias).add(&SparseVec::from_pairs(vec![(b, s * overlap)]))
    }
}

impl Default for ReferenceTargetModel {
    fn default() -> Self {
        ReferenceTargetModel::new(ReferenceConfig::default())
    }
}

impl TargetModel for ReferenceTargetModel {
    type Error = ReferenceError;

    /// Per-example SGD on `-log softmax(scores)[gold]`, visiting pairs in a
    /// fresh seeded order each epoch.
    fn fit(&mut self, pairs: &[TrainPair]) -> Result<(), ReferenceError> {
        let mut prepared = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p.candidates.is_empty() {
                return Err(ReferenceError::NoCandidates);
            }
            let gold = p
                .candidates
                .iter()
                .position(|c| c == &p.output)
                .ok_or_else(|| ReferenceError::OutputNotCandidate(p.output.clone()))?;
            let feats: Vec<SparseVec> = p.candidates.iter().map(|c| self.pair_features(&p.input, c)).collect();
            prepared.push((feats, gold));
        }
        self.weights = vec![0.0; self.config.dim];
        let mut rng = RngStream::new(self.config.seed);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        for _ in 0..self.config.epochs {
            rng.shuffle(&mut order);
            for &i in &order {
                let (feats, gold) = &prepared[i];
                if feats.len() < 2 {
                    continue;
                }
                let q: Vec<f64> = feats.iter().map(|f| f.dot(&self.weights)).collect();
                let mut g = softmax(&q);
                g[*gold] -= 1.0;
                for (f, gj) in feats.iter().zip(&g) {
                    for &(k, v) in f.entries() {
                        self.weights[k] -= self.config.lr * gj * v;
                    }
                }
            }
        }
        if self.weights.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(ReferenceError::NonFinite)
        }
    }

    /// Log-softmax of the linear scores, so scores read as log-probabilities.
    fn candidate_scores(&self, input: &str, candidates: &[String]) -> Result<Vec<f64>, ReferenceError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let q: Vec<f64> = candidates
            .iter()
            .map(|c| self.pair_features(input, c).dot(&self.weights))
            .collect();
        Ok(log_softmax(&q))
    }
}

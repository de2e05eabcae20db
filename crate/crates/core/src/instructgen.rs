//! Self-generation of augmentation instructions.
//!
//! The loop samples exemplars from the current pool, asks a chat model for
//! more methods, keeps only candidates whose ROUGE-L against everything
//! already accepted stays under a threshold, and repeats until the pool is
//! large enough. A final pass drops instructions whose names collide.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatRequest, Complete, DEFAULT_TEMPERATURE};
use crate::model::{Instruction, Origin};
use crate::rng::RngStream;
use crate::text::{rouge_l, tokenize, TokenSeq};

pub const GENERATION_PROMPT: &str = "Come up with a series of textual data augmentation methods and you need to \
generate more diverse data augmentation method that can keep the semantic meaning of the input sentence.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub target_pool_size: usize,
    pub similarity_threshold: f64,
    pub seeds_per_prompt: usize,
    pub max_iterations: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            target_pool_size: 100,
            similarity_threshold: 0.7,
            seeds_per_prompt: 8,
            max_iterations: 50,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerationError<E> {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("every generation request failed; last error: {0}")]
    BackendExhausted(E),
}

/// Ordered instructions with the iteration that produced each one (0 for
/// seeds).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstructionPool {
    pub instructions: Vec<Instruction>,
    pub provenance: Vec<usize>,
}

impl InstructionPool {
    pub fn from_seeds(seeds: Vec<Instruction>) -> Self {
        let provenance = alloc::vec![0; seeds.len()];
        InstructionPool {
            instructions: seeds,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn push(&mut self, ins: Instruction, iteration: usize) {
        self.instructions.push(ins);
        self.provenance.push(iteration);
    }

    pub fn truncate(&mut self, n: usize) {
        self.instructions.truncate(n);
        self.provenance.truncate(n);
    }

    pub fn get(&self, name: &str) -> Option<&Instruction> {
        self.instructions.iter().find(|i| i.name == name)
    }
}

/// Exemplars rendered one per line, numbered from 1, under the fixed
/// generation prompt. No task data goes into this prompt.
pub fn build_generation_prompt(pool_sample: &[Instruction], temperature: f64) -> ChatRequest {
    let mut text = String::from(GENERATION_PROMPT);
    for (i, ins) in pool_sample.iter().enumerate() {
        let _ = write!(text, "\n{}. {}", i + 1, ins.render());
    }
    ChatRequest::user(text).with_temperature(temperature)
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    for marker in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return rest.trim_start();
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return rest.trim_start();
        }
    }
    line
}

/// Splits a model response into `Name: body` items. List markers are removed,
/// markdown bold around the name is dropped, and lines without a usable
/// colon are skipped.
pub fn parse_instructions(llm_output: &str) -> Vec<Instruction> {
    llm_output
        .lines()
        .map(strip_list_marker)
        .filter_map(|item| {
            let (name, body) = item.split_once(':')?;
            let name = name.trim().trim_matches('*').trim();
            let body = body.trim().trim_start_matches('*').trim();
            Instruction::new(name, body, Origin::LlmGenerated).ok()
        })
        .collect()
}

/// Outcome of the similarity check for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub name: String,
    pub max_rouge: f64,
    pub accepted: bool,
}

/// Keeps candidates whose best ROUGE-L (β = 1) against the pool and against
/// earlier accepted candidates is below `threshold`, processing in order.
pub fn filter_similar(
    candidates: &[Instruction],
    pool: &InstructionPool,
    threshold: f64,
) -> (Vec<Instruction>, Vec<FilterDecision>) {
    let mut seen: Vec<TokenSeq> = pool.instructions.iter().map(|i| tokenize(&i.body)).collect();
    filter_against(candidates, &mut seen, threshold)
}

fn filter_against(
    candidates: &[Instruction],
    seen: &mut Vec<TokenSeq>,
    threshold: f64,
) -> (Vec<Instruction>, Vec<FilterDecision>) {
    let mut accepted = Vec::new();
    let mut decisions = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let toks = tokenize(&cand.body);
        let max_rouge = seen.iter().map(|s| rouge_l(&toks, s, 1.0)).fold(0.0, f64::max);
        let ok = max_rouge < threshold;
        decisions.push(FilterDecision {
            name: cand.name.clone(),
            max_rouge,
            accepted: ok,
        });
        if ok {
            seen.push(toks);
            accepted.push(cand.clone());
        }
    }
    (accepted, decisions)
}

/// Lowercase, trimmed, inner whitespace collapsed.
pub fn normalize_name(name: &str) -> String {
    let mut out = String::new();
    for (i, w) in name.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&w.to_lowercase());
    }
    out
}

/// First occurrence of each normalized name wins; order is preserved.
pub fn dedup_by_name(pool: &InstructionPool) -> InstructionPool {
    let mut seen = BTreeSet::new();
    let mut out = InstructionPool::default();
    for (ins, &it) in pool.instructions.iter().zip(&pool.provenance) {
        if seen.insert(normalize_name(&ins.name)) {
            out.push(ins.clone(), it);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub exemplars: Vec<String>,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub decisions: Vec<FilterDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub pool: InstructionPool,
    pub reached_target: bool,
    pub backend_calls: usize,
    /// Pool size before truncation to the target and name deduplication.
    pub raw_size: usize,
    pub log: Vec<IterationLog>,
}

/// Grows `seeds` into a pool of `cfg.target_pool_size` instructions.
///
/// Stops at the first iteration where the pool reaches the target, truncates
/// to the target in pool order and deduplicates by name. Running out of
/// iterations is not an error: the partial pool comes back with
/// `reached_target == false`.
pub fn run_generation_loop<C, E>(
    seeds: &[Instruction],
    cfg: &GenerationConfig,
    backend: &C,
) -> Result<GenerationOutcome, GenerationError<E>>
where
    C: Complete<Error = E> + ?Sized,
    E: core::fmt::Display,
{
    if seeds.is_empty() {
        return Err(GenerationError::InvalidConfig("no seed instructions".into()));
    }
    if cfg.max_iterations == 0 || cfg.seeds_per_prompt == 0 {
        return Err(GenerationError::InvalidConfig(
            "max_iterations and seeds_per_prompt must be >= 1".into(),
        ));
    }
    if cfg.target_pool_size < seeds.len() {
        return Err(GenerationError::InvalidConfig(format!(
            "target pool size {} is smaller than the {} seeds",
            cfg.target_pool_size,
            seeds.len()
        )));
    }
    if !(cfg.similarity_threshold > 0.0 && cfg.similarity_threshold < 1.0) {
        return Err(GenerationError::InvalidConfig(
            "similarity threshold must be in (0, 1)".into(),
        ));
    }

    let mut pool = InstructionPool::from_seeds(seeds.to_vec());
    let mut seen: Vec<TokenSeq> = seeds.iter().map(|i| tokenize(&i.body)).collect();
    let mut rng = RngStream::new(cfg.seed);
    let mut log = Vec::new();
    let mut calls = 0;
    let mut failures = 0;
    let mut last_error = None;

    for iteration in 1..=cfg.max_iterations {
        if pool.len() >= cfg.target_pool_size {
            break;
        }
        let picks = rng.sample_indices(pool.len(), cfg.seeds_per_prompt);
        let exemplars: Vec<Instruction> = picks.iter().map(|&i| pool.instructions[i].clone()).collect();
        let req = build_generation_prompt(&exemplars, cfg.temperature);
        let prompt = String::from(req.last_user_message().unwrap_or_default());
        let names = exemplars.iter().map(|i| i.name.clone()).collect();
        calls += 1;
        match backend.complete(&req) {
            Ok(text) => {
                let parsed = parse_instructions(&text);
                let (accepted, decisions) = filter_against(&parsed, &mut seen, cfg.similarity_threshold);
                for ins in accepted {
                    pool.push(ins, iteration);
                }
                log.push(IterationLog {
                    iteration,
                    exemplars: names,
                    prompt,
                    error: None,
                    decisions,
                });
            }
            Err(e) => {
                failures += 1;
                log.push(IterationLog {
                    iteration,
                    exemplars: names,
                    prompt,
                    error: Some(format!("{e}")),
                    decisions: Vec::new(),
                });
                last_error = Some(e);
            }
        }
    }

    if failures == calls {
        if let Some(e) = last_error {
            return Err(GenerationError::BackendExhausted(e));
        }
    }
    let raw_size = pool.len();
    let reached_target = raw_size >= cfg.target_pool_size;
    pool.truncate(cfg.target_pool_size);
    Ok(GenerationOutcome {
        pool: dedup_by_name(&pool),
        reached_target,
        backend_calls: calls,
        raw_size,
        log,
    })
}

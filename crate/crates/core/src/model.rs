//! Tasks, examples, instructions and augmentation records.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("classification example has no candidates")]
    MissingCandidates,
    #[error("task `{task}` has {available} training examples, {requested} requested")]
    InsufficientExamples {
        task: String,
        available: usize,
        requested: usize,
    },
    #[error("train and test task sets overlap on `{0}`")]
    OverlappingSplit(String),
    #[error("invalid instruction: {0}")]
    InvalidInstruction(String),
}

/// One `(input, output)` pair with its allowed outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub candidates: Vec<String>,
}

impl Example {
    pub fn new(input: impl Into<String>, output: impl Into<String>, candidates: Vec<String>) -> Self {
        Example {
            input: input.into(),
            output: output.into(),
            candidates,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input.trim().is_empty() {
            return Err(ModelError::InvalidExample("empty input".into()));
        }
        if !self.candidates.is_empty() && !self.candidates.contains(&self.output) {
            return Err(ModelError::InvalidExample(format!(
                "output `{}` is not one of the candidates",
                self.output
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    NonClassification,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::NonClassification => "non_classification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_name: String,
    pub kind: TaskKind,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    /// Checks every example plus the shared-label-space rule for
    /// classification tasks.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.task_name.trim().is_empty() {
            return Err(ModelError::InvalidExample("empty task name".into()));
        }
        let mut label_space: Option<BTreeSet<&str>> = None;
        for ex in self.examples() {
            ex.validate()?;
            if self.kind == TaskKind::Classification {
                if ex.candidates.is_empty() {
                    return Err(ModelError::MissingCandidates);
                }
                let set: BTreeSet<&str> = ex.candidates.iter().map(String::as_str).collect();
                match &label_space {
                    None => label_space = Some(set),
                    Some(s) if *s != set => {
                        return Err(ModelError::InvalidExample(
                            "classification examples must share one candidate set".into(),
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// Candidates to score for `ex`: its own list, or every output seen in
    /// the task when the example carries none.
    pub fn candidates_for(&self, ex: &Example) -> Vec<String> {
        if !ex.candidates.is_empty() {
            return ex.candidates.clone();
        }
        let mut seen = BTreeSet::new();
        self.examples()
            .filter(|e| seen.insert(e.output.as_str()))
            .map(|e| e.output.clone())
            .collect()
    }
}

/// Uniform sample of `k` training examples without replacement.
///
/// Indices are drawn over file order with `RngStream::new(seed)` and kept in
/// draw order; dev and test are copied unchanged.
pub fn sample_few_shot(task: &TaskDataset, k: usize, seed: u64) -> Result<TaskDataset, ModelError> {
    if k == 0 || task.train.len() < k {
        return Err(ModelError::InsufficientExamples {
            task: task.task_name.clone(),
            available: task.train.len(),
            requested: k,
        });
    }
    let idx = few_shot_indices(task.train.len(), k, seed);
    Ok(TaskDataset {
        train: idx.iter().map(|&i| task.train[i].clone()).collect(),
        ..task.clone()
    })
}

pub fn few_shot_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    RngStream::new(seed).sample_indices(n, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    SeedManual,
    LlmGenerated,
}

/// A named augmentation directive, rendered as `"<name>: <body>"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub name: String,
    pub body: String,
    #[serde(default)]
    pub origin: Origin,
}

impl Instruction {
    /// Trims both fields. Fails on empty name or body, or a colon in the name.
    pub fn new(name: &str, body: &str, origin: Origin) -> Result<Self, ModelError> {
        let name = name.trim();
        let body = body.trim();
        if name.is_empty() || body.is_empty() {
            return Err(ModelError::InvalidInstruction("empty name or body".into()));
        }
        if name.contains(':') {
            return Err(ModelError::InvalidInstruction(format!("name `{name}` contains ':'")));
        }
        Ok(Instruction {
            name: name.to_string(),
            body: body.to_string(),
            origin,
        })
    }

    pub fn render(&self) -> String {
        render_instruction(self)
    }
}

pub fn render_instruction(ins: &Instruction) -> String {
    format!("{}: {}", ins.name.trim(), ins.body.trim())
}

/// Inverse of [`render_instruction`]: the first colon separates name and body.
pub fn parse_rendered(text: &str, origin: Origin) -> Result<Instruction, ModelError> {
    let (name, body) = text
        .split_once(':')
        .ok_or_else(|| ModelError::InvalidInstruction("missing ':'".into()))?;
    Instruction::new(name, body, origin)
}

/// One transformed example. There is no label field: the training label is
/// always `original.output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub task_name: String,
    pub method_id: String,
    pub original: Example,
    pub augmented_input: String,
    pub seed: u64,
    #[serde(default)]
    pub backend_fingerprint: Option<String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl AugmentationRecord {
    /// The `(input, output, candidates)` triple handed to a target model.
    pub fn training_pair(&self) -> (&str, &str, &[String]) {
        (&self.augmented_input, &self.original.output, &self.original.candidates)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSetting {
    ClassToClass,
    ClassToNonclass,
    NonclassToClass,
    RandomToRandom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub setting: SplitSetting,
    pub train_tasks: Vec<String>,
    pub test_tasks: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let train: BTreeSet<&str> = self.train_tasks.iter().map(String::as_str).collect();
        match self.test_tasks.iter().find(|t| train.contains(t.as_str())) {
            Some(t) => Err(ModelError::OverlappingSplit(t.clone())),
            None => Ok(()),
        }
    }
}

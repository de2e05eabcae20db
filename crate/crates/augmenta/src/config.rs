//! Experiment configuration: one TOML file with `[backend]`, `[generation]`,
//! `[selector]`, `[evaluation]` and `[paths]` tables. Relative paths are
//! resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use augmenta_core::augment::{NonLlmMethod, Rate};
use augmenta_core::eval::{ReferenceConfig, DEFAULT_K, DEFAULT_SEEDS};
use augmenta_core::instructgen::GenerationConfig;
use augmenta_core::model::{SplitSetting, SplitSpec};
use augmenta_core::selector::{FeatureConfig, SelectorKind, TrainHyper};
use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;
use crate::harness::{EvalOptions, RewardGrid};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSection {
    pub n: usize,
    pub m: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub target_model_name: String,
    pub feature_dim: usize,
    pub seed: u64,
    /// Instructions rewarded per training task; 0 rewards the whole pool.
    pub rewards_per_task: usize,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        SelectorSection {
            n: h.n,
            m: h.m,
            lr: h.lr,
            epochs: h.epochs,
            patience: h.patience,
            batch_size: h.batch_size,
            target_model_name: h.target_model_name,
            feature_dim: h.feature_config.dim,
            seed: 0,
            rewards_per_task: 0,
        }
    }
}

impl SelectorSection {
    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            n: self.n,
            m: self.m,
            lr: self.lr,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            target_model_name: self.target_model_name.clone(),
            feature_config: FeatureConfig {
                dim: self.feature_dim,
                ..FeatureConfig::default()
            },
        }
    }

    pub fn grid(&self) -> RewardGrid {
        match self.rewards_per_task {
            0 => RewardGrid::Full,
            n => RewardGrid::PerTask(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Per-word perturbation rate of the algorithmic methods.
    pub rate: f64,
    /// Base seed of every augmenter.
    pub augment_seed: u64,
    pub split: Option<SplitSpec>,
    /// A split preset file, used when `split` is absent.
    pub split_file: Option<PathBuf>,
    pub non_llm_methods: Vec<NonLlmMethod>,
    pub manual: bool,
    pub selectors: Vec<SelectorKind>,
    pub reference: ReferenceConfig,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            k: DEFAULT_K,
            seeds: DEFAULT_SEEDS.to_vec(),
            rate: augmenta_core::augment::DEFAULT_RATE,
            augment_seed: 0,
            split: None,
            split_file: None,
            non_llm_methods: NonLlmMethod::ALL.to_vec(),
            manual: true,
            selectors: vec![
                SelectorKind::RandomSelect,
                SelectorKind::EmpiricalSelect,
                SelectorKind::LlmSelect,
            ],
            reference: ReferenceConfig::default(),
        }
    }
}

impl EvaluationSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            k: self.k,
            seeds: self.seeds.clone(),
            reference: self.reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub tasks_dir: PathBuf,
    pub results_dir: PathBuf,
    /// Seed instructions; the bundled manual set when absent.
    pub manual_file: Option<PathBuf>,
    pub pool_file: Option<PathBuf>,
    pub rewards_file: Option<PathBuf>,
    pub scorer_file: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            tasks_dir: "tasks".into(),
            results_dir: "results".into(),
            manual_file: None,
            pool_file: None,
            rewards_file: None,
            scorer_file: None,
        }
    }
}

impl PathsSection {
    pub fn pool_file(&self) -> PathBuf {
        self.pool_file
            .clone()
            .unwrap_or_else(|| self.results_dir.join("pool.json"))
    }

    pub fn rewards_file(&self) -> PathBuf {
        self.rewards_file
            .clone()
            .unwrap_or_else(|| self.results_dir.join("rewards.jsonl"))
    }

    pub fn scorer_file(&self) -> PathBuf {
        self.scorer_file
            .clone()
            .unwrap_or_else(|| self.results_dir.join("scorer.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub backend: BackendConfig,
    pub generation: GenerationConfig,
    /// Load `paths.pool_file` instead of generating a pool.
    pub reuse_pool: bool,
    pub selector: SelectorSection,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads, resolves paths against the file's directory, loads a split
    /// preset if one is named, and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if cfg.evaluation.split.is_none() {
            if let Some(f) = &cfg.evaluation.split_file {
                cfg.evaluation.split = Some(load_split(f)?);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve(base, &mut p.tasks_dir);
        resolve(base, &mut p.results_dir);
        for x in [
            &mut p.manual_file,
            &mut p.pool_file,
            &mut p.rewards_file,
            &mut p.scorer_file,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, x);
        }
        let extra = [
            &mut self.backend.cache_dir,
            &mut self.backend.mock_script,
            &mut self.evaluation.split_file,
        ];
        for x in extra.into_iter().flatten() {
            resolve(base, x);
        }
    }

    pub fn split(&self) -> Result<&SplitSpec, ConfigError> {
        self.evaluation
            .split
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("evaluation.split or evaluation.split_file is required".into()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.evaluation.k == 0 {
            return bad("evaluation.k must be >= 1".into());
        }
        if self.evaluation.seeds.is_empty() {
            return bad("evaluation.seeds is empty".into());
        }
        if let Err(e) = Rate::new(self.evaluation.rate) {
            return bad(e.to_string());
        }
        if self.backend.max_parallel == 0 {
            return bad("backend.max_parallel must be >= 1".into());
        }
        let split = self.split()?;
        split.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if split.train_tasks.is_empty() || split.test_tasks.is_empty() {
            return bad("split needs at least one train and one test task".into());
        }
        if !self.paths.tasks_dir.is_dir() {
            return bad(format!(
                "tasks_dir {} is not a directory",
                self.paths.tasks_dir.display()
            ));
        }
        if self.reuse_pool && !self.paths.pool_file().is_file() {
            return bad(format!(
                "reuse_pool is set but {} does not exist",
                self.paths.pool_file().display()
            ));
        }
        if let Some(m) = &self.paths.manual_file {
            if !m.is_file() {
                return bad(format!("manual_file {} does not exist", m.display()));
            }
        }
        Ok(())
    }
}

/// A split preset: `setting`, `train_tasks` and `test_tasks` at top level.
pub fn load_split(path: &Path) -> Result<SplitSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// The four split settings as shipped presets.
pub fn preset_name(s: SplitSetting) -> &'static str {
    match s {
        SplitSetting::ClassToClass => "class_to_class",
        SplitSetting::ClassToNonclass => "class_to_nonclass",
        SplitSetting::NonclassToClass => "nonclass_to_class",
        SplitSetting::RandomToRandom => "random_to_random",
    }
}

//! Run configuration: schema, defaults, TOML loading and `key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TaskKind;
use crate::embedding::{EmbeddingError, EmbeddingProvider, HashedFeaturizer, HttpEmbeddingProvider, PrecomputedEmbeddings};
use crate::llm::{BackendError, ChatBackend, HttpBackend, HttpBackendConfig, ScriptedBackend};
use crate::metrics::Averaging;
use crate::student::ScoreAggregation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("override {0:?} is not key=value")]
    BadOverride(String),
    #[error("override key {0:?} does not name a table field")]
    BadOverrideKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("no teacher backend configured")]
    NoBackend,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Where chat completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Chat-completions server. The API key is read from the environment only.
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    /// JSONL script replayed in order.
    Script { path: PathBuf },
}

fn default_timeout_secs() -> u64 {
    60
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        match self {
            BackendConfig::Http {
                endpoint,
                model,
                timeout_secs,
            } => {
                let cfg = HttpBackendConfig {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    api_key: None,
                    timeout: Duration::from_secs(*timeout_secs),
                }
                .with_env();
                Ok(Arc::new(HttpBackend::new(cfg)?))
            }
            BackendConfig::Script { path } => {
                let backend = ScriptedBackend::load(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(Arc::new(backend))
            }
        }
    }
}

/// Where sample embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    /// Character-trigram feature hashing, computed in process.
    Hashed { dim: usize, seed: u64 },
    /// JSONL table of `{"text", "vector"}` records.
    Precomputed { path: PathBuf },
    /// Embedding service.
    Http {
        url: String,
        dim: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashed { dim: 256, seed: 0 }
    }
}

impl EmbeddingConfig {
    pub fn build(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        Ok(match self {
            EmbeddingConfig::Hashed { dim, seed } => Arc::new(HashedFeaturizer::new(*dim, *seed)?),
            EmbeddingConfig::Precomputed { path } => Arc::new(PrecomputedEmbeddings::load(path)?),
            EmbeddingConfig::Http { url, dim, timeout_secs } => Arc::new(HttpEmbeddingProvider::new(
                url.clone(),
                *dim,
                Duration::from_secs(*timeout_secs),
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    /// Exemplars held by the teaching template.
    pub n_shot: usize,
    /// Retrieved cases per prompt; unset means the shot budget for `n_shot`.
    pub retrieval_k: Option<usize>,
    /// Teacher confidence threshold on `[0, 1]`.
    pub teacher_threshold: f64,
    pub distill_batch_size: usize,
    /// SGD chunk size inside a batch; unset means 64 for binary_green, 8 otherwise.
    pub finetune_batch_size: Option<usize>,
    pub lr: f64,
    pub epochs_per_batch: usize,
    pub seed: u64,
    /// Fraction of labeled data kept for retrieval when the CLI splits off an eval set.
    pub train_ratio: f64,
    pub score_aggregation: ScoreAggregation,
    pub averaging: Averaging,
    /// Ask for (and gate on) a confidence on path classification.
    pub path_confidence: bool,
    /// Label borderline cases with gold labels when they have them.
    pub gold_borderline_labels: bool,
    /// Width of the per-token hashed features for the token task.
    pub token_feature_dim: usize,
    pub retry_base_delay_ms: u64,
    /// Text file with `{context}`, `{similar_case}`, `{previous_confidence}` placeholders.
    pub reprompt_detail_template: Option<PathBuf>,
    /// Replacement teaching instruction; must keep the reply format block.
    pub instruction_file: Option<PathBuf>,
    pub embedding: EmbeddingConfig,
    pub teacher: Option<BackendConfig>,
    /// Backend for rationale requests; the teacher's when unset.
    pub rationale: Option<BackendConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::BinaryGreen,
            n_shot: 5,
            retrieval_k: None,
            teacher_threshold: 0.85,
            distill_batch_size: 8,
            finetune_batch_size: None,
            lr: 0.1,
            epochs_per_batch: 10,
            seed: 0,
            train_ratio: 0.8,
            score_aggregation: ScoreAggregation::Mean,
            averaging: Averaging::Macro,
            path_confidence: false,
            gold_borderline_labels: false,
            token_feature_dim: 64,
            retry_base_delay_ms: 500,
            reprompt_detail_template: None,
            instruction_file: None,
            embedding: EmbeddingConfig::default(),
            teacher: None,
            rationale: None,
        }
    }
}

impl RunConfig {
    pub fn retrieval_k(&self) -> usize {
        self.retrieval_k.unwrap_or_else(|| crate::aligner::shot_budget(self.n_shot))
    }

    pub fn finetune_chunk(&self) -> usize {
        self.finetune_batch_size.unwrap_or(match self.task {
            TaskKind::BinaryGreen => 64,
            _ => 8,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=1.0).contains(&self.teacher_threshold) {
            return bad(format!("teacher_threshold {} outside [0, 1]", self.teacher_threshold));
        }
        if self.distill_batch_size == 0 || self.finetune_batch_size == Some(0) {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.epochs_per_batch == 0 {
            return bad("epochs_per_batch must be at least 1".into());
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return bad(format!("train_ratio {} outside (0, 1]", self.train_ratio));
        }
        if self.token_feature_dim < crate::embedding::MIN_HASHED_DIM {
            return bad(format!("token_feature_dim {} too small", self.token_feature_dim));
        }
        Ok(())
    }

    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Make every relative path in the config relative to `base` instead of
    /// the working directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.reprompt_detail_template, &mut self.instruction_file].into_iter().flatten() {
            fix(p);
        }
        if let EmbeddingConfig::Precomputed { path } = &mut self.embedding {
            fix(path);
        }
        for b in [&mut self.teacher, &mut self.rationale].into_iter().flatten() {
            if let BackendConfig::Script { path } = b {
                fix(path);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parse a config file into a raw table, so overrides can be applied before
/// the schema is checked.
pub fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>().map_err(|e| ConfigError::Syntax(e.to_string()))
}

/// Apply one `key=value` override. Dotted keys reach into tables; the value
/// is read as a TOML literal and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverrideKey(key.to_string()))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Config file (if any), then overrides in order, then schema validation.
/// Relative paths are taken relative to the config file's directory.
pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
        log::info!("config override {o}");
    }
    let mut cfg = RunConfig::from_table(table)?;
    if let Some(dir) = path.and_then(Path::parent) {
        cfg.resolve_paths(dir);
    }
    Ok(cfg)
}

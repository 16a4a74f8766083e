//! The distillation loop: teacher gating per sample, student fitting per
//! batch, borderline feedback into the teaching template, and a run
//! directory that can be resumed after an interruption.

mod config;
mod events;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    apply_override, parse_table, read_table, resolve_config, BackendConfig, ConfigError, EmbeddingConfig, RunConfig,
};
pub use events::{check_invariants, events_to_jsonl, parse_events, EventKind, ExclusionReason, RunEvent, Violation};

use crate::aligner::{attach_rationales, rationale_request, AlignerError, EmbeddingStore, RationaleCache, RetrievedCase};
use crate::data::{DataError, Dataset, Sample};
use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::features::Featurizer;
use crate::io_util::write_atomic;
use crate::llm::{tags, ChatBackend, LlmClient, Prediction, RetryPolicy};
use crate::metrics::{evaluate_student, MetricsError, MetricsReport};
use crate::spans::align_spans;
use crate::student::{check_borderline, StudentError, StudentModel, TrainBatch, TrainItem};
use crate::teacher::{
    gold_prediction, prediction_text, teacher_infer, CheckerSettings, ConfidenceStatus, TeacherError, TeacherVerdict,
    TeachingTemplate,
};
use crate::tokenize::tokenize;

pub const CONFIG_FILE: &str = "config.toml";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CHECKPOINT_FILE: &str = "student.ckpt";
pub const TEMPLATE_FILE: &str = "template.json";
pub const RATIONALE_CACHE_FILE: &str = "rationale_cache.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";
const TRAIN_FILE: &str = "train.jsonl";
const UNLABELED_FILE: &str = "unlabeled.jsonl";
const EVAL_FILE: &str = "eval.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Aligner(#[from] AlignerError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Student(#[from] StudentError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{0} already holds a run; resume it or pick another directory")]
    RunExists(PathBuf),
    #[error("{0} is not a run directory")]
    NotARun(PathBuf),
    #[error("{name} set is for {found}, config says {expected}")]
    TaskMismatch {
        name: &'static str,
        expected: crate::data::TaskKind,
        found: crate::data::TaskKind,
    },
    #[error("nothing to distill: the unlabeled set is empty")]
    NothingToDistill,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Chat backends for a run. Rationale requests go to the teacher backend
/// unless a separate one is given.
#[derive(Clone)]
pub struct Backends {
    pub teacher: Arc<dyn ChatBackend>,
    pub rationale: Option<Arc<dyn ChatBackend>>,
}

impl Backends {
    pub fn single(teacher: Arc<dyn ChatBackend>) -> Self {
        Self {
            teacher,
            rationale: None,
        }
    }

    /// Build from the config's backend sections.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ConfigError> {
        let teacher = cfg.teacher.as_ref().ok_or(ConfigError::NoBackend)?.build()?;
        let rationale = cfg.rationale.as_ref().map(BackendConfig::build).transpose()?;
        Ok(Self { teacher, rationale })
    }
}

pub struct RunInputs {
    pub train: Dataset,
    pub unlabeled: Dataset,
    pub eval: Option<Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    /// 1-based index of the next batch to run.
    next_batch: usize,
    n_batches: usize,
    completed: bool,
    teacher_sends: u64,
    rationale_sends: Option<u64>,
    events: usize,
    checkpoint_sha256: String,
}

/// Result of [`Distiller::run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub student: StudentModel,
    pub template: TeachingTemplate,
    pub events: Vec<RunEvent>,
    pub metrics: Option<MetricsReport>,
    pub completed: bool,
    pub batches_done: usize,
}

struct Member<'a> {
    sample: &'a Sample,
    features: Vec<Vec<f64>>,
    items: Vec<TrainItem>,
    prediction: Prediction,
}

/// A distillation run in progress.
pub struct Distiller {
    cfg: RunConfig,
    inputs: RunInputs,
    featurizer: Featurizer,
    store: Option<EmbeddingStore>,
    teacher: Arc<LlmClient>,
    rationale: Arc<LlmClient>,
    shared_backend: bool,
    settings: CheckerSettings,
    template: TeachingTemplate,
    student: StudentModel,
    cache: RationaleCache,
    events: Vec<RunEvent>,
    next_batch: usize,
    n_batches: usize,
    completed: bool,
    run_dir: Option<PathBuf>,
}

impl std::fmt::Debug for Distiller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Distiller")
            .field("task", &self.cfg.task)
            .field("next_batch", &self.next_batch)
            .field("n_batches", &self.n_batches)
            .field("completed", &self.completed)
            .finish()
    }
}

fn check_task(name: &'static str, ds: &Dataset, cfg: &RunConfig) -> Result<(), PipelineError> {
    if ds.task() != cfg.task {
        return Err(PipelineError::TaskMismatch {
            name,
            expected: cfg.task,
            found: ds.task(),
        });
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Scoring features and training items for one sample.
type Trainable = (Vec<Vec<f64>>, Vec<TrainItem>);

impl Distiller {
    fn assemble(
        cfg: RunConfig,
        inputs: RunInputs,
        backends: Backends,
        embedder: Arc<dyn EmbeddingProvider>,
        run_dir: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        check_task("train", &inputs.train, &cfg)?;
        check_task("unlabeled", &inputs.unlabeled, &cfg)?;
        if let Some(e) = &inputs.eval {
            check_task("eval", e, &cfg)?;
        }
        if inputs.unlabeled.is_empty() {
            return Err(PipelineError::NothingToDistill);
        }
        let retry = RetryPolicy {
            base_delay: Duration::from_millis(cfg.retry_base_delay_ms),
        };
        let client = |backend: Arc<dyn ChatBackend>| -> Result<Arc<LlmClient>, PipelineError> {
            let mut c = LlmClient::new(backend, retry);
            if let Some(dir) = run_dir {
                let path = dir.join(TRANSCRIPT_FILE);
                c = c.with_transcript(&path).map_err(io_err(&path))?;
            }
            Ok(Arc::new(c))
        };
        let teacher = client(backends.teacher)?;
        let (rationale, shared_backend) = match backends.rationale {
            Some(b) => (client(b)?, false),
            None => (teacher.clone(), true),
        };
        let featurizer = Featurizer::new(embedder.clone(), cfg.token_feature_dim, cfg.seed);
        // Without a retrieval budget the training set is never embedded.
        let store = if cfg.retrieval_k() > 0 {
            Some(EmbeddingStore::build(&inputs.train, embedder.as_ref())?)
        } else {
            None
        };
        let settings = CheckerSettings {
            threshold: cfg.teacher_threshold,
            detail_template: cfg.reprompt_detail_template.as_deref().map(read_text).transpose()?,
        };
        let n_classes = cfg.task.label_space().len();
        let student = StudentModel::zeros(n_classes, featurizer.dim(cfg.task));
        let n_batches = inputs.unlabeled.len().div_ceil(cfg.distill_batch_size);
        let mut template = TeachingTemplate::new(cfg.task, cfg.n_shot, cfg.path_confidence, cfg.seed);
        if let Some(k) = cfg.retrieval_k {
            template = template.with_retrieval_k(k);
        }
        Ok(Self {
            cfg,
            inputs,
            featurizer,
            store,
            teacher,
            rationale,
            shared_backend,
            settings,
            template,
            student,
            cache: RationaleCache::in_memory(),
            events: Vec::new(),
            next_batch: 1,
            n_batches,
            completed: false,
            run_dir: run_dir.map(Path::to_path_buf),
        })
    }

    /// Start a new run. With a `run_dir`, the directory is created and
    /// every batch is committed to it.
    pub fn start(
        cfg: RunConfig,
        inputs: RunInputs,
        backends: Backends,
        embedder: Arc<dyn EmbeddingProvider>,
        run_dir: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        if let Some(dir) = run_dir {
            if dir.join(STATE_FILE).exists() {
                return Err(PipelineError::RunExists(dir.to_path_buf()));
            }
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut d = Self::assemble(cfg, inputs, backends, embedder, run_dir)?;
        if let Some(path) = &d.cfg.instruction_file {
            let text = read_text(path)?;
            d.template = d.template.clone().with_instruction(text.trim_end())?;
        }
        if let Some(dir) = &d.run_dir {
            write_file(&dir.join(CONFIG_FILE), d.cfg.to_toml().as_bytes())?;
            write_file(&dir.join(TRAIN_FILE), d.inputs.train.to_jsonl().as_bytes())?;
            write_file(&dir.join(UNLABELED_FILE), d.inputs.unlabeled.to_jsonl().as_bytes())?;
            if let Some(e) = &d.inputs.eval {
                write_file(&dir.join(EVAL_FILE), e.to_jsonl().as_bytes())?;
            }
        }
        d.seed_template()?;
        d.commit()?;
        Ok(d)
    }

    /// Reopen a run directory written by [`Distiller::start`]. Backends must
    /// be configured as in the original run; sequential scripts are forwarded
    /// past the calls already made.
    pub fn resume(
        run_dir: &Path,
        backends: Backends,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, PipelineError> {
        let state_path = run_dir.join(STATE_FILE);
        if !state_path.exists() {
            return Err(PipelineError::NotARun(run_dir.to_path_buf()));
        }
        let corrupt = |path: &Path, reason: String| PipelineError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let state: RunState =
            serde_json::from_str(&read_text(&state_path)?).map_err(|e| corrupt(&state_path, e.to_string()))?;
        let cfg_path = run_dir.join(CONFIG_FILE);
        let cfg = RunConfig::from_table(parse_table(&read_text(&cfg_path)?)?)?;
        let load = |name: &str| crate::data::load_dataset(run_dir.join(name), cfg.task);
        let eval_path = run_dir.join(EVAL_FILE);
        let inputs = RunInputs {
            train: load(TRAIN_FILE)?,
            unlabeled: load(UNLABELED_FILE)?,
            eval: if eval_path.exists() { Some(load(EVAL_FILE)?) } else { None },
        };
        let mut d = Self::assemble(cfg, inputs, backends, embedder, Some(run_dir))?;

        let ckpt_path = run_dir.join(CHECKPOINT_FILE);
        let ckpt = read_text(&ckpt_path)?;
        if sha256_hex(ckpt.as_bytes()) != state.checkpoint_sha256 {
            return Err(corrupt(&ckpt_path, "checkpoint does not match the run state".into()));
        }
        d.student = StudentModel::from_checkpoint(&ckpt)?;
        let tpl_path = run_dir.join(TEMPLATE_FILE);
        d.template = serde_json::from_str(&read_text(&tpl_path)?).map_err(|e| corrupt(&tpl_path, e.to_string()))?;
        d.cache = RationaleCache::load(run_dir.join(RATIONALE_CACHE_FILE))?;
        let ev_path = run_dir.join(EVENTS_FILE);
        let mut events = parse_events(&read_text(&ev_path)?)
            .map_err(|(line, e)| corrupt(&ev_path, format!("line {line}: {e}")))?;
        if events.len() < state.events {
            return Err(corrupt(&ev_path, format!("{} events, state expects {}", events.len(), state.events)));
        }
        // Events past the last commit belong to an interrupted batch.
        events.truncate(state.events);
        d.events = events;
        d.next_batch = state.next_batch;
        d.completed = state.completed;
        if d.n_batches != state.n_batches {
            return Err(corrupt(&state_path, "batch count does not match the unlabeled set".into()));
        }
        d.teacher.fast_forward(state.teacher_sends);
        if let (false, Some(n)) = (d.shared_backend, state.rationale_sends) {
            d.rationale.fast_forward(n);
        }
        Ok(d)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn student(&self) -> &StudentModel {
        &self.student
    }

    pub fn template(&self) -> &TeachingTemplate {
        &self.template
    }

    pub fn is_completed(&self) -> bool {
        self.completed
    }

    pub fn n_batches(&self) -> usize {
        self.n_batches
    }

    fn emit(&self, pending: &mut Vec<RunEvent>, batch: usize, sample_id: Option<&str>, kind: EventKind) {
        pending.push(RunEvent {
            seq: (self.events.len() + pending.len()) as u64,
            batch,
            sample_id: sample_id.map(String::from),
            kind,
        });
    }

    /// First `n_shot` training samples, with rationales, form the initial template.
    fn seed_template(&mut self) -> Result<(), PipelineError> {
        let seeds: Vec<RetrievedCase> = self
            .inputs
            .train
            .samples()
            .iter()
            .take(self.cfg.n_shot)
            .map(|s| RetrievedCase {
                sample: s.clone(),
                similarity: 1.0,
                rationale: None,
            })
            .collect();
        let seeds = attach_rationales(seeds, &self.rationale, &mut self.cache)?;
        for case in seeds {
            let answer = gold_prediction(&case.sample).ok_or_else(|| AlignerError::Unlabeled(case.sample.id.clone()))?;
            let ex = self.template.example_from(&case.sample, answer, case.rationale.unwrap_or_default());
            self.template.push(ex)?;
        }
        let mut pending = Vec::new();
        self.emit(
            &mut pending,
            0,
            None,
            EventKind::RunStarted {
                n_unlabeled: self.inputs.unlabeled.len(),
                n_batches: self.n_batches,
                template: self.template.example_ids(),
            },
        );
        self.events.extend(pending);
        Ok(())
    }

    fn retrieve(&mut self, sample: &Sample) -> Result<Vec<RetrievedCase>, PipelineError> {
        let k = self.cfg.retrieval_k();
        let Some(store) = &self.store else {
            return Ok(Vec::new());
        };
        let query = self.featurizer.provider().embed(&sample.context)?;
        let cases = store.top_k_similar(&query, k, Some(&sample.id))?;
        Ok(attach_rationales(cases, &self.rationale, &mut self.cache)?)
    }

    fn log_verdict(&self, pending: &mut Vec<RunEvent>, batch: usize, id: &str, retrieved: &[RetrievedCase], v: &TeacherVerdict) {
        let ids: Vec<String> = retrieved.iter().map(|c| c.sample.id.clone()).collect();
        for (i, a) in v.attempts.iter().enumerate() {
            if i > 0 {
                self.emit(
                    pending,
                    batch,
                    Some(id),
                    EventKind::Reprompt {
                        previous_confidence: v.attempts[i - 1].confidence,
                    },
                );
            }
            self.emit(
                pending,
                batch,
                Some(id),
                EventKind::TeacherCall {
                    attempt: a.attempt,
                    retrieved: ids.clone(),
                    confidence: a.confidence,
                    status: Some(a.status),
                    prediction: a.prediction.clone(),
                },
            );
            if let Some(reason) = &a.parse_error {
                self.emit(
                    pending,
                    batch,
                    Some(id),
                    EventKind::ParseFailure {
                        attempt: a.attempt,
                        reason: reason.clone(),
                    },
                );
            }
        }
    }

    /// Features and training items for a confident prediction, or the reason
    /// it cannot be trained on.
    fn training_items(
        &self,
        sample: &Sample,
        prediction: &Prediction,
    ) -> Result<Result<Trainable, ExclusionReason>, PipelineError> {
        let item = |features: &Vec<f64>, target: u32| TrainItem {
            features: features.clone(),
            target,
            sample_id: sample.id.clone(),
        };
        match prediction {
            Prediction::Class(c) => {
                let features = self.featurizer.sample_features(sample)?;
                let items = vec![item(&features[0], *c)];
                Ok(Ok((features, items)))
            }
            Prediction::Spans { technology, effect } => {
                let ts = tokenize(sample);
                let aligned = match align_spans(&ts, technology, effect) {
                    Ok(a) => a,
                    Err(e) => return Ok(Err(ExclusionReason::Alignment(e.to_string()))),
                };
                let features = self.featurizer.token_features(&ts)?;
                let items = features.iter().zip(&aligned.aligned_labels).map(|(f, &l)| item(f, l)).collect();
                Ok(Ok((features, items)))
            }
        }
    }

    fn run_batch(&mut self, batch: usize) -> Result<Vec<RunEvent>, PipelineError> {
        let bs = self.cfg.distill_batch_size;
        let start = (batch - 1) * bs;
        let end = (start + bs).min(self.inputs.unlabeled.len());
        let samples: Vec<Sample> = self.inputs.unlabeled.samples()[start..end].to_vec();
        let mut pending = Vec::new();
        let mut members = Vec::new();
        for sample in &samples {
            let retrieved = self.retrieve(sample)?;
            let verdict = teacher_infer(&self.teacher, &self.template, &retrieved, sample, &self.settings)?;
            self.log_verdict(&mut pending, batch, &sample.id, &retrieved, &verdict);
            let excluded = match (&verdict.output, verdict.status) {
                (None, _) => Some(ExclusionReason::Unparsed),
                (Some(_), ConfidenceStatus::Unconfident) => Some(ExclusionReason::Unconfident),
                (Some(out), ConfidenceStatus::Confident) => match self.training_items(sample, &out.prediction)? {
                    Ok((features, items)) => {
                        members.push(Member {
                            sample,
                            features,
                            items,
                            prediction: out.prediction.clone(),
                        });
                        None
                    }
                    Err(reason) => Some(reason),
                },
            };
            if let Some(reason) = excluded {
                self.emit(&mut pending, batch, Some(&sample.id), EventKind::SampleExcluded { reason });
            }
        }

        if members.is_empty() {
            self.emit(&mut pending, batch, None, EventKind::BatchEmpty);
            return Ok(pending);
        }
        let train = TrainBatch::new(members.iter().flat_map(|m| m.items.iter().cloned()).collect());
        let fit = self
            .student
            .fit_batch(&train, self.cfg.lr, self.cfg.epochs_per_batch, self.cfg.finetune_chunk())?;
        self.emit(
            &mut pending,
            batch,
            None,
            EventKind::BatchTrained {
                samples: members.iter().map(|m| m.sample.id.clone()).collect(),
                items: train.len(),
                loss_before: fit.loss_before,
                loss_after: fit.loss_after,
                steps: fit.steps,
            },
        );

        let token_task = self.cfg.task.is_token_task();
        let scores = members
            .iter()
            .map(|m| {
                let out = self.student.score(&m.features, token_task, self.cfg.score_aggregation)?;
                Ok((m.sample.id.clone(), out.probability))
            })
            .collect::<Result<Vec<_>, StudentError>>()?;
        let idx = check_borderline(&scores)?;
        let chosen = &members[idx];
        self.emit(
            &mut pending,
            batch,
            Some(&chosen.sample.id),
            EventKind::BorderlineSelected {
                score: scores[idx].1,
                scores: scores.clone(),
            },
        );

        let label = match (self.cfg.gold_borderline_labels, gold_prediction(chosen.sample)) {
            (true, Some(gold)) => gold,
            _ => chosen.prediction.clone(),
        };
        let req = rationale_request(
            chosen.sample,
            &prediction_text(&label, self.cfg.task),
            tags::borderline(&chosen.sample.id),
        );
        let rationale = match self.rationale.complete(&req) {
            Ok(reply) => reply.text.trim().to_string(),
            Err(e) => {
                log::warn!("no rationale for borderline case {}: {e}", chosen.sample.id);
                String::new()
            }
        };
        let ex = self.template.example_from(chosen.sample, label, rationale);
        if let Some(push) = self.template.push(ex)? {
            self.emit(
                &mut pending,
                batch,
                Some(&chosen.sample.id),
                EventKind::TemplateUpdated {
                    added: chosen.sample.id.clone(),
                    evicted: push.evicted,
                    size: self.template.len(),
                },
            );
        }
        Ok(pending)
    }

    fn commit(&self) -> Result<(), PipelineError> {
        let Some(dir) = &self.run_dir else {
            return Ok(());
        };
        let ckpt = self.student.to_checkpoint();
        write_file(&dir.join(CHECKPOINT_FILE), ckpt.as_bytes())?;
        let tpl = serde_json::to_string_pretty(&self.template).expect("template serializes");
        write_file(&dir.join(TEMPLATE_FILE), tpl.as_bytes())?;
        write_file(&dir.join(RATIONALE_CACHE_FILE), self.cache.to_jsonl().as_bytes())?;
        write_file(&dir.join(EVENTS_FILE), events_to_jsonl(&self.events).as_bytes())?;
        let state = RunState {
            next_batch: self.next_batch,
            n_batches: self.n_batches,
            completed: self.completed,
            teacher_sends: self.teacher.sends(),
            rationale_sends: (!self.shared_backend).then(|| self.rationale.sends()),
            events: self.events.len(),
            checkpoint_sha256: sha256_hex(ckpt.as_bytes()),
        };
        let text = serde_json::to_string_pretty(&state).expect("state serializes");
        write_file(&dir.join(STATE_FILE), text.as_bytes())
    }

    /// Run up to `max_batches` further batches (all when `None`), committing
    /// after each. When the last batch is done the student is evaluated on the
    /// eval set, if there is one. A completed run returns immediately.
    pub fn run(&mut self, max_batches: Option<usize>) -> Result<RunOutcome, PipelineError> {
        let mut done = 0;
        while !self.completed && self.next_batch <= self.n_batches && max_batches.is_none_or(|m| done < m) {
            let batch = self.next_batch;
            let pending = self.run_batch(batch)?;
            self.events.extend(pending);
            self.next_batch += 1;
            done += 1;
            self.commit()?;
            log::info!("batch {batch}/{} committed", self.n_batches);
        }
        let mut metrics = None;
        if !self.completed && self.next_batch > self.n_batches {
            metrics = self.evaluate()?;
            if let (Some(dir), Some(m)) = (&self.run_dir, &metrics) {
                let json = serde_json::to_string_pretty(m).expect("metrics serialize");
                write_file(&dir.join(METRICS_FILE), json.as_bytes())?;
                let text = m.to_text(&self.cfg.task.label_space(), self.cfg.averaging);
                write_file(&dir.join(METRICS_TEXT_FILE), text.as_bytes())?;
            }
            let mut pending = Vec::new();
            self.emit(&mut pending, self.n_batches, None, EventKind::RunFinished { batches: self.n_batches });
            self.events.extend(pending);
            self.completed = true;
            self.commit()?;
        } else if self.completed {
            metrics = self.evaluate()?;
        }
        Ok(RunOutcome {
            student: self.student.clone(),
            template: self.template.clone(),
            events: self.events.clone(),
            metrics,
            completed: self.completed,
            batches_done: self.next_batch - 1,
        })
    }

    fn evaluate(&self) -> Result<Option<MetricsReport>, PipelineError> {
        match &self.inputs.eval {
            Some(eval) if !eval.is_empty() => Ok(Some(evaluate_student(
                &self.student,
                &self.featurizer,
                eval,
                self.cfg.score_aggregation,
            )?)),
            _ => Ok(None),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    write_atomic(path, bytes).map_err(io_err(path))
}

/// Start (or resume) and run to completion.
pub fn run_distillation(
    cfg: RunConfig,
    inputs: RunInputs,
    backends: Backends,
    embedder: Arc<dyn EmbeddingProvider>,
    run_dir: Option<&Path>,
) -> Result<RunOutcome, PipelineError> {
    Distiller::start(cfg, inputs, backends, embedder, run_dir)?.run(None)
}

pub fn resume_run(
    run_dir: &Path,
    backends: Backends,
    embedder: Arc<dyn EmbeddingProvider>,
) -> Result<RunOutcome, PipelineError> {
    Distiller::resume(run_dir, backends, embedder)?.run(None)
}

/// Read a run directory's config snapshot.
pub fn load_run_config(run_dir: &Path) -> Result<RunConfig, PipelineError> {
    let path = run_dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(PipelineError::NotARun(run_dir.to_path_buf()));
    }
    Ok(RunConfig::from_table(parse_table(&read_text(&path)?)?)?)
}

/// Read a run directory's event log.
pub fn load_events(run_dir: &Path) -> Result<Vec<RunEvent>, PipelineError> {
    let path = run_dir.join(EVENTS_FILE);
    if !path.exists() {
        return Err(PipelineError::NotARun(run_dir.to_path_buf()));
    }
    parse_events(&read_text(&path)?).map_err(|(line, e)| PipelineError::Corrupt {
        path,
        reason: format!("line {line}: {e}"),
    })
}

//! Scripted scenarios: a complete offline run described in one JSON file.
//!
//! A scenario lists labeled and unlabeled samples, optionally fixed
//! embedding vectors, and the teacher's reply to each attempt on each
//! unlabeled sample. Replies are keyed by request tag, so the run does not
//! depend on call order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Label, Sample, TaskKind};
use crate::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingVector, PrecomputedEmbeddings};
use crate::llm::parse::render_for_task;
use crate::llm::{tags, KeyedScriptBackend, Prediction, ScriptEntry};
use crate::pipeline::{
    apply_override, check_invariants, Backends, ConfigError, Distiller, EventKind, PipelineError, RunConfig, RunEvent,
    RunInputs, RunOutcome, Violation,
};

pub const SCENARIO_FILE: &str = "scenario.json";

const BUNDLED: &[(&str, &str)] = &[
    ("happy_path", include_str!("../scenarios/happy_path.json")),
    ("malformed_replies", include_str!("../scenarios/malformed_replies.json")),
    ("three_batches", include_str!("../scenarios/three_batches.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}; bundled: happy_path, malformed_replies, three_batches")]
    Unknown(String),
    #[error("reading scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario format: {0}")]
    Format(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Shorthand for a teacher answer. `confidence` is in percent; leaving it
/// out omits the field (path replies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technology: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default)]
    pub rationale: String,
}

/// One scripted reply: raw text, an answer to render, or an injected failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Fail { fail: String },
    Answer(AnswerSpec),
}

impl ScriptedReply {
    fn to_entry(&self, task: TaskKind) -> Result<ScriptEntry, ScenarioError> {
        Ok(match self {
            ScriptedReply::Text(t) => ScriptEntry::reply(t.clone()),
            ScriptedReply::Fail { fail } => ScriptEntry::fail(fail.clone()),
            ScriptedReply::Answer(a) => ScriptEntry::reply(a.render(task)?),
        })
    }
}

impl AnswerSpec {
    pub fn render(&self, task: TaskKind) -> Result<String, ScenarioError> {
        let prediction = match (task, self.label, &self.technology, &self.effect) {
            (TaskKind::CausalityTokens, None, Some(t), Some(e)) => Prediction::Spans {
                technology: t.clone(),
                effect: e.clone(),
            },
            (TaskKind::CausalityTokens, ..) => {
                return Err(ScenarioError::Format("causality answers need technology and effect".into()))
            }
            (_, Some(l), None, None) => Prediction::Class(l),
            _ => return Err(ScenarioError::Format(format!("{task} answers need a label only"))),
        };
        let conf = self.confidence.map_or(1.0, |c| c / 100.0);
        Ok(render_for_task(&prediction, conf, &self.rationale, task, self.confidence.is_some()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSample {
    pub id: String,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    /// Teacher replies to attempt 1, 2, ... on this sample.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<ScriptedReply>,
}

/// Counts a finished run must match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub batches: Option<usize>,
    pub reprompts: Option<usize>,
    pub parse_failures: Option<usize>,
    pub template_updates: Option<usize>,
    /// Samples that must never appear in a trained batch.
    #[serde(default)]
    pub never_trained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub task: TaskKind,
    /// Config keys as in the TOML file.
    #[serde(default)]
    pub config: toml::Table,
    pub train: Vec<ScenarioSample>,
    pub unlabeled: Vec<ScenarioSample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval: Vec<ScenarioSample>,
    /// Embedding per sample id; hashed features from the config when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<BTreeMap<String, Vec<f64>>>,
    /// Reply to any rationale request without its own entry; `{id}` is replaced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_template: Option<String>,
    /// Additional replies by request tag, e.g. `rationale/<id>`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub replies: BTreeMap<String, Vec<ScriptedReply>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectations>,
}

/// A finished (or interrupted) simulation with everything it violated.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub outcome: RunOutcome,
    pub violations: Vec<Violation>,
    pub unmet: Vec<String>,
}

impl SimulationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.unmet.is_empty()
    }
}

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
        Self::from_json(text)
    }

    /// A bundled name, or else a path to a scenario file.
    pub fn load(name_or_path: &str) -> Result<Self, ScenarioError> {
        if let Ok(s) = Self::bundled(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(ScenarioError::Unknown(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: name_or_path.to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Scenario config with `task` pinned and `overrides` applied. Retries
    /// are immediate unless the scenario says otherwise.
    pub fn run_config(&self, overrides: &[String]) -> Result<RunConfig, ScenarioError> {
        let mut table = self.config.clone();
        table.insert("task".into(), toml::Value::String(self.task.to_string()));
        table
            .entry("retry_base_delay_ms")
            .or_insert(toml::Value::Integer(0));
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = RunConfig::from_table(table)?;
        if cfg.task != self.task {
            return Err(ScenarioError::Format(format!(
                "override changes the task to {} but the scenario is {}",
                cfg.task, self.task
            )));
        }
        Ok(cfg)
    }

    fn dataset(&self, samples: &[ScenarioSample]) -> Result<Dataset, ScenarioError> {
        let samples = samples
            .iter()
            .map(|s| Sample::new(s.id.clone(), s.context.clone(), s.label.clone(), self.task))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset::new(self.task, samples)?)
    }

    pub fn inputs(&self) -> Result<RunInputs, ScenarioError> {
        Ok(RunInputs {
            train: self.dataset(&self.train)?,
            unlabeled: self.dataset(&self.unlabeled)?,
            eval: if self.eval.is_empty() { None } else { Some(self.dataset(&self.eval)?) },
        })
    }

    /// The scripted teacher, answering by request tag.
    pub fn backend(&self) -> Result<Arc<KeyedScriptBackend>, ScenarioError> {
        let mut entries: HashMap<String, Vec<ScriptEntry>> = HashMap::new();
        for s in &self.unlabeled {
            for (i, r) in s.replies.iter().enumerate() {
                entries.insert(tags::teacher(&s.id, i as u32 + 1), vec![r.to_entry(self.task)?]);
            }
        }
        for (tag, replies) in &self.replies {
            let list = replies.iter().map(|r| r.to_entry(self.task)).collect::<Result<Vec<_>, _>>()?;
            entries.entry(tag.clone()).or_default().extend(list);
        }
        Ok(Arc::new(KeyedScriptBackend::new(entries, self.rationale_template.clone())))
    }

    pub fn embedder(&self, cfg: &RunConfig) -> Result<Arc<dyn EmbeddingProvider>, ScenarioError> {
        let Some(vectors) = &self.vectors else {
            return Ok(cfg.embedding.build()?);
        };
        let dim = vectors
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| ScenarioError::Format("empty vector table".into()))?;
        let mut table = PrecomputedEmbeddings::new(dim);
        for s in self.train.iter().chain(&self.unlabeled).chain(&self.eval) {
            let v = vectors
                .get(&s.id)
                .ok_or_else(|| ScenarioError::Format(format!("no vector for sample {}", s.id)))?;
            table.insert(s.context.clone(), EmbeddingVector::new(v.clone())?)?;
        }
        Ok(Arc::new(table))
    }

    /// Run from scratch. With `run_dir`, the scenario is saved next to the
    /// run so it can be resumed.
    pub fn run(
        &self,
        run_dir: Option<&Path>,
        overrides: &[String],
        max_batches: Option<usize>,
    ) -> Result<SimulationReport, ScenarioError> {
        let cfg = self.run_config(overrides)?;
        let embedder = self.embedder(&cfg)?;
        let backends = Backends::single(self.backend()?);
        let mut d = Distiller::start(cfg, self.inputs()?, backends, embedder, run_dir)?;
        if let Some(dir) = run_dir {
            std::fs::write(dir.join(SCENARIO_FILE), self.to_json()).map_err(|source| ScenarioError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
        let outcome = d.run(max_batches)?;
        Ok(self.report(outcome, d.config().n_shot))
    }

    /// Continue an interrupted run of this scenario.
    pub fn resume(&self, run_dir: &Path, max_batches: Option<usize>) -> Result<SimulationReport, ScenarioError> {
        let cfg = crate::pipeline::load_run_config(run_dir)?;
        let embedder = self.embedder(&cfg)?;
        let mut d = Distiller::resume(run_dir, Backends::single(self.backend()?), embedder)?;
        let outcome = d.run(max_batches)?;
        Ok(self.report(outcome, cfg.n_shot))
    }

    fn report(&self, outcome: RunOutcome, n_shot: usize) -> SimulationReport {
        let violations = check_invariants(&outcome.events, n_shot);
        let unmet = match (&self.expect, outcome.completed) {
            (Some(e), true) => unmet_expectations(e, &outcome.events),
            _ => Vec::new(),
        };
        SimulationReport {
            outcome,
            violations,
            unmet,
        }
    }
}

fn count(events: &[RunEvent], pred: impl Fn(&EventKind) -> bool) -> usize {
    events.iter().filter(|e| pred(&e.kind)).count()
}

fn unmet_expectations(e: &Expectations, events: &[RunEvent]) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |what: &str, want: Option<usize>, got: usize| {
        if let Some(w) = want {
            if w != got {
                out.push(format!("expected {w} {what}, got {got}"));
            }
        }
    };
    check(
        "batches",
        e.batches,
        count(events, |k| matches!(k, EventKind::BatchTrained { .. } | EventKind::BatchEmpty)),
    );
    check("reprompts", e.reprompts, count(events, |k| matches!(k, EventKind::Reprompt { .. })));
    check(
        "parse failures",
        e.parse_failures,
        count(events, |k| matches!(k, EventKind::ParseFailure { .. })),
    );
    check(
        "template updates",
        e.template_updates,
        count(events, |k| matches!(k, EventKind::TemplateUpdated { .. })),
    );
    for ev in events {
        if let EventKind::BatchTrained { samples, .. } = &ev.kind {
            for id in samples.iter().filter(|id| e.never_trained.contains(id)) {
                out.push(format!("{id} was trained on in batch {}", ev.batch));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for name in bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.name, name);
            s.inputs().unwrap();
            s.backend().unwrap();
            s.run_config(&[]).unwrap();
        }
        assert!(matches!(Scenario::load("nope"), Err(ScenarioError::Unknown(_))));
    }

    #[test]
    fn answers_render_per_task() {
        let a = AnswerSpec {
            label: Some(1),
            technology: None,
            effect: None,
            confidence: Some(91.0),
            rationale: "r".into(),
        };
        assert_eq!(
            a.render(TaskKind::BinaryGreen).unwrap(),
            r#"{"Answer": "yes", "Confidence": 91, "Rationale": "r"}"#
        );
        let p = AnswerSpec { confidence: None, ..a.clone() };
        assert_eq!(p.render(TaskKind::PathClass).unwrap(), r#"{"Label": 1, "Rationale": "r"}"#);
        assert!(a.render(TaskKind::CausalityTokens).is_err());
    }

    #[test]
    fn override_cannot_change_task() {
        let s = Scenario::bundled("happy_path").unwrap();
        assert!(s.run_config(&["task=path_class".into()]).is_err());
        assert_eq!(s.run_config(&["teacher_threshold=0.75".into()]).unwrap().teacher_threshold, 0.75);
    }
}

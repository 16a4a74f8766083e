//! Run events and the invariant checks run over a finished log.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::llm::Prediction;
use crate::teacher::ConfidenceStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Final verdict below the threshold.
    Unconfident,
    /// Neither reply could be parsed.
    Unparsed,
    /// The teacher's spans could not be placed in the context.
    Alignment(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    RunStarted {
        n_unlabeled: usize,
        n_batches: usize,
        template: Vec<String>,
    },
    TeacherCall {
        attempt: u32,
        retrieved: Vec<String>,
        confidence: Option<f64>,
        status: Option<ConfidenceStatus>,
        prediction: Option<Prediction>,
    },
    Reprompt {
        previous_confidence: Option<f64>,
    },
    ParseFailure {
        attempt: u32,
        reason: String,
    },
    SampleExcluded {
        reason: ExclusionReason,
    },
    BatchTrained {
        samples: Vec<String>,
        items: usize,
        loss_before: f64,
        loss_after: f64,
        steps: u64,
    },
    /// Nothing in the batch passed the teacher check.
    BatchEmpty,
    BorderlineSelected {
        score: f64,
        scores: Vec<(String, f64)>,
    },
    TemplateUpdated {
        added: String,
        evicted: Option<String>,
        size: usize,
    },
    RunFinished {
        batches: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    pub batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl RunEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes") + "\n"
    }
}

pub fn events_to_jsonl(events: &[RunEvent]) -> String {
    events.iter().map(RunEvent::to_json_line).collect()
}

pub fn parse_events(text: &str) -> Result<Vec<RunEvent>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

/// One broken rule, with the batch it was found in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub batch: usize,
    pub rule: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "batch {}: {} ({})", self.batch, self.rule, self.detail)
    }
}

#[derive(Default)]
struct BatchView<'a> {
    calls: BTreeMap<&'a str, Vec<&'a RunEvent>>,
    trained: Vec<&'a [String]>,
    empty: usize,
    borderline: usize,
    template_updates: usize,
}

/// Check a complete event log against the loop's rules:
/// sequence numbers are consecutive; each sample gets one or two teacher
/// calls, a re-prompt only after a first call; every trained batch has
/// exactly one borderline selection and every empty batch none; at most one
/// template update per batch and never more than `n_shot` exemplars; only
/// samples whose last call was confident are trained on.
pub fn check_invariants(events: &[RunEvent], n_shot: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |batch, rule, detail: String| out.push(Violation { batch, rule, detail });
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            v(e.batch, "sequence", format!("event {i} has seq {}", e.seq));
        }
    }
    let mut batches: BTreeMap<usize, BatchView> = BTreeMap::new();
    for e in events {
        let b = batches.entry(e.batch).or_default();
        let id = e.sample_id.as_deref();
        match &e.kind {
            EventKind::RunStarted { template, .. } if template.len() > n_shot => {
                v(e.batch, "template-size", format!("{} initial exemplars, n_shot {n_shot}", template.len()));
            }
            EventKind::TeacherCall { .. } => b.calls.entry(id.unwrap_or("")).or_default().push(e),
            EventKind::Reprompt { .. } => {
                let prior = b.calls.get(id.unwrap_or("")).map_or(0, Vec::len);
                if prior != 1 {
                    v(e.batch, "reprompt-order", format!("{id:?} re-prompted after {prior} calls"));
                }
            }
            EventKind::BatchTrained { samples, .. } => b.trained.push(samples),
            EventKind::BatchEmpty => b.empty += 1,
            EventKind::BorderlineSelected { .. } => b.borderline += 1,
            EventKind::TemplateUpdated { size, .. } => {
                b.template_updates += 1;
                if *size > n_shot {
                    v(e.batch, "template-size", format!("{size} exemplars, n_shot {n_shot}"));
                }
            }
            _ => {}
        }
    }
    for (&batch, b) in &batches {
        if batch == 0 {
            continue;
        }
        for (id, calls) in &b.calls {
            if !(1..=2).contains(&calls.len()) {
                v(batch, "teacher-calls", format!("{id} had {} calls", calls.len()));
            }
        }
        let expected_borderline = match (b.trained.len(), b.empty) {
            (1, 0) => 1,
            (0, 1) => 0,
            (t, e) => {
                v(batch, "batch-outcome", format!("{t} trained and {e} empty markers"));
                continue;
            }
        };
        if b.borderline != expected_borderline {
            v(batch, "borderline-count", format!("{} selections, expected {expected_borderline}", b.borderline));
        }
        if b.template_updates > 1 {
            v(batch, "template-updates", format!("{} updates", b.template_updates));
        }
        let last_status: HashMap<&str, Option<ConfidenceStatus>> = b
            .calls
            .iter()
            .map(|(id, calls)| {
                let status = match &calls.last().expect("non-empty").kind {
                    EventKind::TeacherCall { status, .. } => *status,
                    _ => None,
                };
                (*id, status)
            })
            .collect();
        for samples in &b.trained {
            for id in samples.iter() {
                if last_status.get(id.as_str()).copied().flatten() != Some(ConfidenceStatus::Confident) {
                    v(batch, "trained-unconfident", format!("{id} trained without a confident verdict"));
                }
            }
        }
    }
    out
}

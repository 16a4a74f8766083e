//! Human-readable summary of a run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use dualchecker::metrics::MetricsReport;
use dualchecker::pipeline::{load_events, load_run_config, EventKind, RunEvent, METRICS_FILE};

#[derive(Debug, Default, Clone, PartialEq)]
pub struct BatchLine {
    pub batch: usize,
    pub samples: usize,
    pub trained: usize,
    pub excluded: usize,
    pub reprompts: usize,
    pub borderline: Option<(String, f64)>,
    pub template: Option<String>,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Summary {
    pub n_unlabeled: usize,
    pub n_batches: usize,
    pub completed: bool,
    pub batches: Vec<BatchLine>,
    pub teacher_calls: usize,
    pub samples_called: usize,
    pub reprompts: usize,
    pub parse_failures: usize,
    pub template_updates: usize,
}

impl Summary {
    /// Share of queried samples that needed a second call, in percent.
    pub fn reprompt_rate(&self) -> f64 {
        if self.samples_called == 0 {
            0.0
        } else {
            100.0 * self.reprompts as f64 / self.samples_called as f64
        }
    }

    pub fn borderline_history(&self) -> Vec<&str> {
        self.batches
            .iter()
            .filter_map(|b| b.borderline.as_ref().map(|(id, _)| id.as_str()))
            .collect()
    }
}

pub fn summarize(events: &[RunEvent]) -> Summary {
    let mut s = Summary::default();
    let mut lines: BTreeMap<usize, BatchLine> = BTreeMap::new();
    let mut called: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for e in events {
        let line = || BatchLine {
            batch: e.batch,
            ..BatchLine::default()
        };
        match &e.kind {
            EventKind::RunStarted { n_unlabeled, n_batches, .. } => {
                s.n_unlabeled = *n_unlabeled;
                s.n_batches = *n_batches;
            }
            EventKind::TeacherCall { .. } => {
                s.teacher_calls += 1;
                lines.entry(e.batch).or_insert_with(line);
                called.entry(e.batch).or_default().insert(e.sample_id.as_deref().unwrap_or(""));
            }
            EventKind::Reprompt { .. } => {
                s.reprompts += 1;
                lines.entry(e.batch).or_insert_with(line).reprompts += 1;
            }
            EventKind::ParseFailure { .. } => s.parse_failures += 1,
            EventKind::SampleExcluded { .. } => lines.entry(e.batch).or_insert_with(line).excluded += 1,
            EventKind::BatchTrained { samples, .. } => {
                lines.entry(e.batch).or_insert_with(line).trained = samples.len();
            }
            EventKind::BatchEmpty => {
                lines.entry(e.batch).or_insert_with(line);
            }
            EventKind::BorderlineSelected { score, .. } => {
                let id = e.sample_id.clone().unwrap_or_default();
                lines.entry(e.batch).or_insert_with(line).borderline = Some((id, *score));
            }
            EventKind::TemplateUpdated { added, evicted, size } => {
                s.template_updates += 1;
                let text = match evicted {
                    Some(old) => format!("+{added} -{old} ({size})"),
                    None => format!("+{added} ({size})"),
                };
                lines.entry(e.batch).or_insert_with(line).template = Some(text);
            }
            EventKind::RunFinished { .. } => s.completed = true,
        }
    }
    for (batch, ids) in called {
        s.samples_called += ids.len();
        if let Some(l) = lines.get_mut(&batch) {
            l.samples = ids.len();
        }
    }
    s.batches = lines.into_values().collect();
    s
}

pub fn render(s: &Summary, header: &str, metrics: Option<&str>) -> String {
    let mut out = String::new();
    out.push_str(header);
    let state = if s.completed { "completed" } else { "in progress" };
    writeln!(out, "status: {state}, {} of {} batches done", s.batches.len(), s.n_batches).unwrap();
    writeln!(
        out,
        "{:>5} {:>7} {:>7} {:>8} {:>9}  {:<24} template",
        "batch", "samples", "trained", "excluded", "reprompts", "borderline (score)"
    )
    .unwrap();
    for b in &s.batches {
        let borderline = b
            .borderline
            .as_ref()
            .map_or("-".to_string(), |(id, score)| format!("{id} ({score:.4})"));
        writeln!(
            out,
            "{:>5} {:>7} {:>7} {:>8} {:>9}  {:<24} {}",
            b.batch,
            b.samples,
            b.trained,
            b.excluded,
            b.reprompts,
            borderline,
            b.template.as_deref().unwrap_or("-")
        )
        .unwrap();
    }
    writeln!(out, "teacher calls: {} for {} samples", s.teacher_calls, s.samples_called).unwrap();
    writeln!(
        out,
        "reprompt rate: {:.2}% ({} of {} samples)",
        s.reprompt_rate(),
        s.reprompts,
        s.samples_called
    )
    .unwrap();
    writeln!(out, "parse failures: {}", s.parse_failures).unwrap();
    let history = s.borderline_history();
    writeln!(
        out,
        "borderline history: {}",
        if history.is_empty() { "none".to_string() } else { history.join(", ") }
    )
    .unwrap();
    match metrics {
        Some(m) => write!(out, "final metrics:\n{m}").unwrap(),
        None => writeln!(out, "final metrics: none").unwrap(),
    }
    out
}

pub fn run(dir: &Path) -> Result<String> {
    let cfg = load_run_config(dir)?;
    let events = load_events(dir)?;
    let summary = summarize(&events);
    let metrics_path = dir.join(METRICS_FILE);
    let metrics = if metrics_path.exists() {
        let text = std::fs::read_to_string(&metrics_path).with_context(|| format!("reading {}", metrics_path.display()))?;
        let report: MetricsReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", metrics_path.display()))?;
        Some(report.to_text(&cfg.task.label_space(), cfg.averaging))
    } else {
        None
    };
    let header = format!(
        "run: {}\ntask: {}, n_shot {}, threshold {}, batch size {}, {} unlabeled\n",
        dir.display(),
        cfg.task,
        cfg.n_shot,
        cfg.teacher_threshold,
        cfg.distill_batch_size,
        summary.n_unlabeled
    );
    Ok(render(&summary, &header, metrics.as_deref()))
}

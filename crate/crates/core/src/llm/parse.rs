//! Parsing and rendering of the JSON answer objects the teaching templates request.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::data::TaskKind;

/// A teacher's answer: a class id, or a technology/effect phrase pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Class(u32),
    Spans { technology: String, effect: String },
}

impl Prediction {
    pub fn class(&self) -> Option<u32> {
        match self {
            Prediction::Class(c) => Some(*c),
            Prediction::Spans { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTeacherOutput {
    pub prediction: Prediction,
    /// Self-reported confidence on the unit interval.
    pub confidence: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unparseable teacher reply ({reason}): {text:?}")]
pub struct ParseFailure {
    pub reason: String,
    pub text: String,
}

fn fail(reason: impl Into<String>, text: &str) -> ParseFailure {
    ParseFailure {
        reason: reason.into(),
        text: text.to_string(),
    }
}

/// Case-insensitive key lookup.
fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
        .map(|(_, v)| v)
}

/// Keys whose presence marks an object as the task's answer object.
fn anchor_keys(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::BinaryGreen => &["Answer"],
        TaskKind::CausalityTokens => &["Technology", "Environmental Effect"],
        TaskKind::PathClass => &["Label"],
    }
}

/// Every JSON object embedded in `text`, in order of their opening brace.
fn embedded_objects(text: &str) -> impl Iterator<Item = Map<String, Value>> + '_ {
    text.char_indices().filter(|&(_, c)| c == '{').filter_map(move |(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn parse_percent(v: &Value, text: &str) -> Result<f64, ParseFailure> {
    let pct = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_end_matches('%').trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| fail(format!("confidence {v} is not a number"), text))?;
    if !pct.is_finite() || !(0.0..=100.0).contains(&pct) {
        return Err(fail(format!("confidence {pct} outside [0, 100]"), text));
    }
    Ok(pct / 100.0)
}

fn string_field(obj: &Map<String, Value>, key: &str, text: &str) -> Result<String, ParseFailure> {
    match field(obj, key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(other) => Err(fail(format!("{key} must be a non-empty string, got {other}"), text)),
        None => Err(fail(format!("missing {key}"), text)),
    }
}

/// Extract the first JSON object in `text` that carries the task's answer
/// keys and validate it.
///
/// Yes/no answers map to 1/0, confidences are percentages divided by 100.
/// Path replies need no confidence and default to 1.0 without one.
pub fn parse_teacher_reply(text: &str, task: TaskKind) -> Result<ParsedTeacherOutput, ParseFailure> {
    let obj = embedded_objects(text)
        .find(|o| anchor_keys(task).iter().all(|k| field(o, k).is_some()))
        .ok_or_else(|| fail("no answer object", text))?;

    let prediction = match task {
        TaskKind::BinaryGreen => {
            let answer = match field(&obj, "Answer") {
                Some(Value::String(s)) => s.trim().trim_end_matches('.').to_ascii_lowercase(),
                Some(other) => return Err(fail(format!("answer {other} is not yes/no"), text)),
                None => unreachable!("anchor key checked"),
            };
            match answer.as_str() {
                "yes" => Prediction::Class(1),
                "no" => Prediction::Class(0),
                other => return Err(fail(format!("answer {other:?} is not yes/no"), text)),
            }
        }
        TaskKind::PathClass => {
            let raw = field(&obj, "Label").expect("anchor key checked");
            let label = match raw {
                Value::Number(n) => n.as_u64(),
                Value::String(s) => s.trim().parse::<u64>().ok(),
                _ => None,
            };
            match label {
                Some(l) if l < 4 => Prediction::Class(l as u32),
                _ => return Err(fail(format!("label {raw} outside 0..=3"), text)),
            }
        }
        TaskKind::CausalityTokens => Prediction::Spans {
            technology: string_field(&obj, "Technology", text)?,
            effect: string_field(&obj, "Environmental Effect", text)?,
        },
    };

    let confidence = match (field(&obj, "Confidence"), task) {
        (Some(v), _) => parse_percent(v, text)?,
        (None, TaskKind::PathClass) => 1.0,
        (None, _) => return Err(fail("missing Confidence", text)),
    };

    let rationale = match field(&obj, "Rationale") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };

    Ok(ParsedTeacherOutput {
        prediction,
        confidence,
        rationale,
    })
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Confidence as a percentage literal: integral values without a fraction.
pub(crate) fn format_percent(confidence: f64) -> String {
    let pct = confidence * 100.0;
    let rounded = pct.round();
    if (pct - rounded).abs() < 1e-9 {
        format!("{}", rounded as i64)
    } else {
        format!("{pct}")
    }
}

/// Render a span or label answer. `confidence = None` omits the field (path
/// replies without a confidence request).
pub(crate) fn render_answer(prediction: &Prediction, confidence: Option<f64>, rationale: &str) -> String {
    let conf = confidence
        .map(|c| format!(", \"Confidence\": {}", format_percent(c)))
        .unwrap_or_default();
    match prediction {
        Prediction::Spans { technology, effect } => format!(
            "{{\"Technology\": {}, \"Environmental Effect\": {}{conf}, \"Rationale\": {}}}",
            json_str(technology),
            json_str(effect),
            json_str(rationale)
        ),
        Prediction::Class(c) => format!(
            "{{\"Label\": {c}{conf}, \"Rationale\": {}}}",
            json_str(rationale)
        ),
    }
}

/// Render `out` the way the task's template asks the teacher to answer.
pub fn render_reply(out: &ParsedTeacherOutput, task: TaskKind) -> String {
    render_for_task(&out.prediction, out.confidence, &out.rationale, task, out.confidence != 1.0)
}

/// Task-aware rendering shared by replies and template exemplars.
pub(crate) fn render_for_task(
    prediction: &Prediction,
    confidence: f64,
    rationale: &str,
    task: TaskKind,
    path_confidence: bool,
) -> String {
    match (task, prediction) {
        (TaskKind::BinaryGreen, Prediction::Class(c)) => format!(
            "{{\"Answer\": {}, \"Confidence\": {}, \"Rationale\": {}}}",
            json_str(if *c == 1 { "yes" } else { "no" }),
            format_percent(confidence),
            json_str(rationale)
        ),
        (TaskKind::PathClass, p) => {
            render_answer(p, path_confidence.then_some(confidence), rationale)
        }
        (_, p) => render_answer(p, Some(confidence), rationale),
    }
}

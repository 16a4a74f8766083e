//! Teaching templates, prompt rendering, the teacher confidence check and the
//! single re-prompt.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::RetrievedCase;
use crate::data::{Label, Sample, TaskKind};
use crate::llm::parse::{format_percent, render_for_task};
use crate::llm::{parse_teacher_reply, tags, BackendError, ChatRequest, LlmClient, ParsedTeacherOutput, Prediction};
use crate::rng::{fnv1a64, mix64};
use crate::spans::span_texts;
use crate::tokenize::tokenize;

pub const SYSTEM_TEXT: &str =
    "You are an expert annotator of green innovation text. Follow the instructions and reply in the requested JSON format.";

/// Lowest and highest confidence shown on synthesized exemplars.
pub const DISPLAY_CONFIDENCE_RANGE: (u8, u8) = (60, 90);

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("case {id} is a {found} sample, template is for {expected}")]
    TaskMismatch { id: String, expected: TaskKind, found: TaskKind },
    #[error("{got} retrieved cases exceed the shot budget {budget}")]
    TooManyRetrieved { got: usize, budget: usize },
    #[error("case {0} has no label to show")]
    Unlabeled(String),
    #[error("template: {0}")]
    BadTemplate(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Gold label of a sample in the teacher's answer vocabulary. Token labels
/// become the first technology / effect spans (empty when absent).
pub fn gold_prediction(sample: &Sample) -> Option<Prediction> {
    match sample.gold.as_ref()? {
        Label::Class(c) => Some(Prediction::Class(*c)),
        Label::Tokens(labels) => {
            let ts = tokenize(sample);
            let (t, e) = span_texts(&ts, labels);
            Some(Prediction::Spans {
                technology: t.unwrap_or_default(),
                effect: e.unwrap_or_default(),
            })
        }
    }
}

/// Plain-text rendering of an answer, used in rationale requests.
pub fn prediction_text(prediction: &Prediction, task: TaskKind) -> String {
    match (task, prediction) {
        (TaskKind::BinaryGreen, Prediction::Class(c)) => if *c == 1 { "yes" } else { "no" }.to_string(),
        (_, Prediction::Class(c)) => {
            let space = task.label_space();
            format!("{c} ({})", space.name(*c).unwrap_or("unknown"))
        }
        (_, Prediction::Spans { technology, effect }) => {
            format!("Technology: {technology}; Environmental Effect: {effect}")
        }
    }
}

pub fn label_text(sample: &Sample) -> Option<String> {
    gold_prediction(sample).map(|p| prediction_text(&p, sample.task))
}

/// Seeded confidence in `60..=90` for an exemplar, stable per sample id.
pub fn display_confidence(seed: u64, sample_id: &str) -> u8 {
    let (lo, hi) = DISPLAY_CONFIDENCE_RANGE;
    let span = u64::from(hi - lo) + 1;
    lo + (mix64(seed ^ fnv1a64(sample_id.as_bytes(), 0)) % span) as u8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingExample {
    pub sample_id: String,
    pub context: String,
    pub answer: Prediction,
    pub rationale: String,
    pub display_confidence: u8,
}

/// Outcome of a template insertion that changed the template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Push {
    pub evicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingTemplate {
    pub task: TaskKind,
    pub instruction: String,
    pub n_shot: usize,
    /// Ask for a confidence on path classification too.
    pub path_confidence: bool,
    /// Seed for synthesized display confidences.
    pub seed: u64,
    /// Cap on retrieved cases per prompt; the shot budget when unset.
    #[serde(default)]
    pub retrieval_k: Option<usize>,
    examples: VecDeque<TeachingExample>,
}

impl TeachingTemplate {
    pub fn new(task: TaskKind, n_shot: usize, path_confidence: bool, seed: u64) -> Self {
        Self {
            task,
            instruction: task.instruction_with(path_confidence).to_string(),
            n_shot,
            path_confidence,
            seed,
            retrieval_k: None,
            examples: VecDeque::new(),
        }
    }

    /// Allow `k` retrieved cases per prompt instead of the shot budget.
    pub fn with_retrieval_k(mut self, k: usize) -> Self {
        self.retrieval_k = Some(k);
        self
    }

    /// Replace the instruction. It must still ask for every reply key of the task.
    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Result<Self, TeacherError> {
        let instruction = instruction.into();
        let missing: Vec<&str> = self
            .reply_keys()
            .into_iter()
            .filter(|k| !instruction.contains(&format!("\"{k}\"")))
            .collect();
        if !missing.is_empty() {
            return Err(TeacherError::BadTemplate(format!(
                "instruction lacks output keys {missing:?}"
            )));
        }
        self.instruction = instruction;
        Ok(self)
    }

    pub fn examples(&self) -> impl Iterator<Item = &TeachingExample> {
        self.examples.iter()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn example_ids(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.sample_id.clone()).collect()
    }

    fn reply_keys(&self) -> Vec<&'static str> {
        let mut keys = self.task.reply_keys().to_vec();
        if self.task == TaskKind::PathClass && self.path_confidence {
            keys.insert(1, "Confidence");
        }
        keys
    }

    /// Exemplar built from a labeled sample.
    pub fn example_from(&self, sample: &Sample, answer: Prediction, rationale: impl Into<String>) -> TeachingExample {
        TeachingExample {
            sample_id: sample.id.clone(),
            context: sample.context.clone(),
            answer,
            rationale: rationale.into(),
            display_confidence: display_confidence(self.seed, &sample.id),
        }
    }

    /// Add an exemplar, evicting the oldest once `n_shot` are held. An id
    /// already present leaves the template untouched. Returns the evicted id
    /// when something changed, `Ok(None)` otherwise.
    pub fn push(&mut self, example: TeachingExample) -> Result<Option<Push>, TeacherError> {
        if example.answer.class().is_some() == self.task.is_token_task() {
            return Err(TeacherError::BadTemplate(format!(
                "exemplar {} answer does not fit {}",
                example.sample_id, self.task
            )));
        }
        if self.n_shot == 0 || self.examples.iter().any(|e| e.sample_id == example.sample_id) {
            return Ok(None);
        }
        let evicted = if self.examples.len() >= self.n_shot {
            self.examples.pop_front().map(|e| e.sample_id)
        } else {
            None
        };
        self.examples.push_back(example);
        Ok(Some(Push { evicted }))
    }

    fn render_example(&self, context: &str, answer: &Prediction, rationale: &str, confidence: u8) -> String {
        let output = render_for_task(
            answer,
            f64::from(confidence) / 100.0,
            rationale,
            self.task,
            self.path_confidence,
        );
        format!("Text: {context}\nOutput: {output}\n\n")
    }

    /// The reply format the instruction asks for, used as a reminder.
    pub fn format_block(&self) -> String {
        let fields: Vec<String> = self.reply_keys().iter().map(|k| format!("\"{k}\": {k}")).collect();
        format!("{{{}}}", fields.join(", "))
    }
}

/// Instruction, template exemplars, retrieved exemplars, then the query.
pub fn build_prompt(
    template: &TeachingTemplate,
    retrieved: &[RetrievedCase],
    query: &Sample,
) -> Result<ChatRequest, TeacherError> {
    let budget = template.retrieval_k.unwrap_or_else(|| crate::aligner::shot_budget(template.n_shot));
    if retrieved.len() > budget {
        return Err(TeacherError::TooManyRetrieved {
            got: retrieved.len(),
            budget,
        });
    }
    for s in retrieved.iter().map(|c| &c.sample).chain(std::iter::once(query)) {
        if s.task != template.task {
            return Err(TeacherError::TaskMismatch {
                id: s.id.clone(),
                expected: template.task,
                found: s.task,
            });
        }
    }
    let mut text = format!("{}\n\n", template.instruction);
    for ex in template.examples() {
        text += &template.render_example(&ex.context, &ex.answer, &ex.rationale, ex.display_confidence);
    }
    for case in retrieved {
        let answer = gold_prediction(&case.sample).ok_or_else(|| TeacherError::Unlabeled(case.sample.id.clone()))?;
        text += &template.render_example(
            &case.sample.context,
            &answer,
            case.rationale.as_deref().unwrap_or(""),
            display_confidence(template.seed, &case.sample.id),
        );
    }
    text += &format!("Text: {}\nOutput:", query.context);
    Ok(ChatRequest::new(SYSTEM_TEXT, text, tags::teacher(&query.id, 1)))
}

/// Number of filled-in exemplars in a rendered prompt.
pub fn count_exemplars(prompt: &str) -> usize {
    prompt.matches("\nOutput: {").count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceStatus {
    Confident,
    Unconfident,
}

/// Confident on `[threshold, 1]`. A NaN score is never confident.
pub fn check_confidence(score: f64, threshold: f64) -> ConfidenceStatus {
    if score >= threshold {
        ConfidenceStatus::Confident
    } else {
        ConfidenceStatus::Unconfident
    }
}

/// Extra context appended to the prompt when re-asking the teacher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepromptDetail {
    pub detail_text: String,
}

/// Placeholders: `{context}`, `{similar_case}`, `{previous_confidence}`.
pub const DEFAULT_DETAIL_TEMPLATE: &str = "Additional details for re-examination.\nFull text: {context}\nMost similar labeled case: {similar_case}\nYour previous answer had low confidence ({previous_confidence}). Re-examine the text carefully, considering the similar case, and answer again in the same JSON format.";

impl RepromptDetail {
    /// `previous_confidence = None` means the previous reply was unreadable.
    pub fn compose(
        template: &TeachingTemplate,
        query: &Sample,
        most_similar: Option<&RetrievedCase>,
        previous_confidence: Option<f64>,
        detail_template: Option<&str>,
    ) -> Result<Self, TeacherError> {
        let similar = match most_similar {
            Some(case) => {
                let label = gold_prediction(&case.sample)
                    .map(|p| prediction_text(&p, template.task))
                    .ok_or_else(|| TeacherError::Unlabeled(case.sample.id.clone()))?;
                format!(
                    "Text: {} Label: {} Rationale: {}",
                    case.sample.context,
                    label,
                    case.rationale.as_deref().unwrap_or("")
                )
            }
            None => "none available".to_string(),
        };
        let previous = match previous_confidence {
            Some(c) => format!("{}%", format_percent(c)),
            None => "unreadable".to_string(),
        };
        let mut detail_text = detail_template
            .unwrap_or(DEFAULT_DETAIL_TEMPLATE)
            .replace("{context}", &query.context)
            .replace("{similar_case}", &similar)
            .replace("{previous_confidence}", &previous);
        if previous_confidence.is_none() {
            detail_text += &format!(
                "\nYour previous reply could not be read. Reply with a single JSON object in exactly this format: {}",
                template.format_block()
            );
        }
        if detail_text.trim().is_empty() {
            return Err(TeacherError::BadTemplate("re-prompt detail is empty".into()));
        }
        Ok(Self { detail_text })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub reply: String,
    pub prediction: Option<Prediction>,
    pub confidence: Option<f64>,
    /// Unconfident when the reply could not be parsed.
    pub status: ConfidenceStatus,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherVerdict {
    /// Absent when the final reply could not be parsed.
    pub output: Option<ParsedTeacherOutput>,
    pub status: ConfidenceStatus,
    pub reprompted: bool,
    pub attempts: Vec<AttemptRecord>,
}

impl TeacherVerdict {
    pub fn confidence(&self) -> f64 {
        self.output.as_ref().map_or(0.0, |o| o.confidence)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckerSettings {
    pub threshold: f64,
    pub detail_template: Option<String>,
}

impl CheckerSettings {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            detail_template: None,
        }
    }
}

fn ask(
    client: &LlmClient,
    req: &ChatRequest,
    task: TaskKind,
    attempt: u32,
    threshold: f64,
) -> Result<(Option<ParsedTeacherOutput>, AttemptRecord), BackendError> {
    let reply = client.complete(req)?;
    let parsed = parse_teacher_reply(&reply.text, task);
    let record = AttemptRecord {
        attempt,
        prediction: parsed.as_ref().ok().map(|o| o.prediction.clone()),
        confidence: parsed.as_ref().ok().map(|o| o.confidence),
        status: match &parsed {
            Ok(o) => check_confidence(o.confidence, threshold),
            Err(_) => ConfidenceStatus::Unconfident,
        },
        parse_error: parsed.as_ref().err().map(|e| e.reason.clone()),
        reply: reply.text,
    };
    Ok((parsed.ok(), record))
}

/// Ask the teacher once; if the answer is unconfident or unreadable, ask
/// exactly once more with [`RepromptDetail`] appended. The second answer is
/// final.
pub fn teacher_infer(
    client: &LlmClient,
    template: &TeachingTemplate,
    retrieved: &[RetrievedCase],
    query: &Sample,
    settings: &CheckerSettings,
) -> Result<TeacherVerdict, TeacherError> {
    let first_req = build_prompt(template, retrieved, query)?;
    let threshold = settings.threshold;
    let (first, rec1) = ask(client, &first_req, template.task, 1, threshold)?;
    if rec1.status == ConfidenceStatus::Confident {
        return Ok(TeacherVerdict {
            output: first,
            status: ConfidenceStatus::Confident,
            reprompted: false,
            attempts: vec![rec1],
        });
    }
    let detail = RepromptDetail::compose(
        template,
        query,
        retrieved.first(),
        first.as_ref().map(|o| o.confidence),
        settings.detail_template.as_deref(),
    )?;
    let mut second_req = first_req.clone();
    second_req.user_text = format!("{}\n\n{}", first_req.user_text, detail.detail_text);
    second_req.tag = tags::teacher(&query.id, 2);
    let (second, rec2) = ask(client, &second_req, template.task, 2, threshold)?;
    Ok(TeacherVerdict {
        output: second,
        status: rec2.status,
        reprompted: true,
        attempts: vec![rec1, rec2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{RetryPolicy, ScriptEntry, ScriptedBackend};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn bin(id: &str, text: &str, c: u32) -> Sample {
        Sample::new(id, text, Some(Label::Class(c)), TaskKind::BinaryGreen).unwrap()
    }

    fn query() -> Sample {
        Sample::new("q", "Wind turbines supply the grid.", None, TaskKind::BinaryGreen).unwrap()
    }

    fn case(s: Sample) -> RetrievedCase {
        RetrievedCase {
            sample: s,
            similarity: 0.9,
            rationale: Some("because".into()),
        }
    }

    fn five_shot() -> TeachingTemplate {
        let mut t = TeachingTemplate::new(TaskKind::BinaryGreen, 5, false, 7);
        for i in 0..5 {
            let s = bin(&format!("t{i}"), &format!("text number {i}"), i % 2);
            let ex = t.example_from(&s, gold_prediction(&s).unwrap(), "r");
            t.push(ex).unwrap();
        }
        t
    }

    fn client(replies: &[&str]) -> (Arc<ScriptedBackend>, LlmClient) {
        let backend = Arc::new(ScriptedBackend::new(replies.iter().map(|r| ScriptEntry::reply(*r)).collect()));
        let client = LlmClient::new(backend.clone(), RetryPolicy::immediate());
        (backend, client)
    }

    fn reply(conf: u32) -> String {
        format!(r#"{{"Answer": "yes", "Confidence": {conf}, "Rationale": "clean energy"}}"#)
    }

    #[test]
    fn zero_shot_prompt_is_instruction_and_query() {
        let t = TeachingTemplate::new(TaskKind::BinaryGreen, 0, false, 1);
        let req = build_prompt(&t, &[], &query()).unwrap();
        assert_eq!(
            req.user_text,
            format!("{}\n\nText: Wind turbines supply the grid.\nOutput:", TaskKind::BinaryGreen.instruction())
        );
        assert_eq!(count_exemplars(&req.user_text), 0);
    }

    #[test]
    fn five_shot_with_two_retrieved_has_seven_blocks() {
        let t = five_shot();
        let retrieved = vec![case(bin("a", "solar roof", 1)), case(bin("b", "coal plant", 0))];
        let req = build_prompt(&t, &retrieved, &query()).unwrap();
        // independent count: blocks are the "Text:" lines minus the query's
        let texts = req.user_text.lines().filter(|l| l.starts_with("Text: ")).count();
        assert_eq!(texts - 1, 7);
        assert_eq!(count_exemplars(&req.user_text), 7);
        assert_eq!(req.tag, "teacher/q/1");
    }

    #[test]
    fn prompt_is_deterministic() {
        let t = five_shot();
        let retrieved = vec![case(bin("a", "solar roof", 1))];
        let a = build_prompt(&t, &retrieved, &query()).unwrap();
        let b = build_prompt(&t, &retrieved, &query()).unwrap();
        assert_eq!(a.user_text.as_bytes(), b.user_text.as_bytes());
    }

    #[test]
    fn prompt_rejects_bad_inputs() {
        let t = five_shot();
        let too_many: Vec<_> = (0..3).map(|i| case(bin(&format!("x{i}"), "t", 1))).collect();
        assert!(matches!(
            build_prompt(&t, &too_many, &query()),
            Err(TeacherError::TooManyRetrieved { got: 3, budget: 2 })
        ));
        let other = Sample::new("p", "t", Some(Label::Class(2)), TaskKind::PathClass).unwrap();
        assert!(matches!(
            build_prompt(&t, &[case(other)], &query()),
            Err(TeacherError::TaskMismatch { .. })
        ));
    }

    #[test]
    fn confidence_threshold_is_closed_below() {
        assert_eq!(check_confidence(0.84, 0.85), ConfidenceStatus::Unconfident);
        assert_eq!(check_confidence(0.85, 0.85), ConfidenceStatus::Confident);
        assert_eq!(check_confidence(1.0, 0.75), ConfidenceStatus::Confident);
        assert_eq!(check_confidence(f64::NAN, 0.5), ConfidenceStatus::Unconfident);
    }

    proptest! {
        #[test]
        fn confidence_check_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            if check_confidence(lo, t) == ConfidenceStatus::Confident {
                prop_assert_eq!(check_confidence(hi, t), ConfidenceStatus::Confident);
            }
            prop_assert_eq!(check_confidence(a, t) == ConfidenceStatus::Unconfident, a < t);
        }

        #[test]
        fn display_confidence_in_range(seed in any::<u64>(), id in "[a-z0-9]{1,12}") {
            let c = display_confidence(seed, &id);
            prop_assert!((60..=90).contains(&c));
            prop_assert_eq!(c, display_confidence(seed, &id));
        }
    }

    #[test]
    fn display_confidence_covers_range() {
        let seen: std::collections::HashSet<u8> = (0..2000).map(|i| display_confidence(3, &format!("s{i}"))).collect();
        assert_eq!(seen.len(), 31);
    }

    #[test]
    fn template_evicts_oldest_and_dedupes() {
        let mut t = TeachingTemplate::new(TaskKind::BinaryGreen, 2, false, 0);
        let mut evictions = Vec::new();
        for id in ["a", "b", "c"] {
            let s = bin(id, "x", 1);
            evictions.push(t.push(t.example_from(&s, Prediction::Class(1), "r")).unwrap().unwrap().evicted);
        }
        assert_eq!(evictions, vec![None, None, Some("a".to_string())]);
        assert_eq!(t.example_ids(), vec!["b", "c"]);
        let s = bin("c", "x", 1);
        let before = t.clone();
        assert_eq!(t.push(t.example_from(&s, Prediction::Class(1), "other")).unwrap(), None);
        assert_eq!(t, before);
        let mut z = TeachingTemplate::new(TaskKind::BinaryGreen, 0, false, 0);
        assert_eq!(z.push(z.example_from(&s, Prediction::Class(1), "r")).unwrap(), None);
        assert!(z.is_empty());
    }

    #[test]
    fn instruction_override_must_keep_format() {
        let t = TeachingTemplate::new(TaskKind::BinaryGreen, 1, false, 0);
        assert!(t.clone().with_instruction("Say yes or no.").is_err());
        let ok = t
            .with_instruction(r#"Is it green? Reply {"Answer": a, "Confidence": c, "Rationale": r}"#)
            .unwrap();
        assert!(ok.instruction.starts_with("Is it green?"));
    }

    #[test]
    fn causality_gold_renders_as_spans() {
        let s = Sample::new(
            "c",
            "solar cells cut CO2 emissions",
            Some(Label::Tokens(vec![1, 2, 3, 4, 4])),
            TaskKind::CausalityTokens,
        )
        .unwrap();
        assert_eq!(
            gold_prediction(&s).unwrap(),
            Prediction::Spans {
                technology: "solar cells".into(),
                effect: "cut CO2 emissions".into()
            }
        );
        assert_eq!(label_text(&s).unwrap(), "Technology: solar cells; Environmental Effect: cut CO2 emissions");
    }

    #[test]
    fn confident_first_reply_uses_one_call() {
        let (backend, c) = client(&[&reply(90)]);
        let v = teacher_infer(&c, &five_shot(), &[], &query(), &CheckerSettings::new(0.85)).unwrap();
        assert_eq!(v.status, ConfidenceStatus::Confident);
        assert!(!v.reprompted);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn unconfident_then_confident() {
        let (backend, c) = client(&[&reply(60), &reply(95)]);
        let v = teacher_infer(&c, &five_shot(), &[], &query(), &CheckerSettings::new(0.85)).unwrap();
        assert_eq!(v.status, ConfidenceStatus::Confident);
        assert!(v.reprompted);
        assert_eq!(backend.calls(), 2);
        assert_eq!(v.confidence(), 0.95);
    }

    #[test]
    fn never_more_than_two_calls() {
        let (backend, c) = client(&[&reply(60), &reply(60), &reply(99)]);
        let v = teacher_infer(&c, &five_shot(), &[], &query(), &CheckerSettings::new(0.85)).unwrap();
        assert_eq!(v.status, ConfidenceStatus::Unconfident);
        assert_eq!(backend.calls(), 2);
        assert_eq!(backend.remaining(), 1);
    }

    #[test]
    fn reprompt_appends_detail_to_full_prompt() {
        let backend = Arc::new(ScriptedBackend::new(vec![
            ScriptEntry::reply(reply(50)),
            ScriptEntry::reply(reply(95)).expecting("Most similar labeled case: Text: solar roof Label: yes Rationale: because"),
        ]));
        let c = LlmClient::new(backend.clone(), RetryPolicy::immediate());
        let retrieved = vec![case(bin("a", "solar roof", 1))];
        let v = teacher_infer(&c, &five_shot(), &retrieved, &query(), &CheckerSettings::new(0.85)).unwrap();
        assert!(v.reprompted);
        assert_eq!(v.status, ConfidenceStatus::Confident);
    }

    #[test]
    fn malformed_then_valid() {
        let backend = Arc::new(ScriptedBackend::new(vec![
            ScriptEntry::reply("I think yes."),
            ScriptEntry::reply(reply(88)).expecting("exactly this format: {\"Answer\": Answer"),
        ]));
        let c = LlmClient::new(backend, RetryPolicy::immediate());
        let v = teacher_infer(&c, &five_shot(), &[], &query(), &CheckerSettings::new(0.85)).unwrap();
        assert_eq!(v.status, ConfidenceStatus::Confident);
        assert!(v.attempts[0].parse_error.is_some());
    }

    #[test]
    fn double_parse_failure_is_unconfident_without_prediction() {
        let (backend, c) = client(&["nope", "still nope"]);
        let v = teacher_infer(&c, &five_shot(), &[], &query(), &CheckerSettings::new(0.85)).unwrap();
        assert_eq!(v.status, ConfidenceStatus::Unconfident);
        assert!(v.output.is_none());
        assert_eq!(v.confidence(), 0.0);
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn custom_detail_template() {
        let t = five_shot();
        let d = RepromptDetail::compose(&t, &query(), None, Some(0.5), Some("Again: {context} ({previous_confidence})")).unwrap();
        assert_eq!(d.detail_text, "Again: Wind turbines supply the grid. (50%)");
    }

    #[test]
    fn path_replies_without_confidence_are_confident() {
        let t = TeachingTemplate::new(TaskKind::PathClass, 0, false, 0);
        let (backend, c) = client(&[r#"{"Label": 2, "Rationale": "recycling"}"#]);
        let q = Sample::new("p", "Plastic is recycled.", None, TaskKind::PathClass).unwrap();
        let v = teacher_infer(&c, &t, &[], &q, &CheckerSettings::new(0.85)).unwrap();
        assert_eq!(v.status, ConfidenceStatus::Confident);
        assert_eq!(backend.calls(), 1);
        let t2 = TeachingTemplate::new(TaskKind::PathClass, 0, true, 0);
        assert!(t2.instruction.contains("\"Confidence\""));
        assert_eq!(t2.format_block(), "{\"Label\": Label, \"Confidence\": Confidence, \"Rationale\": Rationale}");
    }
}

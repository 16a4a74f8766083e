//! Deterministic mock backends for offline runs and tests.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest};

/// One scripted response.
///
/// JSONL form: `{"match": "optional substring", "reply": "text"}`. `match`
/// is a tripwire: the request must contain it. `{"fail": "reason"}` injects
/// a retriable failure instead of a reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            expect: None,
            reply: Some(text.into()),
            fail: None,
        }
    }

    pub fn fail(reason: impl Into<String>) -> Self {
        Self {
            expect: None,
            reply: None,
            fail: Some(reason.into()),
        }
    }

    pub fn expecting(mut self, substring: impl Into<String>) -> Self {
        self.expect = Some(substring.into());
        self
    }

    fn answer(&self, call: u64, req: &ChatRequest, backend: &str) -> Result<ChatReply, BackendError> {
        if let Some(expected) = &self.expect {
            if !req.full_text().contains(expected.as_str()) {
                return Err(BackendError::ScriptMismatch {
                    call,
                    expected: expected.clone(),
                });
            }
        }
        if let Some(reason) = &self.fail {
            return Err(BackendError::Injected(reason.clone()));
        }
        Ok(ChatReply {
            text: self.reply.clone().unwrap_or_default(),
            tag: req.tag.clone(),
            backend_name: backend.to_string(),
            usage: None,
        })
    }
}

/// Replays a fixed reply sequence in call order.
#[derive(Debug)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

#[derive(Debug)]
struct ScriptState {
    entries: VecDeque<ScriptEntry>,
    calls: u64,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            state: Mutex::new(ScriptState {
                entries: entries.into(),
                calls: 0,
            }),
        }
    }

    pub fn from_replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(replies.into_iter().map(ScriptEntry::reply).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("script line {}: {e}", i + 1),
                )
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn calls(&self) -> u64 {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).calls
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).entries.len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatReply, BackendError> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let call = st.calls;
        st.calls += 1;
        let entry = st
            .entries
            .pop_front()
            .ok_or(BackendError::ScriptExhausted { call })?;
        entry.answer(call, req, self.name())
    }

    fn fast_forward(&self, calls: u64) {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        while st.calls < calls {
            st.entries.pop_front();
            st.calls += 1;
        }
    }
}

/// Replies looked up by request tag, so the response to a given sample does
/// not depend on call order. Each tag holds its own queue of entries.
///
/// Tags under `rationale/` and `borderline/` with no queued entry fall back to
/// `rationale_template` with `{id}` replaced by the sample id, when set.
#[derive(Debug)]
pub struct KeyedScriptBackend {
    queues: Mutex<HashMap<String, VecDeque<ScriptEntry>>>,
    rationale_template: Option<String>,
    log: Mutex<Vec<String>>,
}

impl KeyedScriptBackend {
    pub fn new(entries: HashMap<String, Vec<ScriptEntry>>, rationale_template: Option<String>) -> Self {
        Self {
            queues: Mutex::new(entries.into_iter().map(|(k, v)| (k, v.into())).collect()),
            rationale_template,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Tags of every send, in order.
    pub fn call_log(&self) -> Vec<String> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Number of sends per tag prefix `teacher/<id>/` for `sample_id`.
    pub fn teacher_calls_for(&self, sample_id: &str) -> usize {
        let prefix = format!("teacher/{sample_id}/");
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|t| t.starts_with(&prefix))
            .count()
    }
}

impl ChatBackend for KeyedScriptBackend {
    fn name(&self) -> &str {
        "keyed-script"
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatReply, BackendError> {
        let call = {
            let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
            log.push(req.tag.clone());
            log.len() as u64 - 1
        };
        let entry = self
            .queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get_mut(&req.tag)
            .and_then(VecDeque::pop_front);
        match entry {
            Some(e) => e.answer(call, req, self.name()),
            None => {
                let id = req
                    .tag
                    .strip_prefix("rationale/")
                    .or_else(|| req.tag.strip_prefix("borderline/"));
                match (id, &self.rationale_template) {
                    (Some(id), Some(t)) => Ok(ChatReply {
                        text: t.replace("{id}", id),
                        tag: req.tag.clone(),
                        backend_name: self.name().to_string(),
                        usage: None,
                    }),
                    _ => Err(BackendError::UnknownTag(req.tag.clone())),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str, tag: &str) -> ChatRequest {
        ChatRequest::new("", text, tag)
    }

    #[test]
    fn replays_in_order_then_exhausts() {
        let b = ScriptedBackend::from_replies(["r1", "r2"]);
        assert_eq!(b.send(&req("a", "x")).unwrap().text, "r1");
        assert_eq!(b.send(&req("a", "x")).unwrap().text, "r2");
        assert_eq!(b.send(&req("a", "x")), Err(BackendError::ScriptExhausted { call: 2 }));
    }

    #[test]
    fn match_tripwire() {
        let b = ScriptedBackend::new(vec![ScriptEntry::reply("ok").expecting("solar")]);
        assert!(matches!(
            b.send(&req("coal", "x")),
            Err(BackendError::ScriptMismatch { call: 0, .. })
        ));
        let b = ScriptedBackend::new(vec![ScriptEntry::reply("ok").expecting("solar")]);
        assert_eq!(b.send(&req("solar panel", "x")).unwrap().text, "ok");
    }

    #[test]
    fn loads_jsonl_script() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        std::fs::write(&p, "{\"reply\":\"one\"}\n\n{\"match\":\"q\",\"reply\":\"two\"}\n{\"fail\":\"down\"}\n").unwrap();
        let b = ScriptedBackend::load(&p).unwrap();
        assert_eq!(b.remaining(), 3);
        assert_eq!(b.send(&req("q", "t")).unwrap().text, "one");
        assert_eq!(b.send(&req("q", "t")).unwrap().text, "two");
        assert_eq!(b.send(&req("q", "t")), Err(BackendError::Injected("down".into())));
        std::fs::write(&p, "{\"reply\":1}\n").unwrap();
        assert!(ScriptedBackend::load(&p).is_err());
    }

    #[test]
    fn fast_forward_skips_consumed_entries() {
        let b = ScriptedBackend::from_replies(["a", "b", "c"]);
        b.fast_forward(2);
        assert_eq!(b.send(&req("q", "t")).unwrap().text, "c");
        assert_eq!(b.calls(), 3);
    }

    #[test]
    fn keyed_lookup_and_fallback() {
        let mut m = HashMap::new();
        m.insert("teacher/a/0".to_string(), vec![ScriptEntry::reply("first")]);
        let b = KeyedScriptBackend::new(m, Some("because {id}".into()));
        assert_eq!(b.send(&req("q", "teacher/a/0")).unwrap().text, "first");
        assert_eq!(b.send(&req("q", "teacher/a/0")), Err(BackendError::UnknownTag("teacher/a/0".into())));
        assert_eq!(b.send(&req("q", "rationale/z")).unwrap().text, "because z");
        assert_eq!(b.teacher_calls_for("a"), 2);
        assert_eq!(b.call_log().len(), 3);
    }
}

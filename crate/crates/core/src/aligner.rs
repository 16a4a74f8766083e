//! Retrieval of similar labeled cases and their rationales.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Sample};
use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::llm::{tags, ChatRequest, LlmClient};
use crate::teacher::{label_text, SYSTEM_TEXT};

#[derive(Debug, Error)]
pub enum AlignerError {
    #[error("training set is empty")]
    EmptyStore,
    #[error("sample {0} has no gold label")]
    Unlabeled(String),
    #[error("embedding sample {id}: {source}")]
    Provider {
        id: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("sample {0} embeds to a zero vector")]
    ZeroNorm(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("rationale cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("rationale cache line {line}: {reason}")]
    CacheFormat { line: usize, reason: String },
}

/// Number of retrieved cases added to an `n_shot` prompt: 0 for no shots, 1
/// for 1–3 shots, `ceil((n-1)/2)` above that.
pub fn shot_budget(n_shot: usize) -> usize {
    match n_shot {
        0 => 0,
        1..=3 => 1,
        n => (n - 1).div_ceil(2),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StoreEntry {
    sample: Sample,
    vector: EmbeddingVector,
}

/// Immutable embedding index over a labeled training set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: Vec<StoreEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedCase {
    pub sample: Sample,
    pub similarity: f64,
    pub rationale: Option<String>,
}

impl EmbeddingStore {
    /// Embed every training sample. Samples must be labeled.
    pub fn build(train: &Dataset, provider: &dyn EmbeddingProvider) -> Result<Self, AlignerError> {
        if train.is_empty() {
            return Err(AlignerError::EmptyStore);
        }
        let mut entries = Vec::with_capacity(train.len());
        for s in train.samples() {
            if s.gold.is_none() {
                return Err(AlignerError::Unlabeled(s.id.clone()));
            }
            let vector = provider.embed(&s.context).map_err(|source| AlignerError::Provider {
                id: s.id.clone(),
                source,
            })?;
            if !vector.is_usable() {
                return Err(AlignerError::ZeroNorm(s.id.clone()));
            }
            entries.push(StoreEntry {
                sample: s.clone(),
                vector,
            });
        }
        Ok(Self {
            dim: provider.dim(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.iter().find(|e| e.sample.id == id).map(|e| &e.vector)
    }

    /// The `k` entries most similar to `query`, highest first, ties broken
    /// by ascending sample id. `exclude_id` is never returned.
    pub fn top_k_similar(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude_id: Option<&str>,
    ) -> Result<Vec<RetrievedCase>, AlignerError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if Some(e.sample.id.as_str()) == exclude_id {
                continue;
            }
            scored.push((cosine_similarity(query, &e.vector)?, e));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.sample.id.cmp(&b.1.sample.id)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(similarity, e)| RetrievedCase {
                sample: e.sample.clone(),
                similarity,
                rationale: None,
            })
            .collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    id: String,
    rationale: String,
}

/// Rationales keyed by sample id, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct RationaleCache {
    entries: HashMap<String, String>,
    file: Option<(PathBuf, File)>,
}

impl RationaleCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    fn read_entries(path: &Path) -> Result<HashMap<String, String>, AlignerError> {
        let mut entries = HashMap::new();
        if !path.exists() {
            return Ok(entries);
        }
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| AlignerError::CacheFormat {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.insert(rec.id, rec.rationale);
        }
        Ok(entries)
    }

    /// Open (or create) a cache file, loading any existing `{"id", "rationale"}`
    /// lines. Later inserts are appended to the file as they happen.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AlignerError> {
        let path = path.as_ref();
        let entries = Self::read_entries(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries,
            file: Some((path.to_path_buf(), file)),
        })
    }

    /// Load a cache file into memory without mirroring later inserts.
    /// A missing file gives an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AlignerError> {
        Ok(Self {
            entries: Self::read_entries(path.as_ref())?,
            file: None,
        })
    }

    /// All entries as JSONL, sorted by id.
    pub fn to_jsonl(&self) -> String {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| {
                let rec = CacheRecord {
                    id: id.clone(),
                    rationale: self.entries[id].clone(),
                };
                serde_json::to_string(&rec).expect("cache record serializes") + "\n"
            })
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: &str, rationale: &str) -> Result<(), AlignerError> {
        if let Some((_, f)) = &mut self.file {
            let line = serde_json::to_string(&CacheRecord {
                id: id.to_string(),
                rationale: rationale.to_string(),
            })
            .expect("cache record serializes");
            writeln!(f, "{line}")?;
        }
        self.entries.insert(id.to_string(), rationale.to_string());
        Ok(())
    }
}

/// Prompt asking for a rationale supporting `label` for `sample`.
pub fn rationale_request(sample: &Sample, label: &str, tag: String) -> ChatRequest {
    let user = format!(
        "{}\nText: {}\nLabel: {}\nExplain in one or two sentences why this label is correct for the text. Reply with the rationale only.",
        sample.task.question(),
        sample.context,
        label
    );
    ChatRequest::new(SYSTEM_TEXT, user, tag)
}

/// Fill in a rationale for each case, consulting `cache` first. A backend
/// failure (after the client's retry) leaves that case with an empty
/// rationale and is logged; the other cases are unaffected.
pub fn attach_rationales(
    cases: Vec<RetrievedCase>,
    client: &LlmClient,
    cache: &mut RationaleCache,
) -> Result<Vec<RetrievedCase>, AlignerError> {
    let mut out = Vec::with_capacity(cases.len());
    for mut case in cases {
        let id = case.sample.id.clone();
        if let Some(r) = cache.get(&id) {
            case.rationale = Some(r.to_string());
            out.push(case);
            continue;
        }
        let Some(label) = label_text(&case.sample) else {
            return Err(AlignerError::Unlabeled(id));
        };
        let req = rationale_request(&case.sample, &label, tags::rationale(&id));
        match client.complete(&req) {
            Ok(reply) => {
                let text = reply.text.trim().to_string();
                cache.insert(&id, &text)?;
                case.rationale = Some(text);
            }
            Err(e) => {
                log::warn!("no rationale for {id}: {e}");
                case.rationale = Some(String::new());
            }
        }
        out.push(case);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, TaskKind};
    use crate::embedding::{HashedFeaturizer, PrecomputedEmbeddings};
    use crate::llm::{RetryPolicy, ScriptEntry, ScriptedBackend};
    use std::sync::Arc;

    fn labeled(id: &str, text: &str) -> Sample {
        Sample::new(id, text, Some(Label::Class(1)), TaskKind::BinaryGreen).unwrap()
    }

    fn train(n: usize) -> Dataset {
        let samples = (0..n).map(|i| labeled(&format!("s{i}"), &format!("solar text number {i}"))).collect();
        Dataset::new(TaskKind::BinaryGreen, samples).unwrap()
    }

    #[test]
    fn budget_formula() {
        assert_eq!(shot_budget(0), 0);
        assert_eq!(shot_budget(2), 1);
        assert_eq!(shot_budget(7), 3);
        assert_eq!(shot_budget(4), 2);
        assert_eq!(shot_budget(5), 2);
    }

    #[test]
    fn builds_one_entry_per_sample() {
        let p = HashedFeaturizer::new(32, 0).unwrap();
        let store = EmbeddingStore::build(&train(5), &p).unwrap();
        assert_eq!(store.len(), 5);
        assert_eq!(store, EmbeddingStore::build(&train(5), &p).unwrap());
    }

    #[test]
    fn unlabeled_sample_rejected() {
        let mut samples = train(2).into_samples();
        samples.push(Sample::new("u", "text", None, TaskKind::BinaryGreen).unwrap());
        let ds = Dataset::new(TaskKind::BinaryGreen, samples).unwrap();
        let err = EmbeddingStore::build(&ds, &HashedFeaturizer::new(32, 0).unwrap()).unwrap_err();
        assert!(matches!(err, AlignerError::Unlabeled(id) if id == "u"));
    }

    #[test]
    fn provider_failure_names_sample() {
        let p = PrecomputedEmbeddings::new(2);
        let err = EmbeddingStore::build(&train(1), &p).unwrap_err();
        assert!(matches!(err, AlignerError::Provider { ref id, .. } if id == "s0"), "{err}");
    }

    #[test]
    fn exact_match_first_and_exclusion() {
        let p = HashedFeaturizer::new(64, 0).unwrap();
        let store = EmbeddingStore::build(&train(6), &p).unwrap();
        let q = p.embed("solar text number 3").unwrap();
        let top = store.top_k_similar(&q, 1, None).unwrap();
        assert_eq!(top[0].sample.id, "s3");
        assert!((top[0].similarity - 1.0).abs() < 1e-12);
        let top = store.top_k_similar(&q, 6, Some("s3")).unwrap();
        assert_eq!(top.len(), 5);
        assert!(top.iter().all(|c| c.sample.id != "s3"));
        assert!(top.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn ties_break_by_id() {
        let mut p = PrecomputedEmbeddings::new(2);
        for t in ["b", "a", "c"] {
            p.insert(t, EmbeddingVector::new(vec![1.0, 1.0]).unwrap()).unwrap();
        }
        let ds = Dataset::new(
            TaskKind::BinaryGreen,
            ["b", "a", "c"].iter().map(|t| labeled(t, t)).collect(),
        )
        .unwrap();
        let store = EmbeddingStore::build(&ds, &p).unwrap();
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let ids: Vec<_> = store.top_k_similar(&q, 3, None).unwrap().into_iter().map(|c| c.sample.id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(store.top_k_similar(&EmbeddingVector::new(vec![1.0]).unwrap(), 1, None).is_err());
    }

    fn client(entries: Vec<ScriptEntry>) -> (Arc<ScriptedBackend>, LlmClient) {
        let b = Arc::new(ScriptedBackend::new(entries));
        (b.clone(), LlmClient::new(b, RetryPolicy::immediate()))
    }

    fn cases(ids: &[&str]) -> Vec<RetrievedCase> {
        ids.iter()
            .map(|id| RetrievedCase {
                sample: labeled(id, &format!("context {id}")),
                similarity: 0.5,
                rationale: None,
            })
            .collect()
    }

    #[test]
    fn rationales_filled_in_order_and_cached() {
        let (backend, client) = client(vec![
            ScriptEntry::reply("because a").expecting("context a"),
            ScriptEntry::reply("because b").expecting("context b"),
        ]);
        let mut cache = RationaleCache::in_memory();
        let out = attach_rationales(cases(&["a", "b"]), &client, &mut cache).unwrap();
        assert_eq!(out[0].rationale.as_deref(), Some("because a"));
        assert_eq!(out[1].rationale.as_deref(), Some("because b"));
        let again = attach_rationales(cases(&["b"]), &client, &mut cache).unwrap();
        assert_eq!(again[0].rationale.as_deref(), Some("because b"));
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn failing_case_is_isolated() {
        let (_, client) = client(vec![
            ScriptEntry::reply("ra"),
            ScriptEntry::fail("down"),
            ScriptEntry::fail("still down"),
            ScriptEntry::reply("rc"),
        ]);
        let mut cache = RationaleCache::in_memory();
        let out = attach_rationales(cases(&["a", "b", "c"]), &client, &mut cache).unwrap();
        let got: Vec<_> = out.iter().map(|c| c.rationale.clone().unwrap()).collect();
        assert_eq!(got, ["ra", "", "rc"]);
        assert!(cache.get("b").is_none());
    }

    #[test]
    fn cache_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rationale_cache.jsonl");
        {
            let mut c = RationaleCache::open(&path).unwrap();
            c.insert("x", "rx").unwrap();
        }
        let c = RationaleCache::open(&path).unwrap();
        assert_eq!(c.get("x"), Some("rx"));
        let line = std::fs::read_to_string(&path).unwrap();
        assert_eq!(line, "{\"id\":\"x\",\"rationale\":\"rx\"}\n");
    }
}

//! Tasks, label spaces, sample records and JSONL dataset ingestion.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{fisher_yates, SplitMix64};
use crate::tokenize::tokenize;

const CLS_INSTRUCTION: &str = "Determine if the following text belongs to the Green Innovation category. Answer with 'yes' or 'no', and rate your confidence on a scale of 100 points. Return the answer, confidence, and rationale in the following JSON format: {\"Answer\": Answer, \"Confidence\": Confidence, \"Rationale\": Rationale}.";

const CE_INSTRUCTION: &str = "Identify the technology and the ultimate environmental effect within the following sentence related to Green Innovation. Extract both the technology and the environmental effect, and rate your confidence on a scale of 100 points. Return the technology, environmental effect, confidence, and rationale in the following JSON format: {\"Technology\": Technology, \"Environmental Effect\": Environmental Effect, \"Confidence\": Confidence, \"Rationale\": Rationale}.";

const PATH_INSTRUCTION: &str = "Classify the environmental issue that the technology in the following sentence related to Green Innovation can ultimately resolve, using the labels (0,1,2,3): 0: Energy efficiency and consumption reduction - Content related to reducing all forms of energy consumption and improving efficiency, 1: Renewable energy and emission reduction - Content related to promoting the use of renewable energy and reducing emissions and greenhouse gases, 2: Waste management and recycling - Content related to waste reduction, improving recycling efficiency, and resource circulation, 3: Product development and technological innovation - Content related to developing new technologies and improving the durability and safety of products. Select one label from (0,1,2,3), and return the label and rationale in the following JSON format: {\"Label\": Label, \"Rationale\": Rationale}.";

/// Variant of the path instruction used when the teacher is asked to report
/// a confidence for path classification as well.
const PATH_INSTRUCTION_WITH_CONFIDENCE: &str = "Classify the environmental issue that the technology in the following sentence related to Green Innovation can ultimately resolve, using the labels (0,1,2,3): 0: Energy efficiency and consumption reduction - Content related to reducing all forms of energy consumption and improving efficiency, 1: Renewable energy and emission reduction - Content related to promoting the use of renewable energy and reducing emissions and greenhouse gases, 2: Waste management and recycling - Content related to waste reduction, improving recycling efficiency, and resource circulation, 3: Product development and technological innovation - Content related to developing new technologies and improving the durability and safety of products. Select one label from (0,1,2,3), rate your confidence on a scale of 100 points, and return the label, confidence, and rationale in the following JSON format: {\"Label\": Label, \"Confidence\": Confidence, \"Rationale\": Rationale}.";

/// The three classification tasks the engine knows how to distill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Green-innovation identification: no (0) / yes (1).
    BinaryGreen,
    /// Technology / environmental-effect extraction as BIO token labels.
    CausalityTokens,
    /// Four-way environmental pathway classification.
    PathClass,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::BinaryGreen,
        TaskKind::CausalityTokens,
        TaskKind::PathClass,
    ];

    /// The short question posed for a context.
    pub fn question(self) -> &'static str {
        match self {
            TaskKind::BinaryGreen => "Does this text belong to the green innovation category?",
            TaskKind::CausalityTokens => "Given the following text related to green innovation, extract the technical expression and the environmental effect it is expected to achieve.",
            TaskKind::PathClass => "Given the following text related to green innovation, classify it into one of four categories.",
        }
    }

    /// The teaching-template instruction, including the JSON output format block.
    pub fn instruction(self) -> &'static str {
        match self {
            TaskKind::BinaryGreen => CLS_INSTRUCTION,
            TaskKind::CausalityTokens => CE_INSTRUCTION,
            TaskKind::PathClass => PATH_INSTRUCTION,
        }
    }

    /// Instruction honoring the path-confidence switch; identical to
    /// [`TaskKind::instruction`] for the other tasks.
    pub fn instruction_with(self, path_confidence: bool) -> &'static str {
        match (self, path_confidence) {
            (TaskKind::PathClass, true) => PATH_INSTRUCTION_WITH_CONFIDENCE,
            _ => self.instruction(),
        }
    }

    /// Whether replies for this task carry a confidence field.
    pub fn reports_confidence(self, path_confidence: bool) -> bool {
        !matches!(self, TaskKind::PathClass) || path_confidence
    }

    /// JSON keys that make up the task's reply object, in display order.
    pub fn reply_keys(self) -> &'static [&'static str] {
        match self {
            TaskKind::BinaryGreen => &["Answer", "Confidence", "Rationale"],
            TaskKind::CausalityTokens => {
                &["Technology", "Environmental Effect", "Confidence", "Rationale"]
            }
            TaskKind::PathClass => &["Label", "Rationale"],
        }
    }

    pub fn label_space(self) -> LabelSpace {
        let names: &[&str] = match self {
            TaskKind::BinaryGreen => &["no", "yes"],
            TaskKind::CausalityTokens => &["O", "B-TECH", "I-TECH", "B-EFF", "I-EFF"],
            TaskKind::PathClass => &[
                "Energy efficiency and consumption reduction",
                "Renewable energy and emission reduction",
                "Waste management and recycling",
                "Product development and technological innovation",
            ],
        };
        LabelSpace::new(names.iter().map(|s| s.to_string()).collect())
    }

    pub fn is_token_task(self) -> bool {
        matches!(self, TaskKind::CausalityTokens)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::BinaryGreen => "binary_green",
            TaskKind::CausalityTokens => "causality_tokens",
            TaskKind::PathClass => "path_class",
        };
        f.write_str(s)
    }
}

/// Class ids `0..n` with a display name per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Self {
        assert!(!names.is_empty(), "label space needs at least one class");
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, class: u32) -> bool {
        (class as usize) < self.names.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.names.len()).map(|c| c as u32)
    }

    pub fn name(&self, class: u32) -> Option<&str> {
        self.names.get(class as usize).map(String::as_str)
    }

    /// Inverse of [`LabelSpace::name`].
    pub fn class_of(&self, name: &str) -> Option<u32> {
        self.names.iter().position(|n| n == name).map(|i| i as u32)
    }
}

/// Gold annotation: one class for sequence tasks, one class per token for
/// causality extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(u32),
    Tokens(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub context: String,
    pub gold: Option<Label>,
    pub task: TaskKind,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        context: impl Into<String>,
        gold: Option<Label>,
        task: TaskKind,
    ) -> Result<Self, DataError> {
        let sample = Self {
            id: id.into(),
            context: context.into(),
            gold,
            task,
        };
        sample.validate()?;
        Ok(sample)
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.context.trim().is_empty() {
            return Err(DataError::EmptyContext(self.id.clone()));
        }
        let space = self.task.label_space();
        match (&self.gold, self.task.is_token_task()) {
            (None, _) => Ok(()),
            (Some(Label::Class(c)), false) => {
                if space.contains(*c) {
                    Ok(())
                } else {
                    Err(DataError::LabelOutOfRange {
                        id: self.id.clone(),
                        label: *c,
                        classes: space.len(),
                    })
                }
            }
            (Some(Label::Tokens(labels)), true) => {
                if let Some(&bad) = labels.iter().find(|&&c| !space.contains(c)) {
                    return Err(DataError::LabelOutOfRange {
                        id: self.id.clone(),
                        label: bad,
                        classes: space.len(),
                    });
                }
                let n_tokens = tokenize(self).tokens.len();
                if labels.len() != n_tokens {
                    return Err(DataError::TokenCountMismatch {
                        id: self.id.clone(),
                        labels: labels.len(),
                        tokens: n_tokens,
                    });
                }
                Ok(())
            }
            (Some(_), true) => Err(DataError::LabelShape {
                id: self.id.clone(),
                expected: "an array of token labels",
            }),
            (Some(_), false) => Err(DataError::LabelShape {
                id: self.id.clone(),
                expected: "a single integer class",
            }),
        }
    }

    pub fn gold_class(&self) -> Option<u32> {
        match self.gold {
            Some(Label::Class(c)) => Some(c),
            _ => None,
        }
    }
}

/// Ordered, id-unique collection of samples for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    task: TaskKind,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(task: TaskKind, samples: Vec<Sample>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.task != task {
                return Err(DataError::TaskMismatch {
                    id: s.id.clone(),
                    expected: task,
                    found: s.task,
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { task, samples })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Parse JSONL records from a reader. Blank lines are skipped.
    pub fn from_jsonl_reader<R: Read>(reader: R, task: TaskKind) -> Result<Self, DataError> {
        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(DataError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord =
                serde_json::from_str(&line).map_err(|e| DataError::Malformed {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            let sample = Sample::new(record.id, record.context, record.label, task)
                .map_err(|e| DataError::AtLine {
                    line: line_no,
                    source: Box::new(e),
                })?;
            if !seen.insert(sample.id.clone()) {
                return Err(DataError::AtLine {
                    line: line_no,
                    source: Box::new(DataError::DuplicateId(sample.id)),
                });
            }
            samples.push(sample);
        }
        Ok(Self { task, samples })
    }

    /// Serialize in the same JSONL schema [`load_dataset`] reads.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let record = SampleRecord {
                id: s.id.clone(),
                context: s.context.clone(),
                label: s.gold.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("sample record serializes"));
            out.push('\n');
        }
        out
    }
}

/// On-disk JSONL record: `{"id": .., "context": .., "label": ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<DataError>,
    },
    #[error("sample {id}: label {label} outside label space of {classes} classes")]
    LabelOutOfRange { id: String, label: u32, classes: usize },
    #[error("sample {id}: label must be {expected}")]
    LabelShape { id: String, expected: &'static str },
    #[error("sample {id}: {labels} token labels for {tokens} tokens")]
    TokenCountMismatch {
        id: String,
        labels: usize,
        tokens: usize,
    },
    #[error("sample {0}: empty context")]
    EmptyContext(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {id}: task {found} does not match dataset task {expected}")]
    TaskMismatch {
        id: String,
        expected: TaskKind,
        found: TaskKind,
    },
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
}

/// Load a JSONL dataset for `task`, preserving file order.
pub fn load_dataset(path: impl AsRef<Path>, task: TaskKind) -> Result<Dataset, DataError> {
    let file = File::open(path.as_ref())?;
    Dataset::from_jsonl_reader(file, task)
}

/// Seeded Fisher–Yates (SplitMix64) shuffle, then the first
/// `floor(ratio * n)` samples become the train split.
pub fn split_train_eval(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::BadRatio(ratio));
    }
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    fisher_yates(&mut order, &mut SplitMix64::new(seed));
    let n_train = (ratio * ds.len() as f64).floor() as usize;
    let pick = |idx: &[usize]| Dataset {
        task: ds.task,
        samples: idx.iter().map(|&i| ds.samples[i].clone()).collect(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                Sample::new(
                    format!("s{i}"),
                    format!("text {i}"),
                    Some(Label::Class((i % 2) as u32)),
                    TaskKind::BinaryGreen,
                )
                .unwrap()
            })
            .collect();
        Dataset::new(TaskKind::BinaryGreen, samples).unwrap()
    }

    #[test]
    fn label_spaces_match_tasks() {
        assert_eq!(TaskKind::BinaryGreen.label_space().len(), 2);
        assert_eq!(TaskKind::PathClass.label_space().len(), 4);
        assert_eq!(TaskKind::CausalityTokens.label_space().len(), 5);
        for task in TaskKind::ALL {
            let space = task.label_space();
            for c in space.classes() {
                assert_eq!(space.class_of(space.name(c).unwrap()), Some(c));
            }
            assert!(!task.instruction().is_empty());
            assert!(task.instruction().contains("JSON format"));
        }
    }

    #[test]
    fn loads_three_lines() {
        let text = r#"{"id":"a","context":"solar panel","label":1}
{"id":"b","context":"coal plant","label":0}
{"id":"c","context":"wind farm"}
"#;
        let d = Dataset::from_jsonl_reader(text.as_bytes(), TaskKind::BinaryGreen).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples()[2].gold, None);
        assert_eq!(d.samples()[0].id, "a");
    }

    #[test]
    fn rejects_out_of_range_path_label_with_line() {
        let text = "{\"id\":\"a\",\"context\":\"x\",\"label\":1}\n{\"id\":\"b\",\"context\":\"y\",\"label\":7}\n";
        let err = Dataset::from_jsonl_reader(text.as_bytes(), TaskKind::PathClass).unwrap_err();
        assert!(matches!(err, DataError::AtLine { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn rejects_duplicate_id() {
        let text = "{\"id\":\"a1\",\"context\":\"x\",\"label\":1}\n{\"id\":\"a1\",\"context\":\"y\",\"label\":0}\n";
        let err = Dataset::from_jsonl_reader(text.as_bytes(), TaskKind::BinaryGreen).unwrap_err();
        assert!(err.to_string().contains("duplicate sample id \"a1\""), "{err}");
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "{\"id\":\"a\",\"context\":\"x\"}\nnot json\n";
        let err = Dataset::from_jsonl_reader(text.as_bytes(), TaskKind::BinaryGreen).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
    }

    #[test]
    fn token_labels_must_match_token_count() {
        let ok = "{\"id\":\"a\",\"context\":\"solar cells cut CO2 emissions\",\"label\":[1,2,3,4,4]}\n";
        assert!(Dataset::from_jsonl_reader(ok.as_bytes(), TaskKind::CausalityTokens).is_ok());
        let bad = "{\"id\":\"a\",\"context\":\"solar cells\",\"label\":[1,2,0]}\n";
        let err = Dataset::from_jsonl_reader(bad.as_bytes(), TaskKind::CausalityTokens).unwrap_err();
        assert!(err.to_string().contains("3 token labels for 2 tokens"), "{err}");
        let scalar = "{\"id\":\"a\",\"context\":\"solar cells\",\"label\":1}\n";
        assert!(Dataset::from_jsonl_reader(scalar.as_bytes(), TaskKind::CausalityTokens).is_err());
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let (train, eval) = split_train_eval(&ds(10), 0.8, 42).unwrap();
        assert_eq!((train.len(), eval.len()), (8, 2));
    }

    #[test]
    fn split_is_deterministic() {
        let d = ds(30);
        assert_eq!(split_train_eval(&d, 0.8, 7).unwrap(), split_train_eval(&d, 0.8, 7).unwrap());
    }

    #[test]
    fn different_seeds_give_different_orders() {
        let d = ds(100);
        let ids = |seed| -> Vec<String> {
            let (a, b) = split_train_eval(&d, 0.8, seed).unwrap();
            a.samples().iter().chain(b.samples()).map(|s| s.id.clone()).collect()
        };
        let (one, two) = (ids(1), ids(2));
        let differing = one.iter().zip(&two).filter(|(x, y)| x != y).count();
        assert!(differing > 0);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(matches!(split_train_eval(&ds(4), 1.0, 0), Err(DataError::BadRatio(_))));
        assert!(matches!(split_train_eval(&ds(4), 0.0, 0), Err(DataError::BadRatio(_))));
        let empty = Dataset::new(TaskKind::BinaryGreen, vec![]).unwrap();
        assert!(matches!(split_train_eval(&empty, 0.8, 0), Err(DataError::EmptyDataset)));
    }

    #[test]
    fn jsonl_round_trip() {
        let d = ds(5);
        let back = Dataset::from_jsonl_reader(d.to_jsonl().as_bytes(), TaskKind::BinaryGreen).unwrap();
        assert_eq!(back, d);
    }
}

//! Word + punctuation segmentation.
//!
//! Rule: whitespace separates tokens and is dropped. Within a whitespace-free
//! run, a maximal sequence of word characters (`char::is_alphanumeric` or `_`)
//! is one token, and every other character is a token on its own.
//! `"CO2-reduction unit."` segments as `CO2 | - | reduction | unit | .`.

use serde::{Deserialize, Serialize};

use crate::data::{Label, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub sample_id: String,
    pub tokens: Vec<String>,
    /// Byte range of each token in the source context.
    pub spans: Vec<(usize, usize)>,
    pub token_labels: Option<Vec<u32>>,
    source: String,
}

impl TokenizedSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Text covered by tokens `start..end` with inner whitespace collapsed to
    /// single spaces.
    pub fn text_of(&self, start: usize, end: usize) -> String {
        join_spans(&self.source, &self.spans[start..end])
    }

    /// Whole context reconstructed from its tokens.
    pub fn detokenize(&self) -> String {
        join_spans(&self.source, &self.spans)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte spans of the tokens of `text`.
pub fn segment(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            spans.push((s, i));
        }
        if !c.is_whitespace() {
            spans.push((i, i + c.len_utf8()));
        }
    }
    if let Some(s) = word_start {
        spans.push((s, text.len()));
    }
    spans
}

/// Token strings of `text`.
pub fn segment_words(text: &str) -> Vec<String> {
    segment(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_string())
        .collect()
}

/// Concatenate spans, inserting one space wherever the source had whitespace
/// between two consecutive tokens.
fn join_spans(source: &str, spans: &[(usize, usize)]) -> String {
    let mut out = String::new();
    let mut prev_end: Option<usize> = None;
    for &(s, e) in spans {
        if let Some(p) = prev_end {
            if s > p {
                out.push(' ');
            }
        }
        out.push_str(&source[s..e]);
        prev_end = Some(e);
    }
    out
}

/// `text` with whitespace runs collapsed to one space and trimmed.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokenize(sample: &Sample) -> TokenizedSample {
    let spans = segment(&sample.context);
    let tokens = spans
        .iter()
        .map(|&(s, e)| sample.context[s..e].to_string())
        .collect();
    let token_labels = match &sample.gold {
        Some(Label::Tokens(labels)) => Some(labels.clone()),
        _ => None,
    };
    TokenizedSample {
        sample_id: sample.id.clone(),
        tokens,
        spans,
        token_labels,
        source: sample.context.clone(),
    }
}

//! Technology / environmental-effect spans and their BIO token labels.
//!
//! Label scheme: 0 `O`, 1 `B-TECH`, 2 `I-TECH`, 3 `B-EFF`, 4 `I-EFF`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::{segment_words, TokenizedSample};

pub const OUTSIDE: u32 = 0;
pub const B_TECH: u32 = 1;
pub const I_TECH: u32 = 2;
pub const B_EFF: u32 = 3;
pub const I_EFF: u32 = 4;

/// Half-open token range `[start, end)`.
pub type TokenSpan = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAlignment {
    pub technology_span: Option<TokenSpan>,
    pub effect_span: Option<TokenSpan>,
    pub aligned_labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("phrase {0:?} not found in context")]
    AlignmentFailure(String),
    #[error("technology span {technology:?} overlaps effect span {effect:?}")]
    OverlapFailure {
        technology: TokenSpan,
        effect: TokenSpan,
    },
}

fn find_phrase(tokens: &[String], phrase: &str) -> Result<TokenSpan, AlignError> {
    let needle = segment_words(phrase);
    if needle.is_empty() || needle.len() > tokens.len() {
        return Err(AlignError::AlignmentFailure(phrase.to_string()));
    }
    tokens
        .windows(needle.len())
        .position(|w| w == needle.as_slice())
        .map(|start| (start, start + needle.len()))
        .ok_or_else(|| AlignError::AlignmentFailure(phrase.to_string()))
}

/// Locate both phrases (first occurrence, token-exact after segmentation) and
/// label the tokens.
pub fn align_spans(ts: &TokenizedSample, technology: &str, effect: &str) -> Result<SpanAlignment, AlignError> {
    let tech = find_phrase(&ts.tokens, technology)?;
    let eff = find_phrase(&ts.tokens, effect)?;
    if tech.0 < eff.1 && eff.0 < tech.1 {
        return Err(AlignError::OverlapFailure {
            technology: tech,
            effect: eff,
        });
    }
    let mut labels = vec![OUTSIDE; ts.len()];
    mark(&mut labels, tech, B_TECH, I_TECH);
    mark(&mut labels, eff, B_EFF, I_EFF);
    Ok(SpanAlignment {
        technology_span: Some(tech),
        effect_span: Some(eff),
        aligned_labels: labels,
    })
}

fn mark(labels: &mut [u32], (s, e): TokenSpan, begin: u32, inside: u32) {
    labels[s] = begin;
    labels[s + 1..e].iter_mut().for_each(|l| *l = inside);
}

/// First span of each type in a BIO sequence. A stray `I-*` opens a span.
pub fn decode_spans(labels: &[u32]) -> (Option<TokenSpan>, Option<TokenSpan>) {
    (first_span(labels, B_TECH, I_TECH), first_span(labels, B_EFF, I_EFF))
}

fn first_span(labels: &[u32], begin: u32, inside: u32) -> Option<TokenSpan> {
    let start = labels.iter().position(|&l| l == begin || l == inside)?;
    let len = labels[start + 1..].iter().take_while(|&&l| l == inside).count();
    Some((start, start + 1 + len))
}

/// Text of the first technology and effect spans.
pub fn span_texts(ts: &TokenizedSample, labels: &[u32]) -> (Option<String>, Option<String>) {
    let (t, e) = decode_spans(labels);
    (
        t.map(|(s, e)| ts.text_of(s, e)),
        e.map(|(s, e)| ts.text_of(s, e)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, TaskKind};
    use crate::tokenize::{normalize_whitespace, tokenize};
    use proptest::prelude::*;

    fn ts(text: &str) -> TokenizedSample {
        tokenize(&Sample::new("x", text, None, TaskKind::CausalityTokens).unwrap())
    }

    #[test]
    fn aligns_example_sentence() {
        let a = align_spans(&ts("solar cells cut CO2 emissions"), "solar cells", "cut CO2 emissions").unwrap();
        assert_eq!(a.aligned_labels, vec![1, 2, 3, 4, 4]);
        assert_eq!(a.technology_span, Some((0, 2)));
        assert_eq!(a.effect_span, Some((2, 5)));
    }

    #[test]
    fn missing_phrase() {
        let err = align_spans(&ts("solar cells cut CO2 emissions"), "wind turbines", "cut").unwrap_err();
        assert_eq!(err, AlignError::AlignmentFailure("wind turbines".into()));
        assert!(align_spans(&ts("a b"), "", "a").is_err());
    }

    #[test]
    fn overlapping_phrases() {
        let err = align_spans(&ts("solar cells cut CO2 emissions"), "solar cells", "cells cut").unwrap_err();
        assert!(matches!(err, AlignError::OverlapFailure { .. }));
    }

    #[test]
    fn whitespace_in_phrase_is_normalized() {
        let a = align_spans(&ts("heat-pump  units reduce power use."), "heat - pump", "reduce   power use").unwrap();
        assert_eq!(a.technology_span, Some((0, 3)));
        assert_eq!(a.aligned_labels, vec![1, 2, 2, 0, 3, 4, 4, 0]);
    }

    #[test]
    fn decodes_first_spans() {
        assert_eq!(decode_spans(&[0, 1, 2, 0, 3, 4, 1]), (Some((1, 3)), Some((4, 6))));
        assert_eq!(decode_spans(&[0, 0]), (None, None));
        assert_eq!(decode_spans(&[4, 4, 0]), (None, Some((0, 2))));
    }

    proptest! {
        #[test]
        fn align_then_read_back(words in prop::collection::vec("[a-z]{1,6}", 3..12), a in 0usize..100, b in 0usize..100) {
            // make every token unique so first occurrence is the intended one
            let words: Vec<String> = words.iter().enumerate().map(|(i, w)| format!("{w}{i}")).collect();
            let n = words.len();
            let split = 1 + a % (n - 1);
            let tech_len = 1 + b % split;
            let technology = words[..tech_len].join("  ");
            let effect = words[split..].join(" ");
            let t = ts(&words.join(" "));
            let al = align_spans(&t, &technology, &effect).unwrap();
            let (rt, re) = span_texts(&t, &al.aligned_labels);
            prop_assert_eq!(rt.unwrap(), normalize_whitespace(&technology));
            prop_assert_eq!(re.unwrap(), normalize_whitespace(&effect));
        }
    }
}

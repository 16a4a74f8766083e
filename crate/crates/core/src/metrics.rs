//! Precision / recall / F1 and held-out evaluation of the student.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Label, LabelSpace};
use crate::embedding::EmbeddingError;
use crate::features::Featurizer;
use crate::student::{ScoreAggregation, StudentError, StudentModel, StudentPrediction};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("label {0} outside the label space")]
    OutOfSpace(u32),
    #[error("sample {0} has no gold label")]
    Unlabeled(String),
    #[error(transparent)]
    Features(#[from] EmbeddingError),
    #[error(transparent)]
    Student(#[from] StudentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub micro_p: f64,
    pub micro_r: f64,
    pub micro_f1: f64,
    pub n_eval: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One-vs-rest P/R/F1 per class, plus macro (unweighted class mean) and
/// micro (pooled counts) averages. A class never predicted has P = 0.
pub fn precision_recall_f1(gold: &[u32], pred: &[u32], space: &LabelSpace) -> Result<MetricsReport, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = gold.iter().chain(pred).find(|&&c| !space.contains(c)) {
        return Err(MetricsError::OutOfSpace(bad));
    }
    let k = space.len();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&g, &p) in gold.iter().zip(pred) {
        if g == p {
            tp[g as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[g as usize] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fn_[c]);
            ClassMetrics {
                class: c as u32,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: tp[c] + fn_[c],
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let (tp_all, fp_all, fn_all) = (tp.iter().sum(), fp.iter().sum::<usize>(), fn_.iter().sum::<usize>());
    let micro_p = ratio(tp_all, tp_all + fp_all);
    let micro_r = ratio(tp_all, tp_all + fn_all);
    Ok(MetricsReport {
        macro_p: mean(|m| m.precision),
        macro_r: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        micro_p,
        micro_r,
        micro_f1: harmonic(micro_p, micro_r),
        per_class,
        n_eval: gold.len(),
    })
}

impl MetricsReport {
    /// `(P, R, F1)` under the chosen averaging.
    pub fn headline(&self, averaging: Averaging) -> (f64, f64, f64) {
        match averaging {
            Averaging::Macro => (self.macro_p, self.macro_r, self.macro_f1),
            Averaging::Micro => (self.micro_p, self.micro_r, self.micro_f1),
        }
    }

    /// Human-readable table, percentages with two decimals.
    pub fn to_text(&self, space: &LabelSpace, averaging: Averaging) -> String {
        let mut out = String::new();
        writeln!(out, "{:<8} {:>8} {:>8} {:>8} {:>8}  name", "class", "P", "R", "F1", "support").unwrap();
        for m in &self.per_class {
            writeln!(
                out,
                "{:<8} {:>8.2} {:>8.2} {:>8.2} {:>8}  {}",
                m.class,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                m.support,
                space.name(m.class).unwrap_or("?")
            )
            .unwrap();
        }
        let (p, r, f1) = self.headline(averaging);
        let label = match averaging {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        };
        writeln!(out, "{label:<8} {:>8.2} {:>8.2} {:>8.2} {:>8}", 100.0 * p, 100.0 * r, 100.0 * f1, self.n_eval).unwrap();
        out
    }
}

/// Score every eval sample (every token for the token task) and compare to gold.
pub fn evaluate_student(
    model: &StudentModel,
    featurizer: &Featurizer,
    eval: &Dataset,
    aggregation: ScoreAggregation,
) -> Result<MetricsReport, MetricsError> {
    if eval.is_empty() {
        return Err(MetricsError::Empty);
    }
    let task = eval.task();
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for s in eval.samples() {
        let g = s.gold.as_ref().ok_or_else(|| MetricsError::Unlabeled(s.id.clone()))?;
        let features = featurizer.sample_features(s)?;
        let out = model.score(&features, task.is_token_task(), aggregation)?;
        match (g, out.prediction) {
            (Label::Class(c), StudentPrediction::Class(p)) => {
                gold.push(*c);
                pred.push(p);
            }
            (Label::Tokens(cs), StudentPrediction::Tokens(ps)) => {
                gold.extend_from_slice(cs);
                pred.extend(ps);
            }
            _ => return Err(MetricsError::Unlabeled(s.id.clone())),
        }
    }
    precision_recall_f1(&gold, &pred, &task.label_space())
}

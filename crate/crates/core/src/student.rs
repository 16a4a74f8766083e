//! Linear softmax student: prediction probabilities, summed cross-entropy,
//! plain SGD, sample scoring and the borderline (minimum-score) selector.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const CHECKPOINT_MAGIC: &str = "dualchecker-student 1";

#[derive(Debug, Error, PartialEq)]
pub enum StudentError {
    #[error("feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value")]
    NonFiniteInput,
    #[error("target class {target} outside {classes} classes")]
    TargetOutOfRange { target: u32, classes: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("epochs must be >= 1")]
    ZeroEpochs,
    #[error("learning rate {0} must be positive and finite")]
    BadLearningRate(f64),
    #[error("no scores to choose a borderline case from")]
    EmptyScores,
    #[error("sample has no features")]
    NoFeatures,
    #[error("invalid model shape: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint integrity check failed")]
    Integrity,
}

/// One training example: feature vector, target class and owning sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    pub features: Vec<f64>,
    pub target: u32,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainBatch {
    pub items: Vec<TrainItem>,
}

impl TrainBatch {
    pub fn new(items: Vec<TrainItem>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct sample ids in first-appearance order.
    pub fn sample_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for item in &self.items {
            if ids.last() != Some(&item.sample_id) && !ids.contains(&item.sample_id) {
                ids.push(item.sample_id.clone());
            }
        }
        ids
    }
}

/// Gradient of the summed loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub loss_before: f64,
    pub loss_after: f64,
    pub steps: u64,
}

/// How per-token confidences combine into one sample score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregation {
    #[default]
    Mean,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentPrediction {
    Class(u32),
    Tokens(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutput {
    pub prediction: StudentPrediction,
    /// Probability of the predicted class (mean/min over tokens for token tasks).
    pub probability: f64,
    /// One distribution per scored vector.
    pub distributions: Vec<Vec<f64>>,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Linear softmax classifier: row `c` of `weights` is `w_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    n_classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    step_count: u64,
}

impl StudentModel {
    /// Zero-initialized model.
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        assert!(n_classes >= 1 && dim >= 1, "model needs classes and features");
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
            step_count: 0,
        }
    }

    pub fn from_parts(
        n_classes: usize,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        step_count: u64,
    ) -> Result<Self, StudentError> {
        if n_classes == 0 || dim == 0 {
            return Err(StudentError::Shape("empty model".into()));
        }
        if weights.len() != n_classes * dim || bias.len() != n_classes {
            return Err(StudentError::Shape(format!(
                "{} weights / {} biases for {n_classes}x{dim}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(StudentError::Shape("non-finite parameter".into()));
        }
        Ok(Self {
            n_classes,
            dim,
            weights,
            bias,
            step_count,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    fn check_input(&self, h: &[f64]) -> Result<(), StudentError> {
        if h.len() != self.dim {
            return Err(StudentError::DimensionMismatch {
                expected: self.dim,
                got: h.len(),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(StudentError::NonFiniteInput);
        }
        Ok(())
    }

    /// `w_c·h + b_c` for every class.
    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>, StudentError> {
        self.check_input(h)?;
        Ok((0..self.n_classes)
            .map(|c| self.row(c).iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.bias[c])
            .collect())
    }

    /// `p(c | h)` over all classes.
    pub fn predict_proba(&self, h: &[f64]) -> Result<Vec<f64>, StudentError> {
        Ok(softmax(&self.logits(h)?))
    }

    fn check_target(&self, target: u32) -> Result<(), StudentError> {
        if (target as usize) < self.n_classes {
            Ok(())
        } else {
            Err(StudentError::TargetOutOfRange {
                target,
                classes: self.n_classes,
            })
        }
    }

    /// `-Σ log p(target | h)` summed over the batch.
    pub fn batch_loss(&self, batch: &TrainBatch) -> Result<f64, StudentError> {
        let mut loss = 0.0;
        for item in &batch.items {
            self.check_target(item.target)?;
            let z = self.logits(&item.features)?;
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += log_sum - z[item.target as usize];
        }
        Ok(loss.max(0.0))
    }

    /// Analytic gradient: `∂/∂z = p - onehot(target)`, pushed to `w` and `b`.
    pub fn gradient(&self, batch: &TrainBatch) -> Result<Gradient, StudentError> {
        self.gradient_of(&batch.items)
    }

    fn gradient_of(&self, items: &[TrainItem]) -> Result<Gradient, StudentError> {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.n_classes];
        for item in items {
            self.check_target(item.target)?;
            let mut g = self.predict_proba(&item.features)?;
            g[item.target as usize] -= 1.0;
            for (c, gc) in g.iter().enumerate() {
                gb[c] += gc;
                let row = &mut gw[c * self.dim..(c + 1) * self.dim];
                for (w, x) in row.iter_mut().zip(&item.features) {
                    *w += gc * x;
                }
            }
        }
        if gw.iter().chain(&gb).any(|v| !v.is_finite()) {
            return Err(StudentError::NonFiniteGradient);
        }
        Ok(Gradient {
            weights: gw,
            bias: gb,
        })
    }

    /// One gradient step on the summed loss of `batch`.
    pub fn sgd_step(&mut self, batch: &TrainBatch, lr: f64) -> Result<(), StudentError> {
        self.step_on(&batch.items, lr)
    }

    fn step_on(&mut self, items: &[TrainItem], lr: f64) -> Result<(), StudentError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(StudentError::BadLearningRate(lr));
        }
        if items.is_empty() {
            return Err(StudentError::EmptyBatch);
        }
        let g = self.gradient_of(items)?;
        for (w, d) in self.weights.iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (b, d) in self.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
        self.step_count += 1;
        Ok(())
    }

    /// `epochs` passes over `batch`, one SGD step per consecutive chunk of
    /// `chunk_size` items (the final chunk may be shorter). Logs a warning if
    /// the batch loss went up.
    pub fn fit_batch(
        &mut self,
        batch: &TrainBatch,
        lr: f64,
        epochs: usize,
        chunk_size: usize,
    ) -> Result<FitReport, StudentError> {
        if epochs == 0 {
            return Err(StudentError::ZeroEpochs);
        }
        if batch.is_empty() {
            return Err(StudentError::EmptyBatch);
        }
        let chunk_size = chunk_size.max(1);
        let loss_before = self.batch_loss(batch)?;
        let start = self.step_count;
        for _ in 0..epochs {
            for chunk in batch.items.chunks(chunk_size) {
                self.step_on(chunk, lr)?;
            }
        }
        let loss_after = self.batch_loss(batch)?;
        if loss_after > loss_before {
            log::warn!("batch loss rose during fitting: {loss_before} -> {loss_after}");
        }
        Ok(FitReport {
            loss_before,
            loss_after,
            steps: self.step_count - start,
        })
    }

    /// Score a sample given its feature vectors (one for sequence tasks,
    /// one per token for token tasks).
    pub fn score(
        &self,
        features: &[Vec<f64>],
        token_task: bool,
        aggregation: ScoreAggregation,
    ) -> Result<StudentOutput, StudentError> {
        if features.is_empty() {
            return Err(StudentError::NoFeatures);
        }
        let distributions = features
            .iter()
            .map(|h| self.predict_proba(h))
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<u32> = distributions.iter().map(|d| argmax(d) as u32).collect();
        let maxes: Vec<f64> = distributions.iter().zip(&labels).map(|(d, &l)| d[l as usize]).collect();
        if !token_task {
            return Ok(StudentOutput {
                prediction: StudentPrediction::Class(labels[0]),
                probability: maxes[0],
                distributions,
            });
        }
        let probability = match aggregation {
            ScoreAggregation::Mean => maxes.iter().sum::<f64>() / maxes.len() as f64,
            ScoreAggregation::Min => maxes.iter().copied().fold(f64::INFINITY, f64::min),
        };
        Ok(StudentOutput {
            prediction: StudentPrediction::Tokens(labels),
            probability,
            distributions,
        })
    }

    /// Flat text checkpoint: header, dims, one `w<c>` row per class, `bias`,
    /// then a SHA-256 of everything above.
    pub fn to_checkpoint(&self) -> String {
        let mut body = String::new();
        writeln!(body, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(body, "classes {}", self.n_classes).unwrap();
        writeln!(body, "dim {}", self.dim).unwrap();
        writeln!(body, "steps {}", self.step_count).unwrap();
        for c in 0..self.n_classes {
            write!(body, "w{c}").unwrap();
            for v in self.row(c) {
                write!(body, " {v:?}").unwrap();
            }
            body.push('\n');
        }
        write!(body, "bias").unwrap();
        for v in &self.bias {
            write!(body, " {v:?}").unwrap();
        }
        body.push('\n');
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        body.push_str(&format!("sha256 {digest}\n"));
        body
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, StudentError> {
        let bad = |m: &str| StudentError::Checkpoint(m.to_string());
        let idx = text.rfind("sha256 ").ok_or_else(|| bad("missing digest"))?;
        let (body, digest_line) = text.split_at(idx);
        let digest = digest_line.trim_start_matches("sha256 ").trim();
        if hex::encode(Sha256::digest(body.as_bytes())) != digest {
            return Err(StudentError::Integrity);
        }
        let mut lines = body.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("bad header"));
        }
        let mut field = |name: &str| -> Result<u64, StudentError> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(name))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(&format!("missing {}", name.trim())))
        };
        let n_classes = field("classes ")? as usize;
        let dim = field("dim ")? as usize;
        let steps = field("steps ")?;
        let parse_row = |line: Option<&str>, prefix: &str| -> Result<Vec<f64>, StudentError> {
            let rest = line
                .and_then(|l| l.strip_prefix(prefix))
                .ok_or_else(|| bad(&format!("missing {prefix}")))?;
            rest.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(&format!("bad number {v:?}"))))
                .collect()
        };
        let mut weights = Vec::with_capacity(n_classes * dim);
        for c in 0..n_classes {
            let row = parse_row(lines.next(), &format!("w{c}"))?;
            if row.len() != dim {
                return Err(bad(&format!("row w{c} has {} values", row.len())));
            }
            weights.extend(row);
        }
        let bias = parse_row(lines.next(), "bias")?;
        Self::from_parts(n_classes, dim, weights, bias, steps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        crate::io_util::write_atomic(path.as_ref(), self.to_checkpoint().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StudentError> {
        let text = std::fs::read_to_string(path).map_err(|e| StudentError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&text)
    }
}

/// Position of the minimum score; the earliest position wins exact ties.
pub fn check_borderline(scores: &[(String, f64)]) -> Result<usize, StudentError> {
    if scores.is_empty() {
        return Err(StudentError::EmptyScores);
    }
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate().skip(1) {
        if *s < scores[best].1 {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn item(features: Vec<f64>, target: u32) -> TrainItem {
        TrainItem {
            features,
            target,
            sample_id: "s".into(),
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = StudentModel::zeros(4, 3);
        assert_eq!(m.predict_proba(&[1.0, -2.0, 3.0]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn two_class_closed_form() {
        // logits [ln 2, 0] via bias
        let m = StudentModel::from_parts(2, 1, vec![0.0, 0.0], vec![2f64.ln(), 0.0], 0).unwrap();
        let p = m.predict_proba(&[0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let z = [0.3, -1.2, 4.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.0).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        let big = softmax(&[1000.0, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn input_errors() {
        let m = StudentModel::zeros(2, 2);
        assert!(matches!(m.predict_proba(&[1.0]), Err(StudentError::DimensionMismatch { .. })));
        assert_eq!(m.predict_proba(&[f64::NAN, 0.0]), Err(StudentError::NonFiniteInput));
        let b = TrainBatch::new(vec![item(vec![0.0, 0.0], 5)]);
        assert!(matches!(m.batch_loss(&b), Err(StudentError::TargetOutOfRange { .. })));
    }

    #[test]
    fn loss_values() {
        let m = StudentModel::zeros(2, 1);
        let one = TrainBatch::new(vec![item(vec![1.0], 0)]);
        assert!((m.batch_loss(&one).unwrap() - 2f64.ln()).abs() < 1e-15);
        let two = TrainBatch::new(vec![item(vec![1.0], 0), item(vec![2.0], 1)]);
        assert!((m.batch_loss(&two).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let confident = StudentModel::from_parts(2, 1, vec![0.0, 0.0], vec![800.0, 0.0], 0).unwrap();
        assert_eq!(confident.batch_loss(&one).unwrap(), 0.0);
    }

    #[test]
    fn stationary_at_optimum() {
        let mut m = StudentModel::from_parts(2, 1, vec![0.0, 0.0], vec![800.0, 0.0], 0).unwrap();
        let before = m.clone();
        m.sgd_step(&TrainBatch::new(vec![item(vec![1.0], 0)]), 0.5).unwrap();
        assert_eq!(m.weights(), before.weights());
        assert_eq!(m.bias(), before.bias());
        assert_eq!(m.step_count(), 1);
    }

    #[test]
    fn logit_gradient_is_p_minus_onehot() {
        // p = [0.75, 0.25] via bias ln 3
        let m = StudentModel::from_parts(2, 1, vec![0.0, 0.0], vec![3f64.ln(), 0.0], 0).unwrap();
        let g = m.gradient(&TrainBatch::new(vec![item(vec![1.0], 1)])).unwrap();
        assert!((g.bias[0] - 0.75).abs() < 1e-15);
        assert!((g.bias[1] + 0.75).abs() < 1e-15);
        assert_eq!(g.weights, g.bias);
    }

    /// Central finite differences over every parameter.
    fn numeric_gradient(m: &StudentModel, b: &TrainBatch, eps: f64) -> Vec<f64> {
        let n_w = m.weights.len();
        (0..n_w + m.bias.len())
            .map(|i| {
                let mut plus = m.clone();
                let mut minus = m.clone();
                if i < n_w {
                    plus.weights[i] += eps;
                    minus.weights[i] -= eps;
                } else {
                    plus.bias[i - n_w] += eps;
                    minus.bias[i - n_w] -= eps;
                }
                (plus.batch_loss(b).unwrap() - minus.batch_loss(b).unwrap()) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, d) = (3, 4);
        let m = StudentModel::from_parts(
            k,
            d,
            (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            0,
        )
        .unwrap();
        let b = TrainBatch::new(
            (0..5)
                .map(|_| item((0..d).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(0..k as u32)))
                .collect(),
        );
        let g = m.gradient(&b).unwrap();
        let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
        let numeric = numeric_gradient(&m, &b, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-4, "{a} vs {n}");
        }
    }

    fn blobs(seed: u64) -> TrainBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrainBatch::new(
            (0..40)
                .map(|i| {
                    let c = (i % 2) as u32;
                    let centre = if c == 1 { 2.0 } else { -2.0 };
                    item(vec![centre + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], c)
                })
                .collect(),
        )
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let batch = blobs(1);
        let mut m = StudentModel::zeros(2, 2);
        let report = m.fit_batch(&batch, 0.1, 200, 64).unwrap();
        assert!(report.loss_after < report.loss_before);
        assert_eq!(report.steps, 200);
        let correct = batch
            .items
            .iter()
            .filter(|it| argmax(&m.predict_proba(&it.features).unwrap()) as u32 == it.target)
            .count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let batch = blobs(5);
        let mut a = StudentModel::zeros(2, 2);
        let mut b = StudentModel::zeros(2, 2);
        a.fit_batch(&batch, 0.1, 30, 8).unwrap();
        b.fit_batch(&batch, 0.1, 30, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.step_count(), 30 * 5);
    }

    #[test]
    fn fit_preconditions() {
        let mut m = StudentModel::zeros(2, 2);
        assert_eq!(m.fit_batch(&blobs(1), 0.1, 0, 8), Err(StudentError::ZeroEpochs));
        assert_eq!(m.fit_batch(&TrainBatch::default(), 0.1, 1, 8), Err(StudentError::EmptyBatch));
        assert_eq!(m.sgd_step(&blobs(1), 0.0), Err(StudentError::BadLearningRate(0.0)));
    }

    #[test]
    fn scoring() {
        let m = StudentModel::zeros(2, 1);
        let out = m.score(&[vec![1.0]], false, ScoreAggregation::Mean).unwrap();
        assert_eq!(out.probability, 0.5);
        assert_eq!(out.prediction, StudentPrediction::Class(0));
    }

    #[test]
    fn token_score_is_mean_of_maxima() {
        // class-0 logit is l9*x0 + l6*x1, class-1 logit is 0, so one-hot
        // features give per-token maxima 0.9, 0.6, 0.9
        let l9 = (0.9f64 / 0.1).ln();
        let l6 = (0.6f64 / 0.4).ln();
        let m = StudentModel::from_parts(2, 2, vec![l9, l6, 0.0, 0.0], vec![0.0, 0.0], 0).unwrap();
        let feats = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let out = m.score(&feats, true, ScoreAggregation::Mean).unwrap();
        assert!((out.probability - 0.8).abs() < 1e-12);
        assert_eq!(out.prediction, StudentPrediction::Tokens(vec![0, 0, 0]));
        let min = m.score(&feats, true, ScoreAggregation::Min).unwrap();
        assert!((min.probability - 0.6).abs() < 1e-12);
    }

    #[test]
    fn borderline_examples() {
        let s = |v: &[(&str, f64)]| v.iter().map(|(a, b)| (a.to_string(), *b)).collect::<Vec<_>>();
        assert_eq!(check_borderline(&s(&[("a", 0.9), ("b", 0.3), ("c", 0.7)])).unwrap(), 1);
        assert_eq!(check_borderline(&s(&[("a", 0.5), ("b", 0.5)])).unwrap(), 0);
        assert_eq!(check_borderline(&s(&[("a", 0.99)])).unwrap(), 0);
        assert_eq!(check_borderline(&[]), Err(StudentError::EmptyScores));
    }

    #[test]
    fn checkpoint_round_trip_and_tamper() {
        let mut m = StudentModel::zeros(3, 4);
        m.fit_batch(
            &TrainBatch::new(vec![item(vec![0.1, 1e-20, -3.5, 2.0 / 3.0], 2), item(vec![1.0, 0.0, 0.0, 1.0], 0)]),
            0.37,
            3,
            1,
        )
        .unwrap();
        let text = m.to_checkpoint();
        let back = StudentModel::from_checkpoint(&text).unwrap();
        assert_eq!(back, m);
        let tampered = text.replacen("w0 ", "w0 1", 1);
        assert_eq!(StudentModel::from_checkpoint(&tampered), Err(StudentError::Integrity));
        assert!(StudentModel::from_checkpoint("garbage").is_err());
    }

    proptest! {
        #[test]
        fn proba_is_a_positive_simplex(z in prop::collection::vec(-50.0f64..50.0, 1..8)) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }

        #[test]
        fn argmax_invariant_under_rescaling(
            w in prop::collection::vec(-3.0f64..3.0, 6),
            h in prop::collection::vec(-3.0f64..3.0, 2),
            s in 0.1f64..10.0,
            shift in -20.0f64..20.0,
        ) {
            let m = StudentModel::from_parts(3, 2, w.clone(), vec![0.0; 3], 0).unwrap();
            let scaled_w: Vec<f64> = w.iter().map(|v| v / s).collect();
            let scaled_h: Vec<f64> = h.iter().map(|v| v * s).collect();
            let m2 = StudentModel::from_parts(3, 2, scaled_w, vec![shift; 3], 0).unwrap();
            let a = argmax(&m.logits(&h).unwrap());
            let z2 = m2.logits(&scaled_h).unwrap();
            let z1 = m.logits(&h).unwrap();
            // only compare when the winner is not a near-tie
            let mut sorted = z1.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            prop_assert_eq!(a, argmax(&z2));
        }

        #[test]
        fn loss_is_non_negative(
            w in prop::collection::vec(-5.0f64..5.0, 4),
            h in prop::collection::vec(-5.0f64..5.0, 2),
            t in 0u32..2,
        ) {
            let m = StudentModel::from_parts(2, 2, w, vec![0.0; 2], 0).unwrap();
            prop_assert!(m.batch_loss(&TrainBatch::new(vec![item(h, t)])).unwrap() >= 0.0);
        }
    }
}

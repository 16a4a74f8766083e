//! Generated scenarios for offline benchmarking.
//!
//! [`gaussian_blobs`] builds a two-class problem with fixed embedding
//! vectors and a noisy scripted teacher whose stated confidence tracks its
//! correctness. [`fuzz_scenario`] builds a small random run with malformed,
//! unconfident and failing replies mixed in, and reports which samples the
//! script allows to be trained on.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Label, TaskKind};
use crate::llm::tags;
use crate::simulate::{AnswerSpec, Expectations, Scenario, ScenarioSample, ScriptedReply};

const TEACHER_STREAM: u64 = 0x7eac_4e12_d1b0_9a55;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobParams {
    pub seed: u64,
    pub dim: usize,
    pub n_train: usize,
    pub n_unlabeled: usize,
    pub n_eval: usize,
    /// Class means sit at `±offset` along a random unit direction; noise is
    /// standard normal in every coordinate.
    pub offset: f64,
    /// Chance that any single teacher reply has the right label.
    pub teacher_accuracy: f64,
    /// Chance that a wrong reply still claims high confidence.
    pub overconfident_wrong: f64,
    pub threshold: f64,
    pub n_shot: usize,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 16,
            n_train: 20,
            n_unlabeled: 400,
            n_eval: 100,
            offset: 2.0,
            teacher_accuracy: 0.9,
            overconfident_wrong: 0.1,
            threshold: 0.85,
            n_shot: 5,
        }
    }
}

fn answer(label: u32, confidence: u32) -> ScriptedReply {
    ScriptedReply::Answer(AnswerSpec {
        label: Some(label),
        technology: None,
        effect: None,
        confidence: Some(confidence as f64),
        rationale: "scripted".into(),
    })
}

/// Two Gaussian blobs on the binary task. The data depend only on `seed`
/// and the sizes; the teacher's replies are drawn from a separate stream, so
/// changing the teacher settings leaves the samples untouched.
pub fn gaussian_blobs(p: &BlobParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut dir: Vec<f64> = (0..p.dim).map(|_| gauss(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);

    let mut vectors = BTreeMap::new();
    let mut make = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Vec<(String, u32)> {
        (0..n)
            .map(|i| {
                let id = format!("{prefix}{i}");
                let class = rng.random_range(0..2u32);
                let sign = if class == 1 { 1.0 } else { -1.0 };
                let v: Vec<f64> = dir.iter().map(|d| sign * p.offset * d + gauss(rng)).collect();
                vectors.insert(id.clone(), v);
                (id, class)
            })
            .collect()
    };
    let train = make("b", p.n_train, &mut rng);
    let unlabeled = make("u", p.n_unlabeled, &mut rng);
    let eval = make("e", p.n_eval, &mut rng);

    let mut teacher = ChaCha8Rng::seed_from_u64(p.seed ^ TEACHER_STREAM);
    let mut reply = |gold: u32| {
        if teacher.random_bool(p.teacher_accuracy) {
            answer(gold, teacher.random_range(86..=99))
        } else if teacher.random_bool(p.overconfident_wrong) {
            answer(1 - gold, teacher.random_range(86..=95))
        } else {
            answer(1 - gold, teacher.random_range(40..=84))
        }
    };
    let labeled = |(id, class): (String, u32)| ScenarioSample {
        context: format!("blob sample {id}"),
        id,
        label: Some(Label::Class(class)),
        replies: vec![],
    };
    let unlabeled = unlabeled
        .into_iter()
        .map(|(id, class)| ScenarioSample {
            context: format!("blob sample {id}"),
            id,
            label: None,
            replies: vec![reply(class), reply(class)],
        })
        .collect();

    let mut config = toml::Table::new();
    config.insert("n_shot".into(), (p.n_shot as i64).into());
    config.insert("teacher_threshold".into(), p.threshold.into());
    config.insert("seed".into(), (p.seed as i64).into());
    Scenario {
        name: "gaussian_blobs".into(),
        task: TaskKind::BinaryGreen,
        config,
        train: train.into_iter().map(labeled).collect(),
        unlabeled,
        eval: eval.into_iter().map(labeled).collect(),
        vectors: Some(vectors),
        rationale_template: Some("the vector for {id} lies on this side".into()),
        replies: BTreeMap::new(),
        expect: None,
    }
}

/// A fuzzed scenario and what its script implies.
#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub scenario: Scenario,
    /// Unlabeled samples whose final reply is confident, parseable and (for
    /// span answers) alignable.
    pub trainable: BTreeSet<String>,
    pub n_shot: usize,
    pub n_batches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Good,
    Low,
    Malformed,
    /// Confident spans that do not occur in the context.
    Misaligned,
}

const TECH: &[&str] = &["solar", "wind", "hydrogen", "battery", "geothermal", "biomass", "tidal", "nuclear"];
const TECH2: &[&str] = &["cells", "turbines", "storage", "pumps", "reactors", "plants", "grids", "engines"];
const VERBS: &[&str] = &["reduce", "cut", "lower", "avoid", "limit"];
const OBJ: &[&str] = &["carbon", "methane", "sulfur", "soot", "waste", "water"];
const OBJ2: &[&str] = &["emissions", "use", "release", "output", "loss"];
const FILLER: &[&str] = &["the", "device", "uses", "a", "novel", "housing", "with", "coated", "panel", "sensor"];
const MALFORMED: &[&str] = &["unclear", "{\"Rationale\": \"cut off", "I would rather not say.", "Output: {"];

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

struct Causal {
    context: String,
    technology: String,
    effect: String,
    labels: Vec<u32>,
}

fn causal_text(rng: &mut ChaCha8Rng) -> Causal {
    let technology = format!("{} {}", pick(rng, TECH), pick(rng, TECH2));
    let effect = format!("{} {} {}", pick(rng, VERBS), pick(rng, OBJ), pick(rng, OBJ2));
    Causal {
        context: format!("{technology} {effect}"),
        technology,
        effect,
        labels: vec![1, 2, 3, 4, 4],
    }
}

fn filler_text(rng: &mut ChaCha8Rng, i: usize) -> String {
    let n = rng.random_range(3..8);
    let words: Vec<&str> = (0..n).map(|_| pick(rng, FILLER)).collect();
    format!("item {i} {}", words.join(" "))
}

/// A random small run over one of the three tasks. Every batch holds at least
/// one sample whose first reply is good, so every batch trains.
pub fn fuzz_scenario(seed: u64) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = TaskKind::ALL[rng.random_range(0..TaskKind::ALL.len())];
    let n_classes = task.label_space().len() as u32;
    let n_shot = rng.random_range(0..=6usize);
    let batch_size = rng.random_range(1..=6usize);
    let n_unlabeled = rng.random_range(1..=18usize);
    let n_train = rng.random_range(1..=8usize);
    let n_eval = rng.random_range(0..=4usize);
    let threshold_pct = rng.random_range(50..=95u32);
    let path_confidence = task == TaskKind::PathClass && rng.random_bool(0.5);
    let confident_replies = task.reports_confidence(path_confidence);

    let labeled = |rng: &mut ChaCha8Rng, prefix: &str, i: usize| {
        let (context, label) = match task {
            TaskKind::CausalityTokens => {
                let c = causal_text(rng);
                (c.context, Label::Tokens(c.labels))
            }
            _ => (filler_text(rng, i), Label::Class(rng.random_range(0..n_classes))),
        };
        ScenarioSample {
            id: format!("{prefix}{i}"),
            context,
            label: Some(label),
            replies: vec![],
        }
    };
    let train: Vec<ScenarioSample> = (0..n_train).map(|i| labeled(&mut rng, "t", i)).collect();
    let eval: Vec<ScenarioSample> = (0..n_eval).map(|i| labeled(&mut rng, "e", i)).collect();

    let mut replies: BTreeMap<String, Vec<ScriptedReply>> = BTreeMap::new();
    let mut unlabeled = Vec::new();
    let mut trainable = BTreeSet::new();
    let mut reprompts = 0;
    let mut parse_failures = 0;
    let n_batches = n_unlabeled.div_ceil(batch_size);
    let anchors: Vec<usize> = (0..n_batches)
        .map(|b| {
            let lo = b * batch_size;
            let hi = (lo + batch_size).min(n_unlabeled);
            rng.random_range(lo..hi)
        })
        .collect();

    for i in 0..n_unlabeled {
        let id = format!("u{i}");
        let causal = causal_text(&mut rng);
        let context = match task {
            TaskKind::CausalityTokens => causal.context.clone(),
            _ => filler_text(&mut rng, 100 + i),
        };
        let draw = |rng: &mut ChaCha8Rng| -> Kind {
            let mut kinds = vec![Kind::Good, Kind::Good, Kind::Malformed];
            if confident_replies {
                kinds.extend([Kind::Low, Kind::Low]);
            }
            if task == TaskKind::CausalityTokens {
                kinds.push(Kind::Misaligned);
            }
            kinds[rng.random_range(0..kinds.len())]
        };
        let first = if anchors.contains(&i) { Kind::Good } else { draw(&mut rng) };
        let mut attempts = vec![first];
        if matches!(first, Kind::Low | Kind::Malformed) {
            attempts.push(draw(&mut rng));
            reprompts += 1;
        }
        let last = *attempts.last().unwrap();
        if matches!(last, Kind::Good) {
            trainable.insert(id.clone());
        }
        for (a, kind) in attempts.iter().enumerate() {
            let conf = if confident_replies {
                match kind {
                    Kind::Low => Some(rng.random_range(0..threshold_pct) as f64),
                    _ => Some(rng.random_range(threshold_pct + 1..=100) as f64),
                }
            } else {
                None
            };
            let reply = match (kind, task) {
                (Kind::Malformed, _) => {
                    parse_failures += 1;
                    ScriptedReply::Text(pick(&mut rng, MALFORMED).to_string())
                }
                (_, TaskKind::CausalityTokens) => {
                    let (technology, effect) = if *kind == Kind::Misaligned {
                        ("quantum flux".to_string(), causal.effect.clone())
                    } else {
                        (causal.technology.clone(), causal.effect.clone())
                    };
                    ScriptedReply::Answer(AnswerSpec {
                        label: None,
                        technology: Some(technology),
                        effect: Some(effect),
                        confidence: conf,
                        rationale: format!("reason {a}"),
                    })
                }
                _ => ScriptedReply::Answer(AnswerSpec {
                    label: Some(rng.random_range(0..n_classes)),
                    technology: None,
                    effect: None,
                    confidence: conf,
                    rationale: format!("reason {a}"),
                }),
            };
            let mut queue = Vec::new();
            // a transport failure that the client's single retry absorbs
            if rng.random_bool(0.1) {
                queue.push(ScriptedReply::Fail {
                    fail: format!("flaky link on {id}"),
                });
            }
            queue.push(reply);
            replies.insert(tags::teacher(&id, a as u32 + 1), queue);
        }
        if rng.random_bool(0.1) {
            let fail = || ScriptedReply::Fail { fail: "rationale outage".into() };
            replies.insert(tags::borderline(&id), vec![fail(), fail()]);
        }
        unlabeled.push(ScenarioSample {
            id,
            context,
            label: None,
            replies: vec![],
        });
    }
    for s in &train {
        if rng.random_bool(0.2) {
            let fail = || ScriptedReply::Fail { fail: "rationale outage".into() };
            replies.insert(tags::rationale(&s.id), vec![fail(), fail()]);
        }
    }

    let mut config = toml::Table::new();
    config.insert("n_shot".into(), (n_shot as i64).into());
    config.insert("distill_batch_size".into(), (batch_size as i64).into());
    config.insert("teacher_threshold".into(), (threshold_pct as f64 / 100.0).into());
    config.insert("epochs_per_batch".into(), rng.random_range(1..=3i64).into());
    config.insert("seed".into(), ((seed % 1000) as i64).into());
    config.insert("path_confidence".into(), path_confidence.into());
    config.insert("token_feature_dim".into(), 16i64.into());
    config.insert(
        "score_aggregation".into(),
        (if rng.random_bool(0.5) { "mean" } else { "min" }).into(),
    );
    let template_updates = if n_shot == 0 { 0 } else { n_batches };
    let never_trained = unlabeled
        .iter()
        .map(|s| s.id.clone())
        .filter(|id| !trainable.contains(id))
        .collect();
    let scenario = Scenario {
        name: format!("fuzz-{seed}"),
        task,
        config,
        train,
        unlabeled,
        eval,
        vectors: None,
        rationale_template: Some("because {id}".into()),
        replies,
        expect: Some(Expectations {
            batches: Some(n_batches),
            reprompts: Some(reprompts),
            parse_failures: Some(parse_failures),
            template_updates: Some(template_updates),
            never_trained,
        }),
    };
    FuzzCase {
        scenario,
        trainable,
        n_shot,
        n_batches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_keep_data_fixed_across_teacher_settings() {
        let a = gaussian_blobs(&BlobParams::default());
        let b = gaussian_blobs(&BlobParams {
            teacher_accuracy: 0.6,
            threshold: 0.0,
            ..BlobParams::default()
        });
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.eval, b.eval);
        assert_ne!(a.unlabeled, b.unlabeled);
        assert_eq!(a.vectors.as_ref().unwrap().len(), 20 + 400 + 100);
        assert!(a.vectors.unwrap().values().all(|v| v.len() == 16));
    }

    #[test]
    fn blob_teacher_hits_its_accuracy() {
        let p = BlobParams::default();
        let s = gaussian_blobs(&p);
        // unlabeled samples carry no label; the nearest class mean stands in
        let mut right = 0;
        let mut confident_wrong = 0;
        let v = s.vectors.as_ref().unwrap();
        let mean = |c: u32| -> Vec<f64> {
            let members: Vec<&Vec<f64>> = s
                .train
                .iter()
                .chain(&s.eval)
                .filter(|x| x.label == Some(Label::Class(c)))
                .map(|x| &v[&x.id])
                .collect();
            (0..p.dim).map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64).collect()
        };
        let (m0, m1) = (mean(0), mean(1));
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for u in &s.unlabeled {
            let near = if dist(&v[&u.id], &m1) < dist(&v[&u.id], &m0) { 1 } else { 0 };
            let ScriptedReply::Answer(a) = &u.replies[0] else { panic!() };
            if a.label == Some(near) {
                right += 1;
            } else if a.confidence.unwrap() >= 85.0 {
                confident_wrong += 1;
            }
        }
        // nearest-mean agrees with the true class for all but a few percent
        let acc = right as f64 / s.unlabeled.len() as f64;
        assert!((0.8..0.97).contains(&acc), "{acc}");
        assert!(confident_wrong < s.unlabeled.len() / 20, "{confident_wrong}");
    }

    #[test]
    fn fuzz_cases_are_reproducible_and_varied() {
        let a = fuzz_scenario(3);
        let b = fuzz_scenario(3);
        assert_eq!(a.scenario, b.scenario);
        let tasks: BTreeSet<String> = (0..30).map(|s| fuzz_scenario(s).scenario.task.to_string()).collect();
        assert_eq!(tasks.len(), 3);
        for s in 0..30 {
            let c = fuzz_scenario(s);
            assert!(!c.trainable.is_empty());
            c.scenario.inputs().unwrap();
            c.scenario.backend().unwrap();
            c.scenario.run_config(&[]).unwrap();
        }
    }
}

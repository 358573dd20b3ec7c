#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mathfuse::dense::{in_batch_loss, TokenMetric, ToyEncoder, TrainingBatch, Triple};
use mathfuse::fusion::linear_fuse;
use mathfuse::metrics::{evaluate, EvalConfig};
use mathfuse::run::{JudgmentSet, RankedRun, ScoredDoc};
use mathfuse::tuner::{assign_folds, CvConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A run whose topics hold `depth` distinct docs from `d0..d{pool}` with
/// strictly decreasing scores.
pub fn random_run<R: Rng>(rng: &mut R, tag: &str, topics: &[String], depth: usize, pool: usize) -> RankedRun {
    let mut out = std::collections::BTreeMap::new();
    for t in topics {
        let mut ids: Vec<usize> = (0..pool).collect();
        ids.shuffle(rng);
        let mut scores: Vec<f64> = (0..depth).map(|_| rng.gen_range(-5.0..5.0)).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        scores.dedup();
        let entries = ids
            .iter()
            .zip(&scores)
            .enumerate()
            .map(|(i, (d, s))| ScoredDoc::new(format!("d{d}"), i + 1, *s))
            .collect();
        out.insert(t.clone(), entries);
    }
    RankedRun::from_topics(tag, out).unwrap()
}

pub fn random_qrels<R: Rng>(rng: &mut R, topics: &[String], pool: usize, judged_fraction: f64) -> JudgmentSet {
    let mut q = JudgmentSet::default();
    for t in topics {
        for d in 0..pool {
            if rng.gen_bool(judged_fraction) {
                q.set_grade(t, &format!("d{d}"), rng.gen_range(0..4));
            }
        }
    }
    q
}

pub fn topic_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i:02}")).collect()
}

pub fn doc_order(run: &RankedRun, topic: &str) -> Vec<String> {
    run.topic(topic)
        .unwrap_or_default()
        .iter()
        .map(|d| d.doc_id.clone())
        .collect()
}

pub fn doc_set(run: &RankedRun, topic: &str) -> BTreeSet<String> {
    doc_order(run, topic).into_iter().collect()
}

/// Nested-loop MaxSim written from the definition.
pub fn oracle_maxsim(q: &[Vec<f64>], p: &[Vec<f64>], metric: TokenMetric) -> f64 {
    let sim = |a: &[f64], b: &[f64]| -> f64 {
        match metric {
            TokenMetric::Dot => {
                let mut s = 0.0;
                for k in 0..a.len() {
                    s += a[k] * b[k];
                }
                s
            }
            TokenMetric::NegL2Normalized => {
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                let d2: f64 = (0..a.len()).map(|k| (a[k] / na - b[k] / nb).powi(2)).sum();
                -d2.sqrt()
            }
        }
    };
    let mut total = 0.0;
    for qi in q {
        let mut best = f64::NEG_INFINITY;
        for dj in p {
            let s = sim(qi, dj);
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    total
}

/// Loss from the definition: the query's own hard negative plus both
/// passages of every other triple, mean-pooled lookups, plain exponentials.
pub fn oracle_loss(batch: &TrainingBatch, enc: &ToyEncoder) -> f64 {
    let pool = |tokens: &[String]| -> Vec<f64> {
        let mut v = vec![0.0; enc.dim()];
        for t in tokens {
            let row = enc.vector(t).or_else(|| enc.vector("[UNK]")).unwrap();
            for k in 0..v.len() {
                v[k] += row[k];
            }
        }
        v.iter().map(|x| x / tokens.len() as f64).collect()
    };
    let s = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let triples = batch.triples();
    let mut total = 0.0;
    for (i, t) in triples.iter().enumerate() {
        let q = pool(&t.query);
        let pos = s(&q, &pool(&t.positive));
        let mut negatives = vec![s(&q, &pool(&t.negative))];
        for (k, other) in triples.iter().enumerate() {
            if k != i {
                negatives.push(s(&q, &pool(&other.positive)));
                negatives.push(s(&q, &pool(&other.negative)));
            }
        }
        assert_eq!(negatives.len(), 2 * triples.len() - 1);
        let denom = pos.exp() + negatives.iter().map(|n| n.exp()).sum::<f64>();
        total += -(pos.exp() / denom).ln();
    }
    total / triples.len() as f64
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, vocab: usize) -> TrainingBatch {
    let text = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(1..=4))
            .map(|_| {
                let i = rng.gen_range(0..=vocab);
                if i == vocab {
                    "oov".to_string()
                } else {
                    format!("t{i}")
                }
            })
            .collect()
    };
    let triples = (0..b)
        .map(|_| {
            let (q, p, n) = (text(rng), text(rng), text(rng));
            Triple::new(&q, &p, &n)
        })
        .collect();
    TrainingBatch::new(triples).unwrap()
}

pub fn vocab(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

pub fn finite_difference(batch: &TrainingBatch, enc: &ToyEncoder, h: f64) -> Vec<f64> {
    let mut work = enc.clone();
    (0..enc.parameters().len())
        .map(|k| {
            let orig = work.parameters()[k];
            work.parameters_mut()[k] = orig + h;
            let up = in_batch_loss(batch, &work).unwrap();
            work.parameters_mut()[k] = orig - h;
            let down = in_batch_loss(batch, &work).unwrap();
            work.parameters_mut()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    // floor keeps noise-level differences of a vanishing gradient from counting
    diff / scale.max(1e-3)
}

/// Independent re-derivation: fuse whole runs at every weight and score the
/// training topics through the public evaluator.
pub fn cv_oracle(
    dense: &RankedRun,
    structure: &RankedRun,
    qrels: &JudgmentSet,
    cv: &CvConfig,
) -> Vec<(f64, BTreeMap<String, f64>)> {
    let topics: Vec<String> = qrels.topic_ids().map(str::to_string).collect();
    let folds = assign_folds(&topics, cv.folds).unwrap();
    let config = EvalConfig {
        metrics: vec![cv.objective],
        judged_depth: None,
        include_unjudged_topics: false,
    };
    let name = cv.objective.name();
    let per_alpha: Vec<BTreeMap<String, f64>> = cv
        .grid
        .iter()
        .map(|&a| {
            let fused = linear_fuse(dense, structure, a, &cv.fusion).unwrap();
            evaluate(&fused, qrels, &config)
                .per_topic
                .into_iter()
                .map(|(t, v)| (t, v[&name]))
                .collect()
        })
        .collect();
    (0..cv.folds)
        .map(|f| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, values) in per_alpha.iter().enumerate() {
                let train: Vec<f64> = topics.iter().filter(|t| folds[*t] != f).map(|t| values[t]).collect();
                let m = train.iter().sum::<f64>() / train.len() as f64;
                if m > best.0 {
                    best = (m, i);
                }
            }
            let heldout = topics
                .iter()
                .filter(|t| folds[*t] == f)
                .map(|t| (t.clone(), per_alpha[best.1][t]))
                .collect();
            (cv.grid[best.1], heldout)
        })
        .collect()
}

//! Rank fusion of two or more runs.
//!
//! Every method works topic by topic over the union of the input runs'
//! candidates and produces a ranked list sorted by descending fused score,
//! ties broken by ascending doc id, cut to the configured depth. A document
//! that a run did not retrieve contributes nothing from that run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par;
use crate::run::{rank_scores, RankedRun, ScoredDoc, DEFAULT_MAX_DEPTH};

/// RRF smoothing constant.
pub const DEFAULT_RRF_K: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMethod {
    /// `alpha * dense + (1 - alpha) * structure` over normalized scores.
    Linear,
    Borda,
    CombSum,
    /// Inverse square rank: `n(d) * sum 1/rank^2`.
    Isr,
    /// `ln(1 + n(d)) * sum 1/rank^2`.
    LogIsr,
    /// Reciprocal rank fusion: `sum 1/(k + rank)`.
    Rrf,
    /// Re-score the first run's candidates with the second run's scores.
    Rerank,
}

impl FusionMethod {
    pub fn name(self) -> &'static str {
        match self {
            FusionMethod::Linear => "linear",
            FusionMethod::Borda => "borda",
            FusionMethod::CombSum => "combsum",
            FusionMethod::Isr => "isr",
            FusionMethod::LogIsr => "logisr",
            FusionMethod::Rrf => "rrf",
            FusionMethod::Rerank => "rerank",
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "linear" => FusionMethod::Linear,
            "borda" => FusionMethod::Borda,
            "combsum" => FusionMethod::CombSum,
            "isr" => FusionMethod::Isr,
            "logisr" => FusionMethod::LogIsr,
            "rrf" => FusionMethod::Rrf,
            "rerank" => FusionMethod::Rerank,
            _ => return Err(Error::InvalidParameter(format!("unknown fusion method {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    MinMax,
    None,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minmax" | "min-max" => Ok(Normalization::MinMax),
            "none" => Ok(Normalization::None),
            _ => Err(Error::InvalidParameter(format!("unknown normalization {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    pub method: FusionMethod,
    /// Weight of the dense run; linear fusion only.
    pub alpha: f64,
    /// RRF only.
    pub rrf_k: u32,
    pub normalization: Normalization,
    /// Output cut per topic.
    pub depth: usize,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            method: FusionMethod::Linear,
            alpha: 0.5,
            rrf_k: DEFAULT_RRF_K,
            normalization: Normalization::MinMax,
            depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl FusionSpec {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.rrf_k < 1 {
            return Err(Error::InvalidParameter("rrf k must be >= 1".into()));
        }
        check_depth(self.depth)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(())
}

fn check_depth(depth: usize) -> Result<()> {
    if depth < 1 {
        return Err(Error::InvalidParameter("depth must be >= 1".into()));
    }
    Ok(())
}

fn check_run_count(runs: &[RankedRun]) -> Result<()> {
    if runs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "fusion needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    Ok(())
}

/// Min-max rescales one topic's scores to `[0, 1]`; order is kept.
///
/// A list whose scores are all equal maps to 1.0 so that retrieved documents
/// still outscore documents missing from the list.
pub fn minmax_normalize(entries: &[ScoredDoc]) -> Vec<ScoredDoc> {
    let (lo, hi) = entries.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
        (lo.min(d.score), hi.max(d.score))
    });
    entries
        .iter()
        .map(|d| ScoredDoc {
            score: if hi > lo { (d.score - lo) / (hi - lo) } else { 1.0 },
            ..d.clone()
        })
        .collect()
}

fn source_scores(entries: &[ScoredDoc], normalization: Normalization) -> Vec<(&str, f64)> {
    match normalization {
        Normalization::MinMax => {
            let normed = minmax_normalize(entries);
            entries
                .iter()
                .zip(normed)
                .map(|(d, n)| (d.doc_id.as_str(), n.score))
                .collect()
        }
        Normalization::None => entries.iter().map(|d| (d.doc_id.as_str(), d.score)).collect(),
    }
}

fn union_topics(runs: &[&RankedRun]) -> Vec<String> {
    let set: BTreeSet<&str> = runs.iter().flat_map(|r| r.topic_ids()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// Applies `fuse_topic` to every topic of the union and ranks the result.
fn per_topic<F>(runs: &[&RankedRun], tag: &str, depth: usize, fuse_topic: F) -> RankedRun
where
    F: Fn(&str, &[Option<&[ScoredDoc]>]) -> Vec<(String, f64)> + Send + Sync,
{
    let topics = union_topics(runs);
    let fused = par::map(&topics, |t| {
        let lists: Vec<Option<&[ScoredDoc]>> = runs.iter().map(|r| r.topic(t)).collect();
        rank_scores(fuse_topic(t, &lists), depth)
    });
    let mut out = BTreeMap::new();
    for (t, entries) in topics.into_iter().zip(fused) {
        if !entries.is_empty() {
            out.insert(t, entries);
        }
    }
    RankedRun::from_topics(tag, out).expect("fused lists are ranked by construction")
}

/// Sums per-run contributions for each document. Contributions are added in
/// sorted order so the result does not depend on the order of the runs.
fn sum_contributions<F>(lists: &[Option<&[ScoredDoc]>], contribution: F) -> BTreeMap<String, Vec<f64>>
where
    F: Fn(usize, &ScoredDoc) -> f64,
{
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (run_idx, list) in lists.iter().enumerate() {
        for d in list.iter().flat_map(|l| l.iter()) {
            acc.entry(d.doc_id.clone()).or_default().push(contribution(run_idx, d));
        }
    }
    acc
}

fn order_free_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

/// Convex combination `alpha * S_dense + (1 - alpha) * S_structure`.
///
/// Source scores are normalized per topic per run according to
/// `spec.normalization`; a document missing from one run gets 0 from it.
pub fn linear_fuse(dense: &RankedRun, structure: &RankedRun, alpha: f64, spec: &FusionSpec) -> Result<RankedRun> {
    check_alpha(alpha)?;
    check_depth(spec.depth)?;
    let normalization = spec.normalization;
    Ok(per_topic(&[dense, structure], "fused", spec.depth, |_, lists| {
        linear_scores(
            lists[0].unwrap_or_default(),
            lists[1].unwrap_or_default(),
            alpha,
            normalization,
        )
    }))
}

/// [`linear_fuse`] for a single topic's lists.
pub fn linear_fuse_topic(
    dense: &[ScoredDoc],
    structure: &[ScoredDoc],
    alpha: f64,
    normalization: Normalization,
    depth: usize,
) -> Result<Vec<ScoredDoc>> {
    check_alpha(alpha)?;
    check_depth(depth)?;
    Ok(rank_scores(
        linear_scores(dense, structure, alpha, normalization),
        depth,
    ))
}

fn linear_scores(
    dense: &[ScoredDoc],
    structure: &[ScoredDoc],
    alpha: f64,
    normalization: Normalization,
) -> Vec<(String, f64)> {
    let mut fused: HashMap<&str, f64> = HashMap::new();
    for (weight, list) in [(alpha, dense), (1.0 - alpha, structure)] {
        for (doc, s) in source_scores(list, normalization) {
            *fused.entry(doc).or_insert(0.0) += weight * s;
        }
    }
    fused.into_iter().map(|(d, s)| (d.to_string(), s)).collect()
}

/// Supplies replacement scores for [`rerank`].
pub trait DocScorer: Sync {
    fn score(&self, topic: &str, doc_id: &str) -> Option<f64>;
}

impl<F> DocScorer for F
where
    F: Fn(&str, &str) -> Option<f64> + Sync,
{
    fn score(&self, topic: &str, doc_id: &str) -> Option<f64> {
        self(topic, doc_id)
    }
}

/// Looks scores up in another run.
pub struct RunScorer {
    scores: HashMap<String, HashMap<String, f64>>,
}

impl RunScorer {
    pub fn new(run: &RankedRun) -> Self {
        let scores = run
            .topics()
            .map(|(t, docs)| {
                (
                    t.to_string(),
                    docs.iter().map(|d| (d.doc_id.clone(), d.score)).collect(),
                )
            })
            .collect();
        Self { scores }
    }
}

impl DocScorer for RunScorer {
    fn score(&self, topic: &str, doc_id: &str) -> Option<f64> {
        self.scores.get(topic)?.get(doc_id).copied()
    }
}

/// Re-scores the base run's candidates; documents the scorer does not cover
/// get 0. No candidates are added.
pub fn rerank(base: &RankedRun, scorer: &dyn DocScorer, depth: usize) -> Result<RankedRun> {
    check_depth(depth)?;
    let mut out = per_topic(&[base], "rerank", depth, |topic, lists| {
        lists[0]
            .unwrap_or_default()
            .iter()
            .map(|d| (d.doc_id.clone(), scorer.score(topic, &d.doc_id).unwrap_or(0.0)))
            .collect()
    });
    out.set_run_tag(base.run_tag());
    Ok(out)
}

/// `score(d) = sum over runs containing d of 1 / (k + rank)`.
pub fn rrf_fuse(runs: &[RankedRun], k: u32, depth: usize) -> Result<RankedRun> {
    check_run_count(runs)?;
    check_depth(depth)?;
    if k < 1 {
        return Err(Error::InvalidParameter("rrf k must be >= 1".into()));
    }
    let refs: Vec<&RankedRun> = runs.iter().collect();
    let k = f64::from(k);
    Ok(per_topic(&refs, "rrf", depth, |_, lists| {
        sum_contributions(lists, |_, d| 1.0 / (k + d.rank as f64))
            .into_iter()
            .map(|(doc, xs)| (doc, order_free_sum(xs)))
            .collect()
    }))
}

/// Each run awards `N - rank + 1` points, `N` being the size of the topic's
/// candidate union.
pub fn borda_fuse(runs: &[RankedRun], depth: usize) -> Result<RankedRun> {
    check_run_count(runs)?;
    check_depth(depth)?;
    let refs: Vec<&RankedRun> = runs.iter().collect();
    Ok(per_topic(&refs, "borda", depth, |_, lists| {
        let pool: BTreeSet<&str> = lists
            .iter()
            .flat_map(|l| l.unwrap_or_default().iter().map(|d| d.doc_id.as_str()))
            .collect();
        let n = pool.len() as f64;
        sum_contributions(lists, |_, d| n - d.rank as f64 + 1.0)
            .into_iter()
            .map(|(doc, xs)| (doc, order_free_sum(xs)))
            .collect()
    }))
}

/// Sum of per-run normalized scores.
pub fn combsum_fuse(runs: &[RankedRun], normalization: Normalization, depth: usize) -> Result<RankedRun> {
    check_run_count(runs)?;
    check_depth(depth)?;
    let refs: Vec<&RankedRun> = runs.iter().collect();
    Ok(per_topic(&refs, "combsum", depth, |_, lists| {
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for list in lists {
            for (doc, s) in source_scores(list.unwrap_or_default(), normalization) {
                acc.entry(doc.to_string()).or_default().push(s);
            }
        }
        acc.into_iter().map(|(doc, xs)| (doc, order_free_sum(xs))).collect()
    }))
}

fn inverse_square_rank(runs: &[RankedRun], depth: usize, tag: &str, weight: fn(f64) -> f64) -> Result<RankedRun> {
    check_run_count(runs)?;
    check_depth(depth)?;
    let refs: Vec<&RankedRun> = runs.iter().collect();
    Ok(per_topic(&refs, tag, depth, |_, lists| {
        sum_contributions(lists, |_, d| 1.0 / (d.rank as f64).powi(2))
            .into_iter()
            .map(|(doc, xs)| {
                let n = xs.len() as f64;
                (doc, weight(n) * order_free_sum(xs))
            })
            .collect()
    }))
}

/// `score(d) = n(d) * sum 1/rank^2`, with `n(d)` the number of runs containing `d`.
pub fn isr_fuse(runs: &[RankedRun], depth: usize) -> Result<RankedRun> {
    inverse_square_rank(runs, depth, "isr", |n| n)
}

/// `score(d) = ln(1 + n(d)) * sum 1/rank^2`.
pub fn log_isr_fuse(runs: &[RankedRun], depth: usize) -> Result<RankedRun> {
    inverse_square_rank(runs, depth, "logisr", |n| n.ln_1p())
}

/// Dispatches on `spec.method`. Linear and rerank take exactly two runs: for
/// linear the dense run comes first; for rerank the base run comes first and
/// the second supplies the scores.
pub fn fuse(runs: &[RankedRun], spec: &FusionSpec) -> Result<RankedRun> {
    spec.validate()?;
    match spec.method {
        FusionMethod::Linear | FusionMethod::Rerank if runs.len() != 2 => Err(Error::InvalidParameter(format!(
            "{} fusion takes exactly 2 runs, got {}",
            spec.method,
            runs.len()
        ))),
        FusionMethod::Linear => linear_fuse(&runs[0], &runs[1], spec.alpha, spec),
        FusionMethod::Rerank => rerank(&runs[0], &RunScorer::new(&runs[1]), spec.depth),
        FusionMethod::Rrf => rrf_fuse(runs, spec.rrf_k, spec.depth),
        FusionMethod::Borda => borda_fuse(runs, spec.depth),
        FusionMethod::CombSum => combsum_fuse(runs, spec.normalization, spec.depth),
        FusionMethod::Isr => isr_fuse(runs, spec.depth),
        FusionMethod::LogIsr => log_isr_fuse(runs, spec.depth),
    }
}

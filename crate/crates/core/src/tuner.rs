//! Cross-validated tuning of the linear fusion weight.
//!
//! Topics are sorted and dealt round-robin into folds. For each fold the
//! weight with the best mean objective over the *other* folds' topics is
//! chosen (ties go to the smallest weight) and applied to the held-out
//! topics. The held-out fused lists are assembled into one run.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::fusion::{linear_fuse_topic, FusionSpec};
use crate::metrics::{metric_topic, Metric};
use crate::par;
use crate::run::{JudgmentSet, RankedRun, ScoredDoc};

pub const DEFAULT_FOLDS: usize = 5;

/// `0.1, 0.2, ..., 0.9`.
pub fn default_grid() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("invalid grid {text:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // rounded so that 0.1 + 2 * 0.1 prints as 0.3
            (0..=n)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// Strictly increasing weights in `[0, 1]`.
    pub grid: Vec<f64>,
    pub objective: Metric,
    /// Normalization and depth of the fused lists.
    pub fusion: FusionSpec,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            grid: default_grid(),
            objective: Metric::Ndcg,
            fusion: FusionSpec::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter("need at least 2 folds".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        for a in &self.grid {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::AlphaOutOfRange(*a));
            }
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
        }
        self.fusion.validate()
    }
}

/// Sorts topics and deals them round-robin into `folds` folds.
pub fn assign_folds<S: AsRef<str>>(topics: &[S], folds: usize) -> Result<BTreeMap<String, usize>> {
    let sorted: BTreeSet<&str> = topics.iter().map(AsRef::as_ref).collect();
    if folds == 0 || sorted.len() < folds {
        return Err(Error::TooFewTopics {
            topics: sorted.len(),
            folds,
        });
    }
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t.to_string(), i % folds))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub alpha: f64,
    /// Mean objective over the training topics at the chosen weight.
    pub train_objective: f64,
    /// Objective of each held-out topic at the chosen weight.
    pub heldout: BTreeMap<String, f64>,
}

impl FoldResult {
    pub fn heldout_mean(&self) -> f64 {
        self.heldout.values().sum::<f64>() / self.heldout.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub per_fold: Vec<FoldResult>,
    /// Held-out fused lists of every fold.
    pub fused_run: RankedRun,
    /// Objective averaged over all held-out topics together.
    pub pooled_objective: f64,
    /// Average of the per-fold held-out means.
    pub fold_mean_objective: f64,
}

/// Objective of every topic at every grid weight: `table[alpha_idx][topic_idx]`.
pub fn grid_objectives(
    dense: &RankedRun,
    structure: &RankedRun,
    judgments: &JudgmentSet,
    topics: &[String],
    cv: &CvConfig,
) -> Result<Vec<Vec<f64>>> {
    let cells: Vec<(usize, usize)> = (0..cv.grid.len())
        .flat_map(|a| (0..topics.len()).map(move |t| (a, t)))
        .collect();
    let values = par::try_map(&cells, |&(a, t)| {
        let topic = topics[t].as_str();
        let fused = fuse_one(dense, structure, topic, cv.grid[a], cv)?;
        Ok::<_, Error>(metric_topic(cv.objective, &fused, judgments, topic))
    })?;
    Ok(values.chunks(topics.len()).map(<[f64]>::to_vec).collect())
}

fn fuse_one(
    dense: &RankedRun,
    structure: &RankedRun,
    topic: &str,
    alpha: f64,
    cv: &CvConfig,
) -> Result<Vec<ScoredDoc>> {
    linear_fuse_topic(
        dense.topic(topic).unwrap_or_default(),
        structure.topic(topic).unwrap_or_default(),
        alpha,
        cv.fusion.normalization,
        cv.fusion.depth,
    )
}

/// Judged topics retrieved by at least one of the runs.
pub fn cv_topics(dense: &RankedRun, structure: &RankedRun, judgments: &JudgmentSet) -> Vec<String> {
    let retrieved: BTreeSet<&str> = dense.topic_ids().chain(structure.topic_ids()).collect();
    judgments
        .topic_ids()
        .filter(|t| retrieved.contains(t))
        .map(str::to_string)
        .collect()
}

pub fn tune_and_fuse(
    dense: &RankedRun,
    structure: &RankedRun,
    judgments: &JudgmentSet,
    cv: &CvConfig,
) -> Result<CvResult> {
    cv.validate()?;
    let topics = cv_topics(dense, structure, judgments);
    let folds = assign_folds(&topics, cv.folds)?;
    let table = grid_objectives(dense, structure, judgments, &topics, cv)?;

    let mut per_fold = Vec::with_capacity(cv.folds);
    let mut fused_topics = BTreeMap::new();
    for fold in 0..cv.folds {
        let train: Vec<usize> = (0..topics.len()).filter(|&t| folds[&topics[t]] != fold).collect();
        let mut best: Option<(usize, f64)> = None;
        for (a, row) in table.iter().enumerate() {
            let m = train.iter().map(|&t| row[t]).sum::<f64>() / train.len() as f64;
            // strict improvement keeps the smallest weight on ties
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((a, m));
            }
        }
        let (a, train_objective) = best.expect("grid is non-empty");
        let alpha = cv.grid[a];

        let mut heldout = BTreeMap::new();
        for t in (0..topics.len()).filter(|&t| folds[&topics[t]] == fold) {
            let topic = &topics[t];
            let fused = fuse_one(dense, structure, topic, alpha, cv)?;
            heldout.insert(topic.clone(), metric_topic(cv.objective, &fused, judgments, topic));
            fused_topics.insert(topic.clone(), fused);
        }
        per_fold.push(FoldResult {
            fold,
            alpha,
            train_objective,
            heldout,
        });
    }

    let all: Vec<f64> = per_fold.iter().flat_map(|f| f.heldout.values().copied()).collect();
    let pooled_objective = all.iter().sum::<f64>() / all.len() as f64;
    let fold_mean_objective = per_fold.iter().map(FoldResult::heldout_mean).sum::<f64>() / per_fold.len() as f64;
    let fused_run = RankedRun::from_topics("cv-linear", fused_topics)?;
    Ok(CvResult {
        per_fold,
        fused_run,
        pooled_objective,
        fold_mean_objective,
    })
}

/// `fold alpha objective` lines followed by the two summary lines.
pub fn format_fold_report(result: &CvResult) -> String {
    let mut out = String::new();
    for f in &result.per_fold {
        out.push_str(&format!("{} {} {:.6}\n", f.fold, f.alpha, f.heldout_mean()));
    }
    out.push_str(&format!("pooled - {:.6}\n", result.pooled_objective));
    out.push_str(&format!("fold_mean - {:.6}\n", result.fold_mean_objective));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1:0.9:0.1").unwrap(), default_grid());
        assert_eq!(parse_grid("0.2,0.5").unwrap(), vec![0.2, 0.5]);
        assert!(parse_grid("0.1:0.9:0").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("1:2").is_err());
    }

    #[test]
    fn default_grid_values() {
        assert_eq!(default_grid(), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
    }

    #[test]
    fn folds_one_per_topic() {
        let topics = ["A.3", "A.1", "A.5", "A.2", "A.4"];
        let f = assign_folds(&topics, 5).unwrap();
        assert_eq!(f["A.1"], 0);
        assert_eq!(f["A.5"], 4);
        assert_eq!(f, assign_folds(&topics, 5).unwrap());
    }

    #[test]
    fn folds_71_topics() {
        let topics: Vec<String> = (1..=71).map(|i| format!("A.{i}")).collect();
        let f = assign_folds(&topics, 5).unwrap();
        let mut sizes = [0; 5];
        for v in f.values() {
            sizes[*v] += 1;
        }
        assert_eq!(sizes, [15, 14, 14, 14, 14]);
    }

    #[test]
    fn too_few_topics() {
        assert!(matches!(
            assign_folds(&["a", "b"], 5),
            Err(Error::TooFewTopics { topics: 2, folds: 5 })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cv = CvConfig::default();
        cv.validate().unwrap();
        cv.grid = vec![0.5, 0.4];
        assert!(cv.validate().is_err());
        cv.grid = vec![1.5];
        assert!(cv.validate().is_err());
        cv.grid = vec![0.5];
        cv.folds = 1;
        assert!(cv.validate().is_err());
    }
}

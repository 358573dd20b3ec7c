//! Prime-variant evaluation metrics.
//!
//! NDCG′, MAP′ and P′@k are computed after removing unjudged documents from
//! each ranked list. BPref only ever looks at judged documents, so it is
//! computed over the same judged-only subsequence. Graded judgments feed NDCG′
//! directly (linear gain, `1/log2(rank + 1)` discount); the binary metrics use
//! the judgment set's threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par;
use crate::run::{JudgmentSet, RankedRun, ScoredDoc};

/// Default cutoff for precision.
pub const DEFAULT_PRECISION_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ndcg,
    Map,
    PrecisionAt(usize),
    Bpref,
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Ndcg => "NDCG'".into(),
            Metric::Map => "MAP'".into(),
            Metric::PrecisionAt(k) => format!("P'@{k}"),
            Metric::Bpref => "BPref".into(),
        }
    }

    /// The four metrics reported per run.
    pub fn standard() -> Vec<Metric> {
        vec![
            Metric::Ndcg,
            Metric::Map,
            Metric::PrecisionAt(DEFAULT_PRECISION_CUTOFF),
            Metric::Bpref,
        ]
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['\'', '_'], "");
        let metric = match key.as_str() {
            "ndcg" | "ndcgprime" => Metric::Ndcg,
            "map" | "mapprime" => Metric::Map,
            "bpref" => Metric::Bpref,
            _ => {
                let k = key
                    .strip_prefix("p@")
                    .or_else(|| key.strip_prefix("pprime@"))
                    .or_else(|| key.strip_prefix('p'))
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::UnknownMetric(s.to_string()))?;
                Metric::PrecisionAt(k)
            }
        };
        Ok(metric)
    }
}

/// Named relevance-threshold presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// High and Medium are relevant: grade >= 2.
    Arqmath,
    /// Fully relevant: grade >= 2.
    NtcirFull,
    /// Partially relevant: grade >= 1.
    NtcirPartial,
    Custom(u32),
}

impl Profile {
    pub fn threshold(self) -> u32 {
        match self {
            Profile::Arqmath | Profile::NtcirFull => 2,
            Profile::NtcirPartial => 1,
            Profile::Custom(t) => t,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arqmath" => Ok(Profile::Arqmath),
            "ntcir-full" | "ntcir_full" => Ok(Profile::NtcirFull),
            "ntcir-partial" | "ntcir_partial" => Ok(Profile::NtcirPartial),
            other => match other.strip_prefix("custom:").unwrap_or(other).parse::<u32>() {
                Ok(t) if t >= 1 => Ok(Profile::Custom(t)),
                _ => Err(Error::InvalidParameter(format!("unknown profile {s:?}"))),
            },
        }
    }
}

/// Keeps only judged documents, in order, re-ranked `1..m`.
pub fn prime_filter(entry: &[ScoredDoc], judgments: &JudgmentSet, topic: &str) -> Vec<ScoredDoc> {
    let Some(grades) = judgments.topic(topic) else {
        return Vec::new();
    };
    entry
        .iter()
        .filter(|d| grades.contains_key(&d.doc_id))
        .enumerate()
        .map(|(i, d)| ScoredDoc {
            rank: i + 1,
            ..d.clone()
        })
        .collect()
}

/// Grades of the judged documents of `entry`, in rank order.
fn judged_grades(entry: &[ScoredDoc], judgments: &JudgmentSet, topic: &str) -> Vec<u32> {
    let Some(grades) = judgments.topic(topic) else {
        return Vec::new();
    };
    entry.iter().filter_map(|d| grades.get(&d.doc_id).copied()).collect()
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn ndcg_prime_topic(entry: &[ScoredDoc], judgments: &JudgmentSet, topic: &str) -> f64 {
    let mut ideal: Vec<u32> = judgments
        .topic(topic)
        .map(|g| g.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let dcg = |grades: &[u32]| -> f64 {
        grades
            .iter()
            .enumerate()
            .map(|(i, &g)| f64::from(g) / discount(i + 1))
            .sum()
    };
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(&judged_grades(entry, judgments, topic)) / idcg
}

pub fn map_prime_topic(entry: &[ScoredDoc], judgments: &JudgmentSet, topic: &str) -> f64 {
    let total_relevant = judgments.num_relevant(topic);
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, g) in judged_grades(entry, judgments, topic).into_iter().enumerate() {
        if judgments.is_relevant_grade(g) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

/// Relevant documents in the top `k` of the filtered list, divided by `k`.
pub fn p_at_k_prime_topic(entry: &[ScoredDoc], judgments: &JudgmentSet, topic: &str, k: usize) -> f64 {
    let hits = judged_grades(entry, judgments, topic)
        .into_iter()
        .take(k)
        .filter(|&g| judgments.is_relevant_grade(g))
        .count();
    hits as f64 / k as f64
}

/// `(1/R) * sum over retrieved relevant r of (1 - min(n_r, R) / min(R, N))`,
/// `n_r` counting judged non-relevant documents ranked above `r`.
pub fn bpref_topic(entry: &[ScoredDoc], judgments: &JudgmentSet, topic: &str) -> f64 {
    let Some(grades) = judgments.topic(topic) else {
        return 0.0;
    };
    let r = grades.values().filter(|&&g| judgments.is_relevant_grade(g)).count();
    let n = grades.len() - r;
    if r == 0 || n == 0 {
        return 0.0;
    }
    let denom = r.min(n) as f64;
    let mut nonrel_above = 0usize;
    let mut sum = 0.0;
    for g in judged_grades(entry, judgments, topic) {
        if judgments.is_relevant_grade(g) {
            sum += 1.0 - nonrel_above.min(r) as f64 / denom;
        } else {
            nonrel_above += 1;
        }
    }
    sum / r as f64
}

pub fn metric_topic(metric: Metric, entry: &[ScoredDoc], judgments: &JudgmentSet, topic: &str) -> f64 {
    match metric {
        Metric::Ndcg => ndcg_prime_topic(entry, judgments, topic),
        Metric::Map => map_prime_topic(entry, judgments, topic),
        Metric::PrecisionAt(k) => p_at_k_prime_topic(entry, judgments, topic, k),
        Metric::Bpref => bpref_topic(entry, judgments, topic),
    }
}

/// Per-mille of the first `depth` retrieved documents that are judged;
/// `None` for an empty list.
pub fn judged_per_mille_topic(
    entry: &[ScoredDoc],
    judgments: &JudgmentSet,
    topic: &str,
    depth: Option<usize>,
) -> Option<f64> {
    let cut = &entry[..depth.unwrap_or(entry.len()).min(entry.len())];
    if cut.is_empty() {
        return None;
    }
    let judged = cut.iter().filter(|d| judgments.is_judged(topic, &d.doc_id)).count();
    Some(1000.0 * judged as f64 / cut.len() as f64)
}

/// Per-topic values and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicValues {
    pub per_topic: BTreeMap<String, f64>,
    pub mean: f64,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Topics that are scored: every judged topic, plus run topics without
/// judgments when `include_unjudged` is set.
fn evaluated_topics(run: &RankedRun, judgments: &JudgmentSet, include_unjudged: bool) -> Vec<String> {
    let mut set: BTreeSet<&str> = judgments.topic_ids().collect();
    if include_unjudged {
        set.extend(run.topic_ids());
    }
    set.into_iter().map(str::to_string).collect()
}

fn metric_over_run(metric: Metric, run: &RankedRun, judgments: &JudgmentSet) -> TopicValues {
    let topics = evaluated_topics(run, judgments, true);
    let values = par::map(&topics, |t| {
        metric_topic(metric, run.topic(t).unwrap_or_default(), judgments, t)
    });
    let per_topic: BTreeMap<String, f64> = topics.into_iter().zip(values).collect();
    let mean = mean(per_topic.values().copied());
    TopicValues { per_topic, mean }
}

pub fn ndcg_prime(run: &RankedRun, judgments: &JudgmentSet) -> TopicValues {
    metric_over_run(Metric::Ndcg, run, judgments)
}

pub fn map_prime(run: &RankedRun, judgments: &JudgmentSet) -> TopicValues {
    metric_over_run(Metric::Map, run, judgments)
}

pub fn p_at_k_prime(run: &RankedRun, judgments: &JudgmentSet, k: usize) -> TopicValues {
    metric_over_run(Metric::PrecisionAt(k.max(1)), run, judgments)
}

pub fn bpref(run: &RankedRun, judgments: &JudgmentSet) -> TopicValues {
    metric_over_run(Metric::Bpref, run, judgments)
}

/// Judged per-mille averaged over topics with at least one retrieved document.
pub fn judged_per_mille(run: &RankedRun, judgments: &JudgmentSet, depth: Option<usize>) -> f64 {
    mean(
        run.topics()
            .filter_map(|(t, entry)| judged_per_mille_topic(entry, judgments, t, depth)),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Cutoff for the judged rate; `None` uses the whole list.
    pub judged_depth: Option<usize>,
    /// Score run topics that have no judgments as 0 instead of skipping them.
    pub include_unjudged_topics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: Metric::standard(),
            judged_depth: None,
            include_unjudged_topics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Metric names in report order.
    pub metric_names: Vec<String>,
    pub per_topic: BTreeMap<String, BTreeMap<String, f64>>,
    pub means: BTreeMap<String, f64>,
    pub judged_per_topic: BTreeMap<String, f64>,
    pub judged_per_mille: f64,
    /// Run topics without any judgment.
    pub unjudged_topics: Vec<String>,
}

impl MetricReport {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.means.get(&metric.name()).copied()
    }

    pub fn value(&self, topic: &str, metric: Metric) -> Option<f64> {
        self.per_topic.get(topic)?.get(&metric.name()).copied()
    }
}

pub fn evaluate(run: &RankedRun, judgments: &JudgmentSet, config: &EvalConfig) -> MetricReport {
    let topics = evaluated_topics(run, judgments, config.include_unjudged_topics);
    let rows = par::map(&topics, |t| {
        let entry = run.topic(t).unwrap_or_default();
        let values: BTreeMap<String, f64> = config
            .metrics
            .iter()
            .map(|&m| (m.name(), metric_topic(m, entry, judgments, t)))
            .collect();
        let judged = judged_per_mille_topic(entry, judgments, t, config.judged_depth);
        (values, judged)
    });

    let metric_names: Vec<String> = config.metrics.iter().map(Metric::name).collect();
    let mut per_topic = BTreeMap::new();
    let mut judged_per_topic = BTreeMap::new();
    for (t, (values, judged)) in topics.iter().zip(rows) {
        if let Some(j) = judged {
            judged_per_topic.insert(t.clone(), j);
        }
        per_topic.insert(t.clone(), values);
    }
    let means = metric_names
        .iter()
        .map(|name| (name.clone(), mean(per_topic.values().map(|v| v[name]))))
        .collect();
    let unjudged_topics = run
        .topic_ids()
        .filter(|t| judgments.topic(t).is_none())
        .map(str::to_string)
        .collect();
    MetricReport {
        metric_names,
        per_topic,
        means,
        judged_per_mille: mean(judged_per_topic.values().copied()),
        judged_per_topic,
        unjudged_topics,
    }
}

/// Topic labels such as category or difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicGroups {
    labels: BTreeMap<String, String>,
    default_label: String,
}

pub const DEFAULT_GROUP: &str = "default";

impl Default for TopicGroups {
    fn default() -> Self {
        Self {
            labels: BTreeMap::new(),
            default_label: DEFAULT_GROUP.to_string(),
        }
    }
}

impl TopicGroups {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, topic: &str, label: &str) -> Result<()> {
        if label.trim().is_empty() {
            return Err(Error::InvalidParameter(format!("empty group label for {topic}")));
        }
        self.labels.insert(topic.to_string(), label.trim().to_string());
        Ok(())
    }

    pub fn label(&self, topic: &str) -> &str {
        self.labels
            .get(topic)
            .map_or(self.default_label.as_str(), String::as_str)
    }

    /// Parses `topic_id group` lines; the label is the rest of the line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut groups = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((topic, label)) = line.split_once(char::is_whitespace) else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "expected \"topic_id group\"".into(),
                });
            };
            groups.insert(topic, label)?;
        }
        Ok(groups)
    }
}

/// Mean of each metric over the topics of every group.
pub fn aggregate_by_group(report: &MetricReport, groups: &TopicGroups) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut members: BTreeMap<&str, Vec<&BTreeMap<String, f64>>> = BTreeMap::new();
    for (topic, values) in &report.per_topic {
        members.entry(groups.label(topic)).or_default().push(values);
    }
    members
        .into_iter()
        .map(|(label, rows)| {
            let means = report
                .metric_names
                .iter()
                .map(|name| (name.clone(), mean(rows.iter().map(|r| r[name]))))
                .collect();
            (label.to_string(), means)
        })
        .collect()
}

/// Aligned text table with one row per topic and a final `mean` row.
pub fn format_table(report: &MetricReport) -> String {
    let width = report
        .per_topic
        .keys()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max("topic".len());
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "topic");
    for name in &report.metric_names {
        let _ = write!(out, "  {name:>8}");
    }
    let _ = writeln!(out, "  {:>8}", "Judged‰");
    for (topic, values) in &report.per_topic {
        let _ = write!(out, "{topic:<width$}");
        for name in &report.metric_names {
            let _ = write!(out, "  {:>8.4}", values[name]);
        }
        match report.judged_per_topic.get(topic) {
            Some(j) => {
                let _ = writeln!(out, "  {j:>8.1}");
            }
            None => {
                let _ = writeln!(out, "  {:>8}", "-");
            }
        }
    }
    let _ = write!(out, "{:<width$}", "mean");
    for name in &report.metric_names {
        let _ = write!(out, "  {:>8.4}", report.means[name]);
    }
    let _ = writeln!(out, "  {:>8.1}", report.judged_per_mille);
    out
}

/// `metric topic value` lines, with `mean` as the pseudo-topic for averages.
pub fn format_listing(report: &MetricReport) -> String {
    let mut out = String::new();
    for name in &report.metric_names {
        for (topic, values) in &report.per_topic {
            let _ = writeln!(out, "{name} {topic} {:.6}", values[name]);
        }
        let _ = writeln!(out, "{name} mean {:.6}", report.means[name]);
    }
    for (topic, j) in &report.judged_per_topic {
        let _ = writeln!(out, "Judged‰ {topic} {j:.6}");
    }
    let _ = writeln!(out, "Judged‰ mean {:.6}", report.judged_per_mille);
    out
}

pub fn format_groups(names: &[String], groups: &BTreeMap<String, BTreeMap<String, f64>>) -> String {
    let width = groups.keys().map(String::len).max().unwrap_or(0).max("group".len());
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "group");
    for name in names {
        let _ = write!(out, "  {name:>8}");
    }
    out.push('\n');
    for (label, values) in groups {
        let _ = write!(out, "{label:<width$}");
        for name in names {
            let _ = write!(out, "  {:>8.4}", values[name]);
        }
        out.push('\n');
    }
    out
}

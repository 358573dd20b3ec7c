//! Ranked runs and relevance judgments in the TREC interchange formats.
//!
//! A run file has six whitespace-separated columns per line:
//!
//! ```text
//! topic  Q0  doc_id  rank  score  run_tag
//! ```
//!
//! and a qrels file has four:
//!
//! ```text
//! topic  0  doc_id  grade
//! ```
//!
//! Topic and document ids are opaque strings. Parsed runs are validated:
//! ranks within a topic must be `1..=n`, scores must not increase with rank
//! (ties are fine), document ids are unique per topic and each topic holds at
//! most [`DEFAULT_MAX_DEPTH`] entries unless another limit is configured.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Protocol depth of an evaluated run: 1000 documents per topic.
pub const DEFAULT_MAX_DEPTH: usize = 1000;

/// One retrieved document of a topic's ranked list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    /// 1-based.
    pub rank: usize,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, rank: usize, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            rank,
            score,
        }
    }
}

/// Per-topic ranked lists produced by one system.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedRun {
    run_tag: String,
    topics: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RankedRun {
    /// An empty run.
    pub fn new(run_tag: impl Into<String>) -> Self {
        Self {
            run_tag: run_tag.into(),
            topics: BTreeMap::new(),
        }
    }

    /// Builds a run from already-ranked topic lists, validating every invariant
    /// except the depth limit.
    pub fn from_topics(run_tag: impl Into<String>, topics: BTreeMap<String, Vec<ScoredDoc>>) -> Result<Self> {
        let run = Self {
            run_tag: run_tag.into(),
            topics,
        };
        run.validate(None)?;
        Ok(run)
    }

    /// Builds a run from unordered `(doc_id, score)` pairs per topic.
    ///
    /// Each topic is sorted by descending score with ties broken by ascending
    /// doc id, then cut to `depth` entries.
    pub fn from_scores<I, T>(run_tag: impl Into<String>, topics: I, depth: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (T, Vec<(String, f64)>)>,
        T: Into<String>,
    {
        let mut out = Self::new(run_tag);
        for (topic, scores) in topics {
            let topic = topic.into();
            let entries = rank_scores(scores, depth);
            check_topic(&topic, &entries, None)?;
            out.topics.insert(topic, entries);
        }
        Ok(out)
    }

    pub fn run_tag(&self) -> &str {
        &self.run_tag
    }

    pub fn set_run_tag(&mut self, tag: impl Into<String>) {
        self.run_tag = tag.into();
    }

    pub fn topic(&self, topic: &str) -> Option<&[ScoredDoc]> {
        self.topics.get(topic).map(Vec::as_slice)
    }

    /// Topics in lexicographic order.
    pub fn topics(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.topics.iter().map(|(t, d)| (t.as_str(), d.as_slice()))
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Total number of entries over all topics.
    pub fn num_entries(&self) -> usize {
        self.topics.values().map(Vec::len).sum()
    }

    pub fn into_topics(self) -> BTreeMap<String, Vec<ScoredDoc>> {
        self.topics
    }

    /// Keeps only the listed topics.
    pub fn restrict_to<'a>(&self, topics: impl IntoIterator<Item = &'a str>) -> Self {
        let mut out = Self::new(self.run_tag.clone());
        for t in topics {
            if let Some(list) = self.topics.get(t) {
                out.topics.insert(t.to_string(), list.clone());
            }
        }
        out
    }

    /// Checks every run invariant. `max_depth = None` disables the depth check.
    pub fn validate(&self, max_depth: Option<usize>) -> Result<()> {
        for (topic, entries) in &self.topics {
            check_topic(topic, entries, max_depth)?;
        }
        Ok(())
    }
}

fn check_topic(topic: &str, entries: &[ScoredDoc], max_depth: Option<usize>) -> Result<()> {
    if let Some(max) = max_depth {
        if entries.len() > max {
            return Err(Error::TooDeep {
                topic: topic.to_string(),
                len: entries.len(),
                max,
            });
        }
    }
    let mut seen = HashSet::with_capacity(entries.len());
    let mut prev: Option<f64> = None;
    for (i, doc) in entries.iter().enumerate() {
        if !doc.score.is_finite() {
            return Err(Error::NonFiniteScore {
                topic: topic.to_string(),
                doc_id: doc.doc_id.clone(),
            });
        }
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(Error::DuplicateDoc {
                topic: topic.to_string(),
                doc_id: doc.doc_id.clone(),
            });
        }
        if doc.rank != i + 1 {
            return Err(Error::RankGap {
                topic: topic.to_string(),
                expected: i + 1,
                found: doc.rank,
            });
        }
        if let Some(p) = prev {
            if doc.score > p {
                return Err(Error::ScoreIncrease {
                    topic: topic.to_string(),
                    rank: doc.rank,
                });
            }
        }
        prev = Some(doc.score);
    }
    Ok(())
}

/// Sorts `(doc_id, score)` pairs by descending score, ties by ascending doc id,
/// keeps the first `depth` and assigns ranks `1..`.
pub fn rank_scores(mut scores: Vec<(String, f64)>, depth: usize) -> Vec<ScoredDoc> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scores.truncate(depth);
    scores
        .into_iter()
        .enumerate()
        .map(|(i, (doc_id, score))| ScoredDoc {
            doc_id,
            rank: i + 1,
            score,
        })
        .collect()
}

/// Options for [`parse_run_with`].
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Replaces the tag read from the file.
    pub run_tag: Option<String>,
    /// Per-topic depth limit; `None` accepts any depth.
    pub max_depth: Option<usize>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            run_tag: None,
            max_depth: Some(DEFAULT_MAX_DEPTH),
        }
    }
}

/// Parses a six-column run file with the default 1000-entry depth limit.
pub fn parse_run(input: &str, run_tag_override: Option<&str>) -> Result<RankedRun> {
    parse_run_with(
        input,
        &ParseOptions {
            run_tag: run_tag_override.map(str::to_string),
            ..ParseOptions::default()
        },
    )
}

pub fn parse_run_with(input: &str, opts: &ParseOptions) -> Result<RankedRun> {
    let mut topics: BTreeMap<String, Vec<ScoredDoc>> = BTreeMap::new();
    let mut file_tag: Option<String> = None;

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let rank: usize = cols[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid rank {:?}", cols[3]),
        })?;
        if rank == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "rank must be at least 1".into(),
            });
        }
        let score: f64 = cols[4].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid score {:?}", cols[4]),
        })?;
        if !score.is_finite() {
            return Err(Error::NonFiniteScore {
                topic: cols[0].to_string(),
                doc_id: cols[2].to_string(),
            });
        }
        if file_tag.is_none() {
            file_tag = Some(cols[5].to_string());
        }
        topics
            .entry(cols[0].to_string())
            .or_default()
            .push(ScoredDoc::new(cols[2], rank, score));
    }

    // stable: equal ranks keep file order and then fail the rank check
    for entries in topics.values_mut() {
        entries.sort_by_key(|d| d.rank);
    }

    let run_tag = opts.run_tag.clone().or(file_tag).unwrap_or_default();
    let run = RankedRun { run_tag, topics };
    run.validate(opts.max_depth)?;
    Ok(run)
}

/// How scores are rendered by [`write_run_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreFormat {
    /// Shortest representation that parses back to the same `f64`.
    #[default]
    RoundTrip,
    /// Fixed number of significant digits. Rounding is monotone, so a valid
    /// run stays valid, but adjacent scores may collapse into ties.
    Significant(usize),
}

pub fn write_run(run: &RankedRun) -> String {
    write_run_with(run, ScoreFormat::RoundTrip)
}

pub fn write_run_with(run: &RankedRun, format: ScoreFormat) -> String {
    let tag = if run.run_tag.is_empty() {
        "-"
    } else {
        run.run_tag.as_str()
    };
    let mut out = String::new();
    for (topic, entries) in &run.topics {
        for d in entries {
            let _ = write!(out, "{topic} Q0 {} {} ", d.doc_id, d.rank);
            match format {
                ScoreFormat::RoundTrip => {
                    let _ = write!(out, "{}", d.score);
                }
                ScoreFormat::Significant(digits) => {
                    let digits = digits.max(1);
                    let _ = write!(out, "{:.*e}", digits - 1, d.score);
                }
            }
            let _ = writeln!(out, " {tag}");
        }
    }
    out
}

/// Cuts every topic to its first `depth` entries. Ranks are unchanged.
pub fn truncate_run(run: &RankedRun, depth: usize) -> RankedRun {
    let topics = run
        .topics
        .iter()
        .map(|(t, entries)| (t.clone(), entries.iter().take(depth).cloned().collect()))
        .collect();
    RankedRun {
        run_tag: run.run_tag.clone(),
        topics,
    }
}

/// Graded relevance judgments with a binarization threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentSet {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
    binary_threshold: u32,
}

/// Collapses High (3) and Medium (2) into relevant.
pub const ARQMATH_THRESHOLD: u32 = 2;

impl Default for JudgmentSet {
    fn default() -> Self {
        Self {
            grades: BTreeMap::new(),
            binary_threshold: ARQMATH_THRESHOLD,
        }
    }
}

impl JudgmentSet {
    pub fn new(binary_threshold: u32) -> Result<Self> {
        if binary_threshold < 1 {
            return Err(Error::InvalidParameter("binary threshold must be at least 1".into()));
        }
        Ok(Self {
            grades: BTreeMap::new(),
            binary_threshold,
        })
    }

    pub fn binary_threshold(&self) -> u32 {
        self.binary_threshold
    }

    pub fn with_threshold(mut self, threshold: u32) -> Result<Self> {
        if threshold < 1 {
            return Err(Error::InvalidParameter("binary threshold must be at least 1".into()));
        }
        self.binary_threshold = threshold;
        Ok(self)
    }

    /// Adds a judgment; an existing `(topic, doc)` pair is rejected.
    pub fn insert(&mut self, topic: &str, doc_id: &str, grade: u32) -> Result<()> {
        match self
            .grades
            .entry(topic.to_string())
            .or_default()
            .entry(doc_id.to_string())
        {
            Entry::Occupied(_) => Err(Error::DuplicateJudgment {
                line: 0,
                topic: topic.to_string(),
                doc_id: doc_id.to_string(),
            }),
            Entry::Vacant(v) => {
                v.insert(grade);
                Ok(())
            }
        }
    }

    /// Adds or replaces a judgment.
    pub fn set_grade(&mut self, topic: &str, doc_id: &str, grade: u32) {
        self.grades
            .entry(topic.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn grade(&self, topic: &str, doc_id: &str) -> Option<u32> {
        self.grades.get(topic)?.get(doc_id).copied()
    }

    pub fn is_judged(&self, topic: &str, doc_id: &str) -> bool {
        self.grade(topic, doc_id).is_some()
    }

    pub fn is_relevant_grade(&self, grade: u32) -> bool {
        grade >= self.binary_threshold
    }

    pub fn topic(&self, topic: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(topic)
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn num_topics(&self) -> usize {
        self.grades.len()
    }

    pub fn num_judgments(&self) -> usize {
        self.grades.values().map(BTreeMap::len).sum()
    }

    /// Number of judged documents at or above the binary threshold.
    pub fn num_relevant(&self, topic: &str) -> usize {
        self.topic(topic)
            .map(|g| g.values().filter(|&&v| self.is_relevant_grade(v)).count())
            .unwrap_or(0)
    }
}

/// Parses a four-column qrels file. The binary threshold defaults to
/// [`ARQMATH_THRESHOLD`].
pub fn parse_qrels(input: &str) -> Result<JudgmentSet> {
    let mut set = JudgmentSet::default();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let grade: i64 = cols[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid grade {:?}", cols[3]),
        })?;
        if grade < 0 {
            return Err(Error::NegativeGrade { line: line_no, grade });
        }
        let grade = u32::try_from(grade).map_err(|_| Error::Parse {
            line: line_no,
            message: format!("grade {grade} out of range"),
        })?;
        set.insert(cols[0], cols[2], grade).map_err(|e| match e {
            Error::DuplicateJudgment { topic, doc_id, .. } => Error::DuplicateJudgment {
                line: line_no,
                topic,
                doc_id,
            },
            other => other,
        })?;
    }
    Ok(set)
}

pub fn write_qrels(judgments: &JudgmentSet) -> String {
    let mut out = String::new();
    for (topic, docs) in &judgments.grades {
        for (doc, grade) in docs {
            let _ = writeln!(out, "{topic} 0 {doc} {grade}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_line_run() {
        let run = parse_run("A.1 Q0 d7 1 3.5 tagX\nA.1 Q0 d2 2 1.0 tagX", None).unwrap();
        assert_eq!(run.run_tag(), "tagX");
        assert_eq!(
            run.topic("A.1").unwrap(),
            &[ScoredDoc::new("d7", 1, 3.5), ScoredDoc::new("d2", 2, 1.0)]
        );
    }

    #[test]
    fn empty_input_gives_empty_run() {
        let run = parse_run("", None).unwrap();
        assert!(run.is_empty());
        assert_eq!(write_run(&run), "");
    }

    #[test]
    fn tag_override() {
        let run = parse_run("A.1 Q0 d7 1 3.5 tagX", Some("mine")).unwrap();
        assert_eq!(run.run_tag(), "mine");
    }

    #[test]
    fn rejects_topic_deeper_than_1000() {
        let mut input = String::new();
        for i in 0..1001 {
            input.push_str(&format!("A.1 Q0 d{i} {} {} t\n", i + 1, 2000 - i));
        }
        assert!(matches!(
            parse_run(&input, None),
            Err(Error::TooDeep {
                len: 1001,
                max: 1000,
                ..
            })
        ));
        let opts = ParseOptions {
            max_depth: None,
            ..Default::default()
        };
        assert_eq!(parse_run_with(&input, &opts).unwrap().num_entries(), 1001);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse_run("A.1 Q0 d7 1 3.5 t\nA.1 Q0 d2 2 1.0", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_run("A.1 Q0 d7 one 3.5 t", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_run("A.1 Q0 d7 1 high t", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(parse_run("A.1 Q0 d7 1 NaN t", None).is_err());
    }

    #[test]
    fn validation_errors() {
        let dup = "A.1 Q0 d1 1 2 t\nA.1 Q0 d1 2 1 t";
        assert!(matches!(parse_run(dup, None), Err(Error::DuplicateDoc { .. })));
        let gap = "A.1 Q0 d1 1 2 t\nA.1 Q0 d2 3 1 t";
        match parse_run(gap, None) {
            Err(Error::RankGap { topic, .. }) => assert_eq!(topic, "A.1"),
            other => panic!("{other:?}"),
        }
        let inc = "A.1 Q0 d1 1 1 t\nA.1 Q0 d2 2 3 t";
        assert!(matches!(parse_run(inc, None), Err(Error::ScoreIncrease { .. })));
        let ties = "A.1 Q0 d1 1 1 t\nA.1 Q0 d2 2 1 t";
        assert!(parse_run(ties, None).is_ok());
    }

    #[test]
    fn lines_are_grouped_by_topic_and_sorted_by_rank() {
        let input = "B Q0 x 2 1 t\nA Q0 a 1 9 t\nB Q0 y 1 5 t";
        let run = parse_run(input, None).unwrap();
        assert_eq!(run.topic_ids().collect::<Vec<_>>(), ["A", "B"]);
        let b = run.topic("B").unwrap();
        assert_eq!(b[0].doc_id, "y");
        assert_eq!(b[1].doc_id, "x");
    }

    #[test]
    fn round_trip_two_line_run() {
        let run = parse_run("A.1 Q0 d7 1 3.5 tagX\nA.1 Q0 d2 2 1.0 tagX", None).unwrap();
        assert_eq!(parse_run(&write_run(&run), None).unwrap(), run);
    }

    #[test]
    fn significant_digits_format() {
        let run = parse_run("A Q0 d 1 0.333333333 t", None).unwrap();
        let text = write_run_with(&run, ScoreFormat::Significant(6));
        assert_eq!(text, "A Q0 d 1 3.33333e-1 t\n");
        assert!(parse_run(&text, None).is_ok());
    }

    #[test]
    fn truncation() {
        let mut input = String::new();
        for i in 0..1500 {
            input.push_str(&format!("A Q0 d{i} {} {} t\n", i + 1, 2000 - i));
        }
        let opts = ParseOptions {
            max_depth: None,
            ..Default::default()
        };
        let run = parse_run_with(&input, &opts).unwrap();
        let cut = truncate_run(&run, 1000);
        assert_eq!(cut.topic("A").unwrap().len(), 1000);
        assert_eq!(truncate_run(&run, 5000), run);
        let top = truncate_run(&run, 1);
        assert_eq!(top.topic("A").unwrap(), &[ScoredDoc::new("d0", 1, 2000.0)]);
    }

    #[test]
    fn rank_scores_breaks_ties_by_doc_id() {
        let ranked = rank_scores(vec![("d2".into(), 1.0), ("d1".into(), 1.0), ("d3".into(), 4.0)], 10);
        let ids: Vec<_> = ranked.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["d3", "d1", "d2"]);
        assert_eq!(ranked[2].rank, 3);
    }

    #[test]
    fn parses_qrels() {
        let q = parse_qrels("A.1 0 d7 3\nA.1 0 d2 0").unwrap();
        assert_eq!(q.grade("A.1", "d7"), Some(3));
        assert_eq!(q.grade("A.1", "d2"), Some(0));
        assert_eq!(q.num_judgments(), 2);
        assert_eq!(q.binary_threshold(), ARQMATH_THRESHOLD);
    }

    #[test]
    fn qrels_accepts_arqmath_grades() {
        let q = parse_qrels("T 0 a 0\nT 0 b 1\nT 0 c 2\nT 0 d 3").unwrap();
        assert_eq!(q.num_relevant("T"), 2);
    }

    #[test]
    fn qrels_errors() {
        assert!(matches!(
            parse_qrels("A.1 0 d7 -1"),
            Err(Error::NegativeGrade { line: 1, grade: -1 })
        ));
        assert!(matches!(
            parse_qrels("A.1 0 d7 1\nA.1 0 d7 2"),
            Err(Error::DuplicateJudgment { line: 2, .. })
        ));
        assert!(matches!(parse_qrels("A.1 0 d7"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_qrels("A.1 0 d7 x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn qrels_round_trip() {
        let q = parse_qrels("A.1 0 d7 3\nA.1 0 d2 0\nB 0 x 1").unwrap();
        assert_eq!(parse_qrels(&write_qrels(&q)).unwrap(), q);
    }

    #[test]
    fn threshold_must_be_positive() {
        assert!(JudgmentSet::new(0).is_err());
        assert!(JudgmentSet::default().with_threshold(0).is_err());
    }
}

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("topic {topic}: duplicate document {doc_id}")]
    DuplicateDoc { topic: String, doc_id: String },

    #[error("topic {topic}: expected rank {expected}, found {found}")]
    RankGap {
        topic: String,
        expected: usize,
        found: usize,
    },

    #[error("topic {topic}: score increases at rank {rank}")]
    ScoreIncrease { topic: String, rank: usize },

    #[error("topic {topic}: {len} entries exceed the maximum depth of {max}")]
    TooDeep { topic: String, len: usize, max: usize },

    #[error("topic {topic}: non-finite score for {doc_id}")]
    NonFiniteScore { topic: String, doc_id: String },

    #[error("line {line}: negative grade {grade}")]
    NegativeGrade { line: usize, grade: i64 },

    #[error("line {line}: duplicate judgment for ({topic}, {doc_id})")]
    DuplicateJudgment { line: usize, topic: String, doc_id: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("empty token sequence")]
    EmptyTokens,

    #[error("non-finite embedding component")]
    NonFiniteComponent,

    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("unknown metric: {0}")]
    UnknownMetric(String),

    #[error("{topics} topics cannot fill {folds} folds")]
    TooFewTopics { topics: usize, folds: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Dense and structure-search rank fusion for math retrieval, with
//! prime-variant evaluation.
//!
//! - [`run`]: TREC run and qrels files
//! - [`tokenizer`]: text + LaTeX pre-tokenization
//! - [`dense`]: DPR / ColBERT scoring and a trainable embedding encoder
//! - [`fusion`]: linear interpolation, RRF, Borda, CombSUM, ISR, reranking
//! - [`metrics`]: NDCG′, MAP′, P′@10, BPref and judged rate
//! - [`tuner`]: cross-validated choice of the interpolation weight
//!
//! Per-topic and per-passage work runs on rayon when the `parallel` feature
//! (on by default) is enabled.

pub mod cli;
pub mod dense;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod par;
pub mod run;
pub mod tokenizer;
pub mod tuner;

pub use error::{Error, Result};
pub use run::{JudgmentSet, RankedRun, ScoredDoc};

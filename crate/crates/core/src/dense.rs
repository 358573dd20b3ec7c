//! Bi-encoder scoring and a small trainable encoder.
//!
//! Two scoring modes are supported:
//!
//! - **DPR**: query and passage are mean-pooled into one vector each and
//!   scored by dot product.
//! - **ColBERT**: every token keeps its own vector; the score sums, over query
//!   tokens, the best similarity to any passage token (MaxSim). Token
//!   similarity is either the dot product or the negative Euclidean distance
//!   of unit-normalized vectors.
//!
//! The encoder is an embedding lookup table. Its in-batch contrastive loss
//! treats, for query `i`, every other passage in the batch (the other
//! triples' positives and negatives plus its own hard negative) as a
//! negative, i.e. `2B - 1` negatives for a batch of `B` triples. Gradients
//! are analytic and checked against finite differences in the tests.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::run::{rank_scores, ScoredDoc};

/// Embedding dimension used when none is given.
pub const DEFAULT_DIM: usize = 128;

/// Shared vector for tokens missing from the table.
pub const UNK_TOKEN: &str = "[UNK]";
/// Prepended to queries in ColBERT mode.
pub const QUERY_MARKER: &str = "[Q]";
/// Prepended to passages in ColBERT mode.
pub const DOC_MARKER: &str = "[D]";

const RESERVED: [&str; 3] = [UNK_TOKEN, QUERY_MARKER, DOC_MARKER];

/// A dense vector with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("vector must have dim >= 1".into()));
        }
        if components.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteComponent);
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One vector per token, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    dim: usize,
    data: Vec<f64>,
}

impl TokenEmbeddings {
    pub fn new(rows: Vec<Vector>) -> Result<Self> {
        let dim = rows.first().ok_or(Error::EmptyTokens)?.dim();
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            if row.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: row.dim(),
                });
            }
            data.extend(row.0);
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| Vector::new(r.as_ref().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }
}

/// Token-level similarity used inside MaxSim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenMetric {
    #[default]
    Dot,
    /// `-||a/|a| - b/|b|||`; larger is more similar.
    NegL2Normalized,
}

/// Which scorer backs retrieval and the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringMode {
    Dpr,
    Colbert(TokenMetric),
}

impl ScoringMode {
    pub fn pooling(self) -> Pooling {
        match self {
            ScoringMode::Dpr => Pooling::Mean,
            ScoringMode::Colbert(_) => Pooling::PerToken,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Mean of the token vectors, standing in for a `[CLS]` embedding.
    Mean,
    /// Every token vector kept, with a role marker prepended.
    PerToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Passage,
}

/// Output of [`ToyEncoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    Pooled(Vector),
    Tokens(TokenEmbeddings),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

/// DPR similarity: the inner product of two pooled embeddings.
pub fn dpr_score(q: &Vector, p: &Vector) -> Result<f64> {
    check_dims(q.dim(), p.dim())?;
    Ok(dot(&q.0, &p.0))
}

pub fn token_sim(q: &Vector, d: &Vector, metric: TokenMetric) -> Result<f64> {
    check_dims(q.dim(), d.dim())?;
    token_sim_slices(&q.0, &d.0, metric)
}

fn token_sim_slices(q: &[f64], d: &[f64], metric: TokenMetric) -> Result<f64> {
    match metric {
        TokenMetric::Dot => Ok(dot(q, d)),
        TokenMetric::NegL2Normalized => {
            let (nq, nd) = (norm(q), norm(d));
            if nq == 0.0 || nd == 0.0 {
                return Err(Error::ZeroVector);
            }
            let mut s = 0.0;
            for (x, y) in q.iter().zip(d) {
                let diff = x / nq - y / nd;
                s += diff * diff;
            }
            Ok(-s.sqrt())
        }
    }
}

/// Rows scaled to unit length; zero rows are rejected.
fn normalized_rows(e: &TokenEmbeddings) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(e.data.len());
    for row in e.rows() {
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        out.extend(row.iter().map(|x| x / n));
    }
    Ok(out)
}

fn neg_l2(u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in u.iter().zip(v) {
        let diff = x - y;
        s += diff * diff;
    }
    -s.sqrt()
}

/// Index of the best passage row for every query row, plus the summed score.
fn maxsim_argmax(q: &TokenEmbeddings, p: &TokenEmbeddings, metric: TokenMetric) -> Result<(f64, Vec<usize>)> {
    check_dims(q.dim, p.dim)?;
    let dim = q.dim;
    let normalized;
    let (qd, pd): (&[f64], &[f64]) = match metric {
        TokenMetric::Dot => (&q.data, &p.data),
        TokenMetric::NegL2Normalized => {
            normalized = (normalized_rows(q)?, normalized_rows(p)?);
            (&normalized.0, &normalized.1)
        }
    };
    let mut total = 0.0;
    let mut best_idx = Vec::with_capacity(q.num_rows());
    for qi in qd.chunks_exact(dim) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (j, dj) in pd.chunks_exact(dim).enumerate() {
            let s = match metric {
                TokenMetric::Dot => dot(qi, dj),
                TokenMetric::NegL2Normalized => neg_l2(qi, dj),
            };
            if s > best {
                best = s;
                arg = j;
            }
        }
        total += best;
        best_idx.push(arg);
    }
    Ok((total, best_idx))
}

/// Late-interaction score: for each query token, the maximum similarity to
/// any passage token, summed over query tokens.
pub fn maxsim_score(q: &TokenEmbeddings, p: &TokenEmbeddings, metric: TokenMetric) -> Result<f64> {
    maxsim_argmax(q, p, metric).map(|(s, _)| s)
}

/// Scores two encodings produced under the same mode.
pub fn score_encodings(q: &Encoding, p: &Encoding, mode: ScoringMode) -> Result<f64> {
    match (q, p, mode) {
        (Encoding::Pooled(q), Encoding::Pooled(p), ScoringMode::Dpr) => dpr_score(q, p),
        (Encoding::Tokens(q), Encoding::Tokens(p), ScoringMode::Colbert(metric)) => maxsim_score(q, p, metric),
        _ => Err(Error::InvalidParameter(
            "encodings do not match the scoring mode".into(),
        )),
    }
}

/// Embedding-table encoder.
///
/// Reserved rows `[UNK]`, `[Q]` and `[D]` are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    dim: usize,
    mode: ScoringMode,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    weights: Vec<f64>,
}

impl ToyEncoder {
    /// Builds an encoder over `vocab` with weights drawn uniformly from
    /// `[-0.5, 0.5)` by a ChaCha generator seeded with `seed`.
    pub fn new<I, S>(vocab: I, dim: usize, mode: ScoringMode, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        let mut enc = Self {
            dim,
            mode,
            vocab: Vec::new(),
            index: HashMap::new(),
            weights: Vec::new(),
        };
        for tok in RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(vocab.into_iter().map(Into::into))
        {
            enc.push_token(tok, None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in enc.weights.iter_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
        Ok(enc)
    }

    /// Builds an encoder from explicit `(token, vector)` rows. Reserved tokens
    /// that are missing get zero vectors.
    pub fn from_rows<I, S>(rows: I, mode: ScoringMode) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut enc: Option<Self> = None;
        for (tok, v) in rows {
            let tok = tok.into();
            let v = Vector::new(v)?;
            let e = enc.get_or_insert_with(|| Self {
                dim: v.dim(),
                mode,
                vocab: Vec::new(),
                index: HashMap::new(),
                weights: Vec::new(),
            });
            check_dims(e.dim, v.dim())?;
            if e.index.contains_key(&tok) {
                return Err(Error::InvalidParameter(format!("duplicate token {tok}")));
            }
            e.push_token(tok, Some(&v.0));
        }
        let mut enc = enc.ok_or_else(|| Error::InvalidParameter("empty embedding table".into()))?;
        for r in RESERVED {
            if !enc.index.contains_key(r) {
                enc.push_token(r.to_string(), None);
            }
        }
        Ok(enc)
    }

    fn push_token(&mut self, tok: String, values: Option<&[f64]>) {
        if self.index.contains_key(&tok) {
            return;
        }
        self.index.insert(tok.clone(), self.vocab.len());
        self.vocab.push(tok);
        match values {
            Some(v) => self.weights.extend_from_slice(v),
            None => self.weights.extend(std::iter::repeat_n(0.0, self.dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> ScoringMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ScoringMode) {
        self.mode = mode;
    }

    pub fn pooling(&self) -> Pooling {
        self.mode.pooling()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.token_index(token).map(|i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.dim..(i + 1) * self.dim]
    }

    /// All trainable values, row-major in vocabulary order.
    pub fn parameters(&self) -> &[f64] {
        &self.weights
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or_else(|| self.index[UNK_TOKEN])
    }

    /// Row indices fed to the encoder, including the role marker in ColBERT mode.
    fn token_rows<S: AsRef<str>>(&self, tokens: &[S], role: Role) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        let mut rows = Vec::with_capacity(tokens.len() + 1);
        if self.pooling() == Pooling::PerToken {
            rows.push(
                self.index[match role {
                    Role::Query => QUERY_MARKER,
                    Role::Passage => DOC_MARKER,
                }],
            );
        }
        rows.extend(tokens.iter().map(|t| self.lookup(t.as_ref())));
        Ok(rows)
    }

    fn encode_rows(&self, rows: &[usize]) -> Encoding {
        match self.pooling() {
            Pooling::Mean => {
                let mut v = vec![0.0; self.dim];
                for &r in rows {
                    for (acc, x) in v.iter_mut().zip(self.row(r)) {
                        *acc += x;
                    }
                }
                let n = rows.len() as f64;
                v.iter_mut().for_each(|x| *x /= n);
                Encoding::Pooled(Vector(v))
            }
            Pooling::PerToken => {
                let mut data = Vec::with_capacity(rows.len() * self.dim);
                for &r in rows {
                    data.extend_from_slice(self.row(r));
                }
                Encoding::Tokens(TokenEmbeddings { dim: self.dim, data })
            }
        }
    }

    /// Encodes one side of a query/passage pair. The result depends only on
    /// `tokens` and `role`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], role: Role) -> Result<Encoding> {
        let rows = self.token_rows(tokens, role)?;
        Ok(self.encode_rows(&rows))
    }

    pub fn score<Q: AsRef<str>, P: AsRef<str>>(&self, query: &[Q], passage: &[P]) -> Result<f64> {
        let q = self.encode(query, Role::Query)?;
        let p = self.encode(passage, Role::Passage)?;
        score_encodings(&q, &p, self.mode)
    }

    /// `parameters -= rate * gradient`.
    pub fn sgd_step(&mut self, grad: &Gradient, rate: f64) -> Result<()> {
        if grad.values.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                left: self.weights.len(),
                right: grad.values.len(),
            });
        }
        for (w, g) in self.weights.iter_mut().zip(&grad.values) {
            *w -= rate * g;
        }
        Ok(())
    }

    /// Writes the table as `token dim v1 ... vd` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.vocab.iter().enumerate() {
            let _ = write!(out, "{tok} {}", self.dim);
            for v in self.row(i) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, mode: ScoringMode) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let mut cols = line.split_whitespace();
            let Some(tok) = cols.next() else { continue };
            let parse_err = |message: String| Error::Parse { line: idx + 1, message };
            let dim: usize = cols
                .next()
                .ok_or_else(|| parse_err("missing dimension".into()))?
                .parse()
                .map_err(|_| parse_err("invalid dimension".into()))?;
            let values = cols
                .map(|c| c.parse::<f64>().map_err(|_| parse_err(format!("invalid value {c:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != dim {
                return Err(parse_err(format!("expected {dim} values, found {}", values.len())));
            }
            rows.push((tok.to_string(), values));
        }
        Self::from_rows(rows, mode)
    }
}

/// Gradient with the same layout as [`ToyEncoder::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    dim: usize,
    values: Vec<f64>,
}

impl Gradient {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Gradient slice for the vocabulary row `index`.
    pub fn row(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

/// One `(query, positive, negative)` training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub query: Vec<String>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl Triple {
    pub fn new<S: AsRef<str>>(query: &[S], positive: &[S], negative: &[S]) -> Self {
        let own = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect();
        Self {
            query: own(query),
            positive: own(positive),
            negative: own(negative),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    triples: Vec<Triple>,
}

impl TrainingBatch {
    pub fn new(triples: Vec<Triple>) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        Ok(Self { triples })
    }

    pub fn size(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }
}

struct Forward {
    query_rows: Vec<Vec<usize>>,
    passage_rows: Vec<Vec<usize>>,
    queries: Vec<Encoding>,
    passages: Vec<Encoding>,
    /// `scores[i][j]`: query `i` against passage `j`, where passage `2k` is
    /// triple `k`'s positive and `2k + 1` its negative.
    scores: Vec<Vec<f64>>,
}

fn forward(batch: &TrainingBatch, enc: &ToyEncoder) -> Result<Forward> {
    let mut query_rows = Vec::with_capacity(batch.size());
    let mut passage_rows = Vec::with_capacity(2 * batch.size());
    for t in &batch.triples {
        query_rows.push(enc.token_rows(&t.query, Role::Query)?);
        passage_rows.push(enc.token_rows(&t.positive, Role::Passage)?);
        passage_rows.push(enc.token_rows(&t.negative, Role::Passage)?);
    }
    let queries: Vec<Encoding> = query_rows.iter().map(|r| enc.encode_rows(r)).collect();
    let passages: Vec<Encoding> = passage_rows.iter().map(|r| enc.encode_rows(r)).collect();
    let scores = queries
        .iter()
        .map(|q| {
            passages
                .iter()
                .map(|p| score_encodings(q, p, enc.mode))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forward {
        query_rows,
        passage_rows,
        queries,
        passages,
        scores,
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn batch_loss(scores: &[Vec<f64>]) -> f64 {
    let b = scores.len();
    let total: f64 = scores
        .iter()
        .enumerate()
        .map(|(i, row)| log_sum_exp(row) - row[2 * i])
        .sum();
    total / b as f64
}

/// Mean over queries of the softmax cross-entropy of the positive passage
/// against all `2B - 1` in-batch negatives.
pub fn in_batch_loss(batch: &TrainingBatch, encoder: &ToyEncoder) -> Result<f64> {
    Ok(batch_loss(&forward(batch, encoder)?.scores))
}

/// Loss gradient with respect to every embedding-table value.
pub fn loss_gradient(batch: &TrainingBatch, encoder: &ToyEncoder) -> Result<Gradient> {
    loss_and_gradient(batch, encoder).map(|(_, g)| g)
}

pub fn loss_and_gradient(batch: &TrainingBatch, encoder: &ToyEncoder) -> Result<(f64, Gradient)> {
    let fwd = forward(batch, encoder)?;
    let b = batch.size();
    let dim = encoder.dim;

    // dL/ds_ij = (softmax_ij - [j is i's positive]) / B
    let dscores: Vec<Vec<f64>> = fwd
        .scores
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let lse = log_sum_exp(row);
            row.iter()
                .enumerate()
                .map(|(j, s)| {
                    let target = if j == 2 * i { 1.0 } else { 0.0 };
                    ((s - lse).exp() - target) / b as f64
                })
                .collect()
        })
        .collect();

    // gradient w.r.t. each encoding's rows (one row for pooled encodings)
    let enc_len = |e: &Encoding| match e {
        Encoding::Pooled(v) => v.dim(),
        Encoding::Tokens(t) => t.data.len(),
    };
    let mut dq: Vec<Vec<f64>> = fwd.queries.iter().map(|e| vec![0.0; enc_len(e)]).collect();
    let mut dp: Vec<Vec<f64>> = fwd.passages.iter().map(|e| vec![0.0; enc_len(e)]).collect();

    for (i, q) in fwd.queries.iter().enumerate() {
        for (j, p) in fwd.passages.iter().enumerate() {
            let g = dscores[i][j];
            match (q, p, encoder.mode) {
                (Encoding::Pooled(q), Encoding::Pooled(p), ScoringMode::Dpr) => {
                    axpy(g, &p.0, &mut dq[i]);
                    axpy(g, &q.0, &mut dp[j]);
                }
                (Encoding::Tokens(q), Encoding::Tokens(p), ScoringMode::Colbert(metric)) => {
                    let (_, best) = maxsim_argmax(q, p, metric)?;
                    for (a, &bj) in best.iter().enumerate() {
                        let qa = q.row(a);
                        let pb = p.row(bj);
                        let (gq, gp) = match metric {
                            TokenMetric::Dot => (pb.to_vec(), qa.to_vec()),
                            TokenMetric::NegL2Normalized => neg_l2_grad(qa, pb),
                        };
                        axpy(g, &gq, &mut dq[i][a * dim..(a + 1) * dim]);
                        axpy(g, &gp, &mut dp[j][bj * dim..(bj + 1) * dim]);
                    }
                }
                _ => unreachable!("encodings follow the encoder mode"),
            }
        }
    }

    let mut values = vec![0.0; encoder.weights.len()];
    let mut scatter = |rows: &[usize], d: &[f64]| match encoder.pooling() {
        Pooling::Mean => {
            let scale = 1.0 / rows.len() as f64;
            for &r in rows {
                axpy(scale, d, &mut values[r * dim..(r + 1) * dim]);
            }
        }
        Pooling::PerToken => {
            for (k, &r) in rows.iter().enumerate() {
                axpy(1.0, &d[k * dim..(k + 1) * dim], &mut values[r * dim..(r + 1) * dim]);
            }
        }
    };
    for (rows, d) in fwd.query_rows.iter().zip(&dq) {
        scatter(rows, d);
    }
    for (rows, d) in fwd.passage_rows.iter().zip(&dp) {
        scatter(rows, d);
    }

    Ok((batch_loss(&fwd.scores), Gradient { dim, values }))
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Partial derivatives of `-||u/|u| - v/|v|||` with respect to `u` and `v`.
fn neg_l2_grad(u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    let uh: Vec<f64> = u.iter().map(|x| x / nu).collect();
    let vh: Vec<f64> = v.iter().map(|x| x / nv).collect();
    let diff: Vec<f64> = uh.iter().zip(&vh).map(|(a, b)| a - b).collect();
    let dist = norm(&diff);
    if dist == 0.0 {
        return (vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    // d/duh = -diff/dist, d/dvh = diff/dist; then project through normalization
    let guh: Vec<f64> = diff.iter().map(|d| -d / dist).collect();
    let gvh: Vec<f64> = diff.iter().map(|d| d / dist).collect();
    let project = |g: &[f64], h: &[f64], n: f64| -> Vec<f64> {
        let gh = dot(g, h);
        g.iter().zip(h).map(|(gi, hi)| (gi - hi * gh) / n).collect()
    };
    (project(&guh, &uh, nu), project(&gvh, &vh, nv))
}

/// Runs `steps` full-batch gradient steps and returns the loss before each
/// step followed by the final loss.
pub fn train(encoder: &mut ToyEncoder, batch: &TrainingBatch, steps: usize, rate: f64) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grad) = loss_and_gradient(batch, encoder)?;
        losses.push(loss);
        encoder.sgd_step(&grad, rate)?;
    }
    losses.push(in_batch_loss(batch, encoder)?);
    Ok(losses)
}

/// A passage to be ranked by [`score_collection`].
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl Passage {
    pub fn new<S: AsRef<str>>(doc_id: impl Into<String>, tokens: &[S]) -> Self {
        Self {
            doc_id: doc_id.into(),
            tokens: tokens.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }
}

/// Scores every passage against the query exhaustively and ranks them by
/// descending score, ties by ascending doc id, keeping at most `depth`.
pub fn score_collection<S: AsRef<str>>(
    query: &[S],
    passages: &[Passage],
    encoder: &ToyEncoder,
    depth: usize,
) -> Result<Vec<ScoredDoc>> {
    if passages.is_empty() {
        return Ok(Vec::new());
    }
    let mut ids = HashSet::with_capacity(passages.len());
    for p in passages {
        if !ids.insert(p.doc_id.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate passage {}", p.doc_id)));
        }
    }
    let q = encoder.encode(query, Role::Query)?;
    let scored = par::try_map(passages, |p| {
        let enc = encoder.encode(&p.tokens, Role::Passage)?;
        let s = score_encodings(&q, &enc, encoder.mode)?;
        Ok::<_, Error>((p.doc_id.clone(), s))
    })?;
    Ok(rank_scores(scored, depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn dpr_examples() {
        assert_eq!(dpr_score(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), 11.0);
        assert_eq!(dpr_score(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(dpr_score(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(
            dpr_score(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn token_sim_examples() {
        assert_eq!(
            token_sim(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), TokenMetric::Dot).unwrap(),
            1.0
        );
        let same = token_sim(&v(&[2.0, 0.0]), &v(&[1.0, 0.0]), TokenMetric::NegL2Normalized).unwrap();
        assert_eq!(same, 0.0);
        let orth = token_sim(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), TokenMetric::NegL2Normalized).unwrap();
        assert!((orth + 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            token_sim(&v(&[0.0, 0.0]), &v(&[0.0, 1.0]), TokenMetric::NegL2Normalized),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(Vector::new(vec![f64::NAN]).is_err());
        assert!(Vector::new(vec![]).is_err());
    }

    #[test]
    fn maxsim_examples() {
        let id = TokenEmbeddings::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(maxsim_score(&id, &id, TokenMetric::Dot).unwrap(), 2.0);
        let q = TokenEmbeddings::from_rows(&[[1.0, 0.0]]).unwrap();
        let p = TokenEmbeddings::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(maxsim_score(&q, &p, TokenMetric::Dot).unwrap(), 0.0);
        let bad = TokenEmbeddings::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert!(maxsim_score(&q, &bad, TokenMetric::Dot).is_err());
    }

    fn ab_encoder(mode: ScoringMode) -> ToyEncoder {
        ToyEncoder::from_rows([("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])], mode).unwrap()
    }

    #[test]
    fn mean_pooling_examples() {
        let enc = ab_encoder(ScoringMode::Dpr);
        let Encoding::Pooled(one) = enc.encode(&["a"], Role::Query).unwrap() else {
            panic!()
        };
        assert_eq!(one.as_slice(), &[1.0, 0.0]);
        let Encoding::Pooled(two) = enc.encode(&["a", "a"], Role::Query).unwrap() else {
            panic!()
        };
        assert_eq!(two, one);
        let Encoding::Pooled(ab) = enc.encode(&["a", "b"], Role::Passage).unwrap() else {
            panic!()
        };
        assert_eq!(ab.as_slice(), &[0.5, 0.5]);
        assert!(matches!(enc.encode::<&str>(&[], Role::Query), Err(Error::EmptyTokens)));
    }

    #[test]
    fn unknown_tokens_share_a_vector() {
        let enc = ToyEncoder::new(["a"], 4, ScoringMode::Dpr, 7).unwrap();
        assert_eq!(
            enc.encode(&["zzz"], Role::Query).unwrap(),
            enc.encode(&["yyy"], Role::Query).unwrap()
        );
    }

    #[test]
    fn colbert_prepends_markers() {
        let enc = ab_encoder(ScoringMode::Colbert(TokenMetric::Dot));
        let Encoding::Tokens(q) = enc.encode(&["a", "b"], Role::Query).unwrap() else {
            panic!()
        };
        assert_eq!(q.num_rows(), 3);
        assert_eq!(q.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = ToyEncoder::new(["x", "y"], 8, ScoringMode::Dpr, 3).unwrap();
        let b = ToyEncoder::new(["x", "y"], 8, ScoringMode::Dpr, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameters().len(), 5 * 8);
    }

    #[test]
    fn equal_scores_give_ln2() {
        let enc = ab_encoder(ScoringMode::Dpr);
        let batch = TrainingBatch::new(vec![Triple::new(&["a"], &["b"], &["b"])]).unwrap();
        let loss = in_batch_loss(&batch, &enc).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn large_margin_gives_tiny_loss() {
        let enc = ToyEncoder::from_rows(
            [("q", vec![50.0, 0.0]), ("p", vec![1.0, 0.0]), ("n", vec![0.0, 1.0])],
            ScoringMode::Dpr,
        )
        .unwrap();
        let batch = TrainingBatch::new(vec![Triple::new(&["q"], &["p"], &["n"])]).unwrap();
        assert!(in_batch_loss(&batch, &enc).unwrap() < 1e-6);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(TrainingBatch::new(vec![]).is_err());
    }

    #[test]
    fn identical_passages_cancel_in_gradient() {
        // B = 1 with p+ == p-: the softmax is 1/2 on each, so the query
        // gradient is (1/2 - 1) p + (1/2) p = 0.
        let enc = ab_encoder(ScoringMode::Dpr);
        let batch = TrainingBatch::new(vec![Triple::new(&["a"], &["b"], &["b"])]).unwrap();
        let g = loss_gradient(&batch, &enc).unwrap();
        let a = enc.token_index("a").unwrap();
        assert!(g.row(a).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn table_text_round_trip() {
        let enc = ToyEncoder::new(["x", "<frac>"], 3, ScoringMode::Dpr, 11).unwrap();
        let back = ToyEncoder::from_text(&enc.to_text(), ScoringMode::Dpr).unwrap();
        assert_eq!(back, enc);
        assert!(ToyEncoder::from_text("a 2 1.0", ScoringMode::Dpr).is_err());
        assert!(ToyEncoder::from_text("a 1 1.0\nb 2 1.0 2.0", ScoringMode::Dpr).is_err());
        assert!(ToyEncoder::from_text("a 1 1.0\na 1 2.0", ScoringMode::Dpr).is_err());
    }

    #[test]
    fn score_collection_examples() {
        let enc = ToyEncoder::from_rows(
            [("q", vec![1.0]), ("lo", vec![2.0]), ("hi", vec![5.0])],
            ScoringMode::Dpr,
        )
        .unwrap();
        let one = score_collection(&["q"], &[Passage::new("d1", &["lo"])], &enc, 1000).unwrap();
        assert_eq!(one, vec![ScoredDoc::new("d1", 1, 2.0)]);

        let two = score_collection(
            &["q"],
            &[Passage::new("d1", &["lo"]), Passage::new("d2", &["hi"])],
            &enc,
            1000,
        )
        .unwrap();
        assert_eq!(two[0].doc_id, "d2");

        let tie = score_collection(
            &["q"],
            &[Passage::new("d2", &["lo"]), Passage::new("d1", &["lo"])],
            &enc,
            1000,
        )
        .unwrap();
        assert_eq!(tie.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(), ["d1", "d2"]);

        assert!(score_collection(&["q"], &[], &enc, 10).unwrap().is_empty());
        assert!(score_collection(
            &["q"],
            &[Passage::new("d", &["lo"]), Passage::new("d", &["hi"])],
            &enc,
            10
        )
        .is_err());
    }
}

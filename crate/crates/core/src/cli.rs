//! Command-line front end. Each subcommand reads its inputs, calls the
//! matching library operation and writes the result.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dense::{self, Passage, ScoringMode, TokenMetric, ToyEncoder, TrainingBatch, Triple};
use crate::fusion::{self, FusionMethod, FusionSpec, Normalization, RunScorer};
use crate::metrics::{self, EvalConfig, Metric, Profile, TopicGroups};
use crate::run::{self, ParseOptions, RankedRun, ScoreFormat, DEFAULT_MAX_DEPTH};
use crate::tokenizer::{self, SynonymTable, TokenizerOptions};
use crate::tuner::{self, CvConfig};

#[derive(Debug, Parser)]
#[command(name = "mathfuse", version, about = "Math-aware retrieval fusion and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Output cut per topic; also the judged-rate cutoff for `eval`.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_DEPTH as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub depth: u64,
    /// Maximum topic depth accepted when reading run files.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    /// Cut input runs to --max-depth instead of rejecting deeper topics.
    #[arg(long, global = true)]
    pub truncate_input: bool,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Significant digits for written scores (default: exact round-trip).
    #[arg(long, global = true)]
    pub precision: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-tokenize text from stdin, one document per line.
    Tokenize(TokenizeArgs),
    /// Score passages for each query with a trained embedding table.
    Score(ScoreArgs),
    /// Train an embedding table on (query, positive, negative) triples.
    Train(TrainArgs),
    /// Fuse two or more run files.
    Fuse(FuseArgs),
    /// Re-score a base run's candidates with another run's scores.
    Rerank(RerankArgs),
    /// Cross-validate the linear fusion weight and write the fused run.
    Tune(TuneArgs),
    /// Evaluate a run against relevance judgments.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    /// Synonym table file (default: the built-in table).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Also recognize $$...$$ and \[...\].
    #[arg(long)]
    pub display_math: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Dpr,
    Colbert,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Dot,
    L2,
}

fn scoring_mode(mode: ModeArg, metric: MetricArg) -> ScoringMode {
    match mode {
        ModeArg::Dpr => ScoringMode::Dpr,
        ModeArg::Colbert => ScoringMode::Colbert(match metric {
            MetricArg::Dot => TokenMetric::Dot,
            MetricArg::L2 => TokenMetric::NegL2Normalized,
        }),
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// `topic_id token token ...` per line.
    pub queries: PathBuf,
    /// `doc_id token token ...` per line.
    pub passages: PathBuf,
    /// Embedding table (`token dim v1 ... vd` per line).
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Dpr)]
    pub mode: ModeArg,
    /// Token similarity for ColBERT mode.
    #[arg(long, value_enum, default_value_t = MetricArg::Dot)]
    pub metric: MetricArg,
    #[arg(long, default_value = "dense")]
    pub run_tag: String,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `query<TAB>positive<TAB>negative` per line, tokens separated by spaces.
    pub triples: PathBuf,
    #[arg(long, default_value_t = dense::DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Dpr)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MetricArg::Dot)]
    pub metric: MetricArg,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Input runs; for linear fusion the dense run comes first.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = "linear")]
    pub method: FusionMethod,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = fusion::DEFAULT_RRF_K)]
    pub k: u32,
    #[arg(long, default_value = "minmax")]
    pub normalization: Normalization,
    #[arg(long, default_value = "fused")]
    pub run_tag: String,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    pub base: PathBuf,
    pub scorer: PathBuf,
    #[arg(long)]
    pub run_tag: Option<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    pub dense: PathBuf,
    pub structure: PathBuf,
    pub qrels: PathBuf,
    #[arg(long, default_value_t = tuner::DEFAULT_FOLDS)]
    pub folds: usize,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "0.1:0.9:0.1")]
    pub grid: String,
    #[arg(long, default_value = "ndcg")]
    pub objective: String,
    #[arg(long, default_value = "arqmath")]
    pub profile: Profile,
    #[arg(long, default_value = "minmax")]
    pub normalization: Normalization,
    #[arg(long, default_value = "cv-linear")]
    pub run_tag: String,
    /// Fused run output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Fold report file (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub run: PathBuf,
    pub qrels: PathBuf,
    /// arqmath | ntcir-full | ntcir-partial | <threshold>
    #[arg(long, default_value = "arqmath")]
    pub profile: Profile,
    /// `topic_id group` per line.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Print `metric topic value` lines instead of a table.
    #[arg(long)]
    pub listing: bool,
    /// Skip run topics that have no judgments instead of scoring them 0.
    #[arg(long)]
    pub skip_unjudged_topics: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes()).context("writing stdout")?;
            out.flush().context("writing stdout")
        }
    }
}

fn load_run(path: &Path, global: &GlobalArgs) -> Result<RankedRun> {
    let text = read(path)?;
    let opts = ParseOptions {
        run_tag: None,
        max_depth: if global.truncate_input {
            None
        } else {
            Some(global.max_depth)
        },
    };
    let run = run::parse_run_with(&text, &opts).with_context(|| format!("parsing {}", path.display()))?;
    Ok(if global.truncate_input {
        run::truncate_run(&run, global.max_depth)
    } else {
        run
    })
}

fn load_qrels(path: &Path, profile: Profile) -> Result<run::JudgmentSet> {
    let q = run::parse_qrels(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    Ok(q.with_threshold(profile.threshold())?)
}

fn render_run(run: &RankedRun, global: &GlobalArgs) -> String {
    match global.precision {
        Some(p) => run::write_run_with(run, ScoreFormat::Significant(p)),
        None => run::write_run(run),
    }
}

fn depth(global: &GlobalArgs) -> usize {
    usize::try_from(global.depth).unwrap_or(usize::MAX)
}

/// Parses `argv` and runs the subcommand. Usage errors exit the process with
/// status 2 through clap.
pub fn main_with_args<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    #[cfg(feature = "parallel")]
    if let Some(n) = g.threads {
        // fails only if a pool already exists, e.g. a second call in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Tokenize(a) => tokenize(a),
        Command::Score(a) => score(a, g),
        Command::Train(a) => train(a, g),
        Command::Fuse(a) => fuse(a, g),
        Command::Rerank(a) => rerank(a, g),
        Command::Tune(a) => tune(a, g),
        Command::Eval(a) => eval(a, g),
    }
}

fn tokenize(a: &TokenizeArgs) -> Result<()> {
    let table = match &a.table {
        Some(p) => SynonymTable::parse(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynonymTable::builtin(),
    };
    let opts = TokenizerOptions {
        display_math: a.display_math,
    };
    let mut input = String::new();
    io::stdin().read_to_string(&mut input).context("reading stdin")?;
    let mut out = String::new();
    for line in input.lines() {
        out.push_str(&tokenizer::pretokenize_with(line, &table, opts).to_string());
        out.push('\n');
    }
    write_out(None, &out)
}

/// `id token token ...` lines.
fn read_tokenized(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut cols = line.split_whitespace();
        let Some(id) = cols.next() else { continue };
        let tokens: Vec<String> = cols.map(str::to_string).collect();
        if tokens.is_empty() {
            bail!("{}:{}: {id} has no tokens", path.display(), i + 1);
        }
        out.push((id.to_string(), tokens));
    }
    Ok(out)
}

fn score(a: &ScoreArgs, g: &GlobalArgs) -> Result<()> {
    let mode = scoring_mode(a.mode, a.metric);
    let encoder = ToyEncoder::from_text(&read(&a.embeddings)?, mode)
        .with_context(|| format!("parsing {}", a.embeddings.display()))?;
    let queries = read_tokenized(&a.queries)?;
    let passages: Vec<Passage> = read_tokenized(&a.passages)?
        .into_iter()
        .map(|(doc_id, tokens)| Passage { doc_id, tokens })
        .collect();
    let depth = depth(g).min(g.max_depth);
    let mut topics = std::collections::BTreeMap::new();
    for (topic, tokens) in &queries {
        let ranked = dense::score_collection(tokens, &passages, &encoder, depth)
            .with_context(|| format!("scoring topic {topic}"))?;
        if topics.insert(topic.clone(), ranked).is_some() {
            bail!("duplicate query id {topic}");
        }
    }
    let run = RankedRun::from_topics(a.run_tag.clone(), topics)?;
    write_out(a.output.as_deref(), &render_run(&run, g))
}

fn train(a: &TrainArgs, g: &GlobalArgs) -> Result<()> {
    let text = read(&a.triples)?;
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<Vec<&str>> = line.split('\t').map(|p| p.split_whitespace().collect()).collect();
        if parts.len() != 3 || parts.iter().any(Vec::is_empty) {
            bail!(
                "{}:{}: expected query<TAB>positive<TAB>negative",
                a.triples.display(),
                i + 1
            );
        }
        triples.push(Triple::new(&parts[0], &parts[1], &parts[2]));
    }
    let batch = TrainingBatch::new(triples)?;
    let vocab: std::collections::BTreeSet<&str> = batch
        .triples()
        .iter()
        .flat_map(|t| t.query.iter().chain(&t.positive).chain(&t.negative))
        .map(String::as_str)
        .collect();
    let mut encoder = ToyEncoder::new(vocab, a.dim, scoring_mode(a.mode, a.metric), 0)?;
    let losses = dense::train(&mut encoder, &batch, a.steps, a.lr)?;
    if g.verbose > 0 {
        eprintln!(
            "loss {:.6} -> {:.6} over {} steps",
            losses[0],
            losses[losses.len() - 1],
            a.steps
        );
    }
    write_out(Some(&a.output), &encoder.to_text())
}

fn fuse(a: &FuseArgs, g: &GlobalArgs) -> Result<()> {
    let runs = a.runs.iter().map(|p| load_run(p, g)).collect::<Result<Vec<_>>>()?;
    let spec = FusionSpec {
        method: a.method,
        alpha: a.alpha,
        rrf_k: a.k,
        normalization: a.normalization,
        depth: depth(g),
    };
    let mut out = fusion::fuse(&runs, &spec)?;
    out.set_run_tag(a.run_tag.clone());
    write_out(a.output.as_deref(), &render_run(&out, g))
}

fn rerank(a: &RerankArgs, g: &GlobalArgs) -> Result<()> {
    let base = load_run(&a.base, g)?;
    let scorer = load_run(&a.scorer, g)?;
    let mut out = fusion::rerank(&base, &RunScorer::new(&scorer), depth(g))?;
    if let Some(tag) = &a.run_tag {
        out.set_run_tag(tag.clone());
    }
    write_out(a.output.as_deref(), &render_run(&out, g))
}

fn tune(a: &TuneArgs, g: &GlobalArgs) -> Result<()> {
    let dense = load_run(&a.dense, g)?;
    let structure = load_run(&a.structure, g)?;
    let qrels = load_qrels(&a.qrels, a.profile)?;
    let cv = CvConfig {
        folds: a.folds,
        grid: tuner::parse_grid(&a.grid)?,
        objective: a.objective.parse::<Metric>()?,
        fusion: FusionSpec {
            normalization: a.normalization,
            depth: depth(g),
            ..FusionSpec::default()
        },
    };
    let mut result = tuner::tune_and_fuse(&dense, &structure, &qrels, &cv)?;
    result.fused_run.set_run_tag(a.run_tag.clone());
    write_out(Some(&a.output), &render_run(&result.fused_run, g))?;
    write_out(a.report.as_deref(), &tuner::format_fold_report(&result))
}

fn eval(a: &EvalArgs, g: &GlobalArgs) -> Result<()> {
    let run = load_run(&a.run, g)?;
    let qrels = load_qrels(&a.qrels, a.profile)?;
    let config = EvalConfig {
        judged_depth: Some(depth(g)),
        include_unjudged_topics: !a.skip_unjudged_topics,
        ..EvalConfig::default()
    };
    let report = metrics::evaluate(&run, &qrels, &config);
    let mut text = if a.listing {
        metrics::format_listing(&report)
    } else {
        metrics::format_table(&report)
    };
    if let Some(p) = &a.groups {
        let groups = TopicGroups::parse(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
        let agg = metrics::aggregate_by_group(&report, &groups);
        text.push('\n');
        text.push_str(&metrics::format_groups(&report.metric_names, &agg));
    }
    if !report.unjudged_topics.is_empty() && g.verbose > 0 {
        eprintln!("topics without judgments: {}", report.unjudged_topics.join(" "));
    }
    write_out(a.output.as_deref(), &text)
}

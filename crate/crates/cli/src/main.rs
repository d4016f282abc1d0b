mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::{info, Level};

use hpc_core::evalbench::{self, BenchConfig, FloatIndex};
use hpc_core::storage;
use hpc_core::{
    CandidateMode, EngineConfig, PruneConfig, PruneSide, QueryOptions, SimilarityMode,
};

use config::Settings;

/// A usage or validation problem; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "hpc", version, about = "Compressed multi-vector document retrieval")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Settings file of `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, queries and qrels.
    GenSynthetic(GenArgs),
    /// Train a codebook and build an index over an embeddings file.
    BuildIndex(BuildArgs),
    /// Run queries against an index and write a TREC run file.
    Query(QueryArgs),
    /// Score a run file against qrels.
    Eval(EvalArgs),
    /// Measure latency, throughput and quality of an index.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Codebook size (default 256).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Store bit-packed codes.
    #[arg(long)]
    binary: bool,
    /// postings, hnsw or hamming.
    #[arg(long)]
    candidate_mode: Option<CandidateMode>,
    /// cosine, dot or l2 (default: the embeddings file's mode).
    #[arg(long)]
    similarity: Option<SimilarityMode>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    train_sample: Option<f64>,
    #[arg(long)]
    locality_ordering: bool,
    /// Keep raw float vectors for float reranking.
    #[arg(long)]
    float_sidecar: bool,
    #[arg(long)]
    hnsw_m: Option<usize>,
    #[arg(long)]
    ef_construction: Option<usize>,
    /// Write storage statistics as JSON.
    #[arg(long)]
    stats_json: Option<PathBuf>,
    #[command(flatten)]
    query: QueryFlags,
}

/// Query-time settings; stored as defaults at build time and overridable
/// per query run.
#[derive(Args, Clone)]
struct QueryFlags {
    #[arg(long)]
    top_k: Option<usize>,
    /// Fraction of patches kept by attention, in (0, 1].
    #[arg(long)]
    prune_p: Option<f64>,
    /// query, doc or both.
    #[arg(long)]
    prune_side: Option<PruneSide>,
    #[arg(long)]
    c_nearest: Option<usize>,
    #[arg(long)]
    candidate_pool: Option<usize>,
    #[arg(long)]
    ef_search: Option<usize>,
    /// Score with the query's decoded centroids instead of raw vectors.
    #[arg(long)]
    symmetric_quantize: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    run_out: PathBuf,
    #[arg(long)]
    tag: Option<String>,
    /// Rerank with the index's float sidecar.
    #[arg(long)]
    float_rerank: bool,
    #[command(flatten)]
    query: QueryFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Cutoff for nDCG and recall.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Write the text report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report, including per-query values, as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Raw corpus for the exhaustive float baseline.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[arg(long)]
    text_out: Option<PathBuf>,
    #[arg(long)]
    float_rerank: bool,
    #[command(flatten)]
    query: QueryFlags,
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("HPC_LOG_LEVEL").as_deref() {
        Err(_) | Ok("") => Level::WARN,
        Ok("error") => Level::ERROR,
        Ok("warn") => Level::WARN,
        Ok("info") => Level::INFO,
        Ok("debug") => Level::DEBUG,
        Ok(other) => {
            return Err(Usage(format!(
                "HPC_LOG_LEVEL must be error, warn, info or debug, got {other:?}"
            ))
            .into())
        }
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    Ok(())
}

fn query_options(s: &Settings, f: &QueryFlags, float_rerank: bool) -> Result<QueryOptions> {
    let prune_p = s.pick(f.prune_p, "prune_p")?;
    if let Some(p) = prune_p {
        PruneConfig::new(p, PruneSide::Query)?;
    }
    let symmetric = if f.symmetric_quantize {
        Some(true)
    } else {
        s.pick(None, "symmetric_quantize")?
    };
    Ok(QueryOptions {
        prune_p,
        prune_side: s.pick(f.prune_side, "prune_side")?,
        top_k: s.pick(f.top_k, "top_k")?,
        c_nearest: s.pick(f.c_nearest, "c_nearest")?,
        candidate_pool: s.pick(f.candidate_pool, "candidate_pool")?,
        ef_search: s.pick(f.ef_search, "ef_search")?,
        symmetric_quantize: symmetric,
        float_rerank: s.switch(float_rerank, "float_rerank")?,
    })
}

fn gen_synthetic(a: &GenArgs) -> Result<()> {
    let mut spec = config::load_spec(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = evalbench::gen_synthetic(&spec)?;
    let paths = evalbench::write_synthetic(&data, &spec, &a.out_dir)?;
    println!("corpus: {}", paths.corpus.display());
    println!("queries: {}", paths.queries.display());
    println!("qrels: {}", paths.qrels.display());
    Ok(())
}

fn build(s: &Settings, a: &BuildArgs) -> Result<()> {
    let k = s.pick(a.k, "k")?.unwrap_or(256);
    let seed = s.pick(a.seed, "seed")?.unwrap_or(0);
    let mut cfg = EngineConfig::new(k, seed);
    if let Some(v) = s.pick(a.max_iters, "max_iters")? {
        cfg.kmeans.max_iters = v;
    }
    if let Some(v) = s.pick(a.rel_tol, "rel_tol")? {
        cfg.kmeans.rel_tol = v;
    }
    cfg.binary_enabled = s.switch(a.binary, "binary")?;
    if let Some(m) = s.pick(a.candidate_mode, "candidate_mode")? {
        cfg.candidate_mode = m;
    }
    if let Some(v) = s.pick(a.train_sample, "train_sample")? {
        cfg.train_sample = v;
    }
    cfg.locality_ordering = s.switch(a.locality_ordering, "locality_ordering")?;
    cfg.float_sidecar = s.switch(a.float_sidecar, "float_sidecar")?;
    if let Some(v) = s.pick(a.hnsw_m, "hnsw_m")? {
        cfg.hnsw.m = v;
    }
    if let Some(v) = s.pick(a.ef_construction, "ef_construction")? {
        cfg.hnsw.ef_construction = v;
    }
    let q = query_options(s, &a.query, false)?;
    let p = q.prune_p.unwrap_or(1.0);
    cfg.prune = PruneConfig::new(p, q.prune_side.unwrap_or_default())?;
    cfg.top_k = q.top_k.unwrap_or(cfg.top_k);
    cfg.c_nearest = q.c_nearest.unwrap_or(cfg.c_nearest);
    cfg.candidate_pool = q.candidate_pool.unwrap_or(cfg.candidate_pool);
    cfg.hnsw.ef_search = q.ef_search.unwrap_or(cfg.hnsw.ef_search);
    cfg.symmetric_quantize = q.symmetric_quantize.unwrap_or(false);

    let (docs, file_mode) = storage::read_corpus(&a.embeddings)
        .with_context(|| format!("reading {}", a.embeddings.display()))?;
    cfg.similarity = s
        .pick(a.similarity, "similarity")?
        .or(file_mode)
        .unwrap_or_default();
    cfg.validate()?;
    info!(docs = docs.len(), k, "building index");
    let index = hpc_core::build_index(docs, &cfg)?;
    storage::save_index(&index, &a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let stats = storage::storage_stats(&index);
    print!("{}", evalbench::key_value_text(&stats));
    if let Some(path) = &a.stats_json {
        std::fs::write(path, serde_json::to_string_pretty(&stats)?)?;
    }
    Ok(())
}

fn read_queries(path: &Path) -> Result<Vec<hpc_core::PatchMatrix>> {
    let (queries, _) = storage::read_corpus(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(queries)
}

fn load_index(path: &Path) -> Result<hpc_core::RetrievalIndex> {
    storage::load_index(path).with_context(|| format!("loading {}", path.display()))
}

fn run_queries(s: &Settings, a: &QueryArgs) -> Result<()> {
    let opts = query_options(s, &a.query, a.float_rerank)?;
    let tag = s.pick(a.tag.clone(), "tag")?.unwrap_or_else(|| "hpc".into());
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Usage("run tag must be a single non-empty word".into()).into());
    }
    let index = load_index(&a.index)?;
    let queries = read_queries(&a.queries)?;
    let out = hpc_core::query_batch(&index, &queries, &opts)?;
    let ids: Vec<String> = queries.iter().map(|q| q.doc_id().to_string()).collect();
    storage::write_run(
        &a.run_out,
        ids.iter().map(String::as_str).zip(&out.results),
        &tag,
    )?;
    info!(queries = queries.len(), wall = ?out.wall, "queries done");
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let run = storage::read_run(&a.run).with_context(|| format!("reading {}", a.run.display()))?;
    let qrels =
        storage::read_qrels(&a.qrels).with_context(|| format!("reading {}", a.qrels.display()))?;
    let report = evalbench::evaluate(&run, &qrels, a.k)?;
    let text = evalbench::key_value_text(&report);
    match &a.out {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(path) = &a.json_out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn bench(s: &Settings, a: &BenchArgs) -> Result<()> {
    let opts = query_options(s, &a.query, a.float_rerank)?;
    let index = load_index(&a.index)?;
    let queries = read_queries(&a.queries)?;
    let qrels = a
        .qrels
        .as_ref()
        .map(|p| storage::read_qrels(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let baseline = match &a.embeddings {
        Some(path) => {
            let (docs, _) = storage::read_corpus(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(FloatIndex::new(&docs, index.config().similarity)?)
        }
        None => None,
    };
    let cfg = BenchConfig {
        warmup: s.pick(a.warmup, "warmup")?.unwrap_or(10),
        options: opts,
        eval_k: 10,
    };
    let report = evalbench::bench(&index, &queries, qrels.as_ref(), baseline.as_ref(), &cfg)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = &a.text_out {
        std::fs::write(path, &text)?;
    }
    if let Some(path) = &a.json_out {
        std::fs::write(path, report.to_json())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_logging()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let settings = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::BuildIndex(a) => build(&settings, a),
        Command::Query(a) => run_queries(&settings, a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(&settings, a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<hpc_core::Error>() {
            return match e {
                hpc_core::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                e if e.is_validation() => 2,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

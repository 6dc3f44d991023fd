//! `ars`: synthetic data, training, indexing, querying, evaluation and
//! benchmarking for the dense retriever.
//!
//! Exit codes: 0 ok, 2 usage or config, 3 numeric, 4 io or format.

mod bench;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ars_core::datasets::{
    generate_lexical_mismatch, generate_planted, load_retriever_jsonl, GeneratedDataset,
    LexicalMismatchSizes, LoadMode, PlantedModelSpec,
};
use ars_core::encoder::TokenizerConfig;
use ars_core::eval::{evaluate, Artifacts, EvalSet, LexicalIndex, Method, DEFAULT_KS};
use ars_core::retrieval::{build_index, Corpus, EmbeddingIndex, Retriever};
use ars_core::trainer::{
    gradcheck, train_with, write_metrics, Checkpoint, GradcheckOptions, GradientFault, RunConfig,
};
use ars_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ars",
    version,
    about = "Dense passage retrieval with an attentive relevance scoring head"
)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with train and test queries.
    Synth(SynthArgs),
    /// Train both towers, the head and the temperature.
    Train(TrainArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Encode a corpus into an embedding index.
    Index(IndexArgs),
    /// Rank the indexed corpus for one query and print TSV.
    Query(QueryArgs),
    /// Top-k accuracy of one method on a test set.
    Eval(EvalArgs),
    /// Throughput of exhaustive scoring on a generated corpus.
    Bench(bench::BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SynthMode {
    Planted,
    Lexical,
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    mode: SynthMode,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    corpus_size: Option<usize>,
    #[arg(long)]
    train_queries: Option<usize>,
    #[arg(long)]
    test_queries: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// `key = value` run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding corpus.jsonl and train.jsonl.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step metrics TSV; defaults to `<out>.metrics.tsv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Override one config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Fault {
    TransposeWq,
}

#[derive(clap::Args, Debug)]
struct GradcheckArgs {
    /// Only `seed` and the tokenizer are taken from the config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Inject a known gradient bug to confirm the check catches it.
    #[arg(long, value_enum)]
    fault: Option<Fault>,
}

#[derive(clap::Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// corpus.jsonl
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DenseMethod {
    Ars,
    Dot,
}

#[derive(clap::Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    text: String,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value_t = DenseMethod::Ars)]
    method: DenseMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EvalMethod {
    Ars,
    Dot,
    Bm25,
    Tfidf,
}

impl EvalMethod {
    fn method(self) -> Method {
        match self {
            EvalMethod::Ars => Method::Ars,
            EvalMethod::Dot => Method::Dot,
            EvalMethod::Bm25 => Method::Bm25,
            EvalMethod::Tfidf => Method::Tfidf,
        }
    }
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long, value_enum)]
    method: EvalMethod,
    /// corpus.jsonl
    #[arg(long)]
    corpus: PathBuf,
    /// Eval set, one `{qid, question, relevant}` object per line.
    #[arg(long)]
    test: PathBuf,
    /// Required for dense methods; its tokenizer is also used for lexical ones.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Prebuilt index; built from the corpus when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Output directory for `topk_<method>.json` and `.csv`.
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. } | Error::NumericAbort { .. } => 3,
        Error::Io(_)
        | Error::Format { .. }
        | Error::Parse { .. }
        | Error::MissingField { .. }
        | Error::InvalidExample { .. } => 4,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Prints a command line that reproduces this invocation.
fn echo(parts: &[(&str, String)]) {
    let flags: Vec<String> = parts.iter().map(|(k, v)| format!("--{k} {v}")).collect();
    eprintln!("# ars {}", flags.join(" "));
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn synth(args: &SynthArgs) -> CmdResult {
    let base = PlantedModelSpec::default();
    let seed = args.seed.unwrap_or(base.seed);
    let corpus_size = args.corpus_size.unwrap_or(base.corpus_size);
    let train_queries = args.train_queries.unwrap_or(base.train_queries);
    let test_queries = args.test_queries.unwrap_or(base.test_queries);
    let pool_size = args.pool_size.unwrap_or(base.pool_size);
    let mode = match args.mode {
        SynthMode::Planted => "planted",
        SynthMode::Lexical => "lexical",
    };
    echo(&[
        ("mode", mode.into()),
        ("seed", seed.to_string()),
        ("corpus-size", corpus_size.to_string()),
        ("train-queries", train_queries.to_string()),
        ("test-queries", test_queries.to_string()),
        ("pool-size", pool_size.to_string()),
        ("out", show(&args.out)),
    ]);
    let data: GeneratedDataset = match args.mode {
        SynthMode::Planted => generate_planted(&PlantedModelSpec {
            seed,
            corpus_size,
            train_queries,
            test_queries,
            pool_size,
            ..base
        })?,
        SynthMode::Lexical => generate_lexical_mismatch(
            seed,
            LexicalMismatchSizes {
                corpus_size,
                train_queries,
                test_queries,
                pool_size,
            },
        )?,
    };
    for path in data.write(&args.out)? {
        let bytes = std::fs::metadata(&path).map_err(Error::from)?.len();
        println!("{}\t{bytes}", path.display());
    }
    Ok(())
}

fn load_train_data(
    dir: &Path,
) -> Result<(Corpus, Vec<ars_core::datasets::RetrieverExample>), Error> {
    let corpus = Corpus::load_jsonl(&dir.join("corpus.jsonl"))?;
    let report = load_retriever_jsonl(&dir.join("train.jsonl"), LoadMode::Strict, Some(&corpus))?;
    Ok((corpus, report.examples))
}

fn run_train(args: &TrainArgs) -> CmdResult {
    let mut run = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects key=value, got `{kv}`")))?;
        run.set(k.trim(), v.trim())?;
    }
    if let Some(d) = &args.data {
        run.data = Some(d.clone());
    }
    if let Some(o) = &args.out {
        run.out = Some(o.clone());
    }
    run.validate()?;
    let data = run
        .data
        .clone()
        .ok_or_else(|| Failure::usage("no data directory (--data or `data` key)"))?;
    let out = run
        .out
        .clone()
        .ok_or_else(|| Failure::usage("no checkpoint path (--out or `out` key)"))?;
    eprint!("{}", run.to_text());

    // unreadable or inconsistent training data is a usage error
    let (corpus, examples) = load_train_data(&data).map_err(|e| {
        Failure::usage(format!(
            "cannot load training data from {}: {e}",
            data.display()
        ))
    })?;
    let out_metrics = args
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.tsv", out.display())));
    let output = train_with(&run, &examples, &corpus, |m| {
        eprintln!(
            "step {}\tlr {:.3e}\tl_total {:.6}\tl_cons {:.6}\tl_dyn {:.6}\tl_reg {:.6}",
            m.step, m.lr, m.l_total, m.l_cons, m.l_dyn, m.l_reg
        )
    })?;
    output.checkpoint.write(&out)?;
    write_metrics(&out_metrics, &output.metrics)?;
    println!("checkpoint\t{}", out.display());
    println!("metrics\t{}", out_metrics.display());
    println!("steps\t{}", output.metrics.len());
    if let (Some(first), Some(last)) = (output.metrics.first(), output.metrics.last()) {
        println!("l_total_first\t{}", first.l_total);
        println!("l_total_last\t{}", last.l_total);
    }
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> CmdResult {
    let run = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut parts = vec![("trials", args.trials.to_string())];
    if let Some(p) = &args.config {
        parts.push(("config", show(p)));
    }
    if args.fault.is_some() {
        parts.push(("fault", "transpose-wq".into()));
    }
    echo(&parts);
    let opts = GradcheckOptions {
        trials: args.trials,
        fault: args
            .fault
            .map(|Fault::TransposeWq| GradientFault::TransposeWq),
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&run, &opts)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!(
                "gradient check failed for {}",
                report
                    .failing_groups()
                    .iter()
                    .map(|g| g.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })
    }
}

fn run_index(args: &IndexArgs) -> CmdResult {
    echo(&[
        ("checkpoint", show(&args.checkpoint)),
        ("corpus", show(&args.corpus)),
        ("out", show(&args.out)),
    ]);
    let ckpt = Checkpoint::read(&args.checkpoint)?;
    let corpus = Corpus::load_jsonl(&args.corpus)?;
    let built = build_index(&corpus, &ckpt.model)?;
    for (pid, e) in &built.skipped {
        eprintln!("skipped passage {pid}: {e}");
    }
    built.index.write(&args.out)?;
    println!("index\t{}", args.out.display());
    println!("passages\t{}", built.index.len());
    println!("skipped\t{}", built.skipped.len());
    Ok(())
}

fn run_query(args: &QueryArgs) -> CmdResult {
    let method = match args.method {
        DenseMethod::Ars => "ars",
        DenseMethod::Dot => "dot",
    };
    echo(&[
        ("checkpoint", show(&args.checkpoint)),
        ("index", show(&args.index)),
        ("k", args.k.to_string()),
        ("method", method.into()),
        ("text", format!("{:?}", args.text)),
    ]);
    if args.k == 0 {
        return Err(Failure::usage("--k must be positive"));
    }
    let ckpt = Checkpoint::read(&args.checkpoint)?;
    let index = EmbeddingIndex::read(&args.index)?;
    let retriever = Retriever::new(&ckpt.model, &index)?;
    let result = match args.method {
        DenseMethod::Ars => retriever.retrieve(&args.text, args.k)?,
        DenseMethod::Dot => retriever.retrieve_dot(&args.text, args.k)?,
    };
    if result.clamped {
        eprintln!("k clamped to the index size {}", index.len());
    }
    for (rank, hit) in result.hits.iter().enumerate() {
        println!("{}\t{}\t{}\t{}", rank + 1, hit.pid, hit.s, hit.r);
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> CmdResult {
    let method = args.method.method();
    let ks = args.ks.clone().unwrap_or_else(|| DEFAULT_KS.to_vec());
    let mut parts = vec![
        ("method", method.name().to_string()),
        ("corpus", show(&args.corpus)),
        ("test", show(&args.test)),
        (
            "ks",
            ks.iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("out", show(&args.out)),
    ];
    if let Some(p) = &args.checkpoint {
        parts.push(("checkpoint", show(p)));
    }
    if let Some(p) = &args.index {
        parts.push(("index", show(p)));
    }
    echo(&parts);
    let corpus = Corpus::load_jsonl(&args.corpus)?;
    let eval = EvalSet::load_jsonl(&args.test)?;
    let ckpt = args
        .checkpoint
        .as_deref()
        .map(Checkpoint::read)
        .transpose()?;
    let report = if method.is_dense() {
        let ckpt = ckpt.ok_or_else(|| {
            Failure::usage(format!("--method {} needs --checkpoint", method.name()))
        })?;
        let index = match &args.index {
            Some(p) => EmbeddingIndex::read(p)?,
            None => build_index(&corpus, &ckpt.model)?.index,
        };
        let retriever = Retriever::new(&ckpt.model, &index)?;
        evaluate(method, &corpus, &eval, &Artifacts::Dense(&retriever), &ks)?
    } else {
        let tokenizer = ckpt.map_or_else(TokenizerConfig::default, |c| c.model.tokenizer);
        let lexical = LexicalIndex::build(&corpus, tokenizer)?;
        evaluate(method, &corpus, &eval, &Artifacts::Lexical(&lexical), &ks)?
    };
    std::fs::create_dir_all(&args.out).map_err(Error::from)?;
    let json = args.out.join(format!("topk_{}.json", method.name()));
    let csv = args.out.join(format!("topk_{}.csv", method.name()));
    report.write(&json, &csv)?;
    for (k, a) in report.ks.iter().zip(&report.accuracies) {
        println!("top{k}\t{a}");
    }
    println!("json\t{}", json.display());
    println!("csv\t{}", csv.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot start {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => run_train(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Index(a) => run_index(a),
        Command::Query(a) => run_query(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => bench::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! Queries per second of exhaustive ARS retrieval over a random corpus.

use std::time::Instant;

use ars_core::numerics::Rng;
use ars_core::retrieval::{build_index, Corpus, Passage, Retriever};
use ars_core::trainer::{init_model, ModelDims, RunConfig};
use ars_core::Error;

use crate::{echo, CmdResult, Failure};

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    passages: usize,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 1024)]
    feature_dim: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

const VOCAB: usize = 5000;

fn text(words: &[String], len: usize, rng: &mut Rng) -> String {
    (0..len)
        .map(|_| words[rng.below(words.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn run(args: &BenchArgs) -> CmdResult {
    echo(&[
        ("passages", args.passages.to_string()),
        ("queries", args.queries.to_string()),
        ("embed-dim", args.embed_dim.to_string()),
        ("hidden-dim", args.hidden_dim.to_string()),
        ("feature-dim", args.feature_dim.to_string()),
        ("k", args.k.to_string()),
        ("seed", args.seed.to_string()),
    ]);
    if args.passages == 0 || args.queries == 0 || args.k == 0 {
        return Err(Failure::usage(
            "--passages, --queries and --k must be positive",
        ));
    }
    let run = RunConfig {
        seed: args.seed,
        dims: ModelDims {
            feature_dim: args.feature_dim,
            embed_dim: args.embed_dim,
            hidden_dim: args.hidden_dim,
        },
        ..RunConfig::default()
    };
    run.validate()?;
    let model = init_model(&run)?;

    let mut rng = Rng::new(args.seed).derive("bench");
    let words: Vec<String> = (0..VOCAB).map(|i| format!("w{i}")).collect();
    let mut corpus = Corpus::new();
    for pid in 1..=args.passages as u64 {
        let len = 16 + rng.below(17);
        corpus.insert(
            pid,
            Passage {
                title: String::new(),
                text: text(&words, len, &mut rng),
            },
        )?;
    }
    let queries: Vec<String> = (0..args.queries)
        .map(|_| text(&words, 8, &mut rng))
        .collect();

    let t = Instant::now();
    let index = build_index(&corpus, &model)?.index;
    let retriever = Retriever::new(&model, &index)?;
    let index_secs = t.elapsed().as_secs_f64();

    // one untimed query warms caches and the thread pool
    retriever.retrieve(&queries[0], args.k)?;
    let mut latencies = Vec::with_capacity(queries.len());
    let start = Instant::now();
    for q in &queries {
        let t = Instant::now();
        let hits = retriever.retrieve(q, args.k)?;
        latencies.push(t.elapsed().as_secs_f64() * 1e3);
        if hits.hits.is_empty() {
            return Err(Error::EmptyDataset.into());
        }
    }
    let total = start.elapsed().as_secs_f64();
    latencies.sort_by(f64::total_cmp);

    println!("passages\t{}", index.len());
    println!("queries\t{}", queries.len());
    println!("threads\t{}", rayon::current_num_threads());
    println!("index_secs\t{index_secs:.3}");
    println!("qps\t{:.2}", queries.len() as f64 / total);
    for p in [50.0, 90.0, 99.0] {
        println!("latency_p{p}_ms\t{:.3}", percentile(&latencies, p));
    }
    println!("latency_max_ms\t{:.3}", latencies[latencies.len() - 1]);
    Ok(())
}

//! Generates the synthetic corpus, builds neighbor caches and reports how
//! often retrieved neighbors share the query's cluster.
//!
//! cargo run --release --example synth_and_retrieve -- --noise 0.3 --k 5

use clap::Parser;
use grasp::embedstore::{build_neighbor_cache, normalize_rows, synth_corpus, topk_neighbors, SynthConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() -> grasp::Result<()> {
    let args = Args::parse();
    let corpus = synth_corpus(&SynthConfig {
        noise: args.noise,
        seed: args.seed,
        ..SynthConfig::default()
    })?;
    let cache = build_neighbor_cache(&corpus.items, args.k)?;
    let rows = cache.rows();
    let same: usize = (0..rows)
        .map(|r| {
            let c = corpus.item_cluster[r];
            cache
                .neighbors(r)
                .iter()
                .filter(|&&n| corpus.item_cluster[n] == c)
                .count()
        })
        .sum();
    println!("{rows} items, k = {}", args.k);
    println!(
        "neighbors sharing the query's cluster: {:.1}%",
        100.0 * same as f64 / (rows * args.k) as f64
    );

    let normed = normalize_rows(&corpus.items);
    println!("item 0 (cluster {}):", corpus.item_cluster[0]);
    for (id, sim) in topk_neighbors(&normed, 0, args.k.min(5))? {
        println!("  item {id:>3}  cluster {}  cosine {sim:.4}", corpus.item_cluster[id]);
    }
    Ok(())
}

//! Full model against each single ablation (no attention, no similar branch,
//! no global branch, softmax gates) on the synthetic corpus.
//!
//! cargo run --release --example ablation_sweep -- --seeds 42,43,44

use clap::Parser;
use grasp::backbone::BackboneConfig;
use grasp::dataset::{split_leave_one_out, Phase};
use grasp::embedstore::{synth_corpus, SemanticStore, SynthConfig};
use grasp::eval::{evaluate, ModelScorer};
use grasp::hae::Ablation;
use grasp::model::{Model, ModelConfig, SemanticStores};
use grasp::trainer::{fit, TrainConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, value_delimiter = ',', default_value = "42")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    h: usize,
}

fn main() -> grasp::Result<()> {
    let args = Args::parse();
    let corpus = synth_corpus(&SynthConfig::default())?;
    let ds = corpus.dataset;
    let stores = SemanticStores::new(
        SemanticStore::build(corpus.users, 10)?,
        SemanticStore::build(corpus.items, 10)?,
    )?;
    let split = split_leave_one_out(&ds);
    let off = Ablation::default();
    let variants = [
        off,
        Ablation {
            no_attention: true,
            ..off
        },
        Ablation {
            no_similar: true,
            ..off
        },
        Ablation { no_global: true, ..off },
        Ablation { softmax: true, ..off },
    ];
    println!("seed\tvariant\tepochs\tval_ndcg10\ttest_ndcg10");
    for &seed in &args.seeds {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        for ablation in variants {
            let mut mc = ModelConfig::grasp(BackboneConfig::sasrec(args.h));
            mc.ablation = ablation;
            let r = fit(
                Model::init(mc, stores.d_sem(), ds.item_count(), seed)?,
                &stores,
                &ds,
                &split,
                &cfg,
                None,
            )?;
            let scorer = ModelScorer {
                model: &r.best,
                stores: &stores,
            };
            let test = evaluate(&scorer, &ds, &split, Phase::Test, cfg.eval_negatives, seed)?;
            println!(
                "{seed}\t{}\t{}\t{:.4}\t{:.4}",
                ablation.label(),
                r.state.epoch,
                r.state.best_val_ndcg10,
                test.report.ndcg(10).unwrap_or(0.0)
            );
        }
    }
    Ok(())
}

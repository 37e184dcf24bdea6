//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use grasp::backbone::BackboneConfig;
use grasp::dataset::{split_leave_one_out, LeaveOneOutSplit, Phase};
use grasp::embedstore::{synth_corpus, SemanticStore, SynthConfig, SynthCorpus, DEFAULT_K};
use grasp::eval::{evaluate, Evaluation, ModelScorer};
use grasp::model::{Model, ModelConfig, SemanticStores};
use grasp::trainer::{fit, FitResult, TrainConfig};

/// Cosine top-k by a full scan: similarities computed from raw rows, sorted
/// descending, ties to the lower index, the query row excluded.
pub fn brute_topk(rows: &[Vec<f64>], query: usize, k: usize) -> Vec<(usize, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let q = &rows[query];
    let mut all: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, r)| {
            let d = norm(q) * norm(r);
            let dot: f64 = q.iter().zip(r).map(|(a, b)| a * b).sum();
            (i, if d == 0.0 { 0.0 } else { dot / d })
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// DCG over an explicit relevance list with one relevant item at `rank`.
pub fn brute_ndcg(rank: usize, k: usize) -> f64 {
    let len = rank.max(k);
    let mut rel = vec![0.0; len];
    rel[rank - 1] = 1.0;
    let dcg: f64 = (0..k).map(|i| rel[i] / ((i + 2) as f64).log2()).sum();
    let idcg = 1.0 / 2f64.log2();
    dcg / idcg
}

pub fn brute_hr(rank: usize, k: usize) -> f64 {
    let hits = (1..=k).filter(|&pos| pos == rank).count();
    hits as f64
}

/// Expected NDCG@k when the target's rank is uniform over 1..=n.
pub fn random_baseline_ndcg(n: usize, k: usize) -> f64 {
    (1..=n).map(|r| brute_ndcg(r, k)).sum::<f64>() / n as f64
}

pub struct Synthetic {
    pub corpus: SynthCorpus,
    pub stores: SemanticStores,
    pub split: LeaveOneOutSplit,
}

pub fn synthetic(cfg: SynthConfig) -> Synthetic {
    let corpus = synth_corpus(&cfg).unwrap();
    let stores = SemanticStores::new(
        SemanticStore::build(corpus.users.clone(), DEFAULT_K).unwrap(),
        SemanticStore::build(corpus.items.clone(), DEFAULT_K).unwrap(),
    )
    .unwrap();
    let split = split_leave_one_out(&corpus.dataset);
    Synthetic { corpus, stores, split }
}

pub struct Outcome {
    pub fit: FitResult,
    pub test: Evaluation,
}

pub fn train_and_test(s: &Synthetic, model: ModelConfig, cfg: &TrainConfig) -> Outcome {
    let init = Model::init(model, s.stores.d_sem(), s.corpus.dataset.item_count(), cfg.seed).unwrap();
    let fit = fit(init, &s.stores, &s.corpus.dataset, &s.split, cfg, None).unwrap();
    let scorer = ModelScorer {
        model: &fit.best,
        stores: &s.stores,
    };
    let test = evaluate(
        &scorer,
        &s.corpus.dataset,
        &s.split,
        Phase::Test,
        cfg.eval_negatives,
        cfg.seed,
    )
    .unwrap();
    Outcome { fit, test }
}

pub fn sasrec_defaults() -> BackboneConfig {
    BackboneConfig::sasrec(64)
}

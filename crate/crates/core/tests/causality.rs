//! Suffix perturbation: the output at position t must not change when any
//! later input changes.

use grasp::backbone::{Backbone, BackboneConfig};
use grasp::embedstore::{EmbeddingMatrix, SemanticStore};
use grasp::hae::Ablation;
use grasp::model::{Model, ModelConfig, SemanticStores};
use grasp::nn::{uniform_mat, Mat};
use grasp::rng::stream;
use rand::Rng as _;

const INSTANCES: u64 = 100;

fn random_config(rng: &mut grasp::rng::Rng, gru: bool) -> BackboneConfig {
    let h = [4, 8, 12][rng.random_range(0..3)];
    let mut cfg = if gru {
        BackboneConfig::gru4rec(h)
    } else {
        BackboneConfig::sasrec(h)
    };
    cfg.n_layers = rng.random_range(1..=2);
    cfg.max_seq_len = 16;
    if !gru {
        cfg.n_heads = [1, 2, 4][rng.random_range(0..3)];
    }
    cfg
}

/// Returns how many instances changed at least one output after the cut.
fn suffix_suite(gru: bool) -> u64 {
    let mut downstream_changed = 0;
    for i in 0..INSTANCES {
        let mut rng = stream(i, &[gru as u64]);
        let cfg = random_config(&mut rng, gru);
        let bb = Backbone::init(cfg, &mut rng).unwrap();
        let len = rng.random_range(2..=cfg.max_seq_len);
        let cut = rng.random_range(0..len - 1);
        let x = uniform_mat(&mut rng, len, cfg.h, 1);
        let mut y: Mat = x.clone();
        let noise = uniform_mat(&mut rng, len - cut - 1, cfg.h, 1);
        y.slice_mut(ndarray::s![cut + 1.., ..]).assign(&noise);
        let a = bb.encode(&x).unwrap().per_position;
        let b = bb.encode(&y).unwrap().per_position;
        for t in 0..=cut {
            let (ra, rb) = (a.row(t), b.row(t));
            assert!(
                ra.iter().zip(rb.iter()).all(|(p, q)| p.to_bits() == q.to_bits()),
                "instance {i} {cfg:?}: position {t} moved after editing positions > {cut}"
            );
        }
        if a.row(len - 1) != b.row(len - 1) {
            downstream_changed += 1;
        }
    }
    downstream_changed
}

#[test]
fn gru_is_causal() {
    assert_eq!(suffix_suite(true), INSTANCES);
}

#[test]
fn sasrec_is_causal() {
    assert_eq!(suffix_suite(false), INSTANCES);
}

#[test]
fn enhanced_model_logits_are_causal() {
    let mut rng = stream(7, &[]);
    let users = EmbeddingMatrix::new(uniform_mat(&mut rng, 6, 5, 1)).unwrap();
    let items = EmbeddingMatrix::new(uniform_mat(&mut rng, 20, 5, 1)).unwrap();
    let stores = SemanticStores::new(
        SemanticStore::build(users, 3).unwrap(),
        SemanticStore::build(items, 3).unwrap(),
    )
    .unwrap();
    for ablation in [
        Ablation::default(),
        Ablation {
            softmax: true,
            ..Ablation::default()
        },
    ] {
        for bb in [BackboneConfig::sasrec(8), BackboneConfig::gru4rec(8)] {
            let mut cfg = ModelConfig::grasp(bb);
            cfg.ablation = ablation;
            let model = Model::init(cfg, 5, 20, 3).unwrap();
            for i in 0..20 {
                let len = rng.random_range(2..12);
                let cut = rng.random_range(0..len - 1);
                let seq: Vec<usize> = (0..len).map(|_| rng.random_range(0..20)).collect();
                let mut edited = seq.clone();
                for v in &mut edited[cut + 1..] {
                    *v = rng.random_range(0..20);
                }
                let cands: Vec<(usize, usize)> = (0..=cut).flat_map(|t| (0..20).map(move |it| (t, it))).collect();
                let a = model.forward(&stores, i % 6, &seq, &cands, None).unwrap().0;
                let b = model.forward(&stores, i % 6, &edited, &cands, None).unwrap().0;
                assert_eq!(a, b, "{} {ablation:?} instance {i}", bb.kind.as_str());
            }
        }
    }
}

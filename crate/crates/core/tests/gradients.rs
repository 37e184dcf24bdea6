//! Analytic gradients against central finite differences (64-bit, step 1e-5).

use grasp::backbone::{Backbone, BackboneConfig};
use grasp::embedstore::{EmbeddingMatrix, SemanticStore};
use grasp::gradcheck::{check, compare};
use grasp::hae::{Ablation, Enhancer, HaeParams};
use grasp::model::{Model, ModelConfig, SemanticStores};
use grasp::nn::{uniform_mat, Mat};
use grasp::rng::stream;

const STEP: f64 = 1e-5;

fn projection_loss(out: &Mat, weights: &Mat) -> f64 {
    (out * weights).sum()
}

fn stores(d: usize, users: usize, items: usize, seed: u64) -> SemanticStores {
    let mut rng = stream(seed, &[]);
    let u = EmbeddingMatrix::new(uniform_mat(&mut rng, users, d, 1)).unwrap();
    let i = EmbeddingMatrix::new(uniform_mat(&mut rng, items, d, 1)).unwrap();
    SemanticStores::new(SemanticStore::build(u, 2).unwrap(), SemanticStore::build(i, 2).unwrap()).unwrap()
}

#[test]
fn hae_parameters() {
    for ablation in [
        Ablation::default(),
        Ablation {
            softmax: true,
            ..Ablation::default()
        },
    ] {
        let s = stores(3, 3, 6, 1);
        let enhancer = Enhancer::new(&s.users, &s.items, ablation).unwrap();
        let (features, _) = enhancer.sequence_features(1, &[0, 4, 2, 4]).unwrap();
        let mut rng = stream(2, &[]);
        let mut p = HaeParams::init(3, 5, 4, &mut rng);
        let upstream = uniform_mat(&mut rng, 4, 4, 1);
        let (_, cache) = p.forward(&features);
        let analytic = p.backward(&cache, &upstream);
        let r = check(&mut p, &analytic, STEP, |q| {
            projection_loss(&q.forward(&features).0, &upstream)
        });
        assert!(r.relative_error < 1e-4, "{ablation:?}: {r:?}");
    }
}

fn backbone_case(cfg: BackboneConfig, seed: u64) {
    let mut rng = stream(seed, &[]);
    let mut model = Backbone::init(cfg, &mut rng).unwrap();
    let x = uniform_mat(&mut rng, 3, cfg.h, 1) * 2.0;
    let w = uniform_mat(&mut rng, 3, cfg.h, 1);
    let (_, cache) = model.forward(&x, None).unwrap();
    let (analytic, dx) = model.backward(&cache, &w);
    let r = check(&mut model, &analytic, STEP, |m| {
        projection_loss(&m.encode(&x).unwrap().per_position, &w)
    });
    assert!(r.relative_error < 1e-3, "{cfg:?} params: {r:?}");

    let mut numeric = Vec::new();
    for i in 0..x.len() {
        let mut up = x.clone();
        let mut down = x.clone();
        up.as_slice_mut().unwrap()[i] += STEP;
        down.as_slice_mut().unwrap()[i] -= STEP;
        let f = |v: &Mat| projection_loss(&model.encode(v).unwrap().per_position, &w);
        numeric.push((f(&up) - f(&down)) / (2.0 * STEP));
    }
    let r = compare(dx.as_slice().unwrap(), &numeric);
    assert!(r.relative_error < 1e-3, "{cfg:?} inputs: {r:?}");
}

#[test]
fn gru_two_layers() {
    for seed in 0..3 {
        backbone_case(
            BackboneConfig {
                n_layers: 2,
                ..BackboneConfig::gru4rec(4)
            },
            seed,
        );
    }
}

#[test]
fn sasrec_two_layers() {
    for (seed, heads) in [(0, 1), (1, 2), (2, 4)] {
        backbone_case(
            BackboneConfig {
                n_layers: 2,
                n_heads: heads,
                max_seq_len: 5,
                ..BackboneConfig::sasrec(4)
            },
            seed,
        );
    }
}

/// Full model: logits of a few candidates through encoder and backbone.
fn model_case(cfg: ModelConfig) {
    let s = stores(3, 3, 7, 9);
    let mut m = Model::init(cfg, 3, 7, 11).unwrap();
    let inputs = [1, 5, 2];
    let cands = [(0, 3), (1, 6), (2, 2), (2, 0)];
    let weights = [0.7, -1.1, 0.4, 0.9];
    let loss = |m: &Model| -> f64 {
        let (z, _) = m.forward(&s, 1, &inputs, &cands, None).unwrap();
        z.iter().zip(weights).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = m.forward(&s, 1, &inputs, &cands, None).unwrap();
    let mut g = m.zeros_like();
    m.backward(&cache, &weights, &mut g);
    let before = s.checksum();
    let r = check(&mut m, &g, STEP, loss);
    assert!(r.relative_error < 1e-3, "{}: {r:?}", cfg.label());
    assert_eq!(s.checksum(), before);
}

#[test]
fn whole_model_variants() {
    let sas = BackboneConfig {
        max_seq_len: 4,
        ..BackboneConfig::sasrec(4)
    };
    let gru = BackboneConfig::gru4rec(4);
    model_case(ModelConfig::grasp(sas));
    model_case(ModelConfig::grasp(gru));
    model_case(ModelConfig::id_only(sas));
    let mut soft = ModelConfig::grasp(sas);
    soft.ablation.softmax = true;
    model_case(soft);
    let mut with_ids = ModelConfig::grasp(gru);
    with_ids.add_id_embedding = true;
    model_case(with_ids);
}

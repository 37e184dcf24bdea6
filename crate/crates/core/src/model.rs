//! The trainable recommender: an item encoder feeding a sequential backbone.
//!
//! The encoder is either the semantic enhancement MLP (optionally plus a
//! trainable id table) or, for the baseline, an id table alone. The model
//! maps `(user, input items, candidates)` to one logit per candidate, where a
//! candidate is an item scored against the backbone output at a position.

use std::path::Path;

use ndarray::{concatenate, Axis};

use crate::backbone::{Backbone, BackboneCache, BackboneConfig};
use crate::embedstore::{load_embedding_matrix, write_embedding_matrix, EmbeddingMatrix, SemanticStore};
use crate::error::{GraspError, Result};
use crate::hae::{Ablation, Enhancer, HaeCache, HaeParams};
use crate::nn::{self, slice, slice_mut, uniform_mat, Mat, Params};
use crate::rng::{stream, tag, Rng};

/// Frozen user and item semantic stores.
#[derive(Debug, Clone)]
pub struct SemanticStores {
    pub users: SemanticStore,
    pub items: SemanticStore,
}

impl SemanticStores {
    pub fn new(users: SemanticStore, items: SemanticStore) -> Result<Self> {
        if users.dim() != items.dim() {
            return Err(GraspError::Compatibility(format!(
                "user embeddings have dim {}, item embeddings {}",
                users.dim(),
                items.dim()
            )));
        }
        Ok(Self { users, items })
    }

    pub fn d_sem(&self) -> usize {
        self.items.dim()
    }

    /// Checksum over both embedding matrices and both pooled-mean tables.
    pub fn checksum(&self) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        for s in [&self.users, &self.items] {
            acc ^= s.embeddings.checksum();
            acc = acc.wrapping_mul(0x100_0000_01b3);
            for v in s.cache.pooled_means().iter() {
                acc ^= v.to_bits();
                acc = acc.wrapping_mul(0x100_0000_01b3);
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Items are represented through the semantic enhancement module.
    Semantic,
    /// Baseline: a trainable id embedding table only.
    IdOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub encoder: EncoderKind,
    pub ablation: Ablation,
    /// Width of the fusion MLP's hidden layer.
    pub hae_hidden: usize,
    /// Experimental: add a trainable id embedding to the fused row.
    pub add_id_embedding: bool,
}

impl ModelConfig {
    pub fn grasp(backbone: BackboneConfig) -> Self {
        Self {
            backbone,
            encoder: EncoderKind::Semantic,
            ablation: Ablation::default(),
            hae_hidden: 2 * backbone.h,
            add_id_embedding: false,
        }
    }

    pub fn id_only(backbone: BackboneConfig) -> Self {
        Self {
            encoder: EncoderKind::IdOnly,
            ..Self::grasp(backbone)
        }
    }

    fn uses_id_table(&self) -> bool {
        self.encoder == EncoderKind::IdOnly || self.add_id_embedding
    }

    pub fn label(&self) -> String {
        match self.encoder {
            EncoderKind::IdOnly => format!("{}-id", self.backbone.kind.as_str()),
            EncoderKind::Semantic => format!("{}-grasp-{}", self.backbone.kind.as_str(), self.ablation.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub hae: Option<HaeParams>,
    pub id_table: Option<Mat>,
    pub backbone: Backbone,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    n_inputs: usize,
    candidates: Vec<(usize, usize)>,
    item_ids: Vec<usize>,
    rows: Mat,
    hae: Option<HaeCache>,
    outputs: Mat,
    backbone: BackboneCache,
}

impl ForwardCache {
    /// Backbone output per input position.
    pub fn outputs(&self) -> &Mat {
        &self.outputs
    }
}

impl Model {
    /// Initializes every parameter group from its own stream of `seed`, so
    /// models that share a backbone configuration share its initial weights.
    pub fn init(config: ModelConfig, d_sem: usize, item_count: usize, seed: u64) -> Result<Self> {
        config.backbone.validate()?;
        let h = config.backbone.h;
        let hae = match config.encoder {
            EncoderKind::Semantic => {
                if d_sem == 0 || config.hae_hidden == 0 {
                    return Err(GraspError::Argument("d_sem and hae_hidden must be positive".into()));
                }
                Some(HaeParams::init(
                    d_sem,
                    config.hae_hidden,
                    h,
                    &mut stream(seed, &[tag::INIT_HAE]),
                ))
            }
            EncoderKind::IdOnly => None,
        };
        let id_table = config
            .uses_id_table()
            .then(|| uniform_mat(&mut stream(seed, &[tag::INIT_ID_TABLE]), item_count, h, h));
        let backbone = Backbone::init(config.backbone, &mut stream(seed, &[tag::INIT_BACKBONE]))?;
        Ok(Self {
            config,
            hae,
            id_table,
            backbone,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            hae: self.hae.as_ref().map(HaeParams::zeros_like),
            id_table: self.id_table.as_ref().map(|t| Mat::zeros(t.raw_dim())),
            backbone: self.backbone.zeros_like(),
        }
    }

    pub fn h(&self) -> usize {
        self.config.backbone.h
    }

    pub fn max_seq_len(&self) -> usize {
        self.config.backbone.max_seq_len
    }

    /// Trainable parameter groups with their sizes, in registry order.
    pub fn param_groups(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        if let Some(p) = &self.hae {
            out.push(("hae", p.len()));
        }
        if let Some(t) = &self.id_table {
            out.push(("item_embedding", t.len()));
        }
        out.push(("backbone", self.backbone.len()));
        out
    }

    /// Rejects stores or catalogues that do not fit this model's shapes.
    pub fn check_compatible(&self, stores: &SemanticStores, item_count: usize) -> Result<()> {
        if stores.items.rows() != item_count {
            return Err(GraspError::Compatibility(format!(
                "item store has {} rows but the dataset has {item_count} items",
                stores.items.rows()
            )));
        }
        if let Some(p) = &self.hae {
            if p.d_sem() != stores.d_sem() {
                return Err(GraspError::Compatibility(format!(
                    "checkpoint expects d_sem {} but embeddings have dim {}",
                    p.d_sem(),
                    stores.d_sem()
                )));
            }
            if p.h() != self.h() {
                return Err(GraspError::Compatibility(format!(
                    "HAE output {} does not match backbone h {}",
                    p.h(),
                    self.h()
                )));
            }
        }
        if let Some(t) = &self.id_table {
            if t.nrows() != item_count {
                return Err(GraspError::Compatibility(format!(
                    "id table has {} rows but the dataset has {item_count} items",
                    t.nrows()
                )));
            }
        }
        Ok(())
    }

    /// Logits for `candidates`, each a `(position, item)` pair scored against
    /// the backbone output at that input position. Dropout is active only
    /// when a stream is given.
    pub fn forward(
        &self,
        stores: &SemanticStores,
        user: usize,
        inputs: &[usize],
        candidates: &[(usize, usize)],
        dropout: Option<&mut Rng>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        if inputs.is_empty() {
            return Err(GraspError::Argument("empty input sequence".into()));
        }
        if let Some(&(t, _)) = candidates.iter().find(|c| c.0 >= inputs.len()) {
            return Err(GraspError::Argument(format!(
                "candidate position {t} beyond {} inputs",
                inputs.len()
            )));
        }
        let item_ids: Vec<usize> = inputs.iter().copied().chain(candidates.iter().map(|c| c.1)).collect();
        let (rows, hae) = self.item_rows(stores, user, inputs, candidates, &item_ids)?;
        let n = inputs.len();
        let input_rows = rows.slice(ndarray::s![..n, ..]).to_owned();
        let (out, backbone) = self.backbone.forward(&input_rows, dropout)?;
        let outputs = out.per_position;
        let logits = candidates
            .iter()
            .enumerate()
            .map(|(r, &(t, _))| nn::dot(row(&outputs, t), row(&rows, n + r)))
            .collect();
        Ok((
            logits,
            ForwardCache {
                n_inputs: n,
                candidates: candidates.to_vec(),
                item_ids,
                rows,
                hae,
                outputs,
                backbone,
            },
        ))
    }

    fn item_rows(
        &self,
        stores: &SemanticStores,
        user: usize,
        inputs: &[usize],
        candidates: &[(usize, usize)],
        ids: &[usize],
    ) -> Result<(Mat, Option<HaeCache>)> {
        let mut rows = Mat::zeros((ids.len(), self.h()));
        let mut cache = None;
        if let Some(p) = &self.hae {
            let enhancer = Enhancer::new(&stores.users, &stores.items, self.config.ablation)?;
            let (fi, ctx) = enhancer.sequence_features(user, inputs)?;
            let fc = enhancer.candidate_features(user, &ctx, candidates)?;
            let features = concatenate![Axis(0), fi, fc];
            let (out, c) = p.forward(&features);
            rows += &out;
            cache = Some(c);
        }
        if let Some(table) = &self.id_table {
            for (r, &item) in ids.iter().enumerate() {
                if item >= table.nrows() {
                    return Err(GraspError::Lookup {
                        what: "item",
                        id: item,
                        size: table.nrows(),
                    });
                }
                let mut dst = rows.row_mut(r);
                dst += &table.row(item);
            }
        }
        Ok((rows, cache))
    }

    /// Accumulates into `grad` the parameter gradient for upstream gradient
    /// `d_logits` on the logits returned by [`Model::forward`].
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[f64], grad: &mut Model) {
        let n = cache.n_inputs;
        let h = self.h();
        let mut d_out = Mat::zeros((n, h));
        let mut d_rows = Mat::zeros((cache.rows.nrows(), h));
        for (r, (&(t, _), &g)) in cache.candidates.iter().zip(d_logits).enumerate() {
            if g == 0.0 {
                continue;
            }
            d_out.row_mut(t).scaled_add(g, &cache.rows.row(n + r));
            d_rows.row_mut(n + r).scaled_add(g, &cache.outputs.row(t));
        }
        let (g_backbone, d_inputs) = self.backbone.backward(&cache.backbone, &d_out);
        grad.backbone.add_assign(&g_backbone);
        d_rows.slice_mut(ndarray::s![..n, ..]).assign(&d_inputs);
        if let (Some(p), Some(c), Some(gp)) = (&self.hae, &cache.hae, grad.hae.as_mut()) {
            gp.add_assign(&p.backward(c, &d_rows));
        }
        if let Some(gt) = grad.id_table.as_mut() {
            for (r, &item) in cache.item_ids.iter().enumerate() {
                let mut dst = gt.row_mut(item);
                dst += &d_rows.row(r);
            }
        }
    }

    /// Evaluation-mode logits of `items` after the full input sequence. Only
    /// the most recent `max_seq_len` inputs are used.
    pub fn score_candidates(
        &self,
        stores: &SemanticStores,
        user: usize,
        inputs: &[usize],
        items: &[usize],
    ) -> Result<Vec<f64>> {
        let inputs = truncate_recent(inputs, self.max_seq_len());
        let last = inputs.len().saturating_sub(1);
        let candidates: Vec<(usize, usize)> = items.iter().map(|&i| (last, i)).collect();
        Ok(self.forward(stores, user, inputs, &candidates, None)?.0)
    }

    /// Writes `model.json`, `backbone.gbkb` and the encoder's tensor files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GraspError::io(dir, e))?;
        let cfg = serde_json::to_string_pretty(&self.config).expect("serializable config");
        let meta = dir.join("model.json");
        std::fs::write(&meta, cfg + "\n").map_err(|e| GraspError::io(&meta, e))?;
        self.backbone.write(&dir.join("backbone.gbkb"))?;
        if let Some(p) = &self.hae {
            p.write(&dir.join("hae.ghae"))?;
        }
        if let Some(t) = &self.id_table {
            write_embedding_matrix(&EmbeddingMatrix::new(t.clone())?, &dir.join("id_embeddings.gemb"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = dir.join("model.json");
        let text = std::fs::read_to_string(&meta).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => GraspError::MissingFile {
                path: meta.clone(),
                hint: "expected a checkpoint directory written by `train`".into(),
            },
            _ => GraspError::io(&meta, e),
        })?;
        let config: ModelConfig =
            serde_json::from_str(&text).map_err(|e| GraspError::format(meta.display().to_string(), e.to_string()))?;
        let backbone = Backbone::read(&dir.join("backbone.gbkb"))?;
        if backbone.config() != config.backbone {
            return Err(GraspError::Compatibility(
                "backbone file disagrees with model.json".into(),
            ));
        }
        let hae = match config.encoder {
            EncoderKind::Semantic => Some(HaeParams::read(&dir.join("hae.ghae"))?),
            EncoderKind::IdOnly => None,
        };
        let id_table = if config.uses_id_table() {
            Some(load_embedding_matrix(&dir.join("id_embeddings.gemb"))?.values().clone())
        } else {
            None
        };
        Ok(Self {
            config,
            hae,
            id_table,
            backbone,
        })
    }
}

impl Params for Model {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(p) = &self.hae {
            out.extend(p.tensors());
        }
        if let Some(t) = &self.id_table {
            out.push(slice(t));
        }
        out.extend(self.backbone.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.hae {
            out.extend(p.tensors_mut());
        }
        if let Some(t) = &mut self.id_table {
            out.push(slice_mut(t));
        }
        out.extend(self.backbone.tensors_mut());
        out
    }
}

fn row(m: &Mat, r: usize) -> &[f64] {
    let cols = m.ncols();
    &m.as_slice().expect("standard layout")[r * cols..(r + 1) * cols]
}

/// The last `max_len` entries of `seq`.
pub fn truncate_recent(seq: &[usize], max_len: usize) -> &[usize] {
    &seq[seq.len().saturating_sub(max_len)..]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::{synth_corpus, SynthConfig};

    pub(crate) fn tiny_stores() -> (SemanticStores, usize) {
        let corpus = synth_corpus(&SynthConfig {
            users: 40,
            items: 30,
            clusters: 3,
            dim: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let n_items = corpus.items.rows();
        let stores = SemanticStores::new(
            SemanticStore::build(corpus.users, 3).unwrap(),
            SemanticStore::build(corpus.items, 3).unwrap(),
        )
        .unwrap();
        (stores, n_items)
    }

    #[test]
    fn param_groups_by_encoder() {
        let (stores, items) = tiny_stores();
        let g = Model::init(ModelConfig::grasp(BackboneConfig::sasrec(8)), stores.d_sem(), items, 1).unwrap();
        let names: Vec<_> = g.param_groups().iter().map(|p| p.0).collect();
        assert_eq!(names, ["hae", "backbone"]);
        let b = Model::init(
            ModelConfig::id_only(BackboneConfig::sasrec(8)),
            stores.d_sem(),
            items,
            1,
        )
        .unwrap();
        let names: Vec<_> = b.param_groups().iter().map(|p| p.0).collect();
        assert_eq!(names, ["item_embedding", "backbone"]);
        assert_eq!(g.backbone, b.backbone);
        assert_eq!(g.len(), g.param_groups().iter().map(|p| p.1).sum::<usize>());
    }

    #[test]
    fn scores_are_order_free_over_candidates() {
        let (stores, items) = tiny_stores();
        let m = Model::init(ModelConfig::grasp(BackboneConfig::gru4rec(8)), stores.d_sem(), items, 2).unwrap();
        let a = m.score_candidates(&stores, 0, &[1, 2, 3], &[4, 5, 6]).unwrap();
        let b = m.score_candidates(&stores, 0, &[1, 2, 3], &[6, 4]).unwrap();
        assert_eq!(a[2], b[0]);
        assert_eq!(a[0], b[1]);
    }

    #[test]
    fn long_inputs_keep_recent_items() {
        let (stores, items) = tiny_stores();
        let cfg = BackboneConfig {
            max_seq_len: 3,
            ..BackboneConfig::sasrec(8)
        };
        let m = Model::init(ModelConfig::grasp(cfg), stores.d_sem(), items, 2).unwrap();
        let long = m.score_candidates(&stores, 1, &[9, 8, 1, 2, 3], &[4]).unwrap();
        let short = m.score_candidates(&stores, 1, &[1, 2, 3], &[4]).unwrap();
        assert_eq!(long, short);
        assert_eq!(truncate_recent(&[1, 2], 5), &[1, 2]);
    }

    #[test]
    fn checkpoint_directory_round_trip() {
        let (stores, items) = tiny_stores();
        let dir = tempfile::tempdir().unwrap();
        for mut cfg in [
            ModelConfig::grasp(BackboneConfig::sasrec(8)),
            ModelConfig::id_only(BackboneConfig::gru4rec(8)),
        ] {
            cfg.ablation.no_global = cfg.encoder == EncoderKind::Semantic;
            let mut m = Model::init(cfg, stores.d_sem(), items, 3).unwrap();
            m.round_to_f32();
            let sub = dir.path().join(cfg.label());
            m.save(&sub).unwrap();
            assert_eq!(Model::load(&sub).unwrap(), m);
        }
        let err = Model::load(&dir.path().join("missing")).unwrap_err();
        assert!(matches!(err, GraspError::MissingFile { .. }));
    }

    #[test]
    fn compatibility_checks() {
        let (stores, items) = tiny_stores();
        let m = Model::init(
            ModelConfig::grasp(BackboneConfig::sasrec(8)),
            stores.d_sem() + 1,
            items,
            3,
        )
        .unwrap();
        assert!(matches!(
            m.check_compatible(&stores, items),
            Err(GraspError::Compatibility(_))
        ));
        let m = Model::init(ModelConfig::grasp(BackboneConfig::sasrec(8)), stores.d_sem(), items, 3).unwrap();
        assert!(m.check_compatible(&stores, items).is_ok());
        assert!(m.check_compatible(&stores, items + 1).is_err());
    }

    #[test]
    fn backward_leaves_stores_untouched() {
        let (stores, items) = tiny_stores();
        let before = stores.checksum();
        let m = Model::init(ModelConfig::grasp(BackboneConfig::sasrec(8)), stores.d_sem(), items, 4).unwrap();
        let (logits, cache) = m.forward(&stores, 2, &[1, 2, 3], &[(0, 5), (2, 7)], None).unwrap();
        let mut g = m.zeros_like();
        m.backward(&cache, &[1.0, -0.5], &mut g);
        assert_eq!(logits.len(), 2);
        assert!(g.flat().iter().any(|&v| v != 0.0));
        assert_eq!(stores.checksum(), before);
    }
}

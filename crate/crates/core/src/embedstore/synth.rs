//! Cluster-structured synthetic corpora for desk-scale experiments.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Geometric, StandardNormal};

use super::EmbeddingMatrix;
use crate::dataset::{InteractionDataset, DEFAULT_MIN_ITEM_FREQ, DEFAULT_MIN_USER_LEN};
use crate::error::{GraspError, Result};
use crate::rng::{stream, tag};

const MEAN_SEQ_LEN: f64 = 8.0;
const MIN_SEQ_LEN: usize = 3;
const MAX_SEQ_LEN: usize = 50;
const IN_CLUSTER_PROB: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            clusters: 8,
            dim: 32,
            noise: 0.1,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: InteractionDataset,
    pub users: EmbeddingMatrix,
    pub items: EmbeddingMatrix,
    /// Home cluster of each (kept) user.
    pub user_cluster: Vec<usize>,
    /// Cluster of each (kept) item.
    pub item_cluster: Vec<usize>,
}

fn noisy(base: impl Iterator<Item = f64>, noise: f64, rng: &mut crate::rng::Rng) -> Vec<f64> {
    base.map(|v| {
        let z: f64 = StandardNormal.sample(rng);
        // stored at file precision so in-memory and on-disk corpora agree
        (v + noise * z) as f32 as f64
    })
    .collect()
}

/// Generates interactions plus user and item embeddings.
///
/// Item `i` belongs to cluster `i % clusters`; its embedding is the cluster's
/// basis vector plus Gaussian noise. Each user picks a home cluster and a
/// geometric length (mean 8, clamped to 3..=50); every event is an in-cluster
/// item with probability 0.8, otherwise an out-of-cluster one. A user's
/// embedding is the mean of the items in the part of the sequence that a
/// leave-one-out split trains on, plus noise, so held-out targets do not
/// leak into it. The result is filtered with the default thresholds and
/// re-indexed, so the written log reloads to the same ids.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let SynthConfig {
        users: n_users,
        items: m_items,
        clusters,
        dim,
        noise,
        seed,
    } = *cfg;
    if n_users == 0 || clusters == 0 || clusters > m_items || dim < clusters {
        return Err(GraspError::Argument(format!(
            "infeasible synth parameters: users={n_users} items={m_items} clusters={clusters} dim={dim}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(GraspError::Argument(format!(
            "noise must be finite and >= 0, got {noise}"
        )));
    }
    let mut rng = stream(seed, &[tag::SYNTH]);

    let item_cluster: Vec<usize> = (0..m_items).map(|i| i % clusters).collect();
    let members: Vec<Vec<usize>> = (0..clusters)
        .map(|c| (0..m_items).filter(|&i| item_cluster[i] == c).collect())
        .collect();

    let mut item_rows = Vec::with_capacity(m_items);
    for &c in &item_cluster {
        item_rows.push(noisy((0..dim).map(|j| if j == c { 1.0 } else { 0.0 }), noise, &mut rng));
    }

    let length = Geometric::new(1.0 / MEAN_SEQ_LEN).expect("valid p");
    let mut sequences = Vec::with_capacity(n_users);
    let mut user_cluster = Vec::with_capacity(n_users);
    let mut user_rows = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let home = rng.random_range(0..clusters);
        let len = (1 + length.sample(&mut rng) as usize).clamp(MIN_SEQ_LEN, MAX_SEQ_LEN);
        let home_items = &members[home];
        let outside = m_items - home_items.len();
        let seq: Vec<usize> = (0..len)
            .map(|_| {
                if outside == 0 || rng.random_bool(IN_CLUSTER_PROB) {
                    home_items[rng.random_range(0..home_items.len())]
                } else {
                    // k-th item outside the home cluster
                    let k = rng.random_range(0..outside);
                    (0..m_items).filter(|&i| item_cluster[i] != home).nth(k).unwrap()
                }
            })
            .collect();
        let profile = &seq[..len - 2];
        let mean = (0..dim).map(|j| profile.iter().map(|&i| item_rows[i][j]).sum::<f64>() / profile.len() as f64);
        user_rows.push(noisy(mean, noise, &mut rng));
        user_cluster.push(home);
        sequences.push(seq);
    }

    let raw = InteractionDataset::from_sequences(sequences, m_items)?;
    let mut text = String::new();
    for (u, seq) in raw.sequences().iter().enumerate() {
        for (t, &i) in seq.iter().enumerate() {
            text.push_str(&format!("{u}\t{i}\t{t}\n"));
        }
    }
    let dataset = crate::dataset::parse_interactions(&text, DEFAULT_MIN_USER_LEN, DEFAULT_MIN_ITEM_FREQ)?;
    let kept_users: Vec<usize> = dataset.user_raw_ids().iter().map(|s| s.parse().unwrap()).collect();
    let kept_items: Vec<usize> = dataset.item_raw_ids().iter().map(|s| s.parse().unwrap()).collect();
    // renumber so raw ids equal dense ids
    let dataset = InteractionDataset::from_sequences(dataset.sequences().to_vec(), dataset.item_count())?;

    let to_matrix = |rows: &[Vec<f64>], keep: &[usize]| -> Result<EmbeddingMatrix> {
        let flat: Vec<f64> = keep.iter().flat_map(|&r| rows[r].iter().copied()).collect();
        EmbeddingMatrix::new(Array2::from_shape_vec((keep.len(), dim), flat).expect("sized"))
    };
    Ok(SynthCorpus {
        users: to_matrix(&user_rows, &kept_users)?,
        items: to_matrix(&item_rows, &kept_items)?,
        user_cluster: kept_users.iter().map(|&u| user_cluster[u]).collect(),
        item_cluster: kept_items.iter().map(|&i| item_cluster[i]).collect(),
        dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::{normalize_rows, topk_neighbors};

    #[test]
    fn zero_noise_gives_exact_centroids() {
        let cfg = SynthConfig {
            users: 60,
            items: 40,
            clusters: 4,
            dim: 4,
            noise: 0.0,
            seed: 3,
        };
        let c = synth_corpus(&cfg).unwrap();
        for (i, row) in c.items.values().rows().into_iter().enumerate() {
            let mut expected = vec![0.0; 4];
            expected[c.item_cluster[i]] = 1.0;
            assert_eq!(row.to_vec(), expected);
        }
        let n = normalize_rows(&c.items);
        let cluster_size = c.item_cluster.iter().filter(|&&k| k == 0).count();
        for row in 0..n.rows() {
            for (j, sim) in topk_neighbors(&n, row, cluster_size - 1).unwrap() {
                assert_eq!(c.item_cluster[j], c.item_cluster[row]);
                assert_eq!(sim, 1.0);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig::default();
        let a = synth_corpus(&cfg).unwrap();
        let b = synth_corpus(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.users, b.users);
        assert_eq!(a.items, b.items);
        let c = synth_corpus(&SynthConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.items, c.items);
    }

    #[test]
    fn default_corpus_shape() {
        let c = synth_corpus(&SynthConfig::default()).unwrap();
        let ds = &c.dataset;
        assert_eq!(c.users.rows(), ds.user_count());
        assert_eq!(c.items.rows(), ds.item_count());
        assert!(ds.user_count() == 500, "users kept: {}", ds.user_count());
        assert!(ds.item_count() >= 190, "items kept: {}", ds.item_count());
        for seq in ds.sequences() {
            assert!((3..=50).contains(&seq.len()));
        }
        let mean = ds.interaction_count() as f64 / ds.user_count() as f64;
        assert!((6.5..10.0).contains(&mean), "mean length {mean}");
        // mostly in-cluster
        let mut inside = 0;
        for (u, seq) in ds.sequences().iter().enumerate() {
            inside += seq.iter().filter(|&&i| c.item_cluster[i] == c.user_cluster[u]).count();
        }
        let frac = inside as f64 / ds.interaction_count() as f64;
        assert!((0.75..0.86).contains(&frac), "in-cluster fraction {frac}");
    }

    #[test]
    fn infeasible_parameters() {
        let base = SynthConfig::default();
        assert!(synth_corpus(&SynthConfig { clusters: 300, ..base }).is_err());
        assert!(synth_corpus(&SynthConfig { dim: 4, ..base }).is_err());
        assert!(synth_corpus(&SynthConfig { noise: -1.0, ..base }).is_err());
    }
}

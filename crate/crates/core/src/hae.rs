//! Holistic attention enhancement.
//!
//! The user's semantic embedding is the query and the item's embedding is
//! both key and value. Each item gets three scalar-gated branches (self,
//! similar, global) which are concatenated and mapped by a one-hidden-layer
//! MLP into the backbone's hidden space. Semantic inputs are constants: no
//! gradient ever flows into the embedding stores.

use std::path::Path;

use ndarray::{s, Array2, ArrayViewMut1};

use crate::binio::{put_f32s, put_header, read_bytes, Reader};
use crate::embedstore::SemanticStore;
use crate::error::{GraspError, Result};
use crate::nn::{self, sigmoid, slice, slice_mut, uniform_mat, uniform_vec, vslice, vslice_mut, Mat, Params, Vector};
use crate::rng::Rng;

const GHAE_MAGIC: &[u8; 4] = b"GHAE";

/// Ablation switches. The default is the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Ablation {
    /// Bypass the gates: every branch is its value vector.
    pub no_attention: bool,
    /// Zero the similar branch's slot.
    pub no_similar: bool,
    /// Zero the global branch's slot.
    pub no_global: bool,
    /// Normalize gates with a softmax over the causal sequence prefix
    /// instead of the per-item sigmoid.
    pub softmax: bool,
}

impl Ablation {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_attention {
            parts.push("no_attention");
        }
        if self.no_similar {
            parts.push("no_similar");
        }
        if self.no_global {
            parts.push("no_global");
        }
        if self.softmax {
            parts.push("softmax_variant");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

/// Semantic inputs for one (user, item) pair.
#[derive(Debug, Clone, Copy)]
pub struct SemanticBundle<'a> {
    pub u: &'a [f64],
    pub u_bar: &'a [f64],
    pub item: &'a [f64],
    pub item_bar: &'a [f64],
}

impl SemanticBundle<'_> {
    fn dim(&self) -> Result<usize> {
        let d = self.u.len();
        if [self.u_bar.len(), self.item.len(), self.item_bar.len()]
            .iter()
            .any(|&n| n != d)
        {
            return Err(GraspError::Argument("bundle vectors differ in dimension".into()));
        }
        Ok(d)
    }
}

/// sigma(q . v / sqrt(scale_dim))
pub fn sigmoid_gate(q: &[f64], v: &[f64], scale_dim: usize) -> Result<f64> {
    if q.len() != v.len() {
        return Err(GraspError::Argument(format!(
            "gate query has {} entries, value {}",
            q.len(),
            v.len()
        )));
    }
    if scale_dim == 0 {
        return Err(GraspError::Argument("scale_dim must be positive".into()));
    }
    Ok(sigmoid(nn::dot(q, v) / (scale_dim as f64).sqrt()))
}

/// The three gated branches of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedBranches {
    pub self_branch: Vec<f64>,
    pub similar_branch: Vec<f64>,
    pub global_branch: Vec<f64>,
}

impl EnhancedBranches {
    /// `[self | similar | global]`, length 4 * d_sem.
    pub fn concat(&self) -> Vec<f64> {
        [&self.self_branch[..], &self.similar_branch, &self.global_branch].concat()
    }
}

/// Full-model branches for one bundle.
pub fn enhance_item(b: &SemanticBundle<'_>) -> Result<EnhancedBranches> {
    let d = b.dim()?;
    let gate_self = sigmoid_gate(b.u, b.item, d)?;
    let gate_similar = sigmoid_gate(b.u_bar, b.item_bar, d)?;
    let query = [b.u, b.u_bar].concat();
    let value = [b.item, b.item_bar].concat();
    let gate_global = sigmoid_gate(&query, &value, 2 * d)?;
    Ok(EnhancedBranches {
        self_branch: b.item.iter().map(|v| gate_self * v).collect(),
        similar_branch: b.item_bar.iter().map(|v| gate_similar * v).collect(),
        global_branch: value.iter().map(|v| gate_global * v).collect(),
    })
}

/// Fusion MLP: `relu(x w1 + b1) w2 + b2` with x the 4 * d_sem concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct HaeParams {
    pub w1: Mat,
    pub b1: Vector,
    pub w2: Mat,
    pub b2: Vector,
}

impl Params for HaeParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice(&self.w1), vslice(&self.b1), slice(&self.w2), vslice(&self.b2)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice_mut(&mut self.w1),
            vslice_mut(&mut self.b1),
            slice_mut(&mut self.w2),
            vslice_mut(&mut self.b2),
        ]
    }
}

/// Cached activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct HaeCache {
    input: Mat,
    hidden: Mat,
}

impl HaeParams {
    pub fn init(d_sem: usize, h_hidden: usize, h: usize, rng: &mut Rng) -> Self {
        let fan1 = 4 * d_sem;
        Self {
            w1: uniform_mat(rng, fan1, h_hidden, fan1),
            b1: uniform_vec(rng, h_hidden, fan1),
            w2: uniform_mat(rng, h_hidden, h, h_hidden),
            b2: uniform_vec(rng, h, h_hidden),
        }
    }

    pub fn zeros(d_sem: usize, h_hidden: usize, h: usize) -> Self {
        Self {
            w1: Mat::zeros((4 * d_sem, h_hidden)),
            b1: Vector::zeros(h_hidden),
            w2: Mat::zeros((h_hidden, h)),
            b2: Vector::zeros(h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_sem(), self.h_hidden(), self.h())
    }

    pub fn d_sem(&self) -> usize {
        self.w1.nrows() / 4
    }

    pub fn h_hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn h(&self) -> usize {
        self.w2.ncols()
    }

    fn check(&self) -> Result<()> {
        let ok = self.w1.nrows().is_multiple_of(4)
            && self.w1.nrows() > 0
            && self.b1.len() == self.w1.ncols()
            && self.w2.nrows() == self.w1.ncols()
            && self.b2.len() == self.w2.ncols();
        if ok {
            Ok(())
        } else {
            Err(GraspError::Argument("inconsistent HAE parameter shapes".into()))
        }
    }

    /// Row-wise MLP over a feature matrix (n x 4 d_sem).
    pub fn forward(&self, features: &Mat) -> (Mat, HaeCache) {
        let hidden = (features.dot(&self.w1) + &self.b1).mapv_into(|v| v.max(0.0));
        let out = hidden.dot(&self.w2) + &self.b2;
        (
            out,
            HaeCache {
                input: features.clone(),
                hidden,
            },
        )
    }

    /// Parameter gradients for an upstream gradient on the fused rows. The
    /// feature matrix is a constant, so nothing is propagated past it.
    pub fn backward(&self, cache: &HaeCache, d_out: &Mat) -> HaeParams {
        let mut g = self.zeros_like();
        nn::affine_backward(cache.hidden.view(), d_out, &mut g.w2, &mut g.b2);
        let mut d_hidden = d_out.dot(&self.w2.t());
        ndarray::Zip::from(&mut d_hidden).and(&cache.hidden).for_each(|d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        nn::affine_backward(cache.input.view(), &d_hidden, &mut g.w1, &mut g.b1);
        g
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| GraspError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path, "expected an HAE checkpoint (GHAE)")?;
        Self::decode(&bytes, &path.display().to_string())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_header(&mut out, GHAE_MAGIC);
        for n in [self.d_sem(), self.h_hidden(), self.h()] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for t in self.tensors() {
            put_f32s(&mut out, t);
        }
        out
    }

    pub fn decode(bytes: &[u8], what: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, what);
        r.magic(GHAE_MAGIC)?;
        r.version()?;
        let d_sem = r.u32()? as usize;
        let h_hidden = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w1 = r.f32_matrix(4 * d_sem, h_hidden)?;
        let b1 = r.f32_matrix(1, h_hidden)?.into_shape_with_order(h_hidden).unwrap();
        let w2 = r.f32_matrix(h_hidden, h)?;
        let b2 = r.f32_matrix(1, h)?.into_shape_with_order(h).unwrap();
        r.finish()?;
        Ok(Self { w1, b1, w2, b2 })
    }
}

/// Fuses one item's branches into the backbone's hidden space.
pub fn fuse(branches: &EnhancedBranches, p: &HaeParams) -> Result<Vector> {
    p.check()?;
    let d = p.d_sem();
    if branches.self_branch.len() != d || branches.similar_branch.len() != d || branches.global_branch.len() != 2 * d {
        return Err(GraspError::Argument(format!("branches do not match d_sem = {d}")));
    }
    let x = Mat::from_shape_vec((1, 4 * d), branches.concat()).expect("sized");
    Ok(p.forward(&x).0.row(0).to_owned())
}

/// Per-position log-sum-exp of gate logits along a sequence, used only by
/// the softmax ablation.
#[derive(Debug, Clone, Default)]
pub struct SequenceContext {
    prefix_lse: Vec<[f64; 3]>,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Builds gated branch features for a user against items drawn from the
/// frozen stores.
#[derive(Debug, Clone, Copy)]
pub struct Enhancer<'a> {
    pub users: &'a SemanticStore,
    pub items: &'a SemanticStore,
    pub ablation: Ablation,
}

impl<'a> Enhancer<'a> {
    pub fn new(users: &'a SemanticStore, items: &'a SemanticStore, ablation: Ablation) -> Result<Self> {
        if users.dim() != items.dim() {
            return Err(GraspError::Compatibility(format!(
                "user embeddings have dim {} but item embeddings {}",
                users.dim(),
                items.dim()
            )));
        }
        Ok(Self { users, items, ablation })
    }

    pub fn d_sem(&self) -> usize {
        self.items.dim()
    }

    fn check_ids(&self, user: usize, items: &[usize]) -> Result<()> {
        if user >= self.users.rows() {
            return Err(GraspError::Lookup {
                what: "user",
                id: user,
                size: self.users.rows(),
            });
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= self.items.rows()) {
            return Err(GraspError::Lookup {
                what: "item",
                id: bad,
                size: self.items.rows(),
            });
        }
        Ok(())
    }

    pub fn bundle(&self, user: usize, item: usize) -> SemanticBundle<'_> {
        SemanticBundle {
            u: self.users.embeddings.values().row(user).to_slice().unwrap(),
            u_bar: self.users.cache.pooled_means().row(user).to_slice().unwrap(),
            item: self.items.embeddings.values().row(item).to_slice().unwrap(),
            item_bar: self.items.cache.pooled_means().row(item).to_slice().unwrap(),
        }
    }

    /// Scaled gate logits (self, similar, global).
    fn logits(&self, user: usize, item: usize) -> [f64; 3] {
        let b = self.bundle(user, item);
        let d = self.d_sem() as f64;
        let s_self = nn::dot(b.u, b.item);
        let s_sim = nn::dot(b.u_bar, b.item_bar);
        [s_self / d.sqrt(), s_sim / d.sqrt(), (s_self + s_sim) / (2.0 * d).sqrt()]
    }

    fn write_row(&self, user: usize, item: usize, gates: [f64; 3], mut out: ArrayViewMut1<'_, f64>) {
        let d = self.d_sem();
        let b = self.bundle(user, item);
        let ab = self.ablation;
        for j in 0..d {
            out[j] = gates[0] * b.item[j];
        }
        if !ab.no_similar {
            for j in 0..d {
                out[d + j] = gates[1] * b.item_bar[j];
            }
        }
        if !ab.no_global {
            for j in 0..d {
                out[2 * d + j] = gates[2] * b.item[j];
                out[3 * d + j] = gates[2] * b.item_bar[j];
            }
        }
    }

    fn sigmoid_gates(&self, logits: [f64; 3]) -> [f64; 3] {
        if self.ablation.no_attention {
            [1.0; 3]
        } else {
            logits.map(sigmoid)
        }
    }

    /// Features (L x 4 d_sem) for the user's input sequence, plus the
    /// context needed to gate candidates against it.
    pub fn sequence_features(&self, user: usize, items: &[usize]) -> Result<(Mat, SequenceContext)> {
        self.check_ids(user, items)?;
        let mut out = Mat::zeros((items.len(), 4 * self.d_sem()));
        let mut ctx = SequenceContext::default();
        let softmax = self.ablation.softmax && !self.ablation.no_attention;
        let mut lse = [f64::NEG_INFINITY; 3];
        for (t, &item) in items.iter().enumerate() {
            let logits = self.logits(user, item);
            let gates = if softmax {
                for b in 0..3 {
                    lse[b] = log_add_exp(lse[b], logits[b]);
                }
                ctx.prefix_lse.push(lse);
                [0, 1, 2].map(|b| (logits[b] - lse[b]).exp())
            } else {
                self.sigmoid_gates(logits)
            };
            self.write_row(user, item, gates, out.row_mut(t));
        }
        Ok((out, ctx))
    }

    /// Features for candidate items, each scored after input position
    /// `position` of the sequence that produced `ctx`.
    pub fn candidate_features(&self, user: usize, ctx: &SequenceContext, candidates: &[(usize, usize)]) -> Result<Mat> {
        let ids: Vec<usize> = candidates.iter().map(|c| c.1).collect();
        self.check_ids(user, &ids)?;
        let softmax = self.ablation.softmax && !self.ablation.no_attention;
        let mut out = Mat::zeros((candidates.len(), 4 * self.d_sem()));
        for (r, &(position, item)) in candidates.iter().enumerate() {
            let logits = self.logits(user, item);
            let gates = if softmax {
                let lse = ctx.prefix_lse.get(position).ok_or_else(|| {
                    GraspError::Argument(format!("candidate position {position} beyond sequence context"))
                })?;
                [0, 1, 2].map(|b| (logits[b] - log_add_exp(logits[b], lse[b])).exp())
            } else {
                self.sigmoid_gates(logits)
            };
            self.write_row(user, item, gates, out.row_mut(r));
        }
        Ok(out)
    }
}

/// Enhanced input rows (L x h) for a user's item sequence.
pub fn enhance_sequence(enhancer: &Enhancer<'_>, user: usize, items: &[usize], p: &HaeParams) -> Result<Mat> {
    p.check()?;
    if p.d_sem() != enhancer.d_sem() {
        return Err(GraspError::Compatibility(format!(
            "HAE expects d_sem {} but stores have {}",
            p.d_sem(),
            enhancer.d_sem()
        )));
    }
    if items.is_empty() {
        return Ok(Array2::zeros((0, p.h())));
    }
    let (features, _) = enhancer.sequence_features(user, items)?;
    Ok(p.forward(&features).0)
}

/// Batched parameter gradient: bundles' concatenated branches as rows,
/// upstream gradient on the fused outputs. Rows are reduced in index order.
pub fn hae_backward(features: &Mat, p: &HaeParams, upstream: &Mat) -> HaeParams {
    let (_, cache) = p.forward(features);
    p.backward(&cache, upstream)
}

/// Column slice of a feature matrix holding one branch.
pub fn branch_slot(features: &Mat, branch: usize, d_sem: usize) -> ndarray::ArrayView2<'_, f64> {
    let (a, b) = match branch {
        0 => (0, d_sem),
        1 => (d_sem, 2 * d_sem),
        _ => (2 * d_sem, 4 * d_sem),
    };
    features.slice(s![.., a..b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::EmbeddingMatrix;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gate_values() {
        assert_eq!(sigmoid_gate(&[1.0, 0.0], &[0.0, 3.0], 2).unwrap(), 0.5);
        assert_abs_diff_eq!(sigmoid_gate(&[1.0], &[1.0], 1).unwrap(), 0.7310586, epsilon = 1e-7);
        assert_abs_diff_eq!(
            sigmoid_gate(&[2.0, 0.0], &[2.0, 0.0], 4).unwrap(),
            0.8807971,
            epsilon = 1e-7
        );
        assert!(sigmoid_gate(&[1.0], &[1.0, 2.0], 1).is_err());
        assert!(sigmoid_gate(&[1.0], &[1.0], 0).is_err());
    }

    #[test]
    fn gate_is_monotone_and_permutation_invariant() {
        let q = [0.3, -1.0, 2.0];
        let v = [1.0, 0.5, -0.25];
        let g = sigmoid_gate(&q, &v, 3).unwrap();
        let qp = [2.0, 0.3, -1.0];
        let vp = [-0.25, 1.0, 0.5];
        assert_eq!(g, sigmoid_gate(&qp, &vp, 3).unwrap());
        let larger = sigmoid_gate(&q, &[1.0, 0.5, 0.0], 3).unwrap();
        assert!(larger > g);
        assert!(g > 0.0 && g < 1.0);
    }

    #[test]
    fn enhance_item_orthogonal_gives_half() {
        let b = SemanticBundle {
            u: &[1.0, 0.0],
            u_bar: &[0.0, 1.0],
            item: &[0.0, 2.0],
            item_bar: &[3.0, 0.0],
        };
        let e = enhance_item(&b).unwrap();
        assert_eq!(e.self_branch, vec![0.0, 1.0]);
        assert_eq!(e.similar_branch, vec![1.5, 0.0]);
        assert_eq!(e.global_branch, vec![0.0, 1.0, 1.5, 0.0]);
    }

    #[test]
    fn enhance_item_zero_values() {
        let z = [0.0, 0.0];
        let e = enhance_item(&SemanticBundle {
            u: &[5.0, -2.0],
            u_bar: &[1.0, 1.0],
            item: &z,
            item_bar: &z,
        })
        .unwrap();
        assert!(e.concat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enhance_item_closed_form_one_dim() {
        let e = enhance_item(&SemanticBundle {
            u: &[1.0],
            u_bar: &[1.0],
            item: &[1.0],
            item_bar: &[1.0],
        })
        .unwrap();
        let s1 = 0.7310585786300049;
        let s2 = sigmoid(2.0 / 2f64.sqrt());
        assert_abs_diff_eq!(e.self_branch[0], s1, epsilon = 1e-15);
        assert_abs_diff_eq!(e.similar_branch[0], s1, epsilon = 1e-15);
        assert_abs_diff_eq!(e.global_branch[0], s2, epsilon = 1e-15);
        assert_abs_diff_eq!(e.global_branch[1], s2, epsilon = 1e-15);
        assert_abs_diff_eq!(s2, 0.8044296825069244, epsilon = 1e-12);
        assert!(enhance_item(&SemanticBundle {
            u: &[1.0],
            u_bar: &[1.0, 2.0],
            item: &[1.0],
            item_bar: &[1.0],
        })
        .is_err());
    }

    #[test]
    fn branches_divide_back_to_gates() {
        let b = SemanticBundle {
            u: &[0.4, -0.3, 1.1],
            u_bar: &[0.2, 0.9, -0.5],
            item: &[1.5, -0.7, 0.3],
            item_bar: &[-0.2, 0.4, 0.8],
        };
        let e = enhance_item(&b).unwrap();
        let g = sigmoid_gate(b.u, b.item, 3).unwrap();
        for (x, v) in e.self_branch.iter().zip(b.item) {
            assert_abs_diff_eq!(x / v, g, epsilon = 1e-14);
        }
        let value = [b.item, b.item_bar].concat();
        let ratios: Vec<f64> = e.global_branch.iter().zip(&value).map(|(x, v)| x / v).collect();
        assert!(ratios.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-14));
    }

    /// The 2-dim instance: w1 copies the self slot, b1 shifts it into the
    /// active region, w2 is the identity, so the output is self_branch + 10.
    fn affine_instance() -> HaeParams {
        let mut p = HaeParams::zeros(2, 2, 2);
        p.w1[[0, 0]] = 1.0;
        p.w1[[1, 1]] = 1.0;
        p.b1.fill(10.0);
        p.w2[[0, 0]] = 1.0;
        p.w2[[1, 1]] = 1.0;
        p
    }

    #[test]
    fn fuse_examples() {
        let mut p = HaeParams::zeros(2, 4, 3);
        p.b2 = Vector::from(vec![1.0, -2.0, 0.5]);
        let e = enhance_item(&SemanticBundle {
            u: &[1.0, 2.0],
            u_bar: &[0.0, 1.0],
            item: &[3.0, 1.0],
            item_bar: &[1.0, 1.0],
        })
        .unwrap();
        assert_eq!(fuse(&e, &p).unwrap().to_vec(), vec![1.0, -2.0, 0.5]);

        // u = [1,0], item = [2,1]: gate sigma(2/sqrt 2), self = gate * [2,1]
        let e = enhance_item(&SemanticBundle {
            u: &[1.0, 0.0],
            u_bar: &[0.0, 0.0],
            item: &[2.0, 1.0],
            item_bar: &[0.0, 0.0],
        })
        .unwrap();
        let out = fuse(&e, &affine_instance()).unwrap();
        assert_abs_diff_eq!(out[0], 11.608_859_365_013_85, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 10.804429682506924, epsilon = 1e-12);

        let zero = EnhancedBranches {
            self_branch: vec![0.0; 2],
            similar_branch: vec![0.0; 2],
            global_branch: vec![0.0; 4],
        };
        let mut p = HaeParams::init(2, 4, 3, &mut stream(1, &[]));
        p.b1.fill(0.0);
        p.b2.fill(0.0);
        assert!(fuse(&zero, &p).unwrap().iter().all(|&v| v == 0.0));
        assert!(fuse(&e, &HaeParams::zeros(3, 4, 3)).is_err());
    }

    fn stores() -> (SemanticStore, SemanticStore) {
        let users = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        let items =
            EmbeddingMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.5]]).unwrap();
        (
            SemanticStore::build(users, 1).unwrap(),
            SemanticStore::build(items, 2).unwrap(),
        )
    }

    #[test]
    fn enhance_sequence_examples() {
        let (us, is) = stores();
        let enh = Enhancer::new(&us, &is, Ablation::default()).unwrap();
        let p = HaeParams::init(2, 4, 3, &mut stream(2, &[]));
        let empty = enhance_sequence(&enh, 0, &[], &p).unwrap();
        assert_eq!(empty.dim(), (0, 3));
        let out = enhance_sequence(&enh, 1, &[2, 0, 2], &p).unwrap();
        assert_eq!(out.row(0), out.row(2));
        let b = enh.bundle(1, 0);
        let single = fuse(&enhance_item(&b).unwrap(), &p).unwrap();
        for (a, b) in out.row(1).iter().zip(single.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        assert!(matches!(
            enhance_sequence(&enh, 3, &[0], &p),
            Err(GraspError::Lookup { .. })
        ));
        assert!(matches!(
            enhance_sequence(&enh, 0, &[9], &p),
            Err(GraspError::Lookup { .. })
        ));
    }

    #[test]
    fn no_similar_zero_fills_the_slot() {
        let (us, is) = stores();
        let full = Enhancer::new(&us, &is, Ablation::default()).unwrap();
        let ablated = Enhancer::new(
            &us,
            &is,
            Ablation {
                no_similar: true,
                ..Default::default()
            },
        )
        .unwrap();
        let (f, _) = full.sequence_features(0, &[0, 1, 3]).unwrap();
        let (a, _) = ablated.sequence_features(0, &[0, 1, 3]).unwrap();
        assert!(branch_slot(&a, 1, 2).iter().all(|&v| v == 0.0));
        assert_eq!(branch_slot(&a, 0, 2), branch_slot(&f, 0, 2));
        assert_eq!(branch_slot(&a, 2, 2), branch_slot(&f, 2, 2));
        let mut zeroed = f.clone();
        zeroed.slice_mut(s![.., 2..4]).fill(0.0);
        let p = HaeParams::init(2, 4, 3, &mut stream(3, &[]));
        assert_eq!(p.forward(&zeroed).0, p.forward(&a).0);
    }

    #[test]
    fn gate_bypass_uses_raw_values() {
        let (us, is) = stores();
        let enh = Enhancer::new(
            &us,
            &is,
            Ablation {
                no_attention: true,
                ..Default::default()
            },
        )
        .unwrap();
        let (f, _) = enh.sequence_features(2, &[3]).unwrap();
        let b = enh.bundle(2, 3);
        let expected = [b.item, b.item_bar, b.item, b.item_bar].concat();
        assert_eq!(f.row(0).to_vec(), expected);
    }

    #[test]
    fn softmax_variant_normalizes_over_prefix() {
        let (us, is) = stores();
        let enh = Enhancer::new(
            &us,
            &is,
            Ablation {
                softmax: true,
                ..Default::default()
            },
        )
        .unwrap();
        let (f, ctx) = enh.sequence_features(0, &[0, 1]).unwrap();
        // first position: softmax over a single logit
        let b = enh.bundle(0, 0);
        for j in 0..2 {
            assert_abs_diff_eq!(f[[0, j]], b.item[j], epsilon = 1e-12);
        }
        // second position: weight e^{s1}/(e^{s0}+e^{s1}) for the self branch
        let s0 = enh.logits(0, 0)[0];
        let s1 = enh.logits(0, 1)[0];
        let w = s1.exp() / (s0.exp() + s1.exp());
        assert_abs_diff_eq!(f[[1, 1]], w * enh.bundle(0, 1).item[1], epsilon = 1e-12);
        // candidate at position 0 is normalized together with item 0
        let c = enh.candidate_features(0, &ctx, &[(0, 2)]).unwrap();
        let s2 = enh.logits(0, 2)[0];
        let wc = s2.exp() / (s0.exp() + s2.exp());
        assert_abs_diff_eq!(c[[0, 0]], wc * enh.bundle(0, 2).item[0], epsilon = 1e-12);
        assert!(enh.candidate_features(0, &ctx, &[(5, 2)]).is_err());
    }

    #[test]
    fn sigmoid_candidates_match_sequence_rows() {
        let (us, is) = stores();
        let enh = Enhancer::new(&us, &is, Ablation::default()).unwrap();
        let (f, ctx) = enh.sequence_features(1, &[3, 2]).unwrap();
        let c = enh.candidate_features(1, &ctx, &[(0, 2), (1, 3)]).unwrap();
        assert_eq!(c.row(0), f.row(1));
        assert_eq!(c.row(1), f.row(0));
    }

    #[test]
    fn backward_simple_rules() {
        let mut rng = stream(5, &[]);
        let p = HaeParams::init(3, 6, 4, &mut rng);
        let x = uniform_mat(&mut rng, 5, 12, 1);
        let g = hae_backward(&x, &p, &Mat::zeros((5, 4)));
        assert!(g.flat().iter().all(|&v| v == 0.0));
        let up = uniform_mat(&mut rng, 5, 4, 1);
        let g = hae_backward(&x, &p, &up);
        let summed = up.sum_axis(ndarray::Axis(0));
        for (a, b) in g.b2.iter().zip(summed.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = HaeParams::init(3, 5, 2, &mut stream(9, &[]));
        p.round_to_f32();
        let back = HaeParams::decode(&p.encode(), "t").unwrap();
        assert_eq!(back, p);
        let mut bytes = p.encode();
        bytes[0] = b'X';
        assert!(HaeParams::decode(&bytes, "t").is_err());
    }
}

//! Causal self-attention encoder, pre-layer-norm arrangement.
//!
//! x = inputs + positional[0..L]; per block:
//! x += attn(LN1(x)); x += ffn(LN2(x)); output = LN_final(x).
//! Position t attends to positions <= t only.

use ndarray::{s, Axis};

use super::BackboneConfig;
use crate::error::{GraspError, Result};
use crate::nn::{
    affine_backward, dropout_mask, layer_norm, layer_norm_backward, slice, slice_mut, uniform_mat, uniform_vec, vslice,
    vslice_mut, LayerNormCache, Mat, Params, Vector,
};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SasBlock {
    pub ln1_gain: Vector,
    pub ln1_bias: Vector,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln2_gain: Vector,
    pub ln2_bias: Vector,
    pub ff_w1: Mat,
    pub ff_b1: Vector,
    pub ff_w2: Mat,
    pub ff_b2: Vector,
}

impl SasBlock {
    fn zeros(h: usize) -> Self {
        Self {
            ln1_gain: Vector::zeros(h),
            ln1_bias: Vector::zeros(h),
            wq: Mat::zeros((h, h)),
            wk: Mat::zeros((h, h)),
            wv: Mat::zeros((h, h)),
            wo: Mat::zeros((h, h)),
            ln2_gain: Vector::zeros(h),
            ln2_bias: Vector::zeros(h),
            ff_w1: Mat::zeros((h, h)),
            ff_b1: Vector::zeros(h),
            ff_w2: Mat::zeros((h, h)),
            ff_b2: Vector::zeros(h),
        }
    }

    fn init(h: usize, rng: &mut Rng) -> Self {
        Self {
            ln1_gain: Vector::ones(h),
            ln1_bias: Vector::zeros(h),
            wq: uniform_mat(rng, h, h, h),
            wk: uniform_mat(rng, h, h, h),
            wv: uniform_mat(rng, h, h, h),
            wo: uniform_mat(rng, h, h, h),
            ln2_gain: Vector::ones(h),
            ln2_bias: Vector::zeros(h),
            ff_w1: uniform_mat(rng, h, h, h),
            ff_b1: uniform_vec(rng, h, h),
            ff_w2: uniform_mat(rng, h, h, h),
            ff_b2: uniform_vec(rng, h, h),
        }
    }

    fn tensors(&self) -> [&[f64]; 12] {
        [
            vslice(&self.ln1_gain),
            vslice(&self.ln1_bias),
            slice(&self.wq),
            slice(&self.wk),
            slice(&self.wv),
            slice(&self.wo),
            vslice(&self.ln2_gain),
            vslice(&self.ln2_bias),
            slice(&self.ff_w1),
            vslice(&self.ff_b1),
            slice(&self.ff_w2),
            vslice(&self.ff_b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            vslice_mut(&mut self.ln1_gain),
            vslice_mut(&mut self.ln1_bias),
            slice_mut(&mut self.wq),
            slice_mut(&mut self.wk),
            slice_mut(&mut self.wv),
            slice_mut(&mut self.wo),
            vslice_mut(&mut self.ln2_gain),
            vslice_mut(&mut self.ln2_bias),
            slice_mut(&mut self.ff_w1),
            vslice_mut(&mut self.ff_b1),
            slice_mut(&mut self.ff_w2),
            vslice_mut(&mut self.ff_b2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SasRecParams {
    pub cfg: BackboneConfig,
    pub positional: Mat,
    pub blocks: Vec<SasBlock>,
    pub final_gain: Vector,
    pub final_bias: Vector,
}

struct BlockCache {
    ln1: LayerNormCache,
    normed1: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// One L x L row-stochastic matrix per head.
    attention: Vec<Mat>,
    mixed: Mat,
    attn_mask: Option<Mat>,
    ln2: LayerNormCache,
    normed2: Mat,
    ff_hidden: Mat,
    ff_mask: Option<Mat>,
}

pub struct SasRecCache {
    input_mask: Option<Mat>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
}

impl std::fmt::Debug for SasRecCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SasRecCache")
            .field("blocks", &self.blocks.len())
            .finish()
    }
}

impl SasRecCache {
    /// Attention weights of `block`, `head` (L x L).
    pub fn attention(&self, block: usize, head: usize) -> &Mat {
        &self.blocks[block].attention[head]
    }
}

fn causal_softmax(scores: &mut Mat) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let max = row.slice(s![..=i]).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

impl SasRecParams {
    pub fn init(cfg: BackboneConfig, rng: &mut Rng) -> Self {
        let h = cfg.h;
        Self {
            cfg,
            positional: uniform_mat(rng, cfg.max_seq_len, h, h),
            blocks: (0..cfg.n_layers).map(|_| SasBlock::init(h, rng)).collect(),
            final_gain: Vector::ones(h),
            final_bias: Vector::zeros(h),
        }
    }

    pub fn zeros(cfg: BackboneConfig) -> Self {
        let h = cfg.h;
        Self {
            cfg,
            positional: Mat::zeros((cfg.max_seq_len, h)),
            blocks: (0..cfg.n_layers).map(|_| SasBlock::zeros(h)).collect(),
            final_gain: Vector::zeros(h),
            final_bias: Vector::zeros(h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg)
    }

    fn head_dim(&self) -> usize {
        self.cfg.h / self.cfg.n_heads
    }

    pub fn forward(&self, inputs: &Mat, mut dropout: Option<&mut Rng>) -> Result<(Mat, SasRecCache)> {
        let (len, h) = inputs.dim();
        if len > self.cfg.max_seq_len {
            return Err(GraspError::Argument(format!(
                "sequence length {len} exceeds max_seq_len {}",
                self.cfg.max_seq_len
            )));
        }
        let p = self.cfg.dropout;
        let draw = |rng: &mut Option<&mut Rng>| match rng.as_deref_mut() {
            Some(r) if p > 0.0 => Some(dropout_mask(r, len, h, p)),
            _ => None,
        };
        let mut x = inputs + &self.positional.slice(s![..len, ..]);
        let input_mask = draw(&mut dropout);
        if let Some(m) = &input_mask {
            x *= m;
        }
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (normed1, ln1) = layer_norm(&x, &b.ln1_gain, &b.ln1_bias);
            let q = normed1.dot(&b.wq);
            let k = normed1.dot(&b.wk);
            let v = normed1.dot(&b.wv);
            let mut mixed = Mat::zeros((len, h));
            let mut attention = Vec::with_capacity(self.cfg.n_heads);
            for head in 0..self.cfg.n_heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                causal_softmax(&mut a);
                mixed.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
                attention.push(a);
            }
            let mut attn_out = mixed.dot(&b.wo);
            let attn_mask = draw(&mut dropout);
            if let Some(m) = &attn_mask {
                attn_out *= m;
            }
            x += &attn_out;

            let (normed2, ln2) = layer_norm(&x, &b.ln2_gain, &b.ln2_bias);
            let ff_hidden = (normed2.dot(&b.ff_w1) + &b.ff_b1).mapv_into(|v| v.max(0.0));
            let mut ff_out = ff_hidden.dot(&b.ff_w2) + &b.ff_b2;
            let ff_mask = draw(&mut dropout);
            if let Some(m) = &ff_mask {
                ff_out *= m;
            }
            x += &ff_out;
            caches.push(BlockCache {
                ln1,
                normed1,
                q,
                k,
                v,
                attention,
                mixed,
                attn_mask,
                ln2,
                normed2,
                ff_hidden,
                ff_mask,
            });
        }
        let (out, final_ln) = layer_norm(&x, &self.final_gain, &self.final_bias);
        Ok((
            out,
            SasRecCache {
                input_mask,
                blocks: caches,
                final_ln,
            },
        ))
    }

    pub fn backward(&self, cache: &SasRecCache, d_out: &Mat) -> (SasRecParams, Mat) {
        let mut g = self.zeros_like();
        let (len, h) = d_out.dim();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dx = layer_norm_backward(
            d_out,
            &cache.final_ln,
            &self.final_gain,
            &mut g.final_gain,
            &mut g.final_bias,
        );
        for (bi, b) in self.blocks.iter().enumerate().rev() {
            let c = &cache.blocks[bi];
            let gb = &mut g.blocks[bi];

            // feed-forward residual
            let mut d_ff = dx.clone();
            if let Some(m) = &c.ff_mask {
                d_ff *= m;
            }
            affine_backward(c.ff_hidden.view(), &d_ff, &mut gb.ff_w2, &mut gb.ff_b2);
            let mut d_hidden = d_ff.dot(&b.ff_w2.t());
            ndarray::Zip::from(&mut d_hidden).and(&c.ff_hidden).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            affine_backward(c.normed2.view(), &d_hidden, &mut gb.ff_w1, &mut gb.ff_b1);
            let d_normed2 = d_hidden.dot(&b.ff_w1.t());
            dx += &layer_norm_backward(&d_normed2, &c.ln2, &b.ln2_gain, &mut gb.ln2_gain, &mut gb.ln2_bias);

            // attention residual
            let mut d_attn = dx.clone();
            if let Some(m) = &c.attn_mask {
                d_attn *= m;
            }
            gb.wo += &c.mixed.t().dot(&d_attn);
            let d_mixed = d_attn.dot(&b.wo.t());
            let mut dq = Mat::zeros((len, h));
            let mut dk = Mat::zeros((len, h));
            let mut dv = Mat::zeros((len, h));
            for head in 0..self.cfg.n_heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let a = &c.attention[head];
                let d_head = d_mixed.slice(cols);
                dv.slice_mut(cols).assign(&a.t().dot(&d_head));
                let da = d_head.dot(&c.v.slice(cols).t());
                // softmax backward; masked entries have a = 0
                let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (a * &(&da - &row_dot)) * scale;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            gb.wq += &c.normed1.t().dot(&dq);
            gb.wk += &c.normed1.t().dot(&dk);
            gb.wv += &c.normed1.t().dot(&dv);
            let d_normed1 = dq.dot(&b.wq.t()) + dk.dot(&b.wk.t()) + dv.dot(&b.wv.t());
            dx += &layer_norm_backward(&d_normed1, &c.ln1, &b.ln1_gain, &mut gb.ln1_gain, &mut gb.ln1_bias);
        }
        if let Some(m) = &cache.input_mask {
            dx *= m;
        }
        g.positional.slice_mut(s![..len, ..]).assign(&dx);
        (g, dx)
    }
}

impl Params for SasRecParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![slice(&self.positional)];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(vslice(&self.final_gain));
        out.push(vslice(&self.final_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![slice_mut(&mut self.positional)];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(vslice_mut(&mut self.final_gain));
        out.push(vslice_mut(&mut self.final_bias));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn model(h: usize, heads: usize, layers: usize) -> (SasRecParams, Rng) {
        let mut rng = stream(21, &[]);
        let cfg = BackboneConfig {
            n_heads: heads,
            n_layers: layers,
            max_seq_len: 8,
            ..BackboneConfig::sasrec(h)
        };
        (SasRecParams::init(cfg, &mut rng), rng)
    }

    #[test]
    fn singleton_attention_is_one() {
        let (p, mut rng) = model(4, 2, 2);
        let x = uniform_mat(&mut rng, 1, 4, 1);
        let (_, cache) = p.forward(&x, None).unwrap();
        for b in 0..2 {
            for head in 0..2 {
                assert_eq!(cache.attention(b, head), &Mat::from_elem((1, 1), 1.0));
            }
        }
    }

    #[test]
    fn attention_is_causal_and_stochastic() {
        let (p, mut rng) = model(6, 3, 1);
        let x = uniform_mat(&mut rng, 5, 6, 1);
        let (_, cache) = p.forward(&x, None).unwrap();
        let a = cache.attention(0, 1);
        for i in 0..5 {
            assert!((a.row(i).sum() - 1.0).abs() < 1e-12);
            for j in i + 1..5 {
                assert_eq!(a[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn too_long_is_an_error() {
        let (p, _) = model(4, 1, 1);
        assert!(p.forward(&Mat::zeros((9, 4)), None).is_err());
    }

    #[test]
    fn not_permutation_invariant() {
        let (p, mut rng) = model(4, 1, 2);
        let x = uniform_mat(&mut rng, 3, 4, 1);
        let mut swapped = x.clone();
        swapped.row_mut(0).assign(&x.row(1));
        swapped.row_mut(1).assign(&x.row(0));
        let (a, _) = p.forward(&x, None).unwrap();
        let (b, _) = p.forward(&swapped, None).unwrap();
        assert_ne!(a.row(2), b.row(2));
        assert_ne!(a.row(1), b.row(0));
    }

    #[test]
    fn dropout_changes_training_outputs_only() {
        let (p, mut rng) = model(4, 1, 1);
        let x = uniform_mat(&mut rng, 4, 4, 1);
        let (eval1, _) = p.forward(&x, None).unwrap();
        let (eval2, _) = p.forward(&x, None).unwrap();
        assert_eq!(eval1, eval2);
        let (train, _) = p.forward(&x, Some(&mut stream(1, &[]))).unwrap();
        assert_ne!(train, eval1);
    }
}

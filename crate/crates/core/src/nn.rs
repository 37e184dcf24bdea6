//! Dense building blocks shared by the enhancement module and the backbones.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

pub type Mat = Array2<f64>;
pub type Vector = Array1<f64>;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn uniform_mat(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

pub fn uniform_vec(rng: &mut Rng, n: usize, fan_in: usize) -> Vector {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Vector::from_shape_fn(n, |_| rng.random_range(-bound..=bound))
}

/// Named tensors of a parameter group, in a fixed declaration order.
///
/// Gradients use the same type as the parameters they belong to.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.fill(v);
        }
    }

    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Rounds every value to 32-bit precision, the checkpoint precision.
    fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

pub(crate) fn slice(a: &Mat) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice_mut(a: &mut Mat) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn vslice(a: &Vector) -> &[f64] {
    a.as_slice().expect("contiguous")
}

pub(crate) fn vslice_mut(a: &mut Vector) -> &mut [f64] {
    a.as_slice_mut().expect("contiguous")
}

/// Gradients of an affine map `y = x W + b` with respect to W and b.
pub(crate) fn affine_backward(x: ArrayView2<'_, f64>, dy: &Mat, dw: &mut Mat, db: &mut Vector) {
    *dw += &x.t().dot(dy);
    *db += &dy.sum_axis(Axis(0));
}

pub const LN_EPS: f64 = 1e-6;

pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vector,
}

/// Row-wise layer normalization with gain and bias.
pub fn layer_norm(x: &Mat, gain: &Vector, bias: &Vector) -> (Mat, LayerNormCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vector::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let scale = *s;
        row.mapv_inplace(|v| v * scale);
    }
    let y = &xhat * gain + bias;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns dx and accumulates gain/bias gradients.
pub fn layer_norm_backward(
    dy: &Mat,
    cache: &LayerNormCache,
    gain: &Vector,
    dgain: &mut Vector,
    dbias: &mut Vector,
) -> Mat {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let n = dy.ncols() as f64;
    let mut dx = Mat::zeros(dy.raw_dim());
    for r in 0..dy.nrows() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / n;
        let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let s = cache.inv_std[r];
        for c in 0..dy.ncols() {
            dx[[r, c]] = s * (g[c] - mean_g - xh[c] * mean_gx);
        }
    }
    dx
}

/// Inverted dropout mask: entries are 0 or 1/(1-p).
pub fn dropout_mask(rng: &mut Rng, rows: usize, cols: usize, p: f64) -> Mat {
    let keep = 1.0 / (1.0 - p);
    Mat::from_shape_fn((rows, cols), |_| if rng.random_bool(p) { 0.0 } else { keep })
}

/// Adaptive-moment optimizer over a parameter group's flat tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update<P: Params>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.tensors();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    struct Pair {
        a: Mat,
        b: Vector,
    }

    impl Params for Pair {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![slice(&self.a), vslice(&self.b)]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![slice_mut(&mut self.a), vslice_mut(&mut self.b)]
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.7310585786300049).abs() < 1e-15);
        assert!((sigmoid(-1.0) - 0.2689414213699951).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut rng = stream(1, &[]);
        let x = uniform_mat(&mut rng, 3, 5, 1);
        let gain = uniform_vec(&mut rng, 5, 1) + 1.0;
        let bias = uniform_vec(&mut rng, 5, 1);
        let w = uniform_mat(&mut rng, 3, 5, 1);
        let loss = |x: &Mat| (&layer_norm(x, &gain, &bias).0 * &w).sum();
        let (_, cache) = layer_norm(&x, &gain, &bias);
        let mut dg = Vector::zeros(5);
        let mut db = Vector::zeros(5);
        let dx = layer_norm_backward(&w, &cache, &gain, &mut dg, &mut db);
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..5 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((fd - dx[[r, c]]).abs() < 1e-6, "{fd} vs {}", dx[[r, c]]);
            }
        }
    }

    #[test]
    fn adam_zero_lr_is_identity_and_first_step_is_sign() {
        let mut p = Pair {
            a: Mat::from_elem((2, 2), 0.5),
            b: Vector::from_elem(3, -1.0),
        };
        let g = Pair {
            a: Mat::from_elem((2, 2), 3.0),
            b: Vector::from_elem(3, -0.1),
        };
        let before = p.flat();
        Adam::new(0.0).update(&mut p, &g);
        assert_eq!(p.flat(), before);
        let mut adam = Adam::new(0.01);
        adam.update(&mut p, &g);
        assert!((p.a[[0, 0]] - 0.49).abs() < 1e-9);
        assert!((p.b[0] + 0.99).abs() < 1e-7);
        assert_eq!(adam.steps(), 1);
        assert_eq!(p.len(), 7);
    }
}

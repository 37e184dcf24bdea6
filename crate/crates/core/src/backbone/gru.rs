//! Stacked gated recurrent units with zero initial state.
//!
//! z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
//! n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * n + z * h.

use ndarray::{s, Array1, Axis};

use super::BackboneConfig;
use crate::nn::{dropout_mask, sigmoid, slice, slice_mut, uniform_mat, vslice, vslice_mut, Mat, Params, Vector};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub wz: Mat,
    pub wr: Mat,
    pub wn: Mat,
    pub uz: Mat,
    pub ur: Mat,
    pub un: Mat,
    pub bz: Vector,
    pub br: Vector,
    pub bn: Vector,
}

impl GruLayer {
    fn zeros(h: usize) -> Self {
        Self {
            wz: Mat::zeros((h, h)),
            wr: Mat::zeros((h, h)),
            wn: Mat::zeros((h, h)),
            uz: Mat::zeros((h, h)),
            ur: Mat::zeros((h, h)),
            un: Mat::zeros((h, h)),
            bz: Vector::zeros(h),
            br: Vector::zeros(h),
            bn: Vector::zeros(h),
        }
    }

    fn init(h: usize, rng: &mut Rng) -> Self {
        let mut l = Self::zeros(h);
        for m in [&mut l.wz, &mut l.wr, &mut l.wn, &mut l.uz, &mut l.ur, &mut l.un] {
            *m = uniform_mat(rng, h, h, h);
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub cfg: BackboneConfig,
    pub layers: Vec<GruLayer>,
}

#[derive(Debug)]
struct LayerCache {
    input: Mat,
    mask: Option<Mat>,
    /// Row t is the state before position t; the last row is the output state.
    states: Mat,
    z: Mat,
    r: Mat,
    n: Mat,
}

#[derive(Debug)]
pub struct GruCache {
    layers: Vec<LayerCache>,
}

impl GruParams {
    pub fn init(cfg: BackboneConfig, rng: &mut Rng) -> Self {
        Self {
            cfg,
            layers: (0..cfg.n_layers).map(|_| GruLayer::init(cfg.h, rng)).collect(),
        }
    }

    pub fn zeros(cfg: BackboneConfig) -> Self {
        Self {
            cfg,
            layers: (0..cfg.n_layers).map(|_| GruLayer::zeros(cfg.h)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg)
    }

    pub fn forward(&self, inputs: &Mat, mut dropout: Option<&mut Rng>) -> (Mat, GruCache) {
        let (len, h) = inputs.dim();
        let mut x = inputs.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mask = match dropout.as_deref_mut() {
                Some(rng) if self.cfg.dropout > 0.0 => Some(dropout_mask(rng, len, h, self.cfg.dropout)),
                _ => None,
            };
            let input = match &mask {
                Some(m) => &x * m,
                None => x.clone(),
            };
            let xz = input.dot(&layer.wz) + &layer.bz;
            let xr = input.dot(&layer.wr) + &layer.br;
            let xn = input.dot(&layer.wn) + &layer.bn;
            let mut states = Mat::zeros((len + 1, h));
            let mut z = Mat::zeros((len, h));
            let mut r = Mat::zeros((len, h));
            let mut n = Mat::zeros((len, h));
            for t in 0..len {
                let prev = states.row(t).to_owned();
                let zt = (&xz.row(t) + &prev.dot(&layer.uz)).mapv(sigmoid);
                let rt = (&xr.row(t) + &prev.dot(&layer.ur)).mapv(sigmoid);
                let rh = &rt * &prev;
                let nt = (&xn.row(t) + &rh.dot(&layer.un)).mapv(f64::tanh);
                let next = (1.0 - &zt) * &nt + &zt * &prev;
                states.row_mut(t + 1).assign(&next);
                z.row_mut(t).assign(&zt);
                r.row_mut(t).assign(&rt);
                n.row_mut(t).assign(&nt);
            }
            x = states.slice(s![1.., ..]).to_owned();
            caches.push(LayerCache {
                input,
                mask,
                states,
                z,
                r,
                n,
            });
        }
        (x, GruCache { layers: caches })
    }

    pub fn backward(&self, cache: &GruCache, d_out: &Mat) -> (GruParams, Mat) {
        let mut grads = self.zeros_like();
        let (len, h) = d_out.dim();
        let mut d_upper = d_out.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let c = &cache.layers[li];
            let g = &mut grads.layers[li];
            let mut daz = Mat::zeros((len, h));
            let mut dar = Mat::zeros((len, h));
            let mut dan = Mat::zeros((len, h));
            let mut dh_next = Array1::<f64>::zeros(h);
            for t in (0..len).rev() {
                let prev = c.states.row(t);
                let zt = c.z.row(t);
                let rt = c.r.row(t);
                let nt = c.n.row(t);
                let dh = &d_upper.row(t) + &dh_next;
                let dn = &dh * &(1.0 - &zt);
                let dz = &dh * &(&prev - &nt);
                let mut dprev = &dh * &zt;

                let da_n = &dn * &(1.0 - &nt * &nt);
                let rh = &rt * &prev;
                g.un += &outer(&rh, &da_n);
                let drh = layer.un.dot(&da_n);
                let dr = &drh * &prev;
                dprev += &(&drh * &rt);

                let da_r = &dr * &(&rt * &(1.0 - &rt));
                g.ur += &outer(&prev.to_owned(), &da_r);
                dprev += &layer.ur.dot(&da_r);

                let da_z = &dz * &(&zt * &(1.0 - &zt));
                g.uz += &outer(&prev.to_owned(), &da_z);
                dprev += &layer.uz.dot(&da_z);

                daz.row_mut(t).assign(&da_z);
                dar.row_mut(t).assign(&da_r);
                dan.row_mut(t).assign(&da_n);
                dh_next = dprev;
            }
            for (dw, db, da) in [
                (&mut g.wz, &mut g.bz, &daz),
                (&mut g.wr, &mut g.br, &dar),
                (&mut g.wn, &mut g.bn, &dan),
            ] {
                *dw += &c.input.t().dot(da);
                *db += &da.sum_axis(Axis(0));
            }
            let mut dx = daz.dot(&layer.wz.t()) + dar.dot(&layer.wr.t()) + dan.dot(&layer.wn.t());
            if let Some(m) = &c.mask {
                dx *= m;
            }
            d_upper = dx;
        }
        (grads, d_upper)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Mat {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

impl Params for GruParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    slice(&l.wz),
                    slice(&l.wr),
                    slice(&l.wn),
                    slice(&l.uz),
                    slice(&l.ur),
                    slice(&l.un),
                    vslice(&l.bz),
                    vslice(&l.br),
                    vslice(&l.bn),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    slice_mut(&mut l.wz),
                    slice_mut(&mut l.wr),
                    slice_mut(&mut l.wn),
                    slice_mut(&mut l.uz),
                    slice_mut(&mut l.ur),
                    slice_mut(&mut l.un),
                    vslice_mut(&mut l.bz),
                    vslice_mut(&mut l.br),
                    vslice_mut(&mut l.bn),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_fixed_point() {
        let cfg = BackboneConfig::gru4rec(4);
        let mut p = GruParams::init(cfg, &mut stream(1, &[]));
        for l in &mut p.layers {
            l.bz.fill(0.0);
            l.br.fill(0.0);
            l.bn.fill(0.0);
        }
        let (out, cache) = p.forward(&Mat::zeros((3, 4)), None);
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(cache.layers[0].z.iter().all(|&v| v == 0.5));
        assert!(cache.layers[0].r.iter().all(|&v| v == 0.5));
        assert!(cache.layers[0].n.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_position() {
        let cfg = BackboneConfig::gru4rec(4);
        let mut rng = stream(2, &[]);
        let p = GruParams::init(cfg, &mut rng);
        let x = uniform_mat(&mut rng, 1, 4, 1);
        let (out, _) = p.forward(&x, None);
        assert_eq!(out.nrows(), 1);
    }

    #[test]
    fn prefix_outputs_ignore_suffix_edits() {
        let cfg = BackboneConfig {
            n_layers: 2,
            ..BackboneConfig::gru4rec(5)
        };
        let mut rng = stream(3, &[]);
        let p = GruParams::init(cfg, &mut rng);
        let x = uniform_mat(&mut rng, 6, 5, 1);
        let mut y = x.clone();
        y.row_mut(4).fill(9.0);
        let (a, _) = p.forward(&x, None);
        let (b, _) = p.forward(&y, None);
        assert_eq!(a.slice(s![..4, ..]), b.slice(s![..4, ..]));
        assert_ne!(a.row(4), b.row(4));
    }
}

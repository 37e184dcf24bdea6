//! Central finite-difference checks for analytic parameter gradients.

use crate::nn::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// ||analytic - numeric|| / (||analytic|| + ||numeric||) over all entries.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

/// Compares `analytic` with central differences of `loss` around `params`
/// using step `h`. `params` is restored before returning.
pub fn check<P: Params>(params: &mut P, analytic: &P, h: f64, mut loss: impl FnMut(&P) -> f64) -> GradCheck {
    let want = analytic.flat();
    let mut numeric = Vec::with_capacity(want.len());
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for i in 0..len {
            let orig = params.tensors()[t][i];
            params.tensors_mut()[t][i] = orig + h;
            let up = loss(params);
            params.tensors_mut()[t][i] = orig - h;
            let down = loss(params);
            params.tensors_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    compare(&want, &numeric)
}

/// Same statistic for two plain gradient vectors.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let denom = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    GradCheck {
        relative_error: if denom == 0.0 { 0.0 } else { diff / denom },
        max_abs_error: analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max),
        entries: analytic.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{slice, slice_mut, Mat};

    struct Quad(Mat);

    impl Params for Quad {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![slice(&self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![slice_mut(&mut self.0)]
        }
    }

    #[test]
    fn quadratic() {
        let mut p = Quad(Mat::from_shape_vec((1, 3), vec![0.5, -1.0, 2.0]).unwrap());
        let grad = Quad(p.0.mapv(|v| 2.0 * v));
        let r = check(&mut p, &grad, 1e-5, |q| q.0.iter().map(|v| v * v).sum());
        assert!(r.relative_error < 1e-9, "{r:?}");
        assert_eq!(p.0[[0, 2]], 2.0);
        let wrong = Quad(p.0.mapv(|v| 3.0 * v));
        assert!(check(&mut p, &wrong, 1e-5, |q| q.0.iter().map(|v| v * v).sum()).relative_error > 0.1);
    }
}

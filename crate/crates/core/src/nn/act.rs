use crate::error::{Error, Result};
use crate::tensor::Grid2D;

/// `max(0, x)` in place.
pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gate `grad` by the forward output `activated` (subgradient 0 at 0).
pub fn relu_backward_inplace(grad: &mut [f64], activated: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Per-pixel softmax across `planes`, each of length `n`.
pub(crate) fn softmax_planes(planes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = planes[0].len();
    let mut out: Vec<Vec<f64>> = planes.iter().map(|_| vec![0.0; n]).collect();
    for p in 0..n {
        let m = planes.iter().map(|a| a[p]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, a) in planes.iter().enumerate() {
            let e = (a[p] - m).exp();
            out[j][p] = e;
            sum += e;
        }
        for o in out.iter_mut() {
            o[p] /= sum;
        }
    }
    out
}

/// Given softmax output `w` and `dL/dw`, returns `dL/da`.
pub(crate) fn softmax_planes_backward(w: &[Vec<f64>], grad_w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = w[0].len();
    let mut out: Vec<Vec<f64>> = w.iter().map(|_| vec![0.0; n]).collect();
    for p in 0..n {
        let dot: f64 = w.iter().zip(grad_w).map(|(a, g)| a[p] * g[p]).sum();
        for j in 0..w.len() {
            out[j][p] = w[j][p] * (grad_w[j][p] - dot);
        }
    }
    out
}

/// Softmax across a stack of same-shaped grids, computed per pixel with
/// max-subtraction.
pub fn softmax_over_queries(a: &[Grid2D]) -> Result<Vec<Grid2D>> {
    let first = a.first().ok_or_else(|| Error::param("softmax over zero queries"))?;
    for g in a {
        first.ensure_same_shape(g, "softmax_over_queries")?;
    }
    let planes: Vec<Vec<f64>> = a.iter().map(|g| g.as_slice().to_vec()).collect();
    let (h, w) = first.dims();
    softmax_planes(&planes).into_iter().map(|p| Grid2D::new(h, w, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, projection};
    use crate::rng::{stage_rng, Stage};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn equal_inputs_give_uniform_weights() {
        let a = vec![Grid2D::filled(3, 3, 2.0); 4];
        for w in softmax_over_queries(&a).unwrap() {
            assert!(w.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let a = vec![Grid2D::filled(2, 2, 1000.0), Grid2D::zeros(2, 2), Grid2D::zeros(2, 2), Grid2D::zeros(2, 2)];
        let w = softmax_over_queries(&a).unwrap();
        assert!(w[0].as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(w[1].as_slice().iter().all(|&v| v.is_finite() && v < 1e-300));
    }

    #[test]
    fn relu_gate() {
        let mut x = vec![-1.0, 0.0, 2.0];
        relu_inplace(&mut x);
        assert_eq!(x, vec![0.0, 0.0, 2.0]);
        let mut g = vec![1.0, 1.0, 1.0];
        relu_backward_inplace(&mut g, &x);
        assert_eq!(g, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_backward_matches_central_differences() {
        for seed in 0..20 {
            let mut rng = stage_rng(seed, Stage::Init);
            let n = 12;
            let x: Vec<f64> = (0..4 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let proj = projection(4 * n, &mut rng);
            let split = |x: &[f64]| -> Vec<Vec<f64>> { x.chunks(n).map(|c| c.to_vec()).collect() };
            let loss = |x: &[f64]| -> f64 {
                softmax_planes(&split(x)).concat().iter().zip(&proj).map(|(a, b)| a * b).sum()
            };
            let w = softmax_planes(&split(&x));
            let g = softmax_planes_backward(&w, &split(&proj)).concat();
            let e = grad_check(loss, &x, &g, 1e-5);
            assert!(e < 1e-3, "seed {seed}: {e}");
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            vals in prop::collection::vec(-50.0f64..50.0, 4 * 6),
            shift in prop::collection::vec(-200.0f64..200.0, 6),
        ) {
            let grids: Vec<Grid2D> = vals.chunks(6).map(|c| Grid2D::new(2, 3, c.to_vec()).unwrap()).collect();
            let w = softmax_over_queries(&grids).unwrap();
            for p in 0..6 {
                let s: f64 = w.iter().map(|g| g.as_slice()[p]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                prop_assert!(w.iter().all(|g| g.as_slice()[p] > 0.0));
            }
            let shifted: Vec<Grid2D> = grids
                .iter()
                .map(|g| Grid2D::new(2, 3, g.as_slice().iter().zip(&shift).map(|(a, b)| a + b).collect()).unwrap())
                .collect();
            let ws = softmax_over_queries(&shifted).unwrap();
            for (a, b) in w.iter().zip(&ws) {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}

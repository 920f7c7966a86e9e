//! Central-difference gradient checking.
//!
//! Rectifiers and absolute values are only piecewise smooth. When a probe
//! interval `[x − eps, x + eps]` straddles a kink, the central difference
//! averages two different slopes and matches neither. Coordinates whose
//! forward and backward one-sided differences disagree are re-probed with a
//! step 100× smaller (at most twice) and counted in
//! [`GradCheckReport::kinks`]; the error of a coordinate is its best match
//! over the central differences taken. The split also fires on plain
//! curvature when a gradient is tiny, and there the first, largest step is
//! the accurate one, hence the minimum rather than the last estimate.
//!
//! A split that survives the smallest step means `x` lies exactly on the
//! kink (a zero-initialized bias over a dead region, say); every value
//! between the one-sided slopes is then a valid subgradient, and the
//! one-sided slopes themselves are accepted too.

use rand::Rng;

/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding do not blow the ratio up.
pub const REL_FLOOR: f64 = 1e-6;

/// One-sided slopes further apart than this (relative) mark a kink.
const KINK_SPLIT: f64 = 1e-4;

#[inline]
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub kinks: usize,
}

pub fn grad_check_report(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut probe = x.to_vec();
    let f0 = f(x);
    let mut rep = GradCheckReport {
        checked: x.len(),
        ..Default::default()
    };
    for i in 0..x.len() {
        let mut step = eps;
        let mut err = f64::INFINITY;
        let mut side_err = f64::INFINITY;
        for attempt in 0..3 {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            let fwd = (plus - f0) / step;
            let bwd = (f0 - minus) / step;
            err = err.min(rel_error(analytic[i], (plus - minus) / (2.0 * step)));
            if rel_error(fwd, bwd) <= KINK_SPLIT {
                side_err = f64::INFINITY;
                break;
            }
            if attempt == 0 {
                rep.kinks += 1;
            }
            side_err = side_err.min(rel_error(analytic[i], fwd)).min(rel_error(analytic[i], bwd));
            step *= 1e-2;
        }
        err = err.min(side_err);
        if err > rep.max_rel_error {
            rep.max_rel_error = err;
            rep.worst_index = i;
        }
    }
    rep
}

/// Worst relative error between `analytic` and the finite-difference
/// estimate over every coordinate of `x`.
pub fn grad_check(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    grad_check_report(f, x, analytic, eps).max_rel_error
}

/// Random weights for reducing a tensor-valued op to a scalar `⟨w, op(x)⟩`.
pub fn projection(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let e = grad_check(|x| 3.0 * x[0], &[0.7], &[3.0], 1e-5);
        assert!(e < 1e-10, "{e}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let e = grad_check(|x| x[0] * x[0] + x[1], &[2.0, 1.0], &[4.0, 2.0], 1e-5);
        assert!(e > 0.4);
    }

    #[test]
    fn kink_inside_probe_is_reprobed() {
        // relu just left of its kink: true slope 0, central difference at eps is 0.4
        let x = [-2e-6];
        let rep = grad_check_report(|v| v[0].max(0.0), &x, &[0.0], 1e-5);
        assert_eq!(rep.kinks, 1);
        assert!(rep.max_rel_error < 1e-9);
        // a wrong analytic value is still caught at a kink
        let rep = grad_check_report(|v| v[0].max(0.0), &x, &[1.0], 1e-5);
        assert!(rep.max_rel_error > 0.5);
    }

    #[test]
    fn exact_kink_accepts_any_subgradient() {
        for a in [0.0, 0.5, 1.0] {
            assert!(grad_check(|v| v[0].max(0.0), &[0.0], &[a], 1e-5) < 1e-9);
        }
        assert!(grad_check(|v| v[0].max(0.0), &[0.0], &[2.0], 1e-5) > 0.4);
    }

    #[test]
    fn tiny_gradient_with_curvature_is_not_a_kink() {
        // one-sided split 2·eps is 20× the slope; the central difference is exact
        let e = grad_check(|v| 1e-6 * v[0] + v[0] * v[0], &[0.0], &[1e-6], 1e-5);
        assert!(e < 1e-6, "{e}");
    }
}

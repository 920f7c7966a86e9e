//! Branch regularizers: dropout, DropBlock and stochastic depth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    None,
    Dropout,
    Dropblock,
    StochasticDepth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegStrategy {
    pub kind: RegKind,
    pub rate: f64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
}

fn default_block_size() -> usize {
    3
}

impl Default for RegStrategy {
    fn default() -> Self {
        Self::stochastic_depth(0.1)
    }
}

impl RegStrategy {
    pub fn none() -> Self {
        Self {
            kind: RegKind::None,
            rate: 0.0,
            block_size: default_block_size(),
        }
    }

    pub fn dropout(rate: f64) -> Self {
        Self {
            kind: RegKind::Dropout,
            rate,
            block_size: default_block_size(),
        }
    }

    pub fn dropblock(rate: f64, block_size: usize) -> Self {
        Self {
            kind: RegKind::Dropblock,
            rate,
            block_size,
        }
    }

    pub fn stochastic_depth(rate: f64) -> Self {
        Self {
            kind: RegKind::StochasticDepth,
            rate,
            block_size: default_block_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::param(format!("regularizer rate {} must lie in [0, 1)", self.rate)));
        }
        if self.block_size == 0 {
            return Err(Error::param("dropblock block_size must be >= 1"));
        }
        Ok(())
    }
}

/// How the regularizer scaled its input; the backward pass applies the same factors.
#[derive(Clone, Debug, PartialEq)]
pub enum RegScale {
    Uniform(f64),
    PerElement(Vec<f64>),
}

impl RegScale {
    pub fn apply(&self, x: &FeatureMap) -> FeatureMap {
        let mut out = x.clone();
        match self {
            RegScale::Uniform(s) => {
                if *s != 1.0 {
                    out.as_mut_slice().iter_mut().for_each(|v| *v *= s);
                }
            }
            RegScale::PerElement(m) => out.as_mut_slice().iter_mut().zip(m).for_each(|(v, s)| *v *= s),
        }
        out
    }
}

/// Draws the regularizer's scaling for `branch` and applies it.
pub fn apply_regularizer(strategy: &RegStrategy, branch: &FeatureMap, training: bool, rng: &mut impl Rng) -> Result<(FeatureMap, RegScale)> {
    strategy.validate()?;
    let p = strategy.rate;
    let scale = match (strategy.kind, training) {
        (RegKind::None, _) => RegScale::Uniform(1.0),
        (RegKind::Dropout | RegKind::Dropblock, false) => RegScale::Uniform(1.0),
        (RegKind::StochasticDepth, false) => RegScale::Uniform(1.0 - p),
        (RegKind::StochasticDepth, true) => {
            let keep = p == 0.0 || rng.random::<f64>() >= p;
            RegScale::Uniform(if keep { 1.0 } else { 0.0 })
        }
        (RegKind::Dropout, true) => {
            if p == 0.0 {
                RegScale::Uniform(1.0)
            } else {
                let inv = 1.0 / (1.0 - p);
                RegScale::PerElement(
                    (0..branch.as_slice().len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { inv })
                        .collect(),
                )
            }
        }
        (RegKind::Dropblock, true) => {
            if p == 0.0 {
                RegScale::Uniform(1.0)
            } else {
                RegScale::PerElement(dropblock_mask(branch, p, strategy.block_size, rng))
            }
        }
    };
    Ok((scale.apply(branch), scale))
}

/// Block-anchor Bernoulli rate chosen so the expected dropped fraction is
/// `rate`, blocks anchored at their top-left corner; survivors rescaled by
/// `numel / kept`.
fn dropblock_mask(branch: &FeatureMap, rate: f64, block_size: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (c, h, w) = (branch.channels(), branch.height(), branch.width());
    let bs = block_size.min(h).min(w);
    let (ah, aw) = (h - bs + 1, w - bs + 1);
    let gamma = (rate / (bs * bs) as f64 * (h * w) as f64 / (ah * aw) as f64).min(1.0);
    let mut keep = vec![1.0; c * h * w];
    for ch in 0..c {
        for y in 0..ah {
            for x in 0..aw {
                if rng.random::<f64>() < gamma {
                    for yy in y..y + bs {
                        let row = ch * h * w + yy * w;
                        keep[row + x..row + x + bs].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
    }
    let kept: f64 = keep.iter().sum();
    if kept > 0.0 {
        let s = keep.len() as f64 / kept;
        keep.iter_mut().for_each(|v| *v *= s);
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stage_rng, Stage};

    fn ramp(c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(c, h, w, (0..c * h * w).map(|i| (i % 17) as f64 - 3.0).collect()).unwrap()
    }

    #[test]
    fn none_and_zero_rate_are_identity() {
        let x = ramp(2, 5, 5);
        let mut rng = stage_rng(0, Stage::Regularizer);
        for training in [false, true] {
            for s in [RegStrategy::none(), RegStrategy::stochastic_depth(0.0), RegStrategy::dropout(0.0), RegStrategy::dropblock(0.0, 3)] {
                assert_eq!(apply_regularizer(&s, &x, training, &mut rng).unwrap().0, x);
            }
        }
    }

    #[test]
    fn inference_semantics() {
        let x = ramp(1, 4, 4);
        let mut rng = stage_rng(0, Stage::Regularizer);
        assert_eq!(apply_regularizer(&RegStrategy::dropout(0.5), &x, false, &mut rng).unwrap().0, x);
        assert_eq!(apply_regularizer(&RegStrategy::dropblock(0.5, 2), &x, false, &mut rng).unwrap().0, x);
        let sd = apply_regularizer(&RegStrategy::stochastic_depth(0.25), &x, false, &mut rng).unwrap().0;
        for (a, b) in sd.as_slice().iter().zip(x.as_slice()) {
            assert_eq!(*a, 0.75 * b);
        }
    }

    #[test]
    fn stochastic_depth_drops_whole_branch() {
        let x = FeatureMap::new(1, 4, 4, vec![1.0; 16]).unwrap();
        let mut rng = stage_rng(3, Stage::Regularizer);
        let mut dropped = 0;
        for _ in 0..2000 {
            let (y, _) = apply_regularizer(&RegStrategy::stochastic_depth(0.3), &x, true, &mut rng).unwrap();
            let s: f64 = y.as_slice().iter().sum();
            assert!(s == 0.0 || s == 16.0);
            dropped += (s == 0.0) as usize;
        }
        let frac = dropped as f64 / 2000.0;
        assert!((frac - 0.3).abs() < 0.04, "{frac}");
    }

    #[test]
    fn dropout_and_dropblock_preserve_mean() {
        let x = FeatureMap::new(1, 128, 128, vec![2.0; 128 * 128]).unwrap();
        let mut rng = stage_rng(5, Stage::Regularizer);
        for s in [RegStrategy::dropout(0.5), RegStrategy::dropblock(0.3, 5)] {
            let (y, _) = apply_regularizer(&s, &x, true, &mut rng).unwrap();
            let mean = y.as_slice().iter().sum::<f64>() / y.as_slice().len() as f64;
            assert!((mean - 2.0).abs() / 2.0 < 0.05, "{s:?}: {mean}");
            let zeros = y.as_slice().iter().filter(|v| **v == 0.0).count() as f64 / y.as_slice().len() as f64;
            assert!(zeros > 0.1, "{s:?} dropped too little: {zeros}");
        }
    }

    #[test]
    fn dropblock_drops_contiguous_blocks() {
        let x = FeatureMap::new(1, 32, 32, vec![1.0; 1024]).unwrap();
        let (y, _) = apply_regularizer(&RegStrategy::dropblock(0.2, 4), &x, true, &mut stage_rng(1, Stage::Regularizer)).unwrap();
        // every zero pixel belongs to some fully-zero 4x4 window
        for yy in 0..32 {
            for xx in 0..32 {
                if y.get(0, yy, xx) != 0.0 {
                    continue;
                }
                let covered = (yy.saturating_sub(3)..=yy.min(28)).any(|ty| {
                    (xx.saturating_sub(3)..=xx.min(28)).any(|tx| (ty..ty + 4).all(|a| (tx..tx + 4).all(|b| y.get(0, a, b) == 0.0)))
                });
                assert!(covered, "isolated zero at {yy},{xx}");
            }
        }
    }

    #[test]
    fn rejects_invalid_rate() {
        let x = ramp(1, 2, 2);
        let mut rng = stage_rng(0, Stage::Regularizer);
        assert!(apply_regularizer(&RegStrategy::dropout(1.0), &x, true, &mut rng).is_err());
        assert!(apply_regularizer(&RegStrategy::dropblock(0.1, 0), &x, true, &mut rng).is_err());
    }
}

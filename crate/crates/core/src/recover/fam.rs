//! Feature alignment head: image features are read at four diagonal query
//! pixels, a shared per-pixel MLP turns each (feature, relative coordinate)
//! into a weight logit `a` and a value `b`, and the softmax-weighted sum of
//! the values is added to single-channel reductions of both feature maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::act::{softmax_planes, softmax_planes_backward};
use crate::nn::{apply_regularizer, Conv3x3, Mlp, MlpCache, ParamStore, RegScale, RegStrategy};
use crate::tensor::{FeatureMap, Grid2D};

/// Query offsets `(dx, dy)` in units of the query distance.
pub const QUERY_DIRECTIONS: [(i64, i64); 4] = [(-1, -1), (1, -1), (-1, 1), (1, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamConfig {
    pub channels: usize,
    pub query_distance: usize,
    pub mlp_hidden: Vec<usize>,
    pub reg: RegStrategy,
}

impl Default for FamConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            query_distance: 5,
            mlp_hidden: vec![64, 64],
            reg: RegStrategy::default(),
        }
    }
}

impl FamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.query_distance == 0 {
            return Err(Error::param("fam: channels and query_distance must be >= 1"));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::param("fam: zero-width hidden layer"));
        }
        self.reg.validate()
    }

    /// `[C + 2, hidden.., 2]`
    pub fn mlp_widths(&self) -> Vec<usize> {
        let mut w = vec![self.channels + 2];
        w.extend(&self.mlp_hidden);
        w.push(2);
        w
    }
}

/// Features read at one query offset.
#[derive(Clone, Debug)]
pub struct QuerySample {
    pub sampled: FeatureMap,
    /// Realized horizontal offset divided by the query distance.
    pub coord_x: Grid2D,
    pub coord_y: Grid2D,
    /// Flat source pixel of every target pixel.
    pub source: Vec<usize>,
}

/// Clamped nearest reads at the four diagonal offsets `±f`.
pub fn sample_queries(e: &FeatureMap, f: usize) -> Result<Vec<QuerySample>> {
    if f == 0 {
        return Err(Error::param("query distance must be >= 1"));
    }
    let (c, h, w) = (e.channels(), e.height(), e.width());
    let fi = f as i64;
    Ok(QUERY_DIRECTIONS
        .iter()
        .map(|&(dx, dy)| {
            let mut source = Vec::with_capacity(h * w);
            let mut cx = Vec::with_capacity(h * w);
            let mut cy = Vec::with_capacity(h * w);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let sx = (x + dx * fi).clamp(0, w as i64 - 1);
                    let sy = (y + dy * fi).clamp(0, h as i64 - 1);
                    source.push((sy * w as i64 + sx) as usize);
                    cx.push((sx - x) as f64 / f as f64);
                    cy.push((sy - y) as f64 / f as f64);
                }
            }
            let mut sampled = FeatureMap::zeros(c, h, w);
            for ch in 0..c {
                let src = e.channel(ch);
                for (d, &s) in sampled.channel_mut(ch).iter_mut().zip(&source) {
                    *d = src[s];
                }
            }
            QuerySample {
                sampled,
                coord_x: Grid2D::new(h, w, cx).expect("sized"),
                coord_y: Grid2D::new(h, w, cy).expect("sized"),
                source,
            }
        })
        .collect())
}

/// Parameters of the alignment head.
#[derive(Clone, Debug)]
pub struct Fam {
    cfg: FamConfig,
    reduce_image: Conv3x3,
    reduce_depth: Conv3x3,
    mlp: Mlp,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct FamOutput {
    pub depth: Grid2D,
    pub reduced_image: Grid2D,
    pub reduced_depth: Grid2D,
    /// Residual after the regularizer.
    pub residual: Grid2D,
    pub weights: Vec<Grid2D>,
    pub values: Vec<Grid2D>,
}

pub struct FamCache {
    e_image: FeatureMap,
    e_depth: FeatureMap,
    sources: Vec<Vec<usize>>,
    mlp: Vec<MlpCache>,
    weights: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    scale: RegScale,
}

impl Fam {
    pub fn new(store: &mut ParamStore, cfg: FamConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            reduce_image: Conv3x3::new(store, "fam.reduce_image", cfg.channels, 1, rng)?,
            reduce_depth: Conv3x3::new(store, "fam.reduce_depth", cfg.channels, 1, rng)?,
            mlp: Mlp::new(store, "fam.query", &cfg.mlp_widths(), rng)?,
            cfg,
        })
    }

    pub fn config(&self) -> &FamConfig {
        &self.cfg
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        e_image: &FeatureMap,
        e_depth: &FeatureMap,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(FamOutput, FamCache)> {
        let c = self.cfg.channels;
        if e_image.channels() != c || e_depth.channels() != c {
            return Err(Error::param(format!(
                "fam expects {c} feature channels, got {} and {}",
                e_image.channels(),
                e_depth.channels()
            )));
        }
        let (h, w) = (e_image.height(), e_image.width());
        if (e_depth.height(), e_depth.width()) != (h, w) {
            return Err(Error::param("fam: feature maps differ in size"));
        }
        let reduced_image = self.reduce_image.forward(store, e_image)?.channel_grid(0);
        let reduced_depth = self.reduce_depth.forward(store, e_depth)?.channel_grid(0);

        let queries = sample_queries(e_image, self.cfg.query_distance)?;
        let mut logits = Vec::with_capacity(4);
        let mut values = Vec::with_capacity(4);
        let mut caches = Vec::with_capacity(4);
        let mut sources = Vec::with_capacity(4);
        for q in queries {
            let coords = FeatureMap::stack(&[&q.coord_x, &q.coord_y])?;
            let x = FeatureMap::concat(&[&q.sampled, &coords])?;
            let (y, cache) = self.mlp.forward(store, &x)?;
            logits.push(y.channel(0).to_vec());
            values.push(y.channel(1).to_vec());
            caches.push(cache);
            sources.push(q.source);
        }
        let weights = softmax_planes(&logits);
        let mut branch = vec![0.0; h * w];
        for (wj, bj) in weights.iter().zip(&values) {
            for ((r, a), b) in branch.iter_mut().zip(wj).zip(bj) {
                *r += a * b;
            }
        }
        let (residual, scale) = apply_regularizer(&self.cfg.reg, &FeatureMap::new(1, h, w, branch)?, training, rng)?;
        let residual = residual.channel_grid(0);
        let depth = Grid2D::from_fn(h, w, |y, x| reduced_image.get(y, x) + reduced_depth.get(y, x) + residual.get(y, x));
        let out = FamOutput {
            depth,
            reduced_image,
            reduced_depth,
            residual,
            weights: weights.iter().map(|p| Grid2D::new(h, w, p.clone())).collect::<Result<_>>()?,
            values: values.iter().map(|p| Grid2D::new(h, w, p.clone())).collect::<Result<_>>()?,
        };
        let cache = FamCache {
            e_image: e_image.clone(),
            e_depth: e_depth.clone(),
            sources,
            mlp: caches,
            weights,
            values,
            scale,
        };
        Ok((out, cache))
    }

    /// Accumulates head gradients; returns the gradients of both feature maps.
    pub fn backward(&self, store: &mut ParamStore, cache: &FamCache, grad: &Grid2D) -> Result<(FeatureMap, FeatureMap)> {
        let (h, w) = grad.dims();
        let g = FeatureMap::from_grid(grad);
        let mut g_image = self.reduce_image.backward(store, &cache.e_image, &g, true)?.expect("requested");
        let g_depth = self.reduce_depth.backward(store, &cache.e_depth, &g, true)?.expect("requested");

        let g_branch = cache.scale.apply(&g);
        let gb = g_branch.as_slice();
        let g_weights: Vec<Vec<f64>> = cache.values.iter().map(|b| b.iter().zip(gb).map(|(u, v)| u * v).collect()).collect();
        let g_logits = softmax_planes_backward(&cache.weights, &g_weights);
        let c = self.cfg.channels;
        for j in 0..4 {
            let g_values: Vec<f64> = cache.weights[j].iter().zip(gb).map(|(u, v)| u * v).collect();
            let mut g_out = g_logits[j].clone();
            g_out.extend(g_values);
            let g_in = self.mlp.backward(store, &cache.mlp[j], &FeatureMap::new(2, h, w, g_out)?)?;
            for ch in 0..c {
                let src = g_in.channel(ch);
                let dst = g_image.channel_mut(ch);
                for (p, &s) in cache.sources[j].iter().enumerate() {
                    dst[s] += src[p];
                }
            }
        }
        Ok((g_image, g_depth))
    }
}

/// Recovered (normalized) depth from a pair of feature maps.
pub fn fam_forward(fam: &Fam, store: &ParamStore, e_image: &FeatureMap, e_depth: &FeatureMap, training: bool, rng: &mut impl Rng) -> Result<Grid2D> {
    fam.forward(store, e_image, e_depth, training, rng).map(|(o, _)| o.depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, projection};
    use crate::rng::{stage_rng, Stage};

    fn random_map(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> FeatureMap {
        FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small_cfg(c: usize) -> FamConfig {
        FamConfig {
            channels: c,
            query_distance: 2,
            mlp_hidden: vec![5],
            reg: RegStrategy::none(),
        }
    }

    #[test]
    fn constant_features_sample_to_constant() {
        let e = FeatureMap::new(2, 6, 5, vec![3.25; 60]).unwrap();
        for q in sample_queries(&e, 3).unwrap() {
            assert!(q.sampled.as_slice().iter().all(|v| *v == 3.25));
        }
        assert!(sample_queries(&e, 0).is_err());
    }

    #[test]
    fn interior_coords_are_unit_diagonals() {
        let e = FeatureMap::zeros(1, 12, 12);
        let qs = sample_queries(&e, 5).unwrap();
        for (q, (dx, dy)) in qs.iter().zip(QUERY_DIRECTIONS) {
            for y in 5..7 {
                for x in 5..7 {
                    assert_eq!((q.coord_x.get(y, x), q.coord_y.get(y, x)), (dx as f64, dy as f64));
                }
            }
        }
        // top-left corner: only the down-right query reaches its full offset
        assert_eq!((qs[0].coord_x.get(0, 0), qs[0].coord_y.get(0, 0)), (0.0, 0.0));
        assert_eq!((qs[1].coord_x.get(0, 0), qs[1].coord_y.get(0, 0)), (1.0, 0.0));
        assert_eq!((qs[3].coord_x.get(0, 0), qs[3].coord_y.get(0, 0)), (1.0, 1.0));
        assert_eq!(qs[0].coord_x.get(0, 2), -0.4);
    }

    #[test]
    fn ramp_sampling_matches_index_lookup() {
        let e = FeatureMap::new(1, 12, 12, (0..144).map(|v| v as f64).collect()).unwrap();
        let qs = sample_queries(&e, 5).unwrap();
        for (q, (dx, dy)) in qs.iter().zip(QUERY_DIRECTIONS) {
            for y in 0..12i64 {
                for x in 0..12i64 {
                    let sy = (y + 5 * dy).max(0).min(11);
                    let sx = (x + 5 * dx).max(0).min(11);
                    assert_eq!(q.sampled.get(0, y as usize, x as usize), (sy * 12 + sx) as f64);
                    assert_eq!(q.coord_x.get(y as usize, x as usize), (sx - x) as f64 / 5.0);
                }
            }
        }
    }

    #[test]
    fn zero_values_leave_reductions_exactly() {
        let mut store = ParamStore::new();
        let cfg = FamConfig {
            reg: RegStrategy::stochastic_depth(0.1),
            ..small_cfg(4)
        };
        let fam = Fam::new(&mut store, cfg, &mut stage_rng(0, Stage::Init)).unwrap();
        let last = fam.mlp().layers().last().unwrap().clone();
        // output row 1 is the value b
        let fan_in = last.in_features;
        store.value_mut(last.weight)[fan_in..].iter_mut().for_each(|v| *v = 0.0);
        store.value_mut(last.bias)[1] = 0.0;
        let mut rng = stage_rng(1, Stage::Scene);
        let (ei, ed) = (random_map(4, 9, 8, &mut rng), random_map(4, 9, 8, &mut rng));
        for training in [false, true] {
            let (out, _) = fam.forward(&store, &ei, &ed, training, &mut rng).unwrap();
            for p in 0..72 {
                let want = out.reduced_image.as_slice()[p] + out.reduced_depth.as_slice()[p];
                assert_eq!(out.depth.as_slice()[p].to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let mut store = ParamStore::new();
        let fam = Fam::new(&mut store, small_cfg(3), &mut stage_rng(2, Stage::Init)).unwrap();
        let mut rng = stage_rng(2, Stage::Scene);
        let (ei, ed) = (random_map(3, 7, 7, &mut rng), random_map(3, 7, 7, &mut rng));
        let (out, _) = fam.forward(&store, &ei, &ed, false, &mut rng).unwrap();
        for p in 0..49 {
            let s: f64 = out.weights.iter().map(|g| g.as_slice()[p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_feature_width() {
        let mut store = ParamStore::new();
        let fam = Fam::new(&mut store, small_cfg(3), &mut stage_rng(0, Stage::Init)).unwrap();
        let mut rng = stage_rng(0, Stage::Scene);
        assert!(fam.forward(&store, &FeatureMap::zeros(2, 5, 5), &FeatureMap::zeros(3, 5, 5), false, &mut rng).is_err());
        assert!(fam.forward(&store, &FeatureMap::zeros(3, 5, 5), &FeatureMap::zeros(3, 5, 4), false, &mut rng).is_err());
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut store = ParamStore::new();
            let fam = Fam::new(&mut store, small_cfg(3), &mut stage_rng(seed, Stage::Init)).unwrap();
            let mut rng = stage_rng(seed, Stage::Scene);
            let (ei, ed) = (random_map(3, 6, 6, &mut rng), random_map(3, 6, 6, &mut rng));
            let proj = projection(36, &mut rng);
            let (_, cache) = fam.forward(&store, &ei, &ed, false, &mut rng).unwrap();
            store.zero_grad();
            let (gi, gd) = fam.backward(&mut store, &cache, &Grid2D::new(6, 6, proj.clone()).unwrap()).unwrap();
            let dot = |d: &Grid2D| d.as_slice().iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>();

            let analytic = store.flat_grads();
            let mut probe = store.clone();
            let e = grad_check(
                |p| {
                    probe.set_flat_values(p);
                    dot(&fam_forward(&fam, &probe, &ei, &ed, false, &mut stage_rng(0, Stage::Regularizer)).unwrap())
                },
                &store.flat_values(),
                &analytic,
                1e-5,
            );
            assert!(e < 1e-3, "params seed {seed}: {e}");

            let n = ei.as_slice().len();
            let e = grad_check(
                |p| {
                    let x = FeatureMap::new(3, 6, 6, p.to_vec()).unwrap();
                    dot(&fam_forward(&fam, &store, &x, &ed, false, &mut stage_rng(0, Stage::Regularizer)).unwrap())
                },
                ei.as_slice(),
                &gi.as_slice()[..n],
                1e-5,
            );
            assert!(e < 1e-3, "image features seed {seed}: {e}");
            let e = grad_check(
                |p| {
                    let x = FeatureMap::new(3, 6, 6, p.to_vec()).unwrap();
                    dot(&fam_forward(&fam, &store, &ei, &x, false, &mut stage_rng(0, Stage::Regularizer)).unwrap())
                },
                ed.as_slice(),
                gd.as_slice(),
                1e-5,
            );
            assert!(e < 1e-3, "depth features seed {seed}: {e}");
        }
    }
}

//! Finite-difference gradient checks over every hand-differentiated block,
//! on small random instances. Shared by the `gradcheck` command and the
//! acceptance suite.

use rand::Rng;

use crate::error::Result;
use crate::nn::gradcheck::{grad_check_report, projection};
use crate::nn::{conv3x3_backward, conv3x3_forward, mlp_forward, Mlp, ParamStore, RegStrategy};
use crate::recover::loss::loss_total_grad;
use crate::recover::{
    encoder_forward, fam_forward, loss_total, Encoder, EncoderConfig, Fam, FamConfig, LossWeights, MsgForm, RecoveryConfig,
    RecoveryInput, RecoveryModel, ToyEncoder,
};
use crate::rng::{stage_rng, SeededRng, Stage};
use crate::tensor::{FeatureMap, Grid2D};

pub const CHECK_EPS: f64 = 1e-5;
pub const CHECK_TOLERANCE: f64 = 1e-3;

/// Worst error of one block over all its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub kinks: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < CHECK_TOLERANCE
    }
}

struct Acc {
    res: CheckResult,
}

impl Acc {
    fn new(name: &'static str, seeds: u64) -> Self {
        Self {
            res: CheckResult {
                name,
                seeds,
                max_rel_error: 0.0,
                worst_seed: 0,
                kinks: 0,
            },
        }
    }

    fn check(&mut self, seed: u64, f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) {
        let rep = grad_check_report(f, x, analytic, CHECK_EPS);
        self.res.kinks += rep.kinks;
        // NaN must not hide behind a comparison
        if !(rep.max_rel_error <= self.res.max_rel_error) {
            self.res.max_rel_error = rep.max_rel_error;
            self.res.worst_seed = seed;
        }
    }
}

fn random_map(c: usize, h: usize, w: usize, rng: &mut SeededRng) -> FeatureMap {
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Checks a parameter store's gradient against `loss(store)`.
fn check_store(acc: &mut Acc, seed: u64, store: &ParamStore, mut loss: impl FnMut(&ParamStore) -> f64) {
    let x = store.flat_values();
    let analytic = store.flat_grads();
    let mut probe = store.clone();
    acc.check(
        seed,
        |p| {
            probe.set_flat_values(p);
            loss(&probe)
        },
        &x,
        &analytic,
    );
}

pub fn check_conv3x3(seeds: u64) -> Result<CheckResult> {
    let mut acc = Acc::new("conv3x3", seeds);
    let (ci, co, h, w) = (4, 3, 6, 6);
    for seed in 0..seeds {
        let mut rng = stage_rng(seed, Stage::Init);
        let x = random_map(ci, h, w, &mut rng);
        let wt: Vec<f64> = (0..co * ci * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
        let proj = projection(co * h * w, &mut rng);
        let g = conv3x3_backward(&wt, &x, &FeatureMap::new(co, h, w, proj.clone())?, true)?;
        let loss = |wt: &[f64], b: &[f64], x: &FeatureMap| dot(conv3x3_forward(wt, b, x, co).expect("shapes").as_slice(), &proj);
        acc.check(seed, |p| loss(p, &b, &x), &wt, &g.weight);
        acc.check(seed, |p| loss(&wt, p, &x), &b, &g.bias);
        let gin = g.input.expect("requested");
        acc.check(
            seed,
            |p| loss(&wt, &b, &FeatureMap::new(ci, h, w, p.to_vec()).expect("sized")),
            x.as_slice(),
            gin.as_slice(),
        );
    }
    Ok(acc.res)
}

pub fn check_mlp(seeds: u64) -> Result<CheckResult> {
    let mut acc = Acc::new("mlp", seeds);
    for seed in 0..seeds {
        let mut rng = stage_rng(seed, Stage::Init);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[5, 7, 6, 2], &mut rng)?;
        // non-zero biases so they are exercised too
        let flat: Vec<f64> = store.flat_values().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        store.set_flat_values(&flat);
        let x = FeatureMap::new(5, 3, 4, projection(60, &mut rng))?;
        let proj = projection(24, &mut rng);
        let (_, cache) = mlp.forward(&store, &x)?;
        store.zero_grad();
        let gin = mlp.backward(&mut store, &cache, &FeatureMap::new(2, 3, 4, proj.clone())?)?;
        let loss = |s: &ParamStore, x: &FeatureMap| dot(mlp_forward(s, &mlp, x).expect("shapes").as_slice(), &proj);
        check_store(&mut acc, seed, &store, |s| loss(s, &x));
        acc.check(
            seed,
            |p| loss(&store, &FeatureMap::new(5, 3, 4, p.to_vec()).expect("sized")),
            x.as_slice(),
            gin.as_slice(),
        );
    }
    Ok(acc.res)
}

pub fn check_fam(seeds: u64) -> Result<CheckResult> {
    let mut acc = Acc::new("fam", seeds);
    let (c, h, w) = (3, 6, 6);
    let cfg = FamConfig {
        channels: c,
        query_distance: 2,
        mlp_hidden: vec![5],
        reg: RegStrategy::none(),
    };
    for seed in 0..seeds {
        let mut store = ParamStore::new();
        let fam = Fam::new(&mut store, cfg.clone(), &mut stage_rng(seed, Stage::Init))?;
        let mut rng = stage_rng(seed, Stage::Scene);
        let (ei, ed) = (random_map(c, h, w, &mut rng), random_map(c, h, w, &mut rng));
        let proj = projection(h * w, &mut rng);
        let (_, cache) = fam.forward(&store, &ei, &ed, false, &mut rng)?;
        store.zero_grad();
        let (gi, gd) = fam.backward(&mut store, &cache, &Grid2D::new(h, w, proj.clone())?)?;
        let out = |s: &ParamStore, ei: &FeatureMap, ed: &FeatureMap| {
            let d = fam_forward(&fam, s, ei, ed, false, &mut stage_rng(0, Stage::Regularizer)).expect("shapes");
            dot(d.as_slice(), &proj)
        };
        check_store(&mut acc, seed, &store, |s| out(s, &ei, &ed));
        let mk = |p: &[f64]| FeatureMap::new(c, h, w, p.to_vec()).expect("sized");
        acc.check(seed, |p| out(&store, &mk(p), &ed), ei.as_slice(), gi.as_slice());
        acc.check(seed, |p| out(&store, &ei, &mk(p)), ed.as_slice(), gd.as_slice());
    }
    Ok(acc.res)
}

pub fn check_encoder(seeds: u64) -> Result<CheckResult> {
    let mut acc = Acc::new("encoder", seeds);
    let (c, h, w) = (3, 6, 6);
    for seed in 0..seeds {
        let mut store = ParamStore::new();
        let enc = ToyEncoder::new(&mut store, EncoderConfig::default(), c, &mut stage_rng(seed, Stage::Init))?;
        let mut rng = stage_rng(seed, Stage::Scene);
        let (i, d) = (random_map(3, h, w, &mut rng), random_map(1, h, w, &mut rng));
        let wi = projection(c * h * w, &mut rng);
        let wd = projection(c * h * w, &mut rng);
        let (_, _, cache) = enc.forward(&store, &i, &d)?;
        store.zero_grad();
        enc.backward(&mut store, &cache, &FeatureMap::new(c, h, w, wi.clone())?, &FeatureMap::new(c, h, w, wd.clone())?)?;
        check_store(&mut acc, seed, &store, |s| {
            let (ei, ed) = encoder_forward(&enc, s, &i, &d).expect("shapes");
            dot(ei.as_slice(), &wi) + dot(ed.as_slice(), &wd)
        });
    }
    Ok(acc.res)
}

/// `loss_total` with respect to the prediction, both smoothness forms.
pub fn check_loss_total(seeds: u64) -> Result<CheckResult> {
    let mut acc = Acc::new("loss_total", seeds);
    let (h, w) = (16, 16);
    for seed in 0..seeds {
        let mut rng = stage_rng(seed, Stage::Scene);
        let gt = Grid2D::from_fn(h, w, |_, _| rng.random_range(1.0..5.0));
        let pred = Grid2D::from_fn(h, w, |_, _| rng.random_range(1.0..5.0));
        for form in [MsgForm::Standard, MsgForm::PaperLiteral] {
            let weights = LossWeights::default();
            let (_, g) = loss_total_grad(&pred, &gt, &weights, form)?;
            acc.check(
                seed,
                |p| loss_total(&Grid2D::new(h, w, p.to_vec()).expect("sized"), &gt, &weights, form).expect("valid").total,
                pred.as_slice(),
                g.as_slice(),
            );
        }
    }
    Ok(acc.res)
}

/// Whole model: every parameter through `loss_total` on 16×16 instances.
pub fn check_end_to_end(seeds: u64) -> Result<CheckResult> {
    let mut acc = Acc::new("end_to_end", seeds);
    let (h, w) = (16, 16);
    let cfg = RecoveryConfig {
        fam: FamConfig {
            channels: 2,
            query_distance: 3,
            mlp_hidden: vec![4],
            reg: RegStrategy::none(),
        },
        encoder: EncoderConfig::default(),
    };
    for seed in 0..seeds {
        let mut model = RecoveryModel::new(&cfg, seed)?;
        let mut rng = stage_rng(seed, Stage::Scene);
        let rgb = FeatureMap::new(3, h, w, (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect())?;
        let gt = Grid2D::from_fn(h, w, |_, _| rng.random_range(1.0..4.0));
        let raw = gt.map(|v| if v > 3.7 { 0.0 } else { v * 1.1 });
        let input = RecoveryInput::new(&rgb, &raw, None)?;
        for form in [MsgForm::Standard, MsgForm::PaperLiteral] {
            let weights = LossWeights::default();
            model.loss_and_grad(&input, &gt, &weights, form, false, &mut stage_rng(0, Stage::Regularizer))?;
            let mut probe = model.clone();
            acc.check(
                seed,
                |p| {
                    probe.store.set_flat_values(p);
                    probe.eval_loss(&input, &gt, &weights, form).expect("valid").total
                },
                &model.store.flat_values(),
                &model.store.flat_grads(),
            );
        }
    }
    Ok(acc.res)
}

/// Every block, `seeds` random instances each.
pub fn run_all(seeds: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_conv3x3(seeds)?,
        check_mlp(seeds)?,
        check_fam(seeds)?,
        check_encoder(seeds)?,
        check_loss_total(seeds)?,
        check_end_to_end(seeds)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_passes_on_a_few_seeds() {
        for r in run_all(3).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{LossWeights, MsgForm, MSG_SCALES};
use super::{Encoder, RecoveryInput, RecoveryModel};
use crate::error::{Error, Result};
use crate::nn::{adam_step, random_crop, AdamConfig, TrainSchedule};
use crate::rng::{stage_rng, Stage};
use crate::tensor::{FeatureMap, Grid2D};
use crate::uncertainty::{mask_raw, UncertaintyMap};

/// One training pair: masked network input and its ground truth.
#[derive(Clone, Debug)]
pub struct RecoverySample {
    pub input: RecoveryInput,
    pub gt: Grid2D,
}

impl RecoverySample {
    /// Masks `raw` with `uncertainty` before building the input.
    pub fn new(rgb: &FeatureMap, raw: &Grid2D, rel_depth: Option<&Grid2D>, uncertainty: &UncertaintyMap, gt: Grid2D) -> Result<Self> {
        let masked = mask_raw(raw, uncertainty)?;
        let input = RecoveryInput::new(rgb, &masked, rel_depth)?;
        gt.ensure_same_shape(&masked, "recovery ground truth")?;
        Ok(Self { input, gt })
    }

    fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            input: self.input.crop(top, left, h, w)?,
            gt: self.gt.crop(top, left, h, w)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryTraining {
    pub schedule: TrainSchedule,
    pub loss: LossWeights,
    pub msg_form: MsgForm,
}

/// Batch-size-1 Adam over random square crops with the step-decay schedule.
/// Returns the mean training loss of every epoch.
pub fn train_toy<E: Encoder>(dataset: &[RecoverySample], model: &mut RecoveryModel<E>, cfg: &RecoveryTraining) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let min_side = 1usize << MSG_SCALES;
    let sched = &cfg.schedule;
    if sched.crop < min_side {
        return Err(Error::param(format!("crop {} is below the {min_side}px loss minimum", sched.crop)));
    }
    if let Some(s) = dataset.iter().find(|s| s.gt.height() < min_side || s.gt.width() < min_side) {
        return Err(Error::param(format!("sample of {:?} is below the {min_side}px loss minimum", s.gt.dims())));
    }
    model.set_precision(sched.precision);
    let mut shuffle_rng = stage_rng(sched.seed, Stage::Shuffle);
    let mut crop_rng = stage_rng(sched.seed, Stage::Crop);
    let mut reg_rng = stage_rng(sched.seed, Stage::Regularizer);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(sched.epochs);
    for epoch in 0..sched.epochs {
        let adam = AdamConfig {
            lr: sched.lr.lr_at(epoch),
            ..sched.adam
        };
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut counted) = (0.0, 0usize);
        for &i in &order {
            let s = &dataset[i];
            let (h, w) = s.gt.dims();
            let (top, left, ch, cw) = random_crop(h, w, sched.crop, &mut crop_rng);
            let c = s.crop(top, left, ch, cw)?;
            if c.gt.as_slice().iter().filter(|v| **v > 0.0).count() < 2 {
                continue;
            }
            let parts = model.loss_and_grad(&c.input, &c.gt, &cfg.loss, cfg.msg_form, true, &mut reg_rng)?;
            adam_step(&mut model.store, &adam)?;
            total += parts.total;
            counted += 1;
        }
        let mean = if counted > 0 { total / counted as f64 } else { 0.0 };
        debug!("recovery epoch {epoch}: loss {mean:.6} (lr {})", adam.lr);
        history.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recover::tests::{random_sample, tiny_config};

    fn sample(seed: u64, n: usize) -> RecoverySample {
        let (input, gt) = random_sample(seed, n, n);
        RecoverySample { input, gt }
    }

    fn training(epochs: usize, crop: usize, seed: u64) -> RecoveryTraining {
        RecoveryTraining {
            schedule: TrainSchedule {
                epochs,
                crop,
                seed,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn single_sample_loss_decreases() {
        let data = [sample(1, 20)];
        let mut model = RecoveryModel::new(&tiny_config(), 1).unwrap();
        let before = model.eval_loss(&data[0].input, &data[0].gt, &LossWeights::default(), MsgForm::Standard).unwrap().total;
        let hist = train_toy(&data, &mut model, &training(50, 20, 0)).unwrap();
        let after = model.eval_loss(&data[0].input, &data[0].gt, &LossWeights::default(), MsgForm::Standard).unwrap().total;
        assert_eq!(hist.len(), 50);
        assert!(hist[49] < hist[0], "{hist:?}");
        assert!(after < before);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let data = [sample(2, 24), sample(3, 24)];
        let run = || {
            let mut model = RecoveryModel::new(&tiny_config(), 7).unwrap();
            let h = train_toy(&data, &mut model, &training(3, 16, 11)).unwrap();
            (h, model.store.flat_values())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_datasets() {
        let mut model = RecoveryModel::new(&tiny_config(), 0).unwrap();
        assert!(matches!(train_toy(&[], &mut model, &training(1, 16, 0)), Err(Error::EmptyDataset)));
        assert!(train_toy(&[sample(0, 12)], &mut model, &training(1, 16, 0)).is_err());
        assert!(train_toy(&[sample(0, 20)], &mut model, &training(1, 8, 0)).is_err());
    }

    #[test]
    fn sample_masks_raw() {
        let rgb = FeatureMap::zeros(3, 2, 2);
        let raw = Grid2D::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = UncertaintyMap::new(Grid2D::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap()).unwrap();
        let s = RecoverySample::new(&rgb, &raw, None, &u, raw.clone()).unwrap();
        assert_eq!(s.input.depth.as_slice(), &[0.25, 0.0, 0.75, 1.0]);
    }
}

//! Depth recovery: an encoder produces image and depth features, the
//! alignment head fuses them into a depth map, and [`train_toy`] fits the
//! whole model with the combined loss.
//!
//! Depth enters the network divided by a per-sample scale (the maximum of
//! the masked raw input) and the prediction is multiplied back, so one model
//! serves scenes of any depth range.

pub mod encoder;
pub mod fam;
pub mod loss;
pub mod train;

pub use encoder::{encoder_forward, Encoder, EncoderConfig, ToyEncoder};
pub use fam::{fam_forward, sample_queries, Fam, FamConfig, FamOutput, QuerySample};
pub use loss::{loss_l1, loss_msg, loss_relative, loss_total, LossBreakdown, LossWeights, MsgForm};
pub use train::{train_toy, RecoverySample, RecoveryTraining};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Precision};
use crate::rng::{stage_rng, Stage};
use crate::tensor::{FeatureMap, Grid2D};

/// Architecture of the toy recovery model; stored next to checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub fam: FamConfig,
    pub encoder: EncoderConfig,
}

/// Network-ready inputs of one sample.
#[derive(Clone, Debug)]
pub struct RecoveryInput {
    /// RGB, plus relative depth when used.
    pub image: FeatureMap,
    /// Masked raw depth divided by `scale`.
    pub depth: FeatureMap,
    pub scale: f64,
}

impl RecoveryInput {
    /// `raw_masked` is raw depth with untrusted pixels already zeroed.
    pub fn new(rgb: &FeatureMap, raw_masked: &Grid2D, rel_depth: Option<&Grid2D>) -> Result<Self> {
        let peak = raw_masked.max();
        let scale = if peak > 0.0 && peak.is_finite() { peak } else { 1.0 };
        Self::with_scale(rgb, raw_masked, rel_depth, scale)
    }

    pub fn with_scale(rgb: &FeatureMap, raw_masked: &Grid2D, rel_depth: Option<&Grid2D>, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::param("depth scale must be positive"));
        }
        if rgb.channels() != 3 {
            return Err(Error::param(format!("expected 3 RGB channels, got {}", rgb.channels())));
        }
        if (rgb.height(), rgb.width()) != raw_masked.dims() {
            return Err(Error::param("recovery: RGB and raw depth dims differ"));
        }
        let image = match rel_depth {
            Some(r) => {
                raw_masked.ensure_same_shape(r, "recovery relative depth")?;
                FeatureMap::concat(&[rgb, &FeatureMap::from_grid(r)])?
            }
            None => rgb.clone(),
        };
        Ok(Self {
            image,
            depth: FeatureMap::from_grid(&raw_masked.map(|v| v / scale)),
            scale,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.depth.height(), self.depth.width())
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            image: self.image.crop(top, left, h, w)?,
            depth: self.depth.crop(top, left, h, w)?,
            scale: self.scale,
        })
    }
}

pub struct ForwardCache<C> {
    encoder: C,
    fam: fam::FamCache,
}

/// Encoder, alignment head and their parameters.
#[derive(Clone, Debug)]
pub struct RecoveryModel<E: Encoder = ToyEncoder> {
    pub store: ParamStore,
    encoder: E,
    fam: Fam,
}

impl RecoveryModel<ToyEncoder> {
    /// Fresh He-initialized model drawn from the `Init` stream of `seed`.
    pub fn new(cfg: &RecoveryConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = stage_rng(seed, Stage::Init);
        let encoder = ToyEncoder::new(&mut store, cfg.encoder, cfg.fam.channels, &mut rng)?;
        Self::from_parts(store, encoder, cfg.fam.clone(), &mut rng)
    }

    pub fn config(&self) -> RecoveryConfig {
        RecoveryConfig {
            fam: self.fam.config().clone(),
            encoder: self.encoder.config(),
        }
    }

    /// Writes the parameter container and a `<path>.toml` config sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::save_checkpoint(path, &self.store, &self.config())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (stored, cfg): (ParamStore, RecoveryConfig) = crate::io::load_checkpoint(path)?;
        let mut model = Self::new(&cfg, 0)?;
        model.store.load_values_from(&stored)?;
        model.store.precision = stored.precision;
        Ok(model)
    }
}

impl<E: Encoder> RecoveryModel<E> {
    /// Adds the alignment head to a store that already holds `encoder`'s parameters.
    pub fn from_parts(mut store: ParamStore, encoder: E, fam_cfg: FamConfig, rng: &mut impl Rng) -> Result<Self> {
        if encoder.channels() != fam_cfg.channels {
            return Err(Error::param(format!(
                "encoder width {} does not match head width {}",
                encoder.channels(),
                fam_cfg.channels
            )));
        }
        let fam = Fam::new(&mut store, fam_cfg, rng)?;
        Ok(Self { store, encoder, fam })
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn fam(&self) -> &Fam {
        &self.fam
    }

    pub fn set_precision(&mut self, precision: Precision) {
        self.store.precision = precision;
        self.store.quantize();
    }

    fn check_input(&self, input: &RecoveryInput) -> Result<()> {
        let want = self.encoder.image_channels();
        if input.image.channels() != want {
            return Err(Error::param(format!(
                "model expects {want} image channels (relative depth {}), got {}",
                if want > 3 { "required" } else { "not used" },
                input.image.channels()
            )));
        }
        Ok(())
    }

    /// Output in normalized depth units.
    pub fn forward(&self, input: &RecoveryInput, training: bool, rng: &mut impl Rng) -> Result<(FamOutput, ForwardCache<E::Cache>)> {
        self.check_input(input)?;
        let (ei, ed, enc) = self.encoder.forward(&self.store, &input.image, &input.depth)?;
        let (out, fam) = self.fam.forward(&self.store, &ei, &ed, training, rng)?;
        Ok((out, ForwardCache { encoder: enc, fam }))
    }

    /// Accumulates parameter gradients for `grad` (wrt the normalized output).
    pub fn backward(&mut self, cache: &ForwardCache<E::Cache>, grad: &Grid2D) -> Result<()> {
        let (gi, gd) = self.fam.backward(&mut self.store, &cache.fam, grad)?;
        self.encoder.backward(&mut self.store, &cache.encoder, &gi, &gd)
    }

    /// Inference-mode prediction in the input's depth units.
    pub fn predict(&self, input: &RecoveryInput) -> Result<Grid2D> {
        // inference never draws from the generator
        let (out, _) = self.forward(input, false, &mut stage_rng(0, Stage::Regularizer))?;
        Ok(out.depth.map(|v| v * input.scale))
    }

    /// Zeroes gradients, then accumulates those of the combined loss against
    /// `gt` (physical units).
    pub fn loss_and_grad(
        &mut self,
        input: &RecoveryInput,
        gt: &Grid2D,
        weights: &LossWeights,
        form: MsgForm,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<LossBreakdown> {
        let (out, cache) = self.forward(input, training, rng)?;
        let gt_n = gt.map(|v| v / input.scale);
        let (parts, grad) = loss::loss_total_grad(&out.depth, &gt_n, weights, form)?;
        self.store.zero_grad();
        self.backward(&cache, &grad)?;
        Ok(parts)
    }

    /// Loss of the inference-mode prediction.
    pub fn eval_loss(&self, input: &RecoveryInput, gt: &Grid2D, weights: &LossWeights, form: MsgForm) -> Result<LossBreakdown> {
        let (out, _) = self.forward(input, false, &mut stage_rng(0, Stage::Regularizer))?;
        loss_total(&out.depth, &gt.map(|v| v / input.scale), weights, form)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::RegStrategy;
    use rand::Rng;

    pub(crate) fn tiny_config() -> RecoveryConfig {
        RecoveryConfig {
            fam: FamConfig {
                channels: 2,
                query_distance: 3,
                mlp_hidden: vec![4],
                reg: RegStrategy::none(),
            },
            encoder: EncoderConfig::default(),
        }
    }

    pub(crate) fn random_sample(seed: u64, h: usize, w: usize) -> (RecoveryInput, Grid2D) {
        let mut rng = stage_rng(seed, Stage::Scene);
        let rgb = FeatureMap::new(3, h, w, (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let gt = Grid2D::from_fn(h, w, |_, _| rng.random_range(1.0..4.0));
        let raw = gt.map(|v| if v > 3.7 { 0.0 } else { v * 1.1 });
        (RecoveryInput::new(&rgb, &raw, None).unwrap(), gt)
    }

    #[test]
    fn input_normalization_and_contracts() {
        let rgb = FeatureMap::zeros(3, 4, 4);
        let raw = Grid2D::from_fn(4, 4, |y, x| (y * 4 + x) as f64);
        let inp = RecoveryInput::new(&rgb, &raw, None).unwrap();
        assert_eq!(inp.scale, 15.0);
        assert_eq!(inp.depth.get(0, 3, 3), 1.0);
        assert_eq!(RecoveryInput::new(&rgb, &Grid2D::zeros(4, 4), None).unwrap().scale, 1.0);
        assert!(RecoveryInput::new(&FeatureMap::zeros(2, 4, 4), &raw, None).is_err());
        assert!(RecoveryInput::new(&rgb, &Grid2D::zeros(4, 5), None).is_err());

        let model = RecoveryModel::new(&tiny_config(), 0).unwrap();
        let with_rel = RecoveryInput::new(&rgb, &raw, Some(&raw)).unwrap();
        assert!(model.predict(&with_rel).is_err());
        assert_eq!(model.predict(&inp).unwrap().dims(), (4, 4));
    }

    #[test]
    fn inference_is_pure() {
        let mut cfg = tiny_config();
        cfg.fam.reg = RegStrategy::stochastic_depth(0.3);
        let model = RecoveryModel::new(&cfg, 5).unwrap();
        let (inp, _) = random_sample(5, 10, 10);
        assert_eq!(model.predict(&inp).unwrap(), model.predict(&inp).unwrap());
    }

    #[test]
    fn zero_rate_regularizers_share_the_inference_function() {
        let (inp, _) = random_sample(6, 10, 10);
        let mut outs = Vec::new();
        for reg in [
            RegStrategy::none(),
            RegStrategy::dropout(0.0),
            RegStrategy::dropblock(0.0, 3),
            RegStrategy::stochastic_depth(0.0),
        ] {
            let mut cfg = tiny_config();
            cfg.fam.reg = reg;
            outs.push(RecoveryModel::new(&cfg, 9).unwrap().predict(&inp).unwrap());
        }
        assert!(outs.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn end_to_end_loss_gradient() {
        for seed in 0..20 {
            let mut model = RecoveryModel::new(&tiny_config(), seed).unwrap();
            let (inp, gt) = random_sample(seed, 16, 16);
            for form in [MsgForm::Standard, MsgForm::PaperLiteral] {
                let w = LossWeights::default();
                model.loss_and_grad(&inp, &gt, &w, form, false, &mut stage_rng(0, Stage::Regularizer)).unwrap();
                let analytic = model.store.flat_grads();
                let x = model.store.flat_values();
                let mut probe = model.clone();
                let e = grad_check(
                    |p| {
                        probe.store.set_flat_values(p);
                        probe.eval_loss(&inp, &gt, &w, form).unwrap().total
                    },
                    &x,
                    &analytic,
                    1e-5,
                );
                assert!(e < 1e-3, "seed {seed} {form:?}: {e}");
            }
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        let mut rng = stage_rng(0, Stage::Init);
        let enc = ToyEncoder::new(&mut store, EncoderConfig::default(), 3, &mut rng).unwrap();
        assert!(RecoveryModel::from_parts(store, enc, FamConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut model = RecoveryModel::new(&tiny_config(), 3).unwrap();
        model.set_precision(Precision::F32);
        model.save(&path).unwrap();
        let back = RecoveryModel::load(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.store.flat_values(), model.store.flat_values());
        assert_eq!(back.store.precision, Precision::F32);
        let (inp, _) = random_sample(1, 8, 8);
        assert_eq!(back.predict(&inp).unwrap(), model.predict(&inp).unwrap());
    }
}

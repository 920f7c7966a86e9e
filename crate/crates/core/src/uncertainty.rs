//! Structure-uncertainty labels, raw-depth masking, and a small per-pixel
//! classifier that predicts the labels from RGB + raw depth (+ an optional
//! relative-depth channel).

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, random_crop, relu_backward_inplace, relu_inplace, Conv3x3, ParamStore, TrainSchedule};
use crate::rng::{stage_rng, Stage};
use crate::tensor::{FeatureMap, Grid2D};

pub const DEFAULT_TAU_FRAC: f64 = 0.1;

/// Binary trust labels, 1 = trusted.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap(Grid2D);

impl UncertaintyMap {
    pub fn new(labels: Grid2D) -> Result<Self> {
        if labels.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::param("uncertainty labels must be exactly 0 or 1"));
        }
        Ok(Self(labels))
    }

    pub fn labels(&self) -> &Grid2D {
        &self.0
    }

    pub fn into_grid(self) -> Grid2D {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn trusted_fraction(&self) -> f64 {
        self.0.mean()
    }
}

/// Label 1 where `gt > 0` and `|raw − gt| < tau_frac · max(gt)`.
pub fn make_label(raw: &Grid2D, gt: &Grid2D, tau_frac: f64) -> Result<UncertaintyMap> {
    raw.ensure_same_shape(gt, "make_label")?;
    if !gt.as_slice().iter().any(|&v| v > 0.0) {
        return Err(Error::NoValidPixels("ground truth has no positive pixels"));
    }
    let tau = tau_frac * gt.max();
    let (h, w) = gt.dims();
    let labels = Grid2D::from_fn(h, w, |y, x| {
        let g = gt.get(y, x);
        (g > 0.0 && (raw.get(y, x) - g).abs() < tau) as u8 as f64
    });
    Ok(UncertaintyMap(labels))
}

/// Zero every raw pixel labeled untrusted.
pub fn mask_raw(raw: &Grid2D, u: &UncertaintyMap) -> Result<Grid2D> {
    raw.ensure_same_shape(&u.0, "mask_raw")?;
    let (h, w) = raw.dims();
    Ok(Grid2D::from_fn(h, w, |y, x| if u.0.get(y, x) == 1.0 { raw.get(y, x) } else { 0.0 }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden_channels: usize,
    pub depth_layers: usize,
    pub use_relative_depth: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 32,
            depth_layers: 4,
            use_relative_depth: false,
        }
    }
}

impl ClassifierConfig {
    /// RGB + raw depth, plus relative depth when enabled.
    pub fn in_channels(&self) -> usize {
        4 + self.use_relative_depth as usize
    }
}

/// Stack of 3×3 convolutions with rectifiers; the last layer emits two logits
/// per pixel (untrusted, trusted).
#[derive(Clone, Debug)]
pub struct Classifier {
    pub cfg: ClassifierConfig,
    convs: Vec<Conv3x3>,
}

/// Inputs of every layer, recorded by the forward pass.
pub struct ClassifierCache {
    inputs: Vec<FeatureMap>,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, cfg: ClassifierConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        if cfg.depth_layers < 2 || cfg.hidden_channels == 0 {
            return Err(Error::param("classifier needs >= 2 layers and a positive width"));
        }
        let mut convs = Vec::with_capacity(cfg.depth_layers);
        for l in 0..cfg.depth_layers {
            let cin = if l == 0 { cfg.in_channels() } else { cfg.hidden_channels };
            let cout = if l + 1 == cfg.depth_layers { 2 } else { cfg.hidden_channels };
            convs.push(Conv3x3::new(store, &format!("clf.conv{l}"), cin, cout, rng)?);
        }
        Ok(Self { cfg, convs })
    }

    /// Channel stack: RGB, raw scaled by its maximum, then relative depth.
    pub fn build_input(&self, rgb: &FeatureMap, raw: &Grid2D, rel_depth: Option<&Grid2D>) -> Result<FeatureMap> {
        if rgb.channels() != 3 {
            return Err(Error::param(format!("expected 3 RGB channels, got {}", rgb.channels())));
        }
        if (rgb.height(), rgb.width()) != raw.dims() {
            return Err(Error::param("classifier: RGB and raw depth dims differ"));
        }
        let peak = raw.max();
        let raw_n = if peak > 0.0 { raw.map(|v| v / peak) } else { raw.clone() };
        let mut parts = vec![rgb.clone(), FeatureMap::from_grid(&raw_n)];
        match (self.cfg.use_relative_depth, rel_depth) {
            (true, Some(r)) => {
                raw.ensure_same_shape(r, "classifier relative depth")?;
                parts.push(FeatureMap::from_grid(r));
            }
            (false, None) => {}
            (true, None) => return Err(Error::param("classifier configured for relative depth but none given")),
            (false, Some(_)) => return Err(Error::param("relative depth given but classifier does not use it")),
        }
        FeatureMap::concat(&parts.iter().collect::<Vec<_>>())
    }

    pub fn forward(&self, store: &ParamStore, input: &FeatureMap) -> Result<(FeatureMap, ClassifierCache)> {
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut x = input.clone();
        for (l, conv) in self.convs.iter().enumerate() {
            let mut y = conv.forward(store, &x)?;
            if l + 1 < self.convs.len() {
                relu_inplace(y.as_mut_slice());
            }
            inputs.push(x);
            x = y;
        }
        Ok((x, ClassifierCache { inputs }))
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&self, store: &mut ParamStore, cache: &ClassifierCache, grad_logits: &FeatureMap) -> Result<FeatureMap> {
        let mut g = grad_logits.clone();
        for l in (0..self.convs.len()).rev() {
            let x = &cache.inputs[l];
            let mut gin = self.convs[l].backward(store, x, &g, true)?.expect("requested");
            if l > 0 {
                relu_backward_inplace(gin.as_mut_slice(), x.as_slice());
            }
            g = gin;
        }
        Ok(g)
    }
}

/// Per-pixel two-class logits (channel 0 untrusted, channel 1 trusted).
pub fn classifier_forward(
    clf: &Classifier,
    store: &ParamStore,
    rgb: &FeatureMap,
    raw: &Grid2D,
    rel_depth: Option<&Grid2D>,
) -> Result<FeatureMap> {
    let x = clf.build_input(rgb, raw, rel_depth)?;
    clf.forward(store, &x).map(|(y, _)| y)
}

/// Argmax over the two logit channels; ties go to "untrusted".
pub fn predict_labels(logits: &FeatureMap) -> Result<UncertaintyMap> {
    if logits.channels() != 2 {
        return Err(Error::param("expected 2 logit channels"));
    }
    let (h, w) = (logits.height(), logits.width());
    let (l0, l1) = (logits.channel(0), logits.channel(1));
    let data = l0.iter().zip(l1).map(|(a, b)| (b > a) as u8 as f64).collect();
    UncertaintyMap::new(Grid2D::new(h, w, data)?)
}

/// Mean two-class cross-entropy over pixels where `valid` holds, with its
/// gradient wrt the logits.
pub fn cross_entropy(logits: &FeatureMap, labels: &UncertaintyMap, valid: &[bool]) -> Result<(f64, FeatureMap)> {
    let (h, w) = (logits.height(), logits.width());
    if logits.channels() != 2 || labels.dims() != (h, w) || valid.len() != h * w {
        return Err(Error::param("cross_entropy: shape mismatch"));
    }
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(Error::NoValidPixels("no labeled pixels for cross-entropy"));
    }
    let mut grad = FeatureMap::zeros(2, h, w);
    let plane = h * w;
    let mut loss = 0.0;
    let lab = labels.labels().as_slice();
    for p in 0..plane {
        if !valid[p] {
            continue;
        }
        let (a, b) = (logits.as_slice()[p], logits.as_slice()[plane + p]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let y = lab[p] == 1.0;
        loss += lse - if y { b } else { a };
        let p1 = (b - lse).exp();
        let p0 = (a - lse).exp();
        let g = grad.as_mut_slice();
        g[p] = (p0 - (!y) as u8 as f64) / n as f64;
        g[plane + p] = (p1 - y as u8 as f64) / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// One training example for the classifier.
#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub rgb: FeatureMap,
    pub raw: Grid2D,
    pub rel_depth: Option<Grid2D>,
    pub labels: UncertaintyMap,
    /// Pixels with ground truth; the rest carry no loss.
    pub valid: Vec<bool>,
}

impl LabeledSample {
    pub fn new(rgb: FeatureMap, raw: Grid2D, rel_depth: Option<Grid2D>, gt: &Grid2D, tau_frac: f64) -> Result<Self> {
        let labels = make_label(&raw, gt, tau_frac)?;
        let valid = gt.as_slice().iter().map(|&g| g > 0.0).collect();
        Ok(Self {
            rgb,
            raw,
            rel_depth,
            labels,
            valid,
        })
    }

    fn crop(&self, top: usize, left: usize, ch: usize, cw: usize) -> Result<LabeledSample> {
        let w = self.raw.width();
        let mut valid = Vec::with_capacity(ch * cw);
        for y in top..top + ch {
            valid.extend_from_slice(&self.valid[y * w + left..y * w + left + cw]);
        }
        Ok(LabeledSample {
            rgb: self.rgb.crop(top, left, ch, cw)?,
            raw: self.raw.crop(top, left, ch, cw)?,
            rel_depth: self.rel_depth.as_ref().map(|r| r.crop(top, left, ch, cw)).transpose()?,
            labels: UncertaintyMap(self.labels.labels().crop(top, left, ch, cw)?),
            valid,
        })
    }
}

pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub store: ParamStore,
    /// Mean loss of each epoch.
    pub history: Vec<f64>,
}

impl TrainedClassifier {
    /// Parameter container plus a `<path>.toml` config sidecar.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::save_checkpoint(path, &self.store, &self.classifier.cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (stored, cfg): (ParamStore, ClassifierConfig) = crate::io::load_checkpoint(path)?;
        let mut store = ParamStore::new();
        let classifier = Classifier::new(&mut store, cfg, &mut stage_rng(0, Stage::Init))?;
        store.load_values_from(&stored)?;
        store.precision = stored.precision;
        Ok(Self {
            classifier,
            store,
            history: Vec::new(),
        })
    }

    pub fn predict(&self, rgb: &FeatureMap, raw: &Grid2D, rel_depth: Option<&Grid2D>) -> Result<UncertaintyMap> {
        predict_labels(&classifier_forward(&self.classifier, &self.store, rgb, raw, rel_depth)?)
    }
}

/// Batch-size-1 Adam on random crops, with the step-decay schedule.
pub fn classifier_train(cfg: ClassifierConfig, dataset: &[LabeledSample], schedule: &TrainSchedule) -> Result<TrainedClassifier> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut store = ParamStore::new();
    let classifier = Classifier::new(&mut store, cfg, &mut stage_rng(schedule.seed, Stage::Init))?;
    store.precision = schedule.precision;
    store.quantize();
    let mut shuffle_rng = stage_rng(schedule.seed, Stage::Shuffle);
    let mut crop_rng = stage_rng(schedule.seed, Stage::Crop);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let adam = crate::nn::AdamConfig {
            lr: schedule.lr.lr_at(epoch),
            ..schedule.adam
        };
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut counted = 0usize;
        for &i in &order {
            let s = &dataset[i];
            let (h, w) = s.raw.dims();
            let (top, left, ch, cw) = random_crop(h, w, schedule.crop, &mut crop_rng);
            let c = s.crop(top, left, ch, cw)?;
            if !c.valid.iter().any(|v| *v) {
                continue;
            }
            let x = classifier.build_input(&c.rgb, &c.raw, c.rel_depth.as_ref())?;
            let (logits, cache) = classifier.forward(&store, &x)?;
            let (loss, grad) = cross_entropy(&logits, &c.labels, &c.valid)?;
            store.zero_grad();
            classifier.backward(&mut store, &cache, &grad)?;
            adam_step(&mut store, &adam)?;
            total += loss;
            counted += 1;
        }
        let mean = if counted > 0 { total / counted as f64 } else { 0.0 };
        debug!("classifier epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(TrainedClassifier {
        classifier,
        store,
        history,
    })
}

/// Fraction of `valid` pixels where `pred` equals `target`.
pub fn label_accuracy(pred: &UncertaintyMap, target: &UncertaintyMap, valid: &[bool]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for ((p, t), v) in pred.labels().as_slice().iter().zip(target.labels().as_slice()).zip(valid) {
        if *v {
            n += 1;
            hit += (p == t) as usize;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, projection};
    use proptest::prelude::*;
    use rand::Rng;

    fn g(rows: &[&[f64]]) -> Grid2D {
        Grid2D::new(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn label_threshold_rule() {
        let gt = g(&[&[100.0, 50.0, 50.0, 0.0]]);
        let raw = g(&[&[100.0, 55.0, 65.0, 3.0]]);
        let u = make_label(&raw, &gt, 0.1).unwrap();
        assert_eq!(u.labels().as_slice(), &[1.0, 1.0, 0.0, 0.0]);
        // |Δ| = τ exactly is untrusted
        let u = make_label(&g(&[&[100.0, 60.0]]), &g(&[&[100.0, 50.0]]), 0.1).unwrap();
        assert_eq!(u.labels().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn label_identity_and_errors() {
        let gt = g(&[&[1.0, 0.0], &[3.0, 4.0]]);
        let u = make_label(&gt, &gt, 0.1).unwrap();
        assert_eq!(u.labels().as_slice(), &[1.0, 0.0, 1.0, 1.0]);
        assert!(make_label(&gt, &Grid2D::zeros(2, 2), 0.1).is_err());
        assert!(make_label(&Grid2D::zeros(1, 2), &gt, 0.1).is_err());
    }

    #[test]
    fn masking_cases() {
        let raw = g(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let u = UncertaintyMap::new(g(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(mask_raw(&raw, &u).unwrap().as_slice(), &[5.0, 0.0, 0.0, 8.0]);
        let ones = UncertaintyMap::new(Grid2D::filled(2, 2, 1.0)).unwrap();
        assert_eq!(mask_raw(&raw, &ones).unwrap(), raw);
        let zeros = UncertaintyMap::new(Grid2D::zeros(2, 2)).unwrap();
        assert!(mask_raw(&raw, &zeros).unwrap().as_slice().iter().all(|v| *v == 0.0));
        assert!(mask_raw(&raw, &UncertaintyMap::new(Grid2D::zeros(1, 2)).unwrap()).is_err());
        assert!(UncertaintyMap::new(g(&[&[0.5]])).is_err());
    }

    proptest! {
        #[test]
        fn labels_invariant_to_joint_scaling(vals in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..30), a in 0.01f64..50.0) {
            let n = vals.len();
            let raw = Grid2D::new(1, n, vals.iter().map(|v| v.0).collect()).unwrap();
            let mut gtv: Vec<f64> = vals.iter().map(|v| v.1).collect();
            gtv[0] = 100.0;
            let gt = Grid2D::new(1, n, gtv).unwrap();
            let base = make_label(&raw, &gt, 0.1).unwrap();
            let scaled = make_label(&raw.map(|v| v * a), &gt.map(|v| v * a), 0.1).unwrap();
            // only pixels sitting on the threshold could flip under rounding
            let tau = 10.0;
            for i in 0..n {
                let d = (raw.as_slice()[i] - gt.as_slice()[i]).abs();
                if (d - tau).abs() > 1e-9 {
                    prop_assert_eq!(base.labels().as_slice()[i], scaled.labels().as_slice()[i]);
                }
            }
        }

        #[test]
        fn self_label_mask_is_identity_on_valid(vals in prop::collection::vec(0.0f64..10.0, 1..30)) {
            let mut v = vals.clone();
            v[0] = 10.0;
            let raw = Grid2D::new(1, v.len(), v).unwrap();
            let out = mask_raw(&raw, &make_label(&raw, &raw, 0.1).unwrap()).unwrap();
            prop_assert_eq!(out, raw);
        }
    }

    fn toy_inputs(seed: u64, h: usize, w: usize) -> (FeatureMap, Grid2D) {
        let mut rng = stage_rng(seed, Stage::Scene);
        let rgb = FeatureMap::new(3, h, w, (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let raw = Grid2D::from_fn(h, w, |_, _| rng.random_range(0.5..2.0));
        (rgb, raw)
    }

    #[test]
    fn zero_params_give_zero_logits_and_shape() {
        let mut store = ParamStore::new();
        let clf = Classifier::new(&mut store, ClassifierConfig::default(), &mut stage_rng(0, Stage::Init)).unwrap();
        let (rgb, raw) = toy_inputs(1, 7, 9);
        let logits = classifier_forward(&clf, &store, &rgb, &raw, None).unwrap();
        assert_eq!((logits.channels(), logits.height(), logits.width()), (2, 7, 9));
        store.set_all(0.0);
        let logits = classifier_forward(&clf, &store, &rgb, &raw, None).unwrap();
        assert!(logits.as_slice().iter().all(|v| *v == 0.0));
        let pred = predict_labels(&logits).unwrap();
        assert!(pred.labels().as_slice().iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn relative_depth_channel_contract() {
        let mut store = ParamStore::new();
        let cfg = ClassifierConfig {
            use_relative_depth: true,
            ..Default::default()
        };
        assert_eq!(cfg.in_channels(), 5);
        let clf = Classifier::new(&mut store, cfg, &mut stage_rng(0, Stage::Init)).unwrap();
        let (rgb, raw) = toy_inputs(2, 5, 5);
        assert!(classifier_forward(&clf, &store, &rgb, &raw, None).is_err());
        let rel = Grid2D::filled(5, 5, 0.5);
        assert!(classifier_forward(&clf, &store, &rgb, &raw, Some(&rel)).is_ok());
        assert!(classifier_forward(&clf, &store, &rgb, &raw, Some(&Grid2D::zeros(4, 5))).is_err());
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let cfg = ClassifierConfig {
            hidden_channels: 6,
            ..Default::default()
        };
        for seed in 0..5 {
            let mut store = ParamStore::new();
            let clf = Classifier::new(&mut store, cfg, &mut stage_rng(seed, Stage::Init)).unwrap();
            let (rgb, raw) = toy_inputs(seed, 6, 6);
            let x = clf.build_input(&rgb, &raw, None).unwrap();
            let proj = projection(2 * 36, &mut stage_rng(seed, Stage::Crop));
            let (_, cache) = clf.forward(&store, &x).unwrap();
            let gin = clf.backward(&mut store, &cache, &FeatureMap::new(2, 6, 6, proj.clone()).unwrap()).unwrap();
            let e = grad_check(
                |p| {
                    let y = clf.forward(&store, &FeatureMap::new(4, 6, 6, p.to_vec()).unwrap()).unwrap().0;
                    y.as_slice().iter().zip(&proj).map(|(a, b)| a * b).sum()
                },
                x.as_slice(),
                gin.as_slice(),
                1e-5,
            );
            assert!(e < 1e-3, "seed {seed}: {e}");
        }
    }

    #[test]
    fn cross_entropy_gradient_and_margin_monotonicity() {
        let labels = UncertaintyMap::new(g(&[&[1.0, 0.0, 1.0]])).unwrap();
        let valid = [true, true, false];
        let logits = FeatureMap::new(2, 1, 3, vec![0.3, -0.2, 4.0, -0.1, 0.5, -3.0]).unwrap();
        let (_, grad) = cross_entropy(&logits, &labels, &valid).unwrap();
        let e = grad_check(
            |p| cross_entropy(&FeatureMap::new(2, 1, 3, p.to_vec()).unwrap(), &labels, &valid).unwrap().0,
            logits.as_slice(),
            grad.as_slice(),
            1e-5,
        );
        assert!(e < 1e-6, "{e}");
        // growing the margin toward the true class drives the loss to 0
        let mut prev = f64::INFINITY;
        for m in [0.0, 1.0, 2.0, 5.0, 10.0, 30.0] {
            let l = FeatureMap::new(2, 1, 3, vec![-m, m, 0.0, m, -m, 0.0]).unwrap();
            let (loss, _) = cross_entropy(&l, &labels, &valid).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-12);
        assert!(cross_entropy(&logits, &labels, &[false; 3]).is_err());
    }

    #[test]
    fn training_rejects_empty_dataset() {
        assert!(matches!(
            classifier_train(ClassifierConfig::default(), &[], &TrainSchedule::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn constant_label_task_is_learned() {
        let cfg = ClassifierConfig {
            hidden_channels: 8,
            ..Default::default()
        };
        let data: Vec<LabeledSample> = (0..4)
            .map(|s| {
                let (rgb, raw) = toy_inputs(s, 16, 16);
                LabeledSample::new(rgb, raw.clone(), None, &raw, 0.1).unwrap()
            })
            .collect();
        let schedule = TrainSchedule {
            epochs: 30,
            crop: 16,
            seed: 3,
            lr: crate::nn::LrSchedule {
                base_lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let trained = classifier_train(cfg, &data, &schedule).unwrap();
        assert!(trained.history.iter().all(|l| l.is_finite()));
        assert!(trained.history.last().unwrap() <= trained.history.first().unwrap());
        for s in &data {
            let pred = trained.predict(&s.rgb, &s.raw, None).unwrap();
            assert!(label_accuracy(&pred, &s.labels, &s.valid) >= 0.99);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ClassifierConfig {
            hidden_channels: 4,
            depth_layers: 2,
            ..Default::default()
        };
        let (rgb, raw) = toy_inputs(1, 12, 12);
        let data = [LabeledSample::new(rgb.clone(), raw.clone(), None, &raw, 0.1).unwrap()];
        let schedule = TrainSchedule {
            epochs: 2,
            crop: 12,
            precision: crate::nn::Precision::F32,
            ..Default::default()
        };
        let trained = classifier_train(cfg, &data, &schedule).unwrap();
        assert!(trained.store.flat_values().iter().all(|v| (*v as f32) as f64 == *v));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.bin");
        trained.save(&path).unwrap();
        let back = TrainedClassifier::load(&path).unwrap();
        assert_eq!(back.classifier.cfg, cfg);
        assert_eq!(back.store.flat_values(), trained.store.flat_values());
        assert_eq!(
            back.predict(&rgb, &raw, None).unwrap().labels(),
            trained.predict(&rgb, &raw, None).unwrap().labels()
        );
    }
}

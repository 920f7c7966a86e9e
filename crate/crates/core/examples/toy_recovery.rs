//! Synthetic end-to-end run: generate scenes, degrade them, train the
//! uncertainty classifier and the recovery model, report held-out metrics.
//!
//! `cargo run --release -p depthrec --example toy_recovery`

use std::time::Instant;

use depthrec::degrade::{gen_synthetic_scene, generate_raw, simulated_relative_depth, DegradeRecipe, Interval};
use depthrec::metrics::{evaluate_dataset, Aggregation, DEFAULT_DELTA_THRESHOLD};
use depthrec::nn::{LrSchedule, RegStrategy, TrainSchedule};
use depthrec::recover::{train_toy, EncoderConfig, FamConfig, RecoveryConfig, RecoveryInput, RecoveryModel, RecoverySample, RecoveryTraining};
use depthrec::rng::{sample_seed, stage_rng, Stage};
use depthrec::uncertainty::{classifier_train, label_accuracy, make_label, mask_raw, ClassifierConfig, LabeledSample};
use depthrec::{FeatureMap, Grid2D};

const SIZE: usize = 64;
const TAU: f64 = 0.1;

struct Item {
    rgb: FeatureMap,
    gt: Grid2D,
    raw: Grid2D,
    rel: Grid2D,
}

fn make_items(seed: u64, n: usize, recipe: &DegradeRecipe) -> Vec<Item> {
    (0..n)
        .map(|i| {
            let s = sample_seed(seed, &format!("scene-{i:03}"));
            let scene = gen_synthetic_scene(SIZE, SIZE, &mut stage_rng(s, Stage::Scene)).unwrap();
            let raw = generate_raw(&scene.gt, &DegradeRecipe { seed: s, ..recipe.clone() }).unwrap().raw;
            let rel = simulated_relative_depth(&scene.gt).unwrap();
            Item { rgb: scene.rgb, gt: scene.gt, raw, rel }
        })
        .collect()
}

fn abs_rel(preds: &[Grid2D], items: &[Item]) -> f64 {
    let pairs = preds.iter().zip(items).enumerate().map(|(i, (p, it))| (i.to_string(), p, &it.gt));
    evaluate_dataset(pairs, DEFAULT_DELTA_THRESHOLD, "mm", Aggregation::PerSample).aggregate.unwrap().abs_rel
}

fn main() {
    env_logger::init();
    let recipe = DegradeRecipe {
        elastic_sigma: 6.0,
        elastic_amplitude: 3.0,
        scale_range: Interval(8.0, 8.0),
        use_mask: false,
        ..Default::default()
    };
    let train = make_items(1, 40, &recipe);
    let test = make_items(2, 10, &recipe);

    let t = Instant::now();
    let labeled: Vec<LabeledSample> = train
        .iter()
        .map(|it| LabeledSample::new(it.rgb.clone(), it.raw.clone(), Some(it.rel.clone()), &it.gt, TAU).unwrap())
        .collect();
    let clf_cfg = ClassifierConfig { use_relative_depth: true, ..Default::default() };
    let schedule = |epochs, base_lr| TrainSchedule {
        epochs,
        crop: 32,
        seed: 5,
        lr: LrSchedule { base_lr, ..Default::default() },
        ..Default::default()
    };
    let clf = classifier_train(clf_cfg, &labeled, &schedule(20, 2e-3)).unwrap();
    let mut acc = 0.0;
    for it in &test {
        let target = make_label(&it.raw, &it.gt, TAU).unwrap();
        let pred = clf.predict(&it.rgb, &it.raw, Some(&it.rel)).unwrap();
        let valid: Vec<bool> = it.gt.as_slice().iter().map(|v| *v > 0.0).collect();
        acc += label_accuracy(&pred, &target, &valid) / test.len() as f64;
    }
    println!("classifier: held-out accuracy {acc:.4} in {:.1}s", t.elapsed().as_secs_f64());

    let samples: Vec<RecoverySample> = train
        .iter()
        .map(|it| {
            let u = make_label(&it.raw, &it.gt, TAU).unwrap();
            RecoverySample::new(&it.rgb, &it.raw, Some(&it.rel), &u, it.gt.clone()).unwrap()
        })
        .collect();
    let raw: Vec<Grid2D> = test.iter().map(|it| it.raw.clone()).collect();
    println!("raw: AbsRel {:.4}", abs_rel(&raw, &test));

    let t = Instant::now();
    let cfg = RecoveryConfig {
        fam: FamConfig {
            channels: 16,
            query_distance: 5,
            mlp_hidden: vec![32, 32],
            reg: RegStrategy::stochastic_depth(0.1),
        },
        encoder: EncoderConfig { use_relative_depth: true, ..Default::default() },
    };
    let mut model = RecoveryModel::new(&cfg, 11).unwrap();
    let training = RecoveryTraining { schedule: schedule(20, 3e-3), ..Default::default() };
    let hist = train_toy(&samples, &mut model, &training).unwrap();
    let preds: Vec<Grid2D> = test
        .iter()
        .map(|it| {
            let u = clf.predict(&it.rgb, &it.raw, Some(&it.rel)).unwrap();
            let masked = mask_raw(&it.raw, &u).unwrap();
            model.predict(&RecoveryInput::new(&it.rgb, &masked, Some(&it.rel)).unwrap()).unwrap()
        })
        .collect();
    println!(
        "recovered: AbsRel {:.4} | loss {:.4} -> {:.4} | {:.1}s",
        abs_rel(&preds, &test),
        hist[0],
        hist.last().unwrap(),
        t.elapsed().as_secs_f64()
    );
}

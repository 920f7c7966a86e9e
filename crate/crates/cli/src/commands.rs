use std::path::{Path, PathBuf};

use depthrec::degrade::{gen_synthetic_scene, generate_raw, simulated_relative_depth, DegradeRecipe};
use depthrec::io::{
    read_depth, read_relative_depth, read_rgb, read_toml, read_uncertainty, to_toml, write_depth, write_rgb, write_rgb8,
    write_uncertainty, DatasetManifest, RunConfig, SampleEntry,
};
use depthrec::metrics::{evaluate_dataset, Aggregation};
use depthrec::nn::Precision;
use depthrec::recover::{train_toy, RecoveryInput, RecoveryModel, RecoverySample};
use depthrec::rng::{sample_seed, stage_rng, Stage};
use depthrec::uncertainty::{classifier_train, make_label, mask_raw, LabeledSample, TrainedClassifier, UncertaintyMap};
use depthrec::{selfcheck, FeatureMap, Grid2D};
use log::{info, warn};

use crate::util::{par_map, sample_file, CmdResult, Classify, Failure, Outputs};
use crate::{AggregationArg, Cli, Command, DepthExt, PrecisionArg};

pub fn run(cli: Cli) -> CmdResult<()> {
    let cfg = resolve_config(&cli)?;
    info!("command: {:?}", cli.command);
    info!("threads: {}", cli.global.threads);
    info!("resolved config:\n{}", to_toml(&cfg).runtime()?);
    let threads = cli.global.threads as usize;
    match cli.command {
        Command::Generate {
            manifest,
            recipe,
            synthetic,
            size,
            out,
        } => generate(&cfg, manifest.as_deref(), recipe.as_deref(), synthetic, size, &out, threads),
        Command::Label { manifest, out } => label(&cfg, &manifest, &out, threads),
        Command::TrainUncertainty { manifest, out } => train_uncertainty(&cfg, &manifest, &out),
        Command::TrainRecover { manifest, classifier, out } => train_recover(&cfg, &manifest, classifier.as_deref(), &out),
        Command::Recover {
            manifest,
            checkpoint,
            classifier,
            out,
            format,
        } => recover(&cfg, &manifest, &checkpoint, classifier.as_deref(), &out, format, threads),
        Command::Evaluate {
            manifest,
            pred_dir,
            raw,
            delta,
            aggregation,
            out,
        } => evaluate(&manifest, pred_dir.as_deref(), raw, delta, aggregation, out.as_deref(), threads),
        Command::Gradcheck { seeds } => gradcheck(seeds),
        Command::RenderPanels { manifest, pred_dir, out } => render_panels(&manifest, &pred_dir, &out, threads),
    }
}

/// Config file (or defaults) with the command-line overrides applied.
fn resolve_config(cli: &Cli) -> CmdResult<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p).invalid()?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.global.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    cfg.validate().invalid()?;
    Ok(cfg)
}

fn load_manifest(path: &Path) -> CmdResult<DatasetManifest> {
    let m = DatasetManifest::load(path).invalid()?;
    if m.samples.is_empty() {
        return Err(Failure::Validation(format!("{}: manifest has no samples", path.display())));
    }
    info!("manifest {}: {} samples", path.display(), m.samples.len());
    Ok(m)
}

fn require_raw(m: &DatasetManifest) -> CmdResult<()> {
    match m.samples.iter().find(|s| s.raw_path.is_none()) {
        Some(s) => Err(Failure::Validation(format!("sample `{}` has no raw_path (run `generate` first)", s.id))),
        None => Ok(()),
    }
}

fn require_rel(m: &DatasetManifest, needed: bool) -> CmdResult<()> {
    if !needed {
        return Ok(());
    }
    match m.samples.iter().find(|s| s.rel_depth_path.is_none()) {
        Some(s) => Err(Failure::Validation(format!("model uses relative depth but sample `{}` has no rel_depth_path", s.id))),
        None => Ok(()),
    }
}

/// Decoded files of one manifest sample.
struct Loaded {
    rgb: FeatureMap,
    gt: Grid2D,
    raw: Option<Grid2D>,
    rel: Option<Grid2D>,
    labels: Option<UncertaintyMap>,
}

fn load_sample(m: &DatasetManifest, s: &SampleEntry) -> depthrec::Result<Loaded> {
    let opt_depth = |p: &Option<PathBuf>| p.as_ref().map(|p| read_depth(&m.resolve(p), m.depth_scale)).transpose();
    Ok(Loaded {
        rgb: read_rgb(&m.resolve(&s.rgb_path))?,
        gt: read_depth(&m.resolve(&s.gt_path), m.depth_scale)?,
        raw: opt_depth(&s.raw_path)?,
        rel: s.rel_depth_path.as_ref().map(|p| read_relative_depth(&m.resolve(p))).transpose()?,
        labels: s.uncertainty_path.as_ref().map(|p| read_uncertainty(&m.resolve(p))).transpose()?,
    })
}

fn load_all(m: &DatasetManifest) -> CmdResult<Vec<Loaded>> {
    m.samples.iter().map(|s| load_sample(m, s)).collect::<depthrec::Result<_>>().runtime()
}

fn generate(
    cfg: &RunConfig,
    manifest: Option<&Path>,
    recipe: Option<&Path>,
    synthetic: Option<usize>,
    size: usize,
    out: &Path,
    threads: usize,
) -> CmdResult<()> {
    let recipe: DegradeRecipe = match recipe {
        Some(p) => read_toml(p).invalid()?,
        None => cfg.recipe.clone(),
    };
    recipe.validate().invalid()?;
    info!("resolved recipe:\n{}", to_toml(&recipe).runtime()?);
    let mut outputs = Outputs::default();

    let (mut m, gts): (DatasetManifest, Option<Vec<Grid2D>>) = match synthetic {
        Some(n) => {
            if n == 0 || size < 64 {
                return Err(Failure::Validation(format!("--synthetic needs n >= 1 and --size >= 64, got {n} and {size}")));
            }
            let (m, gts) = synthesize(cfg.seed, n, size, out, threads, &mut outputs)?;
            (m, Some(gts))
        }
        None => (load_manifest(manifest.expect("required by clap"))?, None),
    };

    let raw_dir = out.join("raw");
    let results = par_map(&(0..m.samples.len()).collect::<Vec<_>>(), threads, |&i| -> depthrec::Result<Vec<PathBuf>> {
        let s = &m.samples[i];
        let gt = match &gts {
            Some(g) => g[i].clone(),
            None => read_depth(&m.resolve(&s.gt_path), m.depth_scale)?,
        };
        let r = DegradeRecipe {
            seed: sample_seed(cfg.seed, &s.id),
            ..recipe.clone()
        };
        let raw = generate_raw(&gt, &r)?.raw;
        let path = sample_file(&raw_dir, &s.id, "png");
        write_depth(&raw, &path, m.depth_scale)?;
        Ok(vec![path])
    });
    outputs.collect(results)?;

    let raw_dir = std::path::absolute(&raw_dir).runtime()?;
    for s in &mut m.samples {
        s.raw_path = Some(sample_file(&raw_dir, &s.id, "png"));
    }
    let mpath = out.join("manifest.toml");
    m.save(&mpath).runtime()?;
    outputs.track(&mpath);
    outputs.commit();
    info!("wrote {} raw maps and {}", m.samples.len(), mpath.display());
    Ok(())
}

/// Writes `n` synthetic RGB / GT / relative-depth triples under `out`.
fn synthesize(
    seed: u64,
    n: usize,
    size: usize,
    out: &Path,
    threads: usize,
    outputs: &mut Outputs,
) -> CmdResult<(DatasetManifest, Vec<Grid2D>)> {
    let abs = std::path::absolute(out).runtime()?;
    let ids: Vec<String> = (0..n).map(|i| format!("scene-{i:03}")).collect();
    let scale = 1.0;
    let results = par_map(&ids, threads, |id| -> depthrec::Result<(Vec<PathBuf>, Grid2D)> {
        let scene = gen_synthetic_scene(size, size, &mut stage_rng(sample_seed(seed, id), Stage::Scene))?;
        // the stored map is integer millimetres; degrade what will be read back
        let gt = scene.gt.map(f64::round);
        let rel = simulated_relative_depth(&gt)?;
        let paths = [
            sample_file(&abs.join("rgb"), id, "png"),
            sample_file(&abs.join("gt"), id, "png"),
            sample_file(&abs.join("rel"), id, "pfm"),
        ];
        write_rgb(&scene.rgb, &paths[0])?;
        write_depth(&gt, &paths[1], scale)?;
        write_depth(&rel, &paths[2], 1.0)?;
        Ok((paths.to_vec(), gt))
    });
    let mut gts = Vec::with_capacity(n);
    let mut written = Vec::with_capacity(n);
    for r in results {
        written.push(r.map(|(p, g)| {
            gts.push(g);
            p
        }));
    }
    outputs.collect(written)?;

    let mut m = DatasetManifest::new(&abs, "mm", scale);
    for id in &ids {
        m.samples.push(SampleEntry {
            id: id.clone(),
            rgb_path: sample_file(&abs.join("rgb"), id, "png"),
            gt_path: sample_file(&abs.join("gt"), id, "png"),
            raw_path: None,
            rel_depth_path: Some(sample_file(&abs.join("rel"), id, "pfm")),
            uncertainty_path: None,
        });
    }
    Ok((m, gts))
}

fn label(cfg: &RunConfig, manifest: &Path, out: &Path, threads: usize) -> CmdResult<()> {
    let mut m = load_manifest(manifest)?;
    require_raw(&m)?;
    let dir = std::path::absolute(out.join("uncertainty")).runtime()?;
    let mut outputs = Outputs::default();
    let results = par_map(&m.samples, threads, |s| -> depthrec::Result<Vec<PathBuf>> {
        let gt = read_depth(&m.resolve(&s.gt_path), m.depth_scale)?;
        let raw = read_depth(&m.resolve(s.raw_path.as_ref().expect("checked")), m.depth_scale)?;
        let u = make_label(&raw, &gt, cfg.tau_frac)?;
        let path = sample_file(&dir, &s.id, "png");
        write_uncertainty(&u, &path)?;
        Ok(vec![path])
    });
    outputs.collect(results)?;
    for s in &mut m.samples {
        s.uncertainty_path = Some(sample_file(&dir, &s.id, "png"));
    }
    let mpath = out.join("manifest.toml");
    m.save(&mpath).runtime()?;
    outputs.track(&mpath);
    outputs.commit();
    info!("labelled {} samples into {}", m.samples.len(), dir.display());
    Ok(())
}

fn history_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".history.tsv");
    PathBuf::from(s)
}

fn write_history(path: &Path, history: &[f64]) -> depthrec::Result<()> {
    let mut text = String::from("epoch\tloss\n");
    for (e, l) in history.iter().enumerate() {
        text.push_str(&format!("{e}\t{l:.9}\n"));
    }
    depthrec::io::atomic_write(path, text.as_bytes())
}

/// Checkpoint, sidecar and history, all removed again if any write fails.
fn save_trained(out: &Path, history: &[f64], save: impl FnOnce(&Path) -> depthrec::Result<()>) -> CmdResult<()> {
    let mut outputs = Outputs::default();
    outputs.track(depthrec::io::sidecar_path(out));
    outputs.track(out);
    outputs.track(history_path(out));
    save(out).runtime()?;
    write_history(&history_path(out), history).runtime()?;
    outputs.commit();
    info!("saved {} ({} epochs, final loss {:.6})", out.display(), history.len(), history.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn train_uncertainty(cfg: &RunConfig, manifest: &Path, out: &Path) -> CmdResult<()> {
    let m = load_manifest(manifest)?;
    require_raw(&m)?;
    require_rel(&m, cfg.classifier.use_relative_depth)?;
    let data: Vec<LabeledSample> = load_all(&m)?
        .into_iter()
        .map(|l| {
            let rel = l.rel.filter(|_| cfg.classifier.use_relative_depth);
            LabeledSample::new(l.rgb, l.raw.expect("checked"), rel, &l.gt, cfg.tau_frac)
        })
        .collect::<depthrec::Result<_>>()
        .runtime()?;
    let trained = classifier_train(cfg.classifier, &data, &cfg.schedule()).runtime()?;
    let history = trained.history.clone();
    save_trained(out, &history, |p| trained.save(p))
}

fn load_classifier(path: Option<&Path>) -> CmdResult<Option<TrainedClassifier>> {
    path.map(|p| TrainedClassifier::load(p).invalid()).transpose()
}

/// Trust map for one sample: classifier prediction, else manifest labels,
/// else (only when `fallback_gt`) thresholded against ground truth.
fn trust_map(
    cfg: &RunConfig,
    clf: Option<&TrainedClassifier>,
    l: &Loaded,
    raw: &Grid2D,
    fallback_gt: bool,
) -> depthrec::Result<Option<UncertaintyMap>> {
    if let Some(c) = clf {
        let rel = l.rel.as_ref().filter(|_| c.classifier.cfg.use_relative_depth);
        return c.predict(&l.rgb, raw, rel).map(Some);
    }
    if let Some(u) = &l.labels {
        return Ok(Some(u.clone()));
    }
    if fallback_gt {
        return make_label(raw, &l.gt, cfg.tau_frac).map(Some);
    }
    Ok(None)
}

fn train_recover(cfg: &RunConfig, manifest: &Path, classifier: Option<&Path>, out: &Path) -> CmdResult<()> {
    let m = load_manifest(manifest)?;
    require_raw(&m)?;
    let clf = load_classifier(classifier)?;
    let rc = cfg.recovery_config();
    require_rel(&m, rc.encoder.use_relative_depth || clf.as_ref().is_some_and(|c| c.classifier.cfg.use_relative_depth))?;
    let loaded = load_all(&m)?;
    let samples: Vec<RecoverySample> = loaded
        .into_iter()
        .map(|l| {
            let raw = l.raw.clone().expect("checked");
            let u = trust_map(cfg, clf.as_ref(), &l, &raw, true)?.expect("fallback");
            let rel = l.rel.as_ref().filter(|_| rc.encoder.use_relative_depth);
            RecoverySample::new(&l.rgb, &raw, rel, &u, l.gt)
        })
        .collect::<depthrec::Result<_>>()
        .runtime()?;
    let mut model = RecoveryModel::new(&rc, cfg.seed).runtime()?;
    let history = train_toy(&samples, &mut model, &cfg.recovery_training()).runtime()?;
    save_trained(out, &history, |p| model.save(p))
}

fn recover(
    cfg: &RunConfig,
    manifest: &Path,
    checkpoint: &Path,
    classifier: Option<&Path>,
    out: &Path,
    format: DepthExt,
    threads: usize,
) -> CmdResult<()> {
    let m = load_manifest(manifest)?;
    require_raw(&m)?;
    let mut model = RecoveryModel::load(checkpoint).invalid()?;
    model.set_precision(cfg.precision);
    let clf = load_classifier(classifier)?;
    let use_rel = model.config().encoder.use_relative_depth;
    require_rel(&m, use_rel || clf.as_ref().is_some_and(|c| c.classifier.cfg.use_relative_depth))?;
    if clf.is_none() && m.samples.iter().any(|s| s.uncertainty_path.is_none()) {
        warn!("no classifier and some samples lack labels: their raw depth is used unmasked");
    }
    let mut outputs = Outputs::default();
    let results = par_map(&m.samples, threads, |s| -> depthrec::Result<Vec<PathBuf>> {
        let l = load_sample(&m, s)?;
        let raw = l.raw.clone().expect("checked");
        let masked = match trust_map(cfg, clf.as_ref(), &l, &raw, false)? {
            Some(u) => mask_raw(&raw, &u)?,
            None => raw,
        };
        let rel = l.rel.as_ref().filter(|_| use_rel);
        let pred = model.predict(&RecoveryInput::new(&l.rgb, &masked, rel)?)?;
        let path = sample_file(out, &s.id, format.ext());
        write_depth(&pred.map(|v| v.max(0.0)), &path, m.depth_scale)?;
        Ok(vec![path])
    });
    outputs.collect(results)?;
    outputs.commit();
    info!("recovered {} samples into {}", m.samples.len(), out.display());
    Ok(())
}

/// `<dir>/<id>.png`, else `<dir>/<id>.pfm`.
fn find_prediction(dir: &Path, id: &str) -> Option<PathBuf> {
    ["png", "pfm"].iter().map(|e| sample_file(dir, id, e)).find(|p| p.is_file())
}

fn evaluate(
    manifest: &Path,
    pred_dir: Option<&Path>,
    raw: bool,
    delta: f64,
    aggregation: AggregationArg,
    out: Option<&Path>,
    threads: usize,
) -> CmdResult<()> {
    if !(delta > 1.0) {
        return Err(Failure::Validation(format!("--delta must exceed 1, got {delta}")));
    }
    let m = load_manifest(manifest)?;
    let preds: Vec<PathBuf> = if raw {
        require_raw(&m)?;
        m.samples.iter().map(|s| m.resolve(s.raw_path.as_ref().expect("checked"))).collect()
    } else {
        let dir = pred_dir.expect("required by clap");
        m.samples
            .iter()
            .map(|s| {
                find_prediction(dir, &s.id)
                    .ok_or_else(|| Failure::Validation(format!("no prediction for `{}` in {}", s.id, dir.display())))
            })
            .collect::<CmdResult<_>>()?
    };
    let idx: Vec<usize> = (0..m.samples.len()).collect();
    let maps = par_map(&idx, threads, |&i| -> depthrec::Result<(Grid2D, Grid2D)> {
        Ok((read_depth(&preds[i], m.depth_scale)?, read_depth(&m.resolve(&m.samples[i].gt_path), m.depth_scale)?))
    })
    .into_iter()
    .collect::<depthrec::Result<Vec<_>>>()
    .runtime()?;
    let agg = match aggregation {
        AggregationArg::PerSample => Aggregation::PerSample,
        AggregationArg::PixelWeighted => Aggregation::PixelWeighted,
    };
    let report = evaluate_dataset(
        m.samples.iter().zip(&maps).map(|(s, (p, g))| (s.id.clone(), p, g)),
        delta,
        &m.depth_unit,
        agg,
    );
    let table = report.to_table();
    print!("{table}");
    if let Some(p) = out {
        depthrec::io::atomic_write(p, table.as_bytes()).runtime()?;
    }
    match report.failed() {
        0 => Ok(()),
        n => Err(Failure::Runtime(format!("{n} of {} samples could not be evaluated", m.samples.len()))),
    }
}

fn gradcheck(seeds: u64) -> CmdResult<()> {
    if seeds == 0 {
        return Err(Failure::Validation("--seeds must be positive".into()));
    }
    let results = selfcheck::run_all(seeds).runtime()?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}\t{}\tseeds {}\tmax rel error {:.3e} (seed {})\tkinks {}",
            r.name, r.seeds, r.max_rel_error, r.worst_seed, r.kinks
        );
        failed += !r.passed() as usize;
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks failed (tolerance {:e})", selfcheck::CHECK_TOLERANCE)));
    }
    Ok(())
}

/// Depth as 8-bit gray, 255 at `peak`; invalid (≤ 0) pixels black.
fn depth_gray(d: &Grid2D, peak: f64) -> impl Fn(usize, usize) -> [u8; 3] + '_ {
    move |y, x| {
        let v = d.get(y, x);
        let g = if v > 0.0 && peak > 0.0 { (v / peak * 255.0).clamp(0.0, 255.0).round() as u8 } else { 0 };
        [g; 3]
    }
}

fn render_panels(manifest: &Path, pred_dir: &Path, out: &Path, threads: usize) -> CmdResult<()> {
    let m = load_manifest(manifest)?;
    let preds: Vec<PathBuf> = m
        .samples
        .iter()
        .map(|s| find_prediction(pred_dir, &s.id).ok_or_else(|| Failure::Validation(format!("no prediction for `{}`", s.id))))
        .collect::<CmdResult<_>>()?;
    let idx: Vec<usize> = (0..m.samples.len()).collect();
    let mut outputs = Outputs::default();
    let results = par_map(&idx, threads, |&i| -> depthrec::Result<Vec<PathBuf>> {
        let s = &m.samples[i];
        let l = load_sample(&m, s)?;
        let pred = read_depth(&preds[i], m.depth_scale)?;
        let (h, w) = l.gt.dims();
        if pred.dims() != (h, w) {
            return Err(depthrec::Error::Param(format!("prediction for `{}` is {:?}, ground truth {:?}", s.id, pred.dims(), (h, w))));
        }
        let peak = l.gt.max();
        let raw = l.raw.unwrap_or_else(|| Grid2D::zeros(h, w));
        let tiles: [Box<dyn Fn(usize, usize) -> [u8; 3] + '_>; 4] = [
            Box::new(|y, x| [0, 1, 2].map(|c| (l.rgb.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8)),
            Box::new(depth_gray(&raw, peak)),
            Box::new(depth_gray(&pred, peak)),
            Box::new(depth_gray(&l.gt, peak)),
        ];
        let width = 4 * w;
        let mut data = vec![0u8; width * h * 3];
        for (t, tile) in tiles.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let o = (y * width + t * w + x) * 3;
                    data[o..o + 3].copy_from_slice(&tile(y, x));
                }
            }
        }
        let path = sample_file(out, &s.id, "png");
        write_rgb8(&path, width, h, &data)?;
        Ok(vec![path])
    });
    outputs.collect(results)?;
    outputs.commit();
    info!("rendered {} panels into {}", m.samples.len(), out.display());
    Ok(())
}

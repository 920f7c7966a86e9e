//! Dataset manifests and run configuration, both TOML.
//!
//! ```toml
//! version = 1
//! depth_unit = "mm"
//! depth_scale = 1.0
//!
//! [[sample]]
//! id = "scene-000"
//! rgb_path = "rgb/scene-000.png"
//! gt_path = "gt/scene-000.png"
//! raw_path = "raw/scene-000.png"    # optional
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{read_depth, read_relative_depth, read_rgb, read_uncertainty};
use super::{read_toml, write_toml};
use crate::degrade::DegradeRecipe;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, LrSchedule, Precision, TrainSchedule};
use crate::recover::{EncoderConfig, FamConfig, LossWeights, MsgForm, RecoveryConfig, RecoveryTraining};
use crate::uncertainty::{ClassifierConfig, DEFAULT_TAU_FRAC};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub rgb_path: PathBuf,
    pub gt_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_depth_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_path: Option<PathBuf>,
}

fn default_unit() -> String {
    "mm".into()
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default = "default_unit")]
    pub depth_unit: String,
    /// Stored integer × scale = depth in `depth_unit`.
    #[serde(default = "default_scale")]
    pub depth_scale: f64,
    #[serde(default, rename = "sample")]
    pub samples: Vec<SampleEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>, depth_unit: &str, depth_scale: f64) -> Self {
        Self {
            version: MANIFEST_VERSION,
            depth_unit: depth_unit.into(),
            depth_scale,
            samples: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    /// Structural checks only: version, scale, unique non-empty ids.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest version {} unsupported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::Config(format!("depth_scale must be positive, got {}", self.depth_scale)));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.id.is_empty() {
                return Err(Error::Config("sample with empty id".into()));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Self = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.base_dir = base_dir.into();
        m.validate()?;
        Ok(m)
    }

    /// Parses and validates, then decodes every referenced file (fail-fast).
    pub fn load(path: &Path) -> Result<Self> {
        let m = Self::load_unchecked(path)?;
        m.check_files()?;
        Ok(m)
    }

    /// Parse and structural validation without touching sample files.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let mut m: Self = read_toml(path)?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        m.base_dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Every file exists, decodes, and matches its sample's size.
    pub fn check_files(&self) -> Result<()> {
        for s in &self.samples {
            let gt = read_depth(&self.resolve(&s.gt_path), self.depth_scale)?;
            let dims = gt.dims();
            let mismatch = |p: &Path, got: (usize, usize)| {
                Error::format(self.resolve(p), None, format!("sample `{}`: size {got:?} differs from ground truth {dims:?}", s.id))
            };
            let rgb = read_rgb(&self.resolve(&s.rgb_path))?;
            if (rgb.height(), rgb.width()) != dims {
                return Err(mismatch(&s.rgb_path, (rgb.height(), rgb.width())));
            }
            if let Some(p) = &s.raw_path {
                let g = read_depth(&self.resolve(p), self.depth_scale)?;
                if g.dims() != dims {
                    return Err(mismatch(p, g.dims()));
                }
            }
            if let Some(p) = &s.rel_depth_path {
                let g = read_relative_depth(&self.resolve(p))?;
                if g.dims() != dims {
                    return Err(mismatch(p, g.dims()));
                }
            }
            if let Some(p) = &s.uncertainty_path {
                let u = read_uncertainty(&self.resolve(p))?;
                if u.dims() != dims {
                    return Err(mismatch(p, u.dims()));
                }
            }
        }
        Ok(())
    }

    /// Writes the manifest with paths made relative to its new location
    /// where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
        let rebase = |p: &Path| {
            let abs = self.resolve(p);
            abs.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or(abs)
        };
        let mut out = self.clone();
        for s in &mut out.samples {
            s.rgb_path = rebase(&s.rgb_path);
            s.gt_path = rebase(&s.gt_path);
            for p in [&mut s.raw_path, &mut s.rel_depth_path, &mut s.uncertainty_path].into_iter().flatten() {
                *p = rebase(p);
            }
        }
        write_toml(path, &out)
    }
}

/// Every knob of a pipeline run; logged in full at the start of each command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub crop: usize,
    pub epochs: usize,
    pub msg_form: MsgForm,
    pub precision: Precision,
    /// Trust threshold as a fraction of the ground-truth maximum.
    pub tau_frac: f64,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    pub recipe: DegradeRecipe,
    pub fam: FamConfig,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub loss: LossWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            crop: 64,
            epochs: 40,
            msg_form: MsgForm::Standard,
            precision: Precision::F64,
            tau_frac: DEFAULT_TAU_FRAC,
            lr: LrSchedule::default(),
            adam: AdamConfig::default(),
            recipe: DegradeRecipe::default(),
            fam: FamConfig::default(),
            encoder: EncoderConfig::default(),
            classifier: ClassifierConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_toml(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        self.recipe.validate()?;
        self.fam.validate()?;
        if self.crop == 0 || self.epochs == 0 {
            return Err(Error::Config("crop and epochs must be positive".into()));
        }
        if !(self.tau_frac > 0.0) {
            return Err(Error::Config("tau_frac must be positive".into()));
        }
        if !(self.loss.lambda_msg >= 0.0) {
            return Err(Error::Config("loss.lambda_msg must be non-negative".into()));
        }
        if self.encoder.use_relative_depth != self.classifier.use_relative_depth {
            return Err(Error::Config("encoder and classifier disagree on use_relative_depth".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            crop: self.crop,
            seed: self.seed,
            lr: self.lr,
            adam: self.adam,
            precision: self.precision,
        }
    }

    pub fn recovery_config(&self) -> RecoveryConfig {
        RecoveryConfig {
            fam: self.fam.clone(),
            encoder: self.encoder,
        }
    }

    pub fn recovery_training(&self) -> RecoveryTraining {
        RecoveryTraining {
            schedule: self.schedule(),
            loss: self.loss,
            msg_form: self.msg_form,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_depth, write_rgb};
    use crate::nn::RegStrategy;
    use crate::tensor::{FeatureMap, Grid2D};
    use proptest::prelude::*;

    #[test]
    fn parse_rejects_bad_manifests() {
        let ok = "version = 1\n[[sample]]\nid = \"a\"\nrgb_path = \"a.png\"\ngt_path = \"a_gt.png\"\n";
        let m = DatasetManifest::parse(ok, "/data").unwrap();
        assert_eq!((m.depth_unit.as_str(), m.depth_scale, m.samples.len()), ("mm", 1.0, 1));
        assert_eq!(m.resolve(&m.samples[0].rgb_path), PathBuf::from("/data/a.png"));
        let dup = format!("{ok}[[sample]]\nid = \"a\"\nrgb_path = \"b.png\"\ngt_path = \"b.png\"\n");
        assert!(DatasetManifest::parse(&dup, ".").unwrap_err().to_string().contains("duplicate"));
        assert!(DatasetManifest::parse(&ok.replace("version = 1", "version = 2"), ".").is_err());
        assert!(DatasetManifest::parse(&format!("depth_scale = 0.0\n{ok}"), ".").is_err());
        assert!(DatasetManifest::parse(&format!("colour = 1\n{ok}"), ".").is_err());
    }

    #[test]
    fn load_checks_files_before_anything_else() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(dir.path(), "mm", 1.0);
        m.samples.push(SampleEntry {
            id: "s".into(),
            rgb_path: "rgb.png".into(),
            gt_path: "gt.png".into(),
            raw_path: Some("raw.pfm".into()),
            rel_depth_path: None,
            uncertainty_path: None,
        });
        let mpath = dir.path().join("m.toml");
        m.save(&mpath).unwrap();
        let err = DatasetManifest::load(&mpath).unwrap_err();
        assert!(err.to_string().contains("gt.png"), "{err}");

        write_depth(&Grid2D::filled(4, 4, 100.0), &dir.path().join("gt.png"), 1.0).unwrap();
        write_rgb(&FeatureMap::zeros(3, 4, 4), &dir.path().join("rgb.png")).unwrap();
        write_depth(&Grid2D::filled(4, 5, 100.0), &dir.path().join("raw.pfm"), 1.0).unwrap();
        let err = DatasetManifest::load(&mpath).unwrap_err();
        assert!(err.to_string().contains("raw.pfm"), "{err}");
        write_depth(&Grid2D::filled(4, 4, 100.0), &dir.path().join("raw.pfm"), 1.0).unwrap();
        let loaded = DatasetManifest::load(&mpath).unwrap();
        assert_eq!(loaded.samples, m.samples);
    }

    #[test]
    fn save_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(dir.path().join("in"), "mm", 1.0);
        m.samples.push(SampleEntry {
            id: "s".into(),
            rgb_path: "rgb.png".into(),
            gt_path: "gt.png".into(),
            raw_path: None,
            rel_depth_path: None,
            uncertainty_path: None,
        });
        let out = dir.path().join("m.toml");
        m.save(&out).unwrap();
        let back = DatasetManifest::load_unchecked(&out).unwrap();
        assert_eq!(back.samples[0].rgb_path, PathBuf::from("in/rgb.png"));
    }

    #[test]
    fn default_run_config_round_trips() {
        let c = RunConfig::default();
        let text = crate::io::to_toml(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(toml::from_str::<RunConfig>("").unwrap(), c);
        assert!(toml::from_str::<RunConfig>("epoch = 3").is_err());
        c.validate().unwrap();
    }

    proptest! {
        #[test]
        fn run_config_round_trips(seed in any::<u64>(), lam in 0.0f64..10.0, rate in 0.0f64..0.99, f in 1usize..20,
                                  sigma in 0.1f64..50.0, lr in 1e-6f64..1.0, literal in any::<bool>()) {
            let mut c = RunConfig {
                seed,
                msg_form: if literal { MsgForm::PaperLiteral } else { MsgForm::Standard },
                precision: Precision::F32,
                ..Default::default()
            };
            c.loss.lambda_msg = lam;
            c.fam.reg = RegStrategy::dropblock(rate, 5);
            c.fam.query_distance = f;
            c.recipe.elastic_sigma = sigma;
            c.recipe.seed = seed ^ 1;
            c.lr.base_lr = lr;
            let text = crate::io::to_toml(&c).unwrap();
            prop_assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
        }
    }
}

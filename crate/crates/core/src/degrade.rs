//! Raw depth generation: seeded elastic structure misalignment, resolution
//! loss, Gaussian and salt-and-pepper noise, and an optional rectangular
//! region that confines all of it.
//!
//! Stage order is fixed: elastic → resolution → noise → mask. Each stage owns
//! its own generator stream (see [`crate::rng::Stage`]), so changing one
//! stage's parameters never perturbs another stage's draws.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stage_rng, SeededRng, Stage};
use crate::tensor::{gaussian_blur, resize, sample_at, FeatureMap, Grid2D, Interp, PointSampling};

pub const RECIPE_VERSION: u32 = 1;

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    fn sample(&self, rng: &mut SeededRng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }
}

/// Per-pixel coordinate shifts in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub dx: Grid2D,
    pub dy: Grid2D,
}

impl DisplacementField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            dx: Grid2D::zeros(h, w),
            dy: Grid2D::zeros(h, w),
        }
    }

    pub fn constant(h: usize, w: usize, dx: f64, dy: f64) -> Self {
        Self {
            dx: Grid2D::filled(h, w, dx),
            dy: Grid2D::filled(h, w, dy),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dx.dims()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectMask {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl RectMask {
    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Full parameterization of one raw-depth generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeRecipe {
    pub recipe_version: u32,
    pub seed: u64,
    pub elastic_sigma: f64,
    /// Maximum displacement in pixels.
    pub elastic_amplitude: f64,
    pub elastic_sampling: PointSampling,
    /// Gaussian noise std as a fraction of the map maximum.
    pub gaussian_noise_frac: f64,
    pub sp_prob: f64,
    pub scale_range: Interval,
    pub interp_choices: Vec<Interp>,
    pub restore: Interp,
    pub mask_area_range: Interval,
    pub use_mask: bool,
}

impl Default for DegradeRecipe {
    fn default() -> Self {
        Self {
            recipe_version: RECIPE_VERSION,
            seed: 0,
            elastic_sigma: 10.0,
            elastic_amplitude: 60.0,
            elastic_sampling: PointSampling::Nearest,
            gaussian_noise_frac: 0.01,
            sp_prob: 0.01,
            scale_range: Interval(4.0, 16.0),
            interp_choices: Interp::ALL.to_vec(),
            restore: Interp::Bilinear,
            mask_area_range: Interval(0.1, 0.6),
            use_mask: true,
        }
    }
}

impl DegradeRecipe {
    /// A recipe whose every stage is the identity.
    pub fn identity(seed: u64) -> Self {
        Self {
            seed,
            elastic_amplitude: 0.0,
            gaussian_noise_frac: 0.0,
            sp_prob: 0.0,
            scale_range: Interval(1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.recipe_version != RECIPE_VERSION {
            return Err(Error::Config(format!(
                "unsupported recipe_version {} (expected {RECIPE_VERSION})",
                self.recipe_version
            )));
        }
        if !(self.elastic_sigma > 0.0) {
            return Err(Error::param("elastic_sigma must be positive"));
        }
        if !(self.elastic_amplitude >= 0.0) || !self.elastic_amplitude.is_finite() {
            return Err(Error::param("elastic_amplitude must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.gaussian_noise_frac) {
            return Err(Error::param("gaussian_noise_frac must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.sp_prob) {
            return Err(Error::param("sp_prob must lie in [0, 1)"));
        }
        let Interval(lo, hi) = self.scale_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::param(format!("scale_range [{lo}, {hi}] must satisfy 1 <= lo <= hi")));
        }
        if self.interp_choices.is_empty() {
            return Err(Error::param("interp_choices must not be empty"));
        }
        validate_area_range(self.mask_area_range)
    }
}

fn validate_area_range(r: Interval) -> Result<()> {
    let Interval(lo, hi) = r;
    if lo > 0.0 && lo <= hi && hi <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("mask area range [{lo}, {hi}] must lie in (0, 1] with lo <= hi")))
    }
}

/// `dx = amplitude · blur(ε_x) / max|blur(ε_x)|`, same for `dy`. `ε_x` is
/// drawn in full (row-major) before `ε_y`.
pub fn gen_displacement(h: usize, w: usize, sigma: f64, amplitude: f64, rng: &mut SeededRng) -> Result<DisplacementField> {
    if h == 0 || w == 0 {
        return Err(Error::param("displacement field must be at least 1x1"));
    }
    let mut noise = || Grid2D::from_fn(h, w, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ex = noise();
    let ey = noise();
    let scale = |g: Grid2D| -> Grid2D {
        let m = g.max_abs();
        if m > 0.0 && amplitude > 0.0 {
            g.map(|v| amplitude * (v / m))
        } else {
            Grid2D::zeros(h, w)
        }
    };
    Ok(DisplacementField {
        dx: scale(gaussian_blur(&ex, sigma)?),
        dy: scale(gaussian_blur(&ey, sigma)?),
    })
}

/// `out(x, y) = d(x + dx, y + dy)` with clamped coordinates.
pub fn elastic_transform(d: &Grid2D, field: &DisplacementField, sampling: PointSampling) -> Result<Grid2D> {
    d.ensure_same_shape(&field.dx, "elastic_transform dx")?;
    d.ensure_same_shape(&field.dy, "elastic_transform dy")?;
    Ok(Grid2D::from_fn(d.height(), d.width(), |y, x| {
        let sx = x as f64 + field.dx.get(y, x);
        let sy = y as f64 + field.dy.get(y, x);
        sample_at(d, sx, sy, sampling)
    }))
}

/// Additive Gaussian noise on valid (> 0) pixels, then salt-and-pepper:
/// pepper (0) and salt (`max(d)`) each with probability `sp_prob / 2`.
/// One normal and one uniform are drawn per pixel regardless of validity.
pub fn apply_noise(d: &Grid2D, gaussian_noise_frac: f64, sp_prob: f64, rng: &mut SeededRng) -> Result<Grid2D> {
    if !(0.0..1.0).contains(&gaussian_noise_frac) {
        return Err(Error::param("gaussian_noise_frac must lie in [0, 1)"));
    }
    if !(0.0..=1.0).contains(&sp_prob) {
        return Err(Error::param("sp_prob must lie in [0, 1]"));
    }
    let peak = d.max();
    let std = gaussian_noise_frac * peak;
    let mut out = d.clone();
    for v in out.as_mut_slice() {
        let n: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        if *v > 0.0 {
            *v += std * n;
        }
        if u < sp_prob / 2.0 {
            *v = 0.0;
        } else if u < sp_prob {
            *v = peak;
        }
        *v = v.max(0.0);
    }
    Ok(out)
}

/// Down-sample by `rate` with `method`, then restore to the input size.
pub fn degrade_resolution(d: &Grid2D, rate: f64, method: Interp, restore: Interp) -> Result<Grid2D> {
    if !(rate >= 1.0) || !rate.is_finite() {
        return Err(Error::param(format!("resolution rate must be >= 1, got {rate}")));
    }
    let (h, w) = d.dims();
    let lh = ((h as f64 / rate).round() as usize).max(1);
    let lw = ((w as f64 / rate).round() as usize).max(1);
    let low = resize(d, lh, lw, method)?;
    resize(&low, h, w, restore)
}

/// Uniform over feasible heights, then feasible widths, then positions.
pub fn gen_rect_mask(h: usize, w: usize, area_range: Interval, rng: &mut SeededRng) -> Result<RectMask> {
    validate_area_range(area_range)?;
    if h == 0 || w == 0 {
        return Err(Error::param("mask target must be at least 1x1"));
    }
    let total = (h * w) as f64;
    let min_area = (area_range.lo() * total - 1e-9).ceil().max(1.0) as usize;
    let max_area = (area_range.hi() * total + 1e-9).floor() as usize;
    let width_range = |rh: usize| -> Option<(usize, usize)> {
        let lo = min_area.div_ceil(rh).max(1);
        let hi = (max_area / rh).min(w);
        (lo <= hi).then_some((lo, hi))
    };
    let heights: Vec<usize> = (1..=h).filter(|&rh| width_range(rh).is_some()).collect();
    let Some(&rh) = heights.choose(rng) else {
        return Err(Error::param(format!(
            "no rectangle in a {h}x{w} image has area fraction in [{}, {}]",
            area_range.lo(),
            area_range.hi()
        )));
    };
    let (wlo, whi) = width_range(rh).expect("feasible height");
    let rw = rng.random_range(wlo..=whi);
    let top = rng.random_range(0..=h - rh);
    let left = rng.random_range(0..=w - rw);
    Ok(RectMask {
        top,
        left,
        height: rh,
        width: rw,
    })
}

/// Everything produced by one [`generate_raw`] call.
#[derive(Clone, Debug)]
pub struct RawSample {
    pub raw: Grid2D,
    pub field: DisplacementField,
    pub mask: Option<RectMask>,
    pub rate: f64,
    pub method: Interp,
}

pub fn generate_raw(gt: &Grid2D, recipe: &DegradeRecipe) -> Result<RawSample> {
    recipe.validate()?;
    if gt.as_slice().iter().any(|v| *v < 0.0) {
        return Err(Error::param("ground-truth depth must be non-negative"));
    }
    let (h, w) = gt.dims();
    let peak = gt.max();

    let mut rng = stage_rng(recipe.seed, Stage::Displacement);
    let field = gen_displacement(h, w, recipe.elastic_sigma, recipe.elastic_amplitude, &mut rng)?;
    let warped = elastic_transform(gt, &field, recipe.elastic_sampling)?;

    let mut rng = stage_rng(recipe.seed, Stage::Resolution);
    let rate = recipe.scale_range.sample(&mut rng);
    let method = *recipe.interp_choices.choose(&mut rng).expect("validated non-empty");
    let low = degrade_resolution(&warped, rate, method, recipe.restore)?;

    let mut rng = stage_rng(recipe.seed, Stage::Noise);
    let noisy = apply_noise(&low, recipe.gaussian_noise_frac, recipe.sp_prob, &mut rng)?;
    let mut raw = noisy.map(|v| v.clamp(0.0, peak));

    let mask = if recipe.use_mask {
        let mut rng = stage_rng(recipe.seed, Stage::Mask);
        let m = gen_rect_mask(h, w, recipe.mask_area_range, &mut rng)?;
        for y in 0..h {
            for x in 0..w {
                if !m.contains(y, x) {
                    raw.set(y, x, gt.get(y, x));
                }
            }
        }
        Some(m)
    } else {
        None
    };

    Ok(RawSample {
        raw,
        field,
        mask,
        rate,
        method,
    })
}

/// A synthetic RGB-D pair standing in for a captured dataset sample.
#[derive(Clone, Debug)]
pub struct Scene {
    /// Three channels in `[0, 1]`.
    pub rgb: FeatureMap,
    /// Depth in `[500, 5000]`.
    pub gt: Grid2D,
}

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (u, v) = ((y - cy) / ry, (x - cx) / rx);
                u * u + v * v <= 1.0
            }
        }
    }
}

fn distinct_albedo(rng: &mut SeededRng, taken: &[[f64; 3]]) -> [f64; 3] {
    // channel values on a coarse lattice keep every pair at least 0.25 apart
    // in some channel
    loop {
        let c = [0, 1, 2].map(|_| 0.1 + 0.2 * rng.random_range(0..5) as f64);
        if taken.iter().all(|t| t.iter().zip(&c).any(|(a, b)| (a - b).abs() > 0.15)) {
            return c;
        }
    }
}

/// Planar-gradient background with 3 to 8 rectangles or ellipses at
/// distinct depth levels; the RGB image paints the same shapes with
/// distinct albedos plus faint texture so depth and color edges coincide.
pub fn gen_synthetic_scene(h: usize, w: usize, rng: &mut SeededRng) -> Result<Scene> {
    if h < 64 || w < 64 {
        return Err(Error::param(format!("synthetic scenes need at least 64x64, got {h}x{w}")));
    }
    let (hf, wf) = (h as f64, w as f64);
    let base = rng.random_range(3400.0..4200.0);
    let gy = rng.random_range(-600.0..600.0) / hf;
    let gx = rng.random_range(-600.0..600.0) / wf;

    let n_shapes = rng.random_range(3..=8usize);
    // distinct levels 200 apart in [600, 2800]
    let mut levels: Vec<f64> = (0..12).map(|i| 600.0 + 200.0 * i as f64).collect();
    let mut albedos = vec![distinct_albedo(rng, &[])];
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let idx = rng.random_range(0..levels.len());
        let depth = levels.swap_remove(idx);
        let albedo = distinct_albedo(rng, &albedos);
        albedos.push(albedo);
        let sy = rng.random_range(0.15..0.45) * hf;
        let sx = rng.random_range(0.15..0.45) * wf;
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let shape = if rng.random_bool(0.5) {
            Shape::Rect {
                y0: cy - sy / 2.0,
                x0: cx - sx / 2.0,
                y1: cy + sy / 2.0,
                x1: cx + sx / 2.0,
            }
        } else {
            Shape::Ellipse {
                cy,
                cx,
                ry: sy / 2.0,
                rx: sx / 2.0,
            }
        };
        shapes.push((shape, depth, albedo));
    }

    let phase: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let freq = rng.random_range(0.3..0.7);
    let mut gt = Grid2D::zeros(h, w);
    let mut rgb = FeatureMap::zeros(3, h, w);
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let (pyf, pxf) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut depth = base + gy * y as f64 + gx * x as f64;
            let mut albedo = albedos[0];
            for (shape, d, a) in &shapes {
                if shape.contains(pyf, pxf) {
                    depth = *d;
                    albedo = *a;
                }
            }
            gt.set(y, x, depth);
            let data = rgb.as_mut_slice();
            for c in 0..3 {
                let texture = 0.03 * (freq * (x as f64 + 1.7 * y as f64) + phase[c]).sin();
                data[c * plane + y * w + x] = (albedo[c] + texture).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Scene { rgb, gt })
}

/// Stand-in for a monocular relative-depth estimate: inverse depth, lightly
/// blurred and min-max normalized to `[0, 1]` (near is high). Invalid pixels
/// (depth ≤ 0) read as the far end.
pub fn simulated_relative_depth(gt: &Grid2D) -> Result<Grid2D> {
    let inv = gt.map(|d| if d > 0.0 { 1.0 / d } else { 0.0 });
    let inv = gaussian_blur(&inv, 1.0)?;
    let (lo, hi) = (inv.min(), inv.max());
    if hi > lo {
        Ok(inv.map(|v| (v - lo) / (hi - lo)))
    } else {
        Ok(inv.map(|_| 0.0))
    }
}

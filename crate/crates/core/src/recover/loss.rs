//! Training losses: masked L1, standardized (relative) L1, and the
//! multi-scale gradient loss, each returning its gradient wrt the prediction.
//!
//! Valid pixels are those with ground truth `> 0`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{resize, resize_adjoint, Grid2D, Interp};

pub const MSG_SCALES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_msg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_msg: 0.5 }
    }
}

/// Per-pixel penalty of the multi-scale gradient loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgForm {
    /// `|∇x R| + |∇y R|`
    #[default]
    Standard,
    /// `|∇x R − ∇y R|`
    PaperLiteral,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn valid_mask(gt: &Grid2D) -> Vec<bool> {
    gt.as_slice().iter().map(|&g| g > 0.0).collect()
}

/// Mean `|D − D*|` over valid pixels.
pub fn loss_l1(pred: &Grid2D, gt: &Grid2D) -> Result<f64> {
    loss_l1_grad(pred, gt).map(|(l, _)| l)
}

pub fn loss_l1_grad(pred: &Grid2D, gt: &Grid2D) -> Result<(f64, Grid2D)> {
    pred.ensure_same_shape(gt, "loss_l1")?;
    let valid = valid_mask(gt);
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(Error::NoValidPixels("loss_l1"));
    }
    let mut grad = Grid2D::zeros(pred.height(), pred.width());
    let mut sum = 0.0;
    for (i, ((d, g), ok)) in pred.as_slice().iter().zip(gt.as_slice()).zip(&valid).enumerate() {
        if *ok {
            sum += (d - g).abs();
            grad.as_mut_slice()[i] = sign(d - g) / n as f64;
        }
    }
    Ok((sum / n as f64, grad))
}

/// Mean and population standard deviation over `idx`.
fn moments(v: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| v[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (v[i] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean absolute difference of the per-map standardized values (population
/// std, valid pixels only). A constant map in either argument contributes 0.
pub fn loss_relative(pred: &Grid2D, gt: &Grid2D) -> Result<f64> {
    loss_relative_grad(pred, gt).map(|(l, _)| l)
}

pub fn loss_relative_grad(pred: &Grid2D, gt: &Grid2D) -> Result<(f64, Grid2D)> {
    pred.ensure_same_shape(gt, "loss_relative")?;
    let idx: Vec<usize> = gt.as_slice().iter().enumerate().filter(|(_, g)| **g > 0.0).map(|(i, _)| i).collect();
    if idx.len() < 2 {
        return Err(Error::NoValidPixels("loss_relative needs at least 2 valid pixels"));
    }
    let mut grad = Grid2D::zeros(pred.height(), pred.width());
    let (d, g) = (pred.as_slice(), gt.as_slice());
    let (mu, sd) = moments(d, &idx);
    let (mu_g, sd_g) = moments(g, &idx);
    if sd == 0.0 || sd_g == 0.0 {
        warn!("loss_relative: constant map (std pred {sd}, std gt {sd_g}); contributing 0");
        return Ok((0.0, grad));
    }
    let n = idx.len() as f64;
    let u: Vec<f64> = idx.iter().map(|&i| (d[i] - mu) / sd).collect();
    let mut loss = 0.0;
    let mut s: Vec<f64> = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        let diff = u[k] - (g[i] - mu_g) / sd_g;
        loss += diff.abs();
        s.push(sign(diff) / n);
    }
    // d u_k / d D_m = (δ_km − 1/n − u_k u_m / n) / σ
    let s_mean = s.iter().sum::<f64>() / n;
    let su_mean = s.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / n;
    let out = grad.as_mut_slice();
    for (k, &i) in idx.iter().enumerate() {
        out[i] = (s[k] - s_mean - u[k] * su_mean) / sd;
    }
    Ok((loss / n, grad))
}

/// Side length at scale `k` (0-based): `n / 2^k`.
fn scale_dims(h: usize, w: usize, k: usize) -> (usize, usize) {
    (h >> k, w >> k)
}

/// Penalty mean over one scale and its gradient wrt that scale's residual.
fn msg_scale(r: &Grid2D, form: MsgForm) -> (f64, Grid2D) {
    let (h, w) = r.dims();
    let n = (h * w) as f64;
    let mut grad = Grid2D::zeros(h, w);
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let gx = if x + 1 < w { r.get(y, x + 1) - r.get(y, x) } else { 0.0 };
            let gy = if y + 1 < h { r.get(y + 1, x) - r.get(y, x) } else { 0.0 };
            match form {
                MsgForm::Standard => {
                    sum += gx.abs() + gy.abs();
                    let (sx, sy) = (sign(gx) / n, sign(gy) / n);
                    if x + 1 < w {
                        grad.as_mut_slice()[y * w + x + 1] += sx;
                        grad.as_mut_slice()[y * w + x] -= sx;
                    }
                    if y + 1 < h {
                        grad.as_mut_slice()[(y + 1) * w + x] += sy;
                        grad.as_mut_slice()[y * w + x] -= sy;
                    }
                }
                MsgForm::PaperLiteral => {
                    let e = gx - gy;
                    sum += e.abs();
                    let s = sign(e) / n;
                    if x + 1 < w {
                        grad.as_mut_slice()[y * w + x + 1] += s;
                        grad.as_mut_slice()[y * w + x] -= s;
                    }
                    if y + 1 < h {
                        grad.as_mut_slice()[(y + 1) * w + x] -= s;
                        grad.as_mut_slice()[y * w + x] += s;
                    }
                }
            }
        }
    }
    (sum / n, grad)
}

/// Multi-scale gradient loss on `R = D − D*` (zeroed where `D*` is invalid):
/// at each of 4 scales `R` is bilinearly down-sampled by `2^k`, forward
/// differences are penalized, and the per-scale means are averaged.
pub fn loss_msg(pred: &Grid2D, gt: &Grid2D, form: MsgForm) -> Result<f64> {
    loss_msg_grad(pred, gt, form).map(|(l, _)| l)
}

pub fn loss_msg_grad(pred: &Grid2D, gt: &Grid2D, form: MsgForm) -> Result<(f64, Grid2D)> {
    pred.ensure_same_shape(gt, "loss_msg")?;
    let (h, w) = pred.dims();
    let min_side = 1 << MSG_SCALES;
    if h < min_side || w < min_side {
        return Err(Error::param(format!("loss_msg needs at least {min_side}x{min_side}, got {h}x{w}")));
    }
    let valid = valid_mask(gt);
    let r = Grid2D::from_fn(h, w, |y, x| {
        let i = y * w + x;
        if valid[i] {
            pred.as_slice()[i] - gt.as_slice()[i]
        } else {
            0.0
        }
    });
    let mut total = 0.0;
    let mut grad = Grid2D::zeros(h, w);
    for k in 0..MSG_SCALES {
        let (sh, sw) = scale_dims(h, w, k);
        let rk = resize(&r, sh, sw, Interp::Bilinear)?;
        let (l, gk) = msg_scale(&rk, form);
        total += l;
        let back = resize_adjoint(&gk, h, w, Interp::Bilinear)?;
        grad.as_mut_slice().iter_mut().zip(back.as_slice()).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / MSG_SCALES as f64;
    for (g, ok) in grad.as_mut_slice().iter_mut().zip(&valid) {
        *g = if *ok { *g * scale } else { 0.0 };
    }
    Ok((total * scale, grad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub relative: f64,
    pub msg: f64,
    pub total: f64,
}

/// `L1 + L_r + λ·L_msg`.
pub fn loss_total(pred: &Grid2D, gt: &Grid2D, weights: &LossWeights, form: MsgForm) -> Result<LossBreakdown> {
    loss_total_grad(pred, gt, weights, form).map(|(b, _)| b)
}

pub fn loss_total_grad(pred: &Grid2D, gt: &Grid2D, weights: &LossWeights, form: MsgForm) -> Result<(LossBreakdown, Grid2D)> {
    if !(weights.lambda_msg >= 0.0) {
        return Err(Error::param("lambda_msg must be non-negative"));
    }
    let (l1, g1) = loss_l1_grad(pred, gt)?;
    let (lr, gr) = loss_relative_grad(pred, gt)?;
    let (lm, gm) = loss_msg_grad(pred, gt, form)?;
    let lambda = weights.lambda_msg;
    let (h, w) = pred.dims();
    let data = (0..h * w)
        .map(|i| g1.as_slice()[i] + gr.as_slice()[i] + lambda * gm.as_slice()[i])
        .collect();
    Ok((
        LossBreakdown {
            l1,
            relative: lr,
            msg: lm,
            total: combine(l1, lr, lm, lambda),
        },
        Grid2D::new(h, w, data)?,
    ))
}

/// Total from component values.
pub fn combine(l1: f64, relative: f64, msg: f64, lambda_msg: f64) -> f64 {
    l1 + relative + lambda_msg * msg
}

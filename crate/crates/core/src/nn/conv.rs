//! 3×3 convolution, stride 1, zero padding 1.
//!
//! Weights are laid out `out × in × 3 × 3`.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Row/column ranges of output pixels whose tap `(dy, dx)` lands inside the map.
#[inline]
fn valid_span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi.max(lo))
}

fn check_shapes(weight: &[f64], bias: &[f64], in_c: usize, out_c: usize) -> Result<()> {
    if weight.len() != out_c * in_c * 9 {
        return Err(Error::param(format!(
            "conv3x3 weight has {} values, expected {out_c}x{in_c}x3x3",
            weight.len()
        )));
    }
    if bias.len() != out_c {
        return Err(Error::param(format!("conv3x3 bias has {} values, expected {out_c}", bias.len())));
    }
    Ok(())
}

pub fn conv3x3_forward(weight: &[f64], bias: &[f64], input: &FeatureMap, out_channels: usize) -> Result<FeatureMap> {
    let in_c = input.channels();
    check_shapes(weight, bias, in_c, out_channels)?;
    let (h, w) = (input.height(), input.width());
    let mut out = FeatureMap::zeros(out_channels, h, w);
    for o in 0..out_channels {
        let plane = out.channel_mut(o);
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let src = input.channel(i);
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_span(h, dy);
                for kx in 0..3 {
                    let k = weight[((o * in_c + i) * 3 + ky) * 3 + kx];
                    if k == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_span(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s0 = (sy * w) as isize + x0 as isize + dx;
                        let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += k * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Option<FeatureMap>,
}

/// Exact gradients given the forward input and the output gradient.
pub fn conv3x3_backward(weight: &[f64], input: &FeatureMap, grad_out: &FeatureMap, need_input_grad: bool) -> Result<ConvGrads> {
    let in_c = input.channels();
    let out_c = grad_out.channels();
    let (h, w) = (input.height(), input.width());
    if (grad_out.height(), grad_out.width()) != (h, w) {
        return Err(Error::param("conv3x3 backward: spatial dims differ"));
    }
    if weight.len() != out_c * in_c * 9 {
        return Err(Error::param("conv3x3 backward: weight shape"));
    }
    let mut gw = vec![0.0; weight.len()];
    let gb: Vec<f64> = (0..out_c).map(|o| grad_out.channel(o).iter().sum()).collect();
    let mut gin = need_input_grad.then(|| FeatureMap::zeros(in_c, h, w));
    for o in 0..out_c {
        let go = grad_out.channel(o);
        for i in 0..in_c {
            let src = input.channel(i);
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_span(w, dx);
                    let widx = ((o * in_c + i) * 3 + ky) * 3 + kx;
                    let k = weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let g = &go[y * w + x0..y * w + x1];
                        let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                        let s = &src[s0..s0 + (x1 - x0)];
                        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gin) = gin.as_mut() {
                            if k != 0.0 {
                                let d = &mut gin.channel_mut(i)[s0..s0 + (x1 - x0)];
                                for (dv, gv) in d.iter_mut().zip(g) {
                                    *dv += k * gv;
                                }
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        weight: gw,
        bias: gb,
        input: gin,
    })
}

/// A conv3x3 layer whose tensors live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv3x3 {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add_he_uniform(
            &format!("{name}.weight"),
            &[out_channels, in_channels, 3, 3],
            in_channels * 9,
            rng,
        )?;
        let bias = store.add_zeros(&format!("{name}.bias"), &[out_channels])?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
        })
    }

    pub fn forward(&self, store: &ParamStore, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels {
            return Err(Error::param(format!(
                "conv3x3 expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        conv3x3_forward(store.value(self.weight), store.value(self.bias), input, self.out_channels)
    }

    /// Accumulates parameter gradients into `store`; returns the input gradient if requested.
    pub fn backward(&self, store: &mut ParamStore, input: &FeatureMap, grad_out: &FeatureMap, need_input_grad: bool) -> Result<Option<FeatureMap>> {
        let g = conv3x3_backward(store.value(self.weight), input, grad_out, need_input_grad)?;
        store.grad_mut(self.weight).iter_mut().zip(&g.weight).for_each(|(a, b)| *a += b);
        store.grad_mut(self.bias).iter_mut().zip(&g.bias).for_each(|(a, b)| *a += b);
        Ok(g.input)
    }
}

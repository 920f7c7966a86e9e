//! Per-pixel multilayer perceptron: the same fully connected stack applied
//! independently at every pixel of a feature map. Rectifier between layers,
//! last layer linear.

use rand::Rng;

use super::act::{relu_backward_inplace, relu_inplace};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// `out[o, p] = b[o] + Σ_i w[o, i] · in[i, p]` on channel-major planes.
fn linear_forward(weight: &[f64], bias: &[f64], input: &FeatureMap, out_c: usize) -> FeatureMap {
    let in_c = input.channels();
    let mut out = FeatureMap::zeros(out_c, input.height(), input.width());
    for o in 0..out_c {
        let dst = out.channel_mut(o);
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let k = weight[o * in_c + i];
            if k == 0.0 {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(input.channel(i)) {
                *d += k * s;
            }
        }
    }
    out
}

/// Returns (grad weight, grad bias, grad input).
fn linear_backward(weight: &[f64], input: &FeatureMap, grad_out: &FeatureMap) -> (Vec<f64>, Vec<f64>, FeatureMap) {
    let in_c = input.channels();
    let out_c = grad_out.channels();
    let mut gw = vec![0.0; out_c * in_c];
    let mut gin = FeatureMap::zeros(in_c, input.height(), input.width());
    let gb = (0..out_c).map(|o| grad_out.channel(o).iter().sum()).collect();
    for o in 0..out_c {
        let go = grad_out.channel(o);
        for i in 0..in_c {
            gw[o * in_c + i] = go.iter().zip(input.channel(i)).map(|(a, b)| a * b).sum();
            let k = weight[o * in_c + i];
            if k != 0.0 {
                for (d, g) in gin.channel_mut(i).iter_mut().zip(go) {
                    *d += k * g;
                }
            }
        }
    }
    (gw, gb, gin)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Layer inputs recorded during the forward pass.
pub struct MlpCache {
    inputs: Vec<FeatureMap>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`, at least two entries.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::param(format!("mlp widths {widths:?}: need >= 2 positive entries")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                Ok(Linear {
                    weight: store.add_he_uniform(&format!("{name}.{l}.weight"), &[w[1], w[0]], w[0], rng)?,
                    bias: store.add_zeros(&format!("{name}.{l}.bias"), &[w[1]])?,
                    in_features: w[0],
                    out_features: w[1],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features
    }

    pub fn out_features(&self) -> usize {
        self.layers.last().expect("non-empty").out_features
    }

    pub fn forward(&self, store: &ParamStore, input: &FeatureMap) -> Result<(FeatureMap, MlpCache)> {
        if input.channels() != self.in_features() {
            return Err(Error::param(format!(
                "mlp expects {} input features, got {}",
                self.in_features(),
                input.channels()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = linear_forward(store.value(layer.weight), store.value(layer.bias), &x, layer.out_features);
            if l + 1 < self.layers.len() {
                relu_inplace(y.as_mut_slice());
            }
            inputs.push(x);
            x = y;
        }
        Ok((x, MlpCache { inputs }))
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, grad_out: &FeatureMap) -> Result<FeatureMap> {
        if grad_out.channels() != self.out_features() {
            return Err(Error::param("mlp backward: output width"));
        }
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.inputs[l];
            let (gw, gb, mut gin) = linear_backward(store.value(layer.weight), x, &g);
            store.grad_mut(layer.weight).iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
            store.grad_mut(layer.bias).iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            if l > 0 {
                // x is the rectified output of the previous layer
                relu_backward_inplace(gin.as_mut_slice(), x.as_slice());
            }
            g = gin;
        }
        Ok(g)
    }
}

/// Forward pass without keeping the cache.
pub fn mlp_forward(store: &ParamStore, mlp: &Mlp, input: &FeatureMap) -> Result<FeatureMap> {
    mlp.forward(store, input).map(|(y, _)| y)
}

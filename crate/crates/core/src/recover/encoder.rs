//! Feature encoders for the recovery model.
//!
//! Anything implementing [`Encoder`] can feed the alignment head; the toy
//! encoder below is two small conv stacks, one per modality.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_backward_inplace, relu_inplace, Conv3x3, ParamStore};
use crate::tensor::FeatureMap;

/// Produces `C×H×W` features for the image and depth inputs.
pub trait Encoder {
    type Cache;

    /// Feature width `C` of both outputs.
    fn channels(&self) -> usize;

    /// Channels expected in the image-branch input.
    fn image_channels(&self) -> usize;

    fn forward(&self, store: &ParamStore, image: &FeatureMap, depth: &FeatureMap) -> Result<(FeatureMap, FeatureMap, Self::Cache)>;

    /// Accumulates parameter gradients given the gradients of both outputs.
    fn backward(&self, store: &mut ParamStore, cache: &Self::Cache, grad_image: &FeatureMap, grad_depth: &FeatureMap) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    /// Append a relative-depth channel to the image branch.
    pub use_relative_depth: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            use_relative_depth: false,
        }
    }
}

/// Conv3x3 + rectifier layers, all of width `C`.
#[derive(Clone, Debug)]
struct ConvStack {
    convs: Vec<Conv3x3>,
}

/// Layer inputs plus the final activation.
#[derive(Clone, Debug)]
pub struct StackCache {
    inputs: Vec<FeatureMap>,
    output: FeatureMap,
}

impl ConvStack {
    fn new(store: &mut ParamStore, name: &str, in_channels: usize, width: usize, layers: usize, rng: &mut impl Rng) -> Result<Self> {
        let convs = (0..layers)
            .map(|l| Conv3x3::new(store, &format!("{name}.conv{l}"), if l == 0 { in_channels } else { width }, width, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { convs })
    }

    fn forward(&self, store: &ParamStore, x: &FeatureMap) -> Result<(FeatureMap, StackCache)> {
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            let mut y = conv.forward(store, &cur)?;
            relu_inplace(y.as_mut_slice());
            inputs.push(cur);
            cur = y;
        }
        Ok((cur.clone(), StackCache { inputs, output: cur }))
    }

    fn backward(&self, store: &mut ParamStore, cache: &StackCache, grad: &FeatureMap) -> Result<()> {
        let mut g = grad.clone();
        relu_backward_inplace(g.as_mut_slice(), cache.output.as_slice());
        for l in (0..self.convs.len()).rev() {
            let x = &cache.inputs[l];
            match self.convs[l].backward(store, x, &g, l > 0)? {
                Some(mut gin) => {
                    relu_backward_inplace(gin.as_mut_slice(), x.as_slice());
                    g = gin;
                }
                None => break,
            }
        }
        Ok(())
    }
}

/// Two parallel conv stacks: image (RGB, optionally + relative depth) and
/// single-channel depth.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    cfg: EncoderConfig,
    channels: usize,
    image: ConvStack,
    depth: ConvStack,
}

impl ToyEncoder {
    pub fn new(store: &mut ParamStore, cfg: EncoderConfig, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if cfg.layers == 0 || channels == 0 {
            return Err(Error::param("encoder needs >= 1 layer and >= 1 channel"));
        }
        let image_in = 3 + cfg.use_relative_depth as usize;
        Ok(Self {
            cfg,
            channels,
            image: ConvStack::new(store, "enc.image", image_in, channels, cfg.layers, rng)?,
            depth: ConvStack::new(store, "enc.depth", 1, channels, cfg.layers, rng)?,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        self.cfg
    }
}

impl Encoder for ToyEncoder {
    type Cache = (StackCache, StackCache);

    fn channels(&self) -> usize {
        self.channels
    }

    fn image_channels(&self) -> usize {
        3 + self.cfg.use_relative_depth as usize
    }

    fn forward(&self, store: &ParamStore, image: &FeatureMap, depth: &FeatureMap) -> Result<(FeatureMap, FeatureMap, Self::Cache)> {
        if (image.height(), image.width()) != (depth.height(), depth.width()) {
            return Err(Error::param("encoder: image and depth dims differ"));
        }
        if depth.channels() != 1 {
            return Err(Error::param("encoder: depth input must have 1 channel"));
        }
        let (ei, ci) = self.image.forward(store, image)?;
        let (ed, cd) = self.depth.forward(store, depth)?;
        Ok((ei, ed, (ci, cd)))
    }

    fn backward(&self, store: &mut ParamStore, cache: &Self::Cache, grad_image: &FeatureMap, grad_depth: &FeatureMap) -> Result<()> {
        self.image.backward(store, &cache.0, grad_image)?;
        self.depth.backward(store, &cache.1, grad_depth)
    }
}

/// `(E(I), E(D))` for already-assembled branch inputs.
pub fn encoder_forward<E: Encoder>(encoder: &E, store: &ParamStore, image: &FeatureMap, depth: &FeatureMap) -> Result<(FeatureMap, FeatureMap)> {
    encoder.forward(store, image, depth).map(|(a, b, _)| (a, b))
}

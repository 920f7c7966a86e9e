//! Real-world depth recovery toolkit.
//!
//! * [`degrade`] synthesizes raw depth from clean depth (elastic structure
//!   misalignment, resolution loss, sensor noise, localized masks).
//! * [`uncertainty`] labels and masks untrustworthy raw pixels and trains a
//!   small per-pixel classifier to predict those labels.
//! * [`recover`] is the feature-alignment recovery head, its toy encoder,
//!   losses and training loop, built on the hand-differentiated ops in [`nn`].
//! * [`metrics`] computes AbsRel, RMSE, iRMSE and δ.
//! * [`io`] reads and writes depth maps, manifests and configs.
//! * [`selfcheck`] runs finite-difference checks over every differentiable block.

pub mod degrade;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod recover;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Grid2D, Interp, PointSampling};

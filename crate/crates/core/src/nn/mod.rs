//! Hand-differentiated building blocks: every op has an explicit forward and
//! an exact backward, checked against central differences.

pub mod act;
pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod reg;

pub use act::{relu_backward_inplace, relu_inplace, softmax_over_queries};
pub use adam::{adam_step, random_crop, AdamConfig, LrSchedule, TrainSchedule};
pub use conv::{conv3x3_backward, conv3x3_forward, Conv3x3};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use mlp::{mlp_forward, Mlp, MlpCache};
pub use params::{ParamId, ParamStore, Precision};
pub use reg::{apply_regularizer, RegKind, RegScale, RegStrategy};

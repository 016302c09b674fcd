//! Two-stream attention network: band-wise embedding with learned positional
//! rows, pre-norm self-attention encoders per modality, LiDAR-query
//! cross-attention over the HSI band tokens, and a linear classifier.

mod checkpoint;
mod config;
pub(crate) mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE};
pub use config::{Architecture, ModelConfig};
pub use forward::{forward, AttentionTrace, ForwardOutput, LAYER_NORM_EPS};
pub use params::{init_params, ModelParams, ParamId};

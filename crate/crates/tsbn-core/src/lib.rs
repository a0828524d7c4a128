//! Temporal sigmoid belief networks.
//!
//! A library for directed generative sequence models of binary,
//! real-valued, and count data. A chain of sigmoid belief networks shares
//! state across time through its biases; a jointly trained recognition
//! network gives one-pass approximate posterior sampling, and training
//! maximizes the variational lower bound with score-function gradients,
//! a data-dependent baseline, signal centering and variance
//! normalization, and RMSprop updates.
//!
//! Module map:
//! - [`numeric`]: stable scalar kernels and seeded random streams
//! - [`params`]: model specs, parameter containers, initialization
//! - [`checkpoint`]: binary checkpoint persistence
//! - [`data`]: sequence containers, bouncing-ball videos, windowing
//! - [`shallow`]: the single-hidden-layer model and its gradients
//! - [`deep`]: stacked models with stochastic or deterministic middles
//! - [`trainer`]: the variational training loop
//! - [`evaluation`]: prediction, bound estimation, precision metrics

pub mod checkpoint;
pub mod data;
pub mod deep;
pub mod error;
pub mod evaluation;
pub mod numeric;
pub mod params;
pub mod shallow;
pub mod trainer;
mod visible;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Result, TsbnError};
pub use numeric::RngStream;
pub use params::{
    init_params, GenerativeParams, LayerKind, Likelihood, ModelSpec, ParamContainer,
    RecognitionParams,
};
pub use trainer::{BaselineParams, NvilConfig, SignalMode, TrainConfig, TrainHyper, TrainerState};

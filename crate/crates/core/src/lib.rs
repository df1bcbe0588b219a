//! Spatial-temporal residual network (two spatial branches, a temporal
//! fusion layer and a residual skip) used as a CTU-gated in-loop filter for
//! compressed video luma.
//!
//! * [`tensor`]: dense tensors and hand-written conv/ReLU/concat kernels.
//! * [`model`]: the fixed five-convolution network and its model file.
//! * [`trainer`]: MSE loss, backpropagation, Adam and the training loop.
//! * [`dataset`]: raw YUV I/O, a DCT degradation simulator, training-triplet
//!   extraction and the sample store file.
//! * [`pipeline`]: per-CTU filtering with distortion-based on/off flags.
//! * [`metrics`]: MSE/PSNR, Bjontegaard delta-rate and timing ratios.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod trainer;

pub use dataset::{FrameSequence, LumaPlane, Rect, SampleStore, TrainingSample};
pub use error::{Error, Result};
pub use model::{forward, init_weights, StresNetWeights};
pub use pipeline::{filter_sequence, CtuFlagMap, CtuGrid, FilterMode, RdDecisionTrace};
pub use tensor::{ConvKernel, Tensor};
pub use trainer::{train, HyperParams, TrainReport};

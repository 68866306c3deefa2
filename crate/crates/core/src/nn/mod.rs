//! A small CPU convolutional network engine.
//!
//! Everything is `f64` so analytic gradients can be checked against finite
//! differences. Convolutions run as im2col + GEMM, parallel over the samples
//! of a batch; reductions across samples happen in sample order so results
//! are bit-identical for any thread count.

mod arch;
mod checkpoint;
mod layers;
mod model;
mod param;
mod tensor;

pub use arch::{Architecture, BackboneSpec, Network};
pub use checkpoint::{MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use layers::{Conv2d, Inception, Layer, Linear, Pool2d};
pub use model::{build_model, Batch, ModelState, SgdConfig, SoftmaxOutput, SOFTMAX_SUM_TOLERANCE};
pub use param::Param;
pub use tensor::Tensor;

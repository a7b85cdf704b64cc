//! A small CPU training engine for the super-resolving denoiser.
//!
//! Tensors are channel-major (`C x N x H x W`), convolutions run as one GEMM
//! per layer over the whole batch, and every layer has a hand-written
//! backward pass. All kernels are single-threaded and reduce in a fixed
//! order, so identical inputs give bit-identical results.

mod adam;
mod checkpoint;
mod gradcheck;
pub mod layers;
mod model;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamState};
pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::Activation;
pub use model::{build_model, Model, ModelConfig, SrDenoiser, Trace};
pub use scalar::{gemm, Op, Scalar};
pub use tensor::Tensor;

//! Self-supervised single-image denoising with super-resolved sub-sample
//! pairs.
//!
//! A noisy image is split by a 2x2-cell sub-sampler into a half-resolution
//! input and a full-resolution complement target. A U-Net with a 2x
//! super-resolution head is trained to predict the complement from the
//! input, and at inference the full noisy image is passed through the
//! network and bilinearly down-sampled back to its own size.
//!
//! Module map:
//!
//! * [`image`], [`metrics`]: raster container, resampling, PSNR/SSIM.
//! * [`noise`]: seeded Gaussian, Poisson and mixed corruption.
//! * [`subsample`]: the cell sub-sampler and its mask.
//! * [`nn`]: the network, its CPU training engine and checkpoints.
//! * [`loss`], [`train`]: objectives and the optimization loop.
//! * [`reconstruct`]: clean-image reconstruction.
//! * [`theorem`]: Monte Carlo check of the self-supervised risk identity.
//! * [`dataset`]: image files, manifests, synthetic splits, FMD ingestion.

pub mod dataset;
mod error;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod phantom;
pub mod reconstruct;
pub mod seed;
pub mod subsample;
pub mod theorem;
pub mod train;

pub use error::{Error, Result};
pub use image::{bilinear_resize, random_crop, Image};
pub use metrics::{psnr, ssim, MetricReport, SsimParams};
pub use nn::{build_model, Checkpoint, Model, ModelConfig};
pub use noise::{noise_variance, NoiseConfig, NoiseFamily};
pub use reconstruct::{denoise, denoise_sr};
pub use subsample::{extract_subsampled, make_complement, sample_indices, SubsampleSet};
pub use theorem::{verify_cross_term_vanishes, verify_decomposition, DecompositionReport};
pub use train::{train, train_step, validate, TrainConfig, TrainOutcome};

//! Two-stage transfer from web-supervised images to a video classifier.
//!
//! The pipeline trains a small 2D image encoder on noisy web images and web
//! video frames (with attention-based instance weighting and adversarial
//! domain alignment against an unlabeled target domain), transfers the learned
//! spatial filters into a (2+1)D video encoder with residual zero-initialized
//! temporal filters, and continues training on video chunks. Everything runs
//! on the CPU in a few minutes and is bit-deterministic per seed, validated on
//! a procedurally generated moving-shapes benchmark with controllable label
//! noise and domain shift.
//!
//! Module map:
//! - [`numerics`]: f32 tensors, the f64 autodiff tape, gradient checking,
//!   cosine similarity, and the binary tensor container used for checkpoints
//!   and datasets.
//! - [`encoders`]: the 2D encoder, the (2+1)D encoder, and the spatial weight
//!   transfer/freeze procedure.
//! - [`adversarial`]: gradient reversal, the multi-layer domain discriminator,
//!   and the pairwise/total domain losses.
//! - [`attention`]: bilinear cross-domain scoring, top-T pooling, temperature
//!   softmax, and the attention-weighted stage losses.
//! - [`webdata`]: the synthetic three-domain benchmark generator, chunk
//!   extraction, overlap dedup, and batch assembly.
//! - [`pipeline`]: two-stage training orchestration, evaluation, embedding
//!   export, and the domain probe.

pub mod adversarial;
pub mod attention;
pub mod encoders;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod webdata;

pub use error::CoreError;
pub use numerics::tensor::Tensor;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

//! Post-mortem iris segmentation toolkit.
//!
//! The crate bundles everything needed to train and evaluate an iris
//! segmenter on deformed (post-mortem) eye images:
//!
//! - [`tensor`]: a small dense-tensor engine with hand-written forward and
//!   reverse-mode kernels (convolution, batch normalization, ReLU, 2×2 max
//!   pooling with index unpooling, pixel softmax, cross-entropy) and an SGD
//!   optimizer with momentum and weight decay.
//! - [`segnet`]: the encoder-decoder network whose decoder upsamples with the
//!   argmax indices recorded by the encoder pools, plus training, mask
//!   prediction and checkpointing.
//! - [`baseline`]: a conventional segmenter built from integro-differential
//!   circle fits and Viterbi contour refinement on a polar lattice.
//! - [`data_io`]: manifests, mask codecs, resampling, a seeded synthetic eye
//!   generator with exact ground truth, and overlay rendering.
//! - [`eval`]: IoU, subject-disjoint split plans, per-split aggregation,
//!   method comparison and boxplot statistics.

pub mod baseline;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod mask;
pub mod rng;
pub mod segnet;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::Mask;

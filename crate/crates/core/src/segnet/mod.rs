//! Encoder-decoder segmentation network with pooling-index unpooling.
//!
//! The encoder is a stack of blocks, each a few 3×3 convolutions (with batch
//! normalization and ReLU) followed by a 2×2 max pool that records its
//! argmax positions. The decoder mirrors it: every block starts by
//! unpooling with the indices of the matching encoder pool, then runs the
//! same number of convolutions. A final 3×3 convolution emits two channels
//! (background, iris) into a per-pixel softmax the size of the input.

mod checkpoint;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use model::{audit_pool_pairing, image_to_tensor, ConvUnit, Model, Step};
pub use train::{inverse_frequency_weights, predict_mask, segment_image, train, train_with, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Five blocks on 120×160 inputs, VGG-16 widths.
    Full,
    /// Three narrow blocks on 32×40 inputs, for desk-scale runs.
    Mini,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "mini" => Ok(Preset::Mini),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::config(format!("unknown preset {other:?} (full|mini)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Output channels of each encoder block, shallowest first.
    pub channels_per_block: Vec<usize>,
    pub convs_per_block: Vec<usize>,
    /// `(height, width)` of the network input.
    pub input_size: (usize, usize),
    /// Edge-pad inputs whose sides are not a multiple of `2^blocks` up to
    /// the next multiple, and crop the output back. Without it such inputs
    /// are rejected.
    #[serde(default)]
    pub pad_input: bool,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            preset: Preset::Full,
            channels_per_block: vec![64, 128, 256, 512, 512],
            convs_per_block: vec![2, 2, 3, 3, 3],
            input_size: (120, 160),
            pad_input: true,
        }
    }

    pub fn mini() -> Self {
        Self {
            preset: Preset::Mini,
            channels_per_block: vec![8, 16, 32],
            convs_per_block: vec![2, 2, 2],
            input_size: (32, 40),
            pad_input: false,
        }
    }

    pub fn from_preset(p: Preset) -> Result<Self> {
        match p {
            Preset::Full => Ok(Self::full()),
            Preset::Mini => Ok(Self::mini()),
            Preset::Custom => Err(Error::config("custom preset needs an explicit model config")),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.channels_per_block.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.num_blocks();
        if b == 0 {
            return Err(Error::config("model needs at least one block"));
        }
        if self.convs_per_block.len() != b {
            return Err(Error::config(format!(
                "{} channel entries but {} conv counts",
                b,
                self.convs_per_block.len()
            )));
        }
        if self.channels_per_block.contains(&0) || self.convs_per_block.contains(&0) {
            return Err(Error::config("channel and conv counts must be positive"));
        }
        let div = 1usize << b;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || (!self.pad_input && (h % div != 0 || w % div != 0)) {
            return Err(Error::config(format!(
                "input {h}x{w} must be divisible by 2^{b} = {div}"
            )));
        }
        Ok(())
    }

    /// Spatial size the convolution stack actually runs at.
    pub fn working_size(&self) -> (usize, usize) {
        let (h, w) = self.input_size;
        if !self.pad_input {
            return (h, w);
        }
        let div = 1usize << self.num_blocks();
        (h.div_ceil(div) * div, w.div_ceil(div) * div)
    }

    /// Closed-form count of learned scalars (conv weights and biases plus
    /// batch-norm scale and shift; running statistics excluded).
    pub fn expected_parameter_count(&self) -> usize {
        let k2 = KERNEL * KERNEL;
        let conv_bn = |cin: usize, cout: usize| k2 * cin * cout + cout + 2 * cout;
        let c = &self.channels_per_block;
        let mut total = 0;
        for (i, &n) in self.convs_per_block.iter().enumerate() {
            let prev = if i == 0 { 1 } else { c[i - 1] };
            // encoder: prev -> c, then c -> c
            total += conv_bn(prev, c[i]) + (n - 1) * conv_bn(c[i], c[i]);
            // decoder: c -> c, closing with c -> the next shallower width
            let next = if i == 0 { c[0] } else { c[i - 1] };
            total += (n - 1) * conv_bn(c[i], c[i]) + conv_bn(c[i], next);
        }
        total + k2 * c[0] * NUM_CLASSES + NUM_CLASSES
    }
}

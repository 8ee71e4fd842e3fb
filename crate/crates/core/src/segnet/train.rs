use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::model::{image_to_tensor, Model};
use crate::data_io::{downsample_image, upscale_mask_to};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::rng::Stream;
use crate::tensor::{cross_entropy_loss, Mode, OptimizerState, SgdParams, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// `[background, iris]` loss weights; unweighted when absent.
    pub class_weights: Option<[f32; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 4,
            seed: 0,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdParams {
        SgdParams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f32>,
    pub steps: usize,
}

/// Weights `total / (2 · count_c)` so both classes contribute equally.
pub fn inverse_frequency_weights(masks: &[&Mask]) -> Result<[f32; 2]> {
    let total: usize = masks.iter().map(|m| m.bits().len()).sum();
    let iris: usize = masks.iter().map(|m| m.count()).sum();
    let bg = total - iris;
    if iris == 0 || bg == 0 {
        return Err(Error::config("class weights need both classes present"));
    }
    Ok([total as f32 / (2.0 * bg as f32), total as f32 / (2.0 * iris as f32)])
}

pub fn train(model: Model, data: &[(Tensor, Mask)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, cfg, |_, _| {})
}

/// Mini-batch SGD over `data` for `cfg.epochs` epochs; `on_epoch` receives
/// each epoch index and its mean loss. The returned model is in inference
/// mode.
pub fn train_with(
    mut model: Model,
    data: &[(Tensor, Mask)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f32),
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let (h, w) = model.config.input_size;
    for (i, (img, mask)) in data.iter().enumerate() {
        if img.shape() != [1, h, w] || mask.dims() != (h, w) {
            return Err(Error::shape(format!(
                "training pair {i}: image {:?} / mask {}x{} vs model input {h}x{w}",
                img.shape(),
                mask.width(),
                mask.height()
            )));
        }
    }
    model.mode = Mode::Train;
    let mut opt = OptimizerState::new(cfg.sgd(), model.parameters());
    let mut rng = Stream::fork(cfg.seed, 0x7a1_4e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let mut pixels = Vec::with_capacity(chunk.len() * h * w);
            for &i in chunk {
                pixels.extend_from_slice(data[i].0.data());
            }
            let batch = Tensor::new(&[chunk.len(), 1, h, w], pixels)?;
            let targets: Vec<&Mask> = chunk.iter().map(|&i| &data[i].1).collect();

            model.zero_grad();
            let (probs, trace) = model.forward_train(&batch)?;
            let (loss, grad) = cross_entropy_loss(&probs, &targets, cfg.class_weights)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            model.backward(trace, grad)?;
            opt.step(&mut model.parameters_mut())?;
            if model.parameters().iter().any(|p| p.check_finite("parameter").is_err()) {
                return Err(Error::Divergence { epoch, step, loss });
            }
            epoch_loss += loss as f64 * chunk.len() as f64;
            step += 1;
        }
        let mean = (epoch_loss / data.len() as f64) as f32;
        history.push(mean);
        on_epoch(epoch, mean);
    }
    model.zero_grad();
    model.mode = Mode::Infer;
    Ok(TrainOutcome {
        model,
        loss_history: history,
        steps: step,
    })
}

/// Per-pixel argmax (iris only when strictly more probable), replicated up to
/// `target_size = (H', W')`, which must be an integer multiple of the input.
pub fn predict_mask(model: &Model, image: &Tensor, target_size: (usize, usize)) -> Result<Mask> {
    let probs = model.forward(image)?;
    let (h, w) = model.config.input_size;
    let plane = h * w;
    let p = probs.data();
    let bits = (0..plane).map(|i| p[plane + i] > p[i]).collect();
    let native = Mask::from_bits(w, h, bits)?;
    upscale_mask_to(&native, target_size)
}

/// Downsamples a full-size image to the model input, predicts, and returns a
/// mask at the image's own size.
pub fn segment_image(model: &Model, image: &GrayImage) -> Result<Mask> {
    let small = downsample_image(image, model.config.input_size)?;
    predict_mask(
        model,
        &image_to_tensor(&small),
        (image.height() as usize, image.width() as usize),
    )
}

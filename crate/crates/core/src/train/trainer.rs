use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::loss::{total_loss, weight_map};
use crate::config::{self, Settings};
use crate::data::{batch, resize_pair, Sample};
use crate::error::{Error, Result};
use crate::model::{Binder, CaraNet};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub scales: Vec<f64>,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 4,
            scales: vec![0.75, 1.0, 1.25],
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("scales must be a non-empty list of positive numbers"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

impl Settings for TrainConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = config::parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = config::parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = config::parse(key, v)?,
            "adam_eps" => self.adam_eps = config::parse(key, v)?,
            "epochs" => self.epochs = config::parse(key, v)?,
            "batch_size" => self.batch_size = config::parse(key, v)?,
            "scales" => self.scales = config::parse_list(key, v)?,
            "seed" => self.seed = config::parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = config::parse(key, v)?,
            _ => return Err(config::unknown_key(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("scales", config::join(&self.scales)),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }
}

/// `base * scale` rounded to the nearest multiple of 32 (ties away from
/// zero).
pub fn scaled_extent(base: usize, scale: f64) -> Result<usize> {
    let e = ((base as f64 * scale) / 32.0).round() as usize * 32;
    if e == 0 {
        return Err(Error::invalid(format!("scale {scale} shrinks extent {base} to nothing")));
    }
    Ok(e)
}

/// One forward/backward/update on a prepared batch. Returns the total loss.
pub fn train_step(model: &mut CaraNet<f32>, opt: &mut Adam<f32>, images: &Tensor<f32>, masks: &Tensor<f32>) -> Result<f64> {
    let weights = weight_map(masks)?;
    let tape = Tape::new();
    let b = Binder::new(&tape, &model.params, true);
    let preds = model.forward(&b, tape.constant(images.clone()))?;
    let loss = total_loss(&preds, tape.constant(masks.clone()), tape.constant(weights))?.total;
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss became {value}")));
    }
    let grads = b.grads(&loss.backward()?);
    drop(b);
    opt.step(&mut model.params, &grads)?;
    Ok(value)
}

/// For each scale: resize the batch (masks re-binarized at 0.5), then take
/// one optimizer step. Returns the loss of each step.
pub fn multiscale_step(
    model: &mut CaraNet<f32>,
    opt: &mut Adam<f32>,
    images: &Tensor<f32>,
    masks: &Tensor<f32>,
    scales: &[f64],
) -> Result<Vec<f64>> {
    let (_, _, h, w) = images.dims4()?;
    let mut losses = Vec::with_capacity(scales.len());
    for &s in scales {
        let extent = (scaled_extent(h, s)?, scaled_extent(w, s)?);
        let loss = if extent == (h, w) {
            train_step(model, opt, images, masks)?
        } else {
            let (img, msk) = resize_pair(images, masks, extent)?;
            train_step(model, opt, &img, &msk)?
        };
        losses.push(loss);
    }
    Ok(losses)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub scale: f64,
    pub loss: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "epoch,step,scale,loss";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.step, self.scale, self.loss)
    }
}

/// Mean loss of each epoch, in epoch order.
pub fn epoch_means(log: &[StepRecord]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in log {
        if out.len() < r.epoch {
            out.resize(r.epoch, (0.0, 0));
        }
        let slot = &mut out[r.epoch - 1];
        slot.0 += r.loss;
        slot.1 += 1;
    }
    out.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
}

/// Train for `cfg.epochs` epochs with a seeded per-epoch shuffle.
/// `on_step` sees every optimizer step; `on_epoch` runs after each epoch
/// (1-based) and may write checkpoints.
pub fn train(
    model: &mut CaraNet<f32>,
    opt: &mut Adam<f32>,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord) -> Result<()>,
    mut on_epoch: impl FnMut(usize, &CaraNet<f32>, &Adam<f32>) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (images, masks) = batch(&items)?;
            let losses = multiscale_step(model, opt, &images, &masks, &cfg.scales)?;
            for (&scale, loss) in cfg.scales.iter().zip(losses) {
                step += 1;
                let rec = StepRecord {
                    epoch,
                    step,
                    scale,
                    loss,
                };
                on_step(&rec)?;
                log.push(rec);
            }
        }
        on_epoch(epoch, model, opt)?;
    }
    Ok(log)
}

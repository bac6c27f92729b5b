//! Minibatch training with Adam and batched prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers;
use super::model::{images_to_tensor, Mode, ModelConfig, TrainedModel};
use crate::dataset::{Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, confusion, Metrics};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Seeds both weight initialization and minibatch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::argument("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::argument("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch cross-entropy over the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// One JSON object per line, one line per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch log serializes") + "\n")
            .collect()
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn check_dims(model_cfg: &ModelConfig, data: &LabeledDataset) -> Result<()> {
    match data.dims() {
        Some(d) if d != model_cfg.input => Err(Error::argument(format!(
            "{} split dims {d} do not match model input {}",
            data.split(),
            model_cfg.input
        ))),
        _ => Ok(()),
    }
}

fn argmax(logits: &[f64; 2]) -> Label {
    if logits[1] > logits[0] {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Mean cross-entropy and its gradient over the full parameter vector, using
/// batch statistics in batch norm. Running statistics are not touched.
pub fn loss_and_gradient(model: &TrainedModel, images: &[&Image], labels: &[Label]) -> Result<(f64, Vec<f64>)> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::argument("need equal, non-zero numbers of images and labels"));
    }
    for img in images {
        model.check_input(img.dims())?;
    }
    let arch = model.arch();
    let x = images_to_tensor(images);
    let (logits, cache) = arch.forward_train(model.parameters(), None, x);
    let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let (loss, dlogits) = layers::cross_entropy(&logits, &targets, 2);
    let mut grads = vec![0.0; model.parameters().len()];
    arch.backward(model.parameters(), &cache, &dlogits, &mut grads);
    Ok((loss, grads))
}

/// Trains a freshly initialized model. Deterministic in
/// `(train, val, mcfg, tcfg)`; parameters are rounded to `f32` precision at
/// the end so that a saved checkpoint reproduces the model exactly.
pub fn train(
    train: &LabeledDataset,
    val: &LabeledDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<TrainedModel> {
    tcfg.validate()?;
    mcfg.validate()?;
    if train.is_empty() {
        return Err(Error::argument("training set is empty"));
    }
    check_dims(mcfg, train)?;
    check_dims(mcfg, val)?;

    let mut model = TrainedModel::init(mcfg, tcfg.seed)?;
    let arch = model.arch().clone();
    let mut adam = Adam::new(model.parameters().len(), tcfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1);

    let samples = train.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = vec![0.0; model.parameters().len()];
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(tcfg.batch_size) {
            let images: Vec<&Image> = batch.iter().map(|&i| &samples[i].image).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| samples[i].label.index()).collect();
            let x = images_to_tensor(&images);
            let (logits, cache) = {
                let (params, buffers) = model.params_and_buffers_mut();
                arch.forward_train(params, Some(buffers), x)
            };
            let (loss, dlogits) = layers::cross_entropy(&logits, &targets, 2);
            if !loss.is_finite() {
                return Err(Error::numeric(Some(epoch), "training loss is not finite"));
            }
            loss_sum += loss * batch.len() as f64;
            correct += logits
                .chunks_exact(2)
                .zip(&targets)
                .filter(|(l, &t)| argmax(&[l[0], l[1]]).index() == t)
                .count();

            grads.fill(0.0);
            arch.backward(model.parameters(), &cache, &dlogits, &mut grads);
            adam.update(model.parameters_mut(), &grads);
        }

        let loss = loss_sum / samples.len() as f64;
        let val_metrics = if val.is_empty() {
            None
        } else {
            model.set_mode(Mode::Eval);
            let preds = predict(&model, val)?;
            model.set_mode(Mode::Train);
            Some(compute_metrics(&confusion(&preds, &val.labels())?)?)
        };
        log::info!(
            "epoch {epoch}/{}: loss {loss:.5}, train acc {:.4}{}",
            tcfg.epochs,
            correct as f64 / samples.len() as f64,
            val_metrics
                .as_ref()
                .map(|m| format!(", val {m}"))
                .unwrap_or_default()
        );
        model.log.epochs.push(EpochLog {
            epoch,
            loss,
            train_accuracy: correct as f64 / samples.len() as f64,
            val: val_metrics,
        });
    }

    for v in model.parameters_mut().iter_mut() {
        *v = *v as f32 as f64;
    }
    for v in model.buffers_mut().iter_mut() {
        *v = *v as f32 as f64;
    }
    if model.parameters().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(Some(tcfg.epochs), "non-finite parameters after training"));
    }
    model.set_mode(Mode::Eval);
    Ok(model)
}

/// Argmax label per sample (ties go to negative), in dataset order.
pub fn predict(model: &TrainedModel, data: &LabeledDataset) -> Result<Vec<Label>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.samples().chunks(32) {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        out.extend(model.forward_batch(&images)?.iter().map(argmax));
    }
    Ok(out)
}

/// Label for a single logit pair.
pub fn predict_label(logits: &[f64; 2]) -> Label {
    argmax(logits)
}

//! Finite-difference verification of the analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers;
use super::model::{images_to_tensor, ModelConfig, TrainedModel, Variant};
use super::train::loss_and_gradient;
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    /// Any parameter of the network.
    All,
    /// Only the final linear layer.
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Seeds the model initialization and the parameter sample.
    pub seed: u64,
    pub samples: usize,
    /// Central-difference half-width.
    pub step: f64,
    pub scope: GradScope,
    pub zero_head: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 0,
            samples: 200,
            step: 1e-6,
            scope: GradScope::All,
            zero_head: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Max of |analytic - numeric| / (|numeric| + 1e-8).
    pub max_relative_error: f64,
    /// Name and flat index of the worst parameter.
    pub worst: Option<(String, usize)>,
}

fn batch_loss(model: &TrainedModel, img: &Image, label: Label) -> f64 {
    let (logits, _) = model
        .arch()
        .forward_train(model.parameters(), None, images_to_tensor(&[img]));
    layers::cross_entropy(&logits, &[label.index()], 2).0
}

/// Compares backprop gradients of the single-image cross-entropy (batch
/// norm in training mode) against central differences on a sampled subset
/// of parameters. Restricted to the tiny variant.
pub fn gradient_check(
    mcfg: &ModelConfig,
    img: &Image,
    label: Label,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if mcfg.variant != Variant::Tiny {
        return Err(Error::argument("gradient check supports the tiny variant only"));
    }
    let mut model = TrainedModel::init(mcfg, opts.seed)?;
    if opts.zero_head {
        model.zero_head();
    }
    let (_, analytic) = loss_and_gradient(&model, &[img], &[label])?;

    let range = match opts.scope {
        GradScope::All => 0..model.parameters().len(),
        GradScope::HeadOnly => model.head_range(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(2);
    let amount = opts.samples.min(range.len());
    let mut picks: Vec<usize> = index::sample(&mut rng, range.len(), amount)
        .into_iter()
        .map(|i| range.start + i)
        .collect();
    picks.sort_unstable();

    let mut report = GradCheckReport {
        checked: picks.len(),
        max_relative_error: 0.0,
        worst: None,
    };
    for i in picks {
        let original = model.parameters()[i];
        model.parameters_mut()[i] = original + opts.step;
        let plus = batch_loss(&model, img, label);
        model.parameters_mut()[i] = original - opts.step;
        let minus = batch_loss(&model, img, label);
        model.parameters_mut()[i] = original;

        let numeric = (plus - minus) / (2.0 * opts.step);
        let rel = (analytic[i] - numeric).abs() / (numeric.abs() + 1e-8);
        if rel > report.max_relative_error || report.worst.is_none() {
            let name = model
                .layout()
                .iter()
                .find(|e| (e.offset..e.offset + e.len).contains(&i))
                .map(|e| e.name.clone())
                .unwrap_or_default();
            report.max_relative_error = report.max_relative_error.max(rel);
            report.worst = Some((name, i));
        }
    }
    Ok(report)
}

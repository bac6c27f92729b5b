//! End-to-end masked vs. unmasked comparison on synthetic data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{compute_metrics, confusion, fmt_opt, ConfusionMatrix, Metrics};
use crate::error::{Error, Result};
use crate::mask::{build_mask, mask_dataset, privacy_audit, MaskBuildReport, MaskSpec, PrivacyAudit};
use crate::nn::{encode_checkpoint, predict, train, ModelConfig, TrainConfig, TrainedModel, TrainingLog, Variant};
use crate::synth::{gen_dataset, DatasetCounts, DatasetSplits, FaceParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Master seed for data generation.
    pub seed: u64,
    pub params: FaceParams,
    pub counts: DatasetCounts,
    pub top_percent: f64,
    pub variant: Variant,
    /// `epochs` is the length of the final run.
    pub train: TrainConfig,
    pub use_mask: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            params: FaceParams::default(),
            counts: DatasetCounts::default(),
            top_percent: 29.0,
            variant: Variant::Tiny,
            train: TrainConfig::default(),
            use_mask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Row name in the comparison table.
    pub name: String,
    pub config: ExperimentConfig,
    pub mask: Option<MaskBuildReport>,
    pub mask_digest: Option<String>,
    pub privacy: Option<PrivacyAudit>,
    pub test_confusion: ConfusionMatrix,
    pub test_metrics: Metrics,
    pub checkpoint_sha256: String,
    pub training_log: TrainingLog,
}

pub fn row_name(use_mask: bool) -> &'static str {
    if use_mask {
        "Masked Images"
    } else {
        "Original Images"
    }
}

/// Trains on the (optionally masked) train split and scores the test split.
pub fn run_on_splits(cfg: &ExperimentConfig, splits: &DatasetSplits) -> Result<(ExperimentReport, TrainedModel)> {
    cfg.train.validate()?;
    let dims = splits
        .train
        .dims()
        .ok_or_else(|| Error::argument("experiment needs a non-empty train split"))?;
    if splits.test.is_empty() {
        return Err(Error::argument("experiment needs a non-empty test split"));
    }
    let mcfg = ModelConfig::for_variant(cfg.variant, dims);

    let (train_set, val_set, test_set, mask_info) = if cfg.use_mask {
        let (mask, report) = build_mask(&splits.train, &MaskSpec::new(cfg.top_percent, dims)?)?;
        let audit = match splits.train.landmarks() {
            Some(boxes) => Some(privacy_audit(&mask, boxes)?),
            None => None,
        };
        (
            mask_dataset(&splits.train, &mask)?,
            mask_dataset(&splits.val, &mask)?,
            mask_dataset(&splits.test, &mask)?,
            Some((report, mask.digest(), audit)),
        )
    } else {
        (splits.train.clone(), splits.val.clone(), splits.test.clone(), None)
    };

    let model = train(&train_set, &val_set, &mcfg, &cfg.train)?;
    let test_confusion = confusion(&predict(&model, &test_set)?, &test_set.labels())?;
    let test_metrics = compute_metrics(&test_confusion)?;
    let (mask, mask_digest, privacy) = match mask_info {
        Some((r, d, a)) => (Some(r), Some(d), a),
        None => (None, None, None),
    };
    let report = ExperimentReport {
        name: row_name(cfg.use_mask).to_string(),
        config: cfg.clone(),
        mask,
        mask_digest,
        privacy,
        test_confusion,
        test_metrics,
        checkpoint_sha256: hex::encode(Sha256::digest(encode_checkpoint(&model))),
        training_log: model.log.clone(),
    };
    Ok((report, model))
}

/// Generates the splits from `cfg.seed`, then runs [`run_on_splits`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentReport, TrainedModel)> {
    cfg.train.validate()?;
    let splits = gen_dataset(cfg.seed, &cfg.counts, &cfg.params)?;
    run_on_splits(cfg, &splits)
}

/// Markdown table with one row per report and four metric columns.
pub fn comparison_table(reports: &[&ExperimentReport]) -> String {
    let rows: Vec<(&str, &Metrics)> = reports.iter().map(|r| (r.name.as_str(), &r.test_metrics)).collect();
    metrics_table(&rows)
}

pub fn metrics_table(rows: &[(&str, &Metrics)]) -> String {
    let mut out = String::from("| Images Used | Accuracy | Recall | Precision | F1 |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (name, m) in rows {
        writeln!(
            out,
            "| {} | {:.4} | {} | {} | {} |",
            name,
            m.accuracy,
            fmt_opt(m.recall, 4),
            fmt_opt(m.precision, 4),
            fmt_opt(m.f1, 4)
        )
        .unwrap();
    }
    out
}

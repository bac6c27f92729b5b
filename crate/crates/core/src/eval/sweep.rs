//! Mask-threshold selection by short validation runs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, confusion, ConfusionMatrix, Metrics};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mask::{build_mask, mask_dataset, MaskBuildReport, MaskSpec};
use crate::nn::{predict, train, ModelConfig, TrainConfig};

/// F1 values closer than this count as equal; the smaller threshold wins.
pub const F1_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Candidate top-percent thresholds, evaluated in ascending order.
    pub thresholds: Vec<f64>,
    pub sweep_epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            thresholds: (20..=35).map(f64::from).collect(),
            sweep_epochs: 3,
        }
    }
}

impl SweepConfig {
    /// Inclusive integer range `start..=end`.
    pub fn range(start: u32, end: u32, sweep_epochs: usize) -> Self {
        SweepConfig {
            thresholds: (start..=end).map(f64::from).collect(),
            sweep_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub t: f64,
    pub mask: MaskBuildReport,
    pub mask_digest: String,
    pub val_confusion: ConfusionMatrix,
    pub val: Metrics,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub selected_t: f64,
}

/// Highest validation F1; undefined F1 ranks below every defined value and
/// near-ties go to the smaller threshold.
pub fn select_threshold(records: &[SweepRecord]) -> Option<f64> {
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut best: Option<(&SweepRecord, Option<f64>)> = None;
    for rec in sorted {
        let better = match (best, rec.val.f1) {
            (None, _) => true,
            (Some((_, None)), Some(_)) => true,
            (Some((_, Some(b))), Some(f)) => f > b + F1_TIE_TOLERANCE,
            (Some(_), None) => false,
        };
        if better {
            best = Some((rec, rec.val.f1));
        }
    }
    best.map(|(r, _)| r.t)
}

/// For each threshold: build the mask from the training positives, mask
/// train and val, train for `sweep_epochs`, and score on val.
pub fn sweep(
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    cfg: &SweepConfig,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<SweepOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::argument("sweep needs non-empty train and val splits"));
    }
    if cfg.thresholds.is_empty() {
        return Err(Error::argument("sweep needs at least one threshold"));
    }
    let dims = train_set.dims().expect("non-empty");
    let short = TrainConfig {
        epochs: cfg.sweep_epochs,
        ..tcfg.clone()
    };
    let mut thresholds = cfg.thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut records = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let (mask, report) = build_mask(train_set, &MaskSpec::new(t, dims)?)?;
        let masked_train = mask_dataset(train_set, &mask)?;
        let masked_val = mask_dataset(val_set, &mask)?;
        let model = train(&masked_train, &masked_val, mcfg, &short)?;
        let cm = confusion(&predict(&model, &masked_val)?, &masked_val.labels())?;
        let val = compute_metrics(&cm)?;
        log::info!("sweep t={t}: retention {:.4}, val {val}", report.retention_fraction);
        records.push(SweepRecord {
            t,
            mask_digest: mask.digest(),
            mask: report,
            val_confusion: cm,
            val,
            epochs: cfg.sweep_epochs,
        });
    }
    let selected_t = select_threshold(&records).expect("records non-empty");
    Ok(SweepOutcome { records, selected_t })
}

fn csv_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

/// `t,retention_fraction,threshold_value,accuracy,recall,precision,f1`.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("t,retention_fraction,threshold_value,accuracy,recall,precision,f1\n");
    for r in records {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{},{}",
            r.t,
            r.mask.retention_fraction,
            r.mask.threshold_value,
            r.val.accuracy,
            csv_num(r.val.recall),
            csv_num(r.val.precision),
            csv_num(r.val.f1)
        )
        .unwrap();
    }
    out
}

/// Line chart of the validation metrics against the threshold.
pub fn sweep_svg(records: &[SweepRecord], selected_t: Option<f64>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let ts: Vec<f64> = records.iter().map(|r| r.t).collect();
    let t_min = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if t_max > t_min { t_max - t_min } else { 1.0 };
    let x = |t: f64| M + (t - t_min) / span * (W - 2.0 * M);
    let y = |v: f64| H - M - v * (H - 2.0 * M);

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<line x1="{M}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{0}" stroke="black"/>"#,
        H - M,
        W - M
    )
    .unwrap();
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{tick:.2}</text>"#,
            M - 6.0,
            y(tick) + 4.0
        )
        .unwrap();
    }
    for &t in &ts {
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{t}</text>"#,
            x(t),
            H - M + 16.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">top percent t</text>"#,
        W / 2.0,
        H - 10.0
    )
    .unwrap();

    let series: [(&str, &str, fn(&Metrics) -> Option<f64>); 4] = [
        ("accuracy", "#1f77b4", |m| Some(m.accuracy)),
        ("recall", "#ff7f0e", |m| m.recall),
        ("precision", "#2ca02c", |m| m.precision),
        ("f1", "#d62728", |m| m.f1),
    ];
    for (i, (name, color, get)) in series.iter().enumerate() {
        let points: Vec<String> = records
            .iter()
            .filter_map(|r| get(&r.val).map(|v| format!("{:.1},{:.1}", x(r.t), y(v))))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = M + 14.0 * i as f64;
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{name}</text>"#,
            W - M - 70.0
        )
        .unwrap();
    }
    if let Some(t) = selected_t {
        writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{M}" x2="{0:.1}" y2="{1}" stroke="#555" stroke-dasharray="4 3"/>"##,
            x(t),
            H - M
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageDims;

    fn record(t: f64, f1: Option<f64>) -> SweepRecord {
        SweepRecord {
            t,
            mask: MaskBuildReport {
                spec: MaskSpec::new(t, ImageDims::canonical()).unwrap(),
                threshold_value: 0.5,
                retention_fraction: t / 100.0,
                tie_count_at_threshold: 1,
            },
            mask_digest: String::new(),
            val_confusion: ConfusionMatrix::new(1, 1, 0, 0),
            val: Metrics {
                accuracy: 1.0,
                recall: Some(1.0),
                precision: Some(1.0),
                f1,
            },
            epochs: 3,
        }
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_threshold(&[record(29.0, Some(0.5))]), Some(29.0));
        assert_eq!(select_threshold(&[record(22.0, Some(0.8)), record(21.0, Some(0.8))]), Some(21.0));
        assert_eq!(select_threshold(&[record(20.0, Some(0.8)), record(21.0, Some(0.8 + 1e-12))]), Some(20.0));
        assert_eq!(select_threshold(&[record(20.0, Some(0.8)), record(21.0, Some(0.81))]), Some(21.0));
        assert_eq!(select_threshold(&[record(20.0, None), record(30.0, Some(0.1))]), Some(30.0));
        assert_eq!(select_threshold(&[record(25.0, None), record(24.0, None)]), Some(24.0));
        assert_eq!(select_threshold(&[]), None);
    }

    #[test]
    fn default_range_has_sixteen_points() {
        let cfg = SweepConfig::default();
        assert_eq!(cfg.thresholds.len(), 16);
        assert_eq!(cfg.thresholds[0], 20.0);
        assert_eq!(cfg.sweep_epochs, 3);
    }

    #[test]
    fn csv_layout() {
        let mut rec = record(20.0, None);
        rec.val.precision = None;
        let csv = sweep_csv(&[rec, record(21.0, Some(0.75))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,retention_fraction,threshold_value,accuracy,recall,precision,f1");
        assert_eq!(lines[1], "20,0.200000,0.500000,1.000000,1.000000,NA,NA");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn svg_has_four_series() {
        let svg = sweep_svg(&[record(20.0, Some(0.5)), record(21.0, Some(0.6))], Some(21.0));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

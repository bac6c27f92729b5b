//! Command-line front end.
//!
//! Output layout under the output root:
//!
//! ```text
//! data/{train,val,test}/{pos,neg}/*.png, data/manifest.json
//! mask/mask.png, mask/mask.json, mask/audit.json
//! sweep/sweep.csv, sweep/sweep.svg, sweep/sweep.json
//! runs/{masked,original}/model.ckpt, train_log.jsonl, metrics.json
//! report.md
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, OUTPUT_ROOT_ENV};
use crate::dataset::{split_dir, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, confusion, metrics_table, row_name, run_on_splits, sweep, sweep_csv, sweep_svg, ConfusionMatrix,
    ExperimentConfig, Metrics, SweepConfig,
};
use crate::mask::{build_mask, mask_dataset, privacy_audit, BinaryMask, LandmarkBoxes, MaskSpec};
use crate::nn::{encode_checkpoint, load_checkpoint, predict, train, ModelConfig, Variant};
use crate::synth::{gen_dataset, SynthManifest};

#[derive(Debug, Parser)]
#[command(name = "redmask", version, about = "Redness-informed facial masking and rosacea classification")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that take precedence over the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; also settable through REDMASK_OUTPUT_ROOT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub top_percent: Option<f64>,
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// Train and evaluate on unmasked images.
    #[arg(long, global = true)]
    pub no_mask: bool,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s {
        "tiny" => Ok(Variant::Tiny),
        "resnet18" => Ok(Variant::Resnet18),
        _ => Err(format!("unknown variant {s:?}; expected tiny or resnet18")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/val/test splits.
    Synth,
    #[command(subcommand)]
    Mask(MaskCommand),
    /// Pick the mask threshold by short validation runs.
    Sweep {
        #[arg(long)]
        from: Option<u32>,
        #[arg(long)]
        to: Option<u32>,
        #[arg(long)]
        sweep_epochs: Option<usize>,
    },
    /// Train a classifier and write its checkpoint.
    Train,
    /// Score a trained checkpoint on the test split.
    Eval,
    /// Measure how much of the landmark boxes a mask keeps.
    Audit {
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Print the masked vs. unmasked comparison table.
    Report,
    /// Run both the masked and unmasked pipelines and write the report.
    Experiment,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Subcommand)]
pub enum MaskCommand {
    /// Build the mask from the training positives.
    Build,
    /// Multiply a mask into every image of a dataset tree.
    Apply {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
}

/// Test-split scores for one trained run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub name: String,
    pub use_mask: bool,
    pub mask_digest: Option<String>,
    pub checkpoint_sha256: String,
    pub test_confusion: ConfusionMatrix,
    pub test_metrics: Metrics,
}

struct Paths {
    root: PathBuf,
}

impl Paths {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn manifest(&self) -> PathBuf {
        self.data().join("manifest.json")
    }
    fn mask_dir(&self) -> PathBuf {
        self.root.join("mask")
    }
    fn mask(&self) -> PathBuf {
        self.mask_dir().join("mask.png")
    }
    fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }
    fn run_dir(&self, use_mask: bool) -> PathBuf {
        self.root.join("runs").join(if use_mask { "masked" } else { "original" })
    }
}

/// Resolves config file, environment, and flags in increasing priority.
pub fn resolve_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
        cfg.output_dir = PathBuf::from(root);
    }
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(t) = o.top_percent {
        cfg.top_percent = t;
    }
    if let Some(v) = o.variant {
        cfg.variant = v;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = o.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = o.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if o.no_mask {
        cfg.use_mask = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn require(path: &Path, what: &str, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing {what}; run `redmask {hint}` first")),
        ))
    }
}

fn load_split(paths: &Paths, split: Split) -> Result<LabeledDataset> {
    LabeledDataset::load(&paths.data(), split, None)
}

fn load_mask_for(paths: &Paths) -> Result<BinaryMask> {
    let path = paths.mask();
    require(&path, "mask", "mask build")?;
    BinaryMask::load(&path)
}

fn landmarks_for(paths: &Paths, cfg: &RunConfig) -> Result<LandmarkBoxes> {
    let manifest = paths.manifest();
    if manifest.is_file() {
        Ok(read_json::<SynthManifest>(&manifest)?.landmarks)
    } else {
        cfg.params.landmarks()
    }
}

fn cmd_synth(cfg: &RunConfig, paths: &Paths) -> Result<()> {
    let splits = gen_dataset(cfg.seed, &cfg.counts, &cfg.params)?;
    let root = paths.data();
    for split in Split::ALL {
        splits.get(split).save(&root)?;
    }
    let manifest = SynthManifest {
        seed: cfg.seed,
        dims: cfg.params.dims()?,
        counts: cfg.counts.clone(),
        params: cfg.params.clone(),
        landmarks: cfg.params.landmarks()?,
    };
    write_json(&paths.manifest(), &manifest)?;
    for split in Split::ALL {
        let d = splits.get(split);
        println!("{split}: {} images ({} positive)", d.len(), d.count(crate::dataset::Label::Positive));
    }
    println!("wrote {}", root.display());
    Ok(())
}

fn cmd_mask_build(cfg: &RunConfig, paths: &Paths) -> Result<()> {
    let train_set = load_split(paths, Split::Train)?;
    let dims = train_set
        .dims()
        .ok_or_else(|| Error::argument("training split has no images"))?;
    let (mask, report) = build_mask(&train_set, &MaskSpec::new(cfg.top_percent, dims)?)?;
    let dir = paths.mask_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    mask.save(paths.mask())?;
    write_json(&paths.mask_dir().join("mask.json"), &report)?;
    println!(
        "mask t={}: {} of {} pixels kept (retention {:.4})",
        cfg.top_percent,
        mask.selected_count(),
        dims.pixel_count(),
        report.retention_fraction
    );
    Ok(())
}

fn cmd_mask_apply(paths: &Paths, input: &Path, output: &Path, mask: Option<&Path>) -> Result<()> {
    let mask = match mask {
        Some(p) => BinaryMask::load(p)?,
        None => load_mask_for(paths)?,
    };
    let mut done = 0;
    for split in Split::ALL {
        if !split_dir(input, split).is_dir() {
            continue;
        }
        let data = LabeledDataset::load(input, split, None)?;
        mask_dataset(&data, &mask)?.save(output)?;
        println!("{split}: masked {} images", data.len());
        done += 1;
    }
    if done == 0 {
        return Err(Error::io(
            input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no train/val/test directories"),
        ));
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, paths: &Paths, from: Option<u32>, to: Option<u32>, epochs: Option<usize>) -> Result<()> {
    let mut scfg = cfg.sweep.clone();
    if from.is_some() || to.is_some() {
        let lo = from.unwrap_or(20);
        let hi = to.unwrap_or(35);
        if lo > hi || lo == 0 || hi > 100 {
            return Err(Error::Config(format!("bad sweep range {lo}..={hi}")));
        }
        scfg = SweepConfig::range(lo, hi, scfg.sweep_epochs);
    }
    if let Some(e) = epochs {
        if e == 0 {
            return Err(Error::Config("sweep_epochs must be at least 1".into()));
        }
        scfg.sweep_epochs = e;
    }
    let train_set = load_split(paths, Split::Train)?;
    let val_set = load_split(paths, Split::Val)?;
    let dims = train_set
        .dims()
        .ok_or_else(|| Error::argument("training split has no images"))?;
    let mcfg = ModelConfig::for_variant(cfg.variant, dims);
    let outcome = sweep(&train_set, &val_set, &scfg, &mcfg, &cfg.train_config())?;
    let dir = paths.sweep_dir();
    write_file(&dir.join("sweep.csv"), sweep_csv(&outcome.records))?;
    write_file(&dir.join("sweep.svg"), sweep_svg(&outcome.records, Some(outcome.selected_t)))?;
    write_json(&dir.join("sweep.json"), &outcome)?;
    println!("{}", outcome.selected_t);
    Ok(())
}

fn cmd_train(cfg: &RunConfig, paths: &Paths) -> Result<()> {
    let mut train_set = load_split(paths, Split::Train)?;
    let mut val_set = load_split(paths, Split::Val)?;
    if cfg.use_mask {
        let mask = load_mask_for(paths)?;
        train_set = mask_dataset(&train_set, &mask)?;
        val_set = mask_dataset(&val_set, &mask)?;
    }
    let dims = train_set
        .dims()
        .ok_or_else(|| Error::argument("training split has no images"))?;
    let model = train(&train_set, &val_set, &ModelConfig::for_variant(cfg.variant, dims), &cfg.train_config())?;
    let dir = paths.run_dir(cfg.use_mask);
    let ckpt = encode_checkpoint(&model);
    write_file(&dir.join("model.ckpt"), &ckpt)?;
    write_file(&dir.join("train_log.jsonl"), model.log.to_json_lines())?;
    if let Some(last) = model.log.epochs.last() {
        println!("epoch {}: loss {:.5}, train acc {:.4}", last.epoch, last.loss, last.train_accuracy);
    }
    println!("wrote {}", dir.join("model.ckpt").display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, paths: &Paths) -> Result<()> {
    let dir = paths.run_dir(cfg.use_mask);
    let ckpt_path = dir.join("model.ckpt");
    require(&ckpt_path, "checkpoint", if cfg.use_mask { "train" } else { "train --no-mask" })?;
    let model = load_checkpoint(&ckpt_path)?;
    let mut test_set = load_split(paths, Split::Test)?;
    let mut mask_digest = None;
    if cfg.use_mask {
        let mask = load_mask_for(paths)?;
        test_set = mask_dataset(&test_set, &mask)?;
        mask_digest = Some(mask.digest());
    }
    if test_set.is_empty() {
        return Err(Error::argument("test split has no images"));
    }
    let cm = confusion(&predict(&model, &test_set)?, &test_set.labels())?;
    let metrics = compute_metrics(&cm)?;
    let record = RunMetrics {
        name: row_name(cfg.use_mask).to_string(),
        use_mask: cfg.use_mask,
        mask_digest,
        checkpoint_sha256: hex::encode(Sha256::digest(encode_checkpoint(&model))),
        test_confusion: cm,
        test_metrics: metrics,
    };
    write_json(&dir.join("metrics.json"), &record)?;
    println!("{}: {metrics}", record.name);
    Ok(())
}

fn cmd_audit(cfg: &RunConfig, paths: &Paths, mask: Option<&Path>) -> Result<()> {
    let mask = match mask {
        Some(p) => BinaryMask::load(p)?,
        None => load_mask_for(paths)?,
    };
    let audit = privacy_audit(&mask, &landmarks_for(paths, cfg)?)?;
    write_json(&paths.mask_dir().join("audit.json"), &audit)?;
    for r in &audit.regions {
        println!("{}: {:.4}", r.region, r.fraction);
    }
    println!("identity region retention: {:.4}", audit.identity_region_retention);
    Ok(())
}

fn cmd_report(paths: &Paths) -> Result<()> {
    let mut runs = Vec::new();
    for use_mask in [false, true] {
        let path = paths.run_dir(use_mask).join("metrics.json");
        if path.is_file() {
            runs.push(read_json::<RunMetrics>(&path)?);
        }
    }
    if runs.is_empty() {
        let path = paths.root.join("runs");
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no evaluated runs; run `redmask eval` first"),
        ));
    }
    let rows: Vec<(&str, &Metrics)> = runs.iter().map(|r| (r.name.as_str(), &r.test_metrics)).collect();
    let table = metrics_table(&rows);
    write_file(&paths.root.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, paths: &Paths) -> Result<()> {
    let splits = gen_dataset(cfg.seed, &cfg.counts, &cfg.params)?;
    let mut rows = Vec::new();
    for use_mask in [false, true] {
        let ecfg = ExperimentConfig {
            use_mask,
            ..cfg.experiment()
        };
        let (report, model) = run_on_splits(&ecfg, &splits)?;
        let dir = paths.run_dir(use_mask);
        write_file(&dir.join("model.ckpt"), encode_checkpoint(&model))?;
        write_file(&dir.join("train_log.jsonl"), model.log.to_json_lines())?;
        write_json(&dir.join("experiment.json"), &report)?;
        write_json(
            &dir.join("metrics.json"),
            &RunMetrics {
                name: report.name.clone(),
                use_mask,
                mask_digest: report.mask_digest.clone(),
                checkpoint_sha256: report.checkpoint_sha256.clone(),
                test_confusion: report.test_confusion,
                test_metrics: report.test_metrics,
            },
        )?;
        if let Some(audit) = &report.privacy {
            println!("identity region retention: {:.4}", audit.identity_region_retention);
        }
        rows.push(report);
    }
    let table_rows: Vec<(&str, &Metrics)> = rows.iter().map(|r| (r.name.as_str(), &r.test_metrics)).collect();
    let table = metrics_table(&table_rows);
    write_file(&paths.root.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.overrides)?;
    let paths = Paths {
        root: cfg.output_dir.clone(),
    };
    match cli.command {
        Command::Synth => cmd_synth(&cfg, &paths),
        Command::Mask(MaskCommand::Build) => cmd_mask_build(&cfg, &paths),
        Command::Mask(MaskCommand::Apply { input, output, mask }) => {
            cmd_mask_apply(&paths, &input, &output, mask.as_deref())
        }
        Command::Sweep { from, to, sweep_epochs } => cmd_sweep(&cfg, &paths, from, to, sweep_epochs),
        Command::Train => cmd_train(&cfg, &paths),
        Command::Eval => cmd_eval(&cfg, &paths),
        Command::Audit { mask } => cmd_audit(&cfg, &paths, mask.as_deref()),
        Command::Report => cmd_report(&paths),
        Command::Experiment => cmd_experiment(&cfg, &paths),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

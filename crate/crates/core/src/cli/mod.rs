//! Command-line front end: `generate`, `train`, `eval`, `baseline`, `sweep`.
//!
//! Commands write human-readable progress to the supplied writer and their
//! artifacts to the output directory. A training run directory holds
//! `checkpoint.bin`, `metrics.csv` and `run.json`.

mod mrdrm;
mod train;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use mrdrm::{argmin, Mrdrm};
pub use train::{
    accuracy, predict_batched, read_metrics, train, write_metrics, EpochMetrics, TrainConfig, METRICS_SCHEMA,
};

use crate::data::{derive_seed, load_dataset, save_dataset, subsample, Dataset, GeneratorParams};
use crate::error::{Error, Result};
use crate::manifold::KarcherConfig;
use crate::net::{load_checkpoint, save_checkpoint, Checkpoint, SpdBatch};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_FILE: &str = "run.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SCHEMA: &str = "# spdnet-sweep v1";

#[derive(Debug, Parser)]
#[command(
    name = "spdnet",
    version,
    about = "SPD matrix networks with Riemannian batch normalization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic covariance dataset.
    Generate(GenerateArgs),
    /// Train a network and write its checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Fit and evaluate the minimum-distance-to-mean baseline.
    Baseline(BaselineArgs),
    /// Accuracy versus training-set fraction for every model.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Points per class.
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    #[arg(long, default_value_t = 20)]
    pub window_len: usize,
    #[arg(long, default_value_t = 64)]
    pub windows: usize,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Comma-separated matrix sizes, input first.
    #[arg(long, value_delimiter = ',', default_value = "20,16,8")]
    pub dims: Vec<usize>,
    /// Insert Riemannian batch normalization after every BiMap layer (default).
    #[arg(long, overrides_with = "no_rbn")]
    pub rbn: bool,
    #[arg(long, overrides_with = "rbn")]
    pub no_rbn: bool,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 30)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps_reeig: f64,
    #[arg(long, default_value_t = 10)]
    pub karcher_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            dims: self.dims.clone(),
            use_rbn: !self.no_rbn,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            reeig_eps: self.eps_reeig,
            karcher_iters: self.karcher_iters,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long, default_value_t = 30)]
    pub batch_size: usize,
    /// Directory for the JSON report; none is written when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub karcher_iters: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated fractions of the training split, each in (0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Accuracy and confusion matrix; `confusion[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub split: SplitName,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl Report {
    pub fn new(model: &str, split: SplitName, pred: &[usize], labels: &[usize], num_classes: usize) -> Self {
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        for (&p, &l) in pred.iter().zip(labels) {
            confusion[l][p] += 1;
        }
        Report {
            model: model.into(),
            split,
            accuracy: accuracy(pred, labels),
            confusion,
        }
    }

    fn print(&self, w: &mut dyn Write) -> std::io::Result<()> {
        writeln!(
            w,
            "{} accuracy on {} split: {:.4}",
            self.model,
            self.split.as_str(),
            self.accuracy
        )?;
        writeln!(w, "confusion (rows: true class, columns: predicted)")?;
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            writeln!(w, "{}", cells.join(""))?;
        }
        Ok(())
    }
}

/// One row of the sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub fraction: f64,
    pub seed: u64,
    pub accuracy: f64,
}

/// Recorded next to every training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunManifest {
    config: TrainConfig,
    dataset: PathBuf,
    dataset_digest: String,
    final_test_accuracy: f64,
}

/// SHA-256 over the sorted file names and contents of a directory (non-recursive).
pub fn directory_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    names.retain(|p| p.is_file());
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(p.file_name().expect("file").as_encoded_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

/// SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split_of(ds: &Dataset, split: SplitName) -> &SpdBatch {
    match split {
        SplitName::Train => &ds.train,
        SplitName::Test => &ds.test,
    }
}

pub fn cmd_generate(args: &GenerateArgs, w: &mut dyn Write) -> Result<Dataset> {
    let params = GeneratorParams {
        points_per_class: args.points,
        window_len: args.window_len,
        windows_per_point: args.windows,
        seed: args.seed,
        ..GeneratorParams::with_classes(args.classes)
    };
    let ds = Dataset::generate(&params, args.train_fraction, args.seed)?;
    save_dataset(&args.out, &ds)?;
    let m = &ds.manifest;
    writeln!(
        w,
        "wrote {} (dim {}, {} classes)",
        args.out.display(),
        m.dim,
        m.num_classes
    )
    .map_err(out_err)?;
    for c in 0..m.num_classes {
        writeln!(w, "class {c}: {} train, {} test", m.train_counts[c], m.test_counts[c]).map_err(out_err)?;
    }
    writeln!(w, "digest {}", directory_digest(&args.out)?).map_err(out_err)?;
    Ok(ds)
}

pub fn cmd_train(args: &TrainArgs, w: &mut dyn Write) -> Result<Checkpoint> {
    let cfg = args.model.config();
    cfg.validate()?;
    let ds = load_dataset(&args.dataset)?;
    create_dir(&args.out)?;
    let (net, history) = train(&cfg, &ds.train, &ds.test, ds.manifest.num_classes, |m| {
        writeln!(
            w,
            "epoch {:>4}  loss {:.5}  train {:.4}  test {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.test_acc
        )
        .map_err(out_err)
    })?;
    write_metrics(&args.out.join(METRICS_FILE), &history)?;
    let ckpt = Checkpoint {
        network: net,
        seed: cfg.seed,
        epoch: cfg.epochs,
    };
    save_checkpoint(&args.out.join(CHECKPOINT_FILE), &ckpt)?;
    let run = RunManifest {
        config: cfg,
        dataset: args.dataset.clone(),
        dataset_digest: directory_digest(&args.dataset)?,
        final_test_accuracy: history.last().map_or(0.0, |m| m.test_acc),
    };
    write_json(&args.out.join(RUN_FILE), &run)?;
    Ok(ckpt)
}

pub fn cmd_eval(args: &EvalArgs, w: &mut dyn Write) -> Result<Report> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.dataset)?;
    let spec = ckpt.network.spec();
    if spec.input_dim() != ds.manifest.dim || spec.num_classes != ds.manifest.num_classes {
        return Err(Error::InvalidInput(format!(
            "checkpoint expects {}x{} inputs and {} classes, dataset has {}x{} and {}",
            spec.input_dim(),
            spec.input_dim(),
            spec.num_classes,
            ds.manifest.dim,
            ds.manifest.dim,
            ds.manifest.num_classes
        )));
    }
    let batch = split_of(&ds, args.split);
    let pred = predict_batched(&ckpt.network, batch.items(), args.batch_size)?;
    let name = if spec.use_rbn { "spdnetbn" } else { "spdnet" };
    let report = Report::new(
        name,
        args.split,
        &pred,
        batch.labels().expect("labeled"),
        spec.num_classes,
    );
    report.print(w).map_err(out_err)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let split = args.split.as_str();
        write_json(&dir.join(format!("eval_{split}.json")), &report)?;
    }
    Ok(report)
}

fn karcher_cfg(iters: usize) -> KarcherConfig {
    KarcherConfig {
        max_iters: iters,
        ..KarcherConfig::default()
    }
}

fn mrdrm_report(train: &SpdBatch, test: &SpdBatch, num_classes: usize, iters: usize) -> Result<Report> {
    let model = Mrdrm::fit(train, num_classes, &karcher_cfg(iters))?;
    let pred = model.predict(test.items())?;
    Ok(Report::new(
        "mrdrm",
        SplitName::Test,
        &pred,
        test.labels().expect("labeled"),
        num_classes,
    ))
}

pub fn cmd_baseline(args: &BaselineArgs, w: &mut dyn Write) -> Result<Report> {
    let ds = load_dataset(&args.dataset)?;
    let report = mrdrm_report(&ds.train, &ds.test, ds.manifest.num_classes, args.karcher_iters)?;
    report.print(w).map_err(out_err)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_json(&dir.join("baseline.json"), &report)?;
    }
    Ok(report)
}

/// Runs every (fraction, repeat, model) combination. Repeat `r` uses seed
/// `seed + r` for training; its training subset is drawn with
/// `derive_seed(seed + r, fraction bits)` and shared by all three models.
/// The test split is always the full one.
pub fn run_sweep(
    ds: &Dataset,
    model: &ModelArgs,
    fractions: &[f64],
    repeats: usize,
    mut on_row: impl FnMut(&SweepRow) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be at least 1".into()));
    }
    if fractions.is_empty() {
        return Err(Error::InvalidInput("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidInput(format!("fraction {f} outside (0, 1]")));
    }
    let base = model.config();
    base.validate()?;
    let classes = ds.manifest.num_classes;
    let mut rows = Vec::new();
    for &fraction in fractions {
        for r in 0..repeats {
            let seed = base.seed.wrapping_add(r as u64);
            let train_set = subsample(&ds.train, fraction, derive_seed(seed, fraction.to_bits()))?;
            let mut push = |model: &str, accuracy: f64| -> Result<()> {
                let row = SweepRow {
                    model: model.into(),
                    fraction,
                    seed,
                    accuracy,
                };
                on_row(&row)?;
                rows.push(row);
                Ok(())
            };
            for (name, use_rbn) in [("spdnet", false), ("spdnetbn", true)] {
                let cfg = TrainConfig {
                    use_rbn,
                    seed,
                    ..base.clone()
                };
                let (_, history) = train(&cfg, &train_set, &ds.test, classes, |_| Ok(()))?;
                push(name, history.last().expect("epochs >= 1").test_acc)?;
            }
            let report = mrdrm_report(&train_set, &ds.test, classes, base.karcher_iters)?;
            push("mrdrm", report.accuracy)?;
        }
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut f = File::create(path).map_err(io)?;
    writeln!(f, "{SWEEP_SCHEMA}").map_err(io)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.position().map_or(0, |p| p.byte()), e.to_string())))
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs, w: &mut dyn Write) -> Result<Vec<SweepRow>> {
    let ds = load_dataset(&args.dataset)?;
    create_dir(&args.out)?;
    let test_digest = file_digest(&args.dataset.join(&ds.manifest.test_blob.file))?;
    writeln!(w, "test split digest {test_digest}").map_err(out_err)?;
    let rows = run_sweep(&ds, &args.model, &args.fractions, args.repeats, |r| {
        writeln!(
            w,
            "{:<9} fraction {:<5} seed {:<4} accuracy {:.4}",
            r.model, r.fraction, r.seed, r.accuracy
        )
        .map_err(out_err)
    })?;
    write_sweep(&args.out.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}

pub fn run(cli: &Cli, w: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, w).map(drop),
        Command::Train(a) => cmd_train(a, w).map(drop),
        Command::Eval(a) => cmd_eval(a, w).map(drop),
        Command::Baseline(a) => cmd_baseline(a, w).map(drop),
        Command::Sweep(a) => cmd_sweep(a, w).map(drop),
    }
}

//! Training loop and per-epoch metrics.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::manifold::KarcherConfig;
use crate::net::{Mode, Network, NetworkSpec, SpdBatch};
use crate::optim::{OptimConfig, Optimizer};

pub const METRICS_SCHEMA: &str = "# spdnet-metrics v1";

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dims: Vec<usize>,
    pub use_rbn: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub reeig_eps: f64,
    pub karcher_iters: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: vec![20, 16, 8],
            use_rbn: true,
            epochs: 200,
            batch_size: 30,
            lr: 1e-2,
            momentum: 0.9,
            reeig_eps: 1e-4,
            karcher_iters: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn network_spec(&self, num_classes: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::new(self.dims.clone(), num_classes, self.use_rbn);
        spec.reeig_eps = self.reeig_eps;
        spec.karcher = KarcherConfig {
            max_iters: self.karcher_iters,
            ..KarcherConfig::default()
        };
        spec
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            momentum: self.momentum,
            ..OptimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch size must be at least 1".into()));
        }
        self.optim_config().validate()?;
        self.network_spec(2).validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Eval-mode predictions computed `batch_size` items at a time.
pub fn predict_batched(net: &Network, items: &[crate::symlin::SpdMatrix], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        out.extend(net.predict(chunk)?);
    }
    Ok(out)
}

fn labels(batch: &SpdBatch) -> Result<&[usize]> {
    batch
        .labels()
        .ok_or_else(|| Error::InvalidInput("training needs labeled data".into()))
}

/// Trains a fresh network. Network initialization uses stream 0 of `cfg.seed`
/// and the shuffle of epoch `e` (1-based) uses stream `e`. `on_epoch` sees the
/// metrics of every epoch as soon as it ends.
pub fn train(
    cfg: &TrainConfig,
    train_set: &SpdBatch,
    test_set: &SpdBatch,
    num_classes: usize,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<(Network, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let spec = cfg.network_spec(num_classes);
    if spec.input_dim() != train_set.dim() || spec.input_dim() != test_set.dim() {
        return Err(Error::InvalidSpec(format!(
            "network input dim {} does not match data dim {}",
            spec.input_dim(),
            train_set.dim()
        )));
    }
    let train_labels = labels(train_set)?;
    let test_labels = labels(test_set)?;
    if let Some(&l) = train_labels.iter().chain(test_labels).find(|&&l| l >= num_classes) {
        return Err(Error::InvalidInput(format!("label {l} with {num_classes} classes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
    let mut net = Network::new(spec, &mut rng)?;
    let mut opt = Optimizer::new(cfg.optim_config(), &net)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let batch = train_set.select(idx)?;
            let out = net.forward(&batch, Mode::Train)?;
            loss_sum += out.loss.expect("labeled batch") * idx.len() as f64;
            let batch_labels = batch.labels().expect("labeled batch");
            hits += out
                .predictions()
                .iter()
                .zip(batch_labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = net.backward(&out.cache)?;
            opt.step(&mut net, &grads)?;
        }
        let n = train_set.len() as f64;
        let test_pred = predict_batched(&net, test_set.items(), cfg.batch_size)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            test_acc: accuracy(&test_pred, test_labels),
        };
        if !m.train_loss.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        on_epoch(&m)?;
        history.push(m);
    }
    Ok((net, history))
}

/// Writes the metrics CSV: a schema comment line, a header, one row per epoch.
pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut f = File::create(path).map_err(io)?;
    writeln!(f, "{METRICS_SCHEMA}").map_err(io)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let pos = e.position().map_or(0, |p| p.byte());
                Error::format(path, pos, e.to_string())
            })
        })
        .collect()
}

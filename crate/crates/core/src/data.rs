//! Synthetic covariance datasets.
//!
//! Each data point is one realization of a centered, stationary Gaussian
//! process. A class is described by a set of spectral lines; each line is a
//! carrier whose in-phase and quadrature amplitudes are slowly varying AR(1)
//! Gaussian processes, so the line has a narrow band around its frequency.
//! White noise is added on top. The series is cut into non-overlapping windows
//! of length `n` and summarized by the window sample covariance.
//!
//! Per-point nuisance (a random gain and a small random shift of every line)
//! keeps the classes overlapping enough that the task is not trivial.
//!
//! On disk a dataset is a directory holding `manifest.json`, `train.f64` and
//! `test.f64`; the blobs are little-endian f64, row-major, one matrix after the
//! other.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::SpdBatch;
use crate::symlin::SpdMatrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.f64";
pub const TEST_FILE: &str = "test.f64";
pub const DATASET_VERSION: u32 = 1;

/// Relative ridge added to every sample covariance, as a fraction of its mean eigenvalue.
pub const RIDGE_FACTOR: f64 = 1e-6;

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `index` under master `seed`: `splitmix64(seed ^ splitmix64(index))`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    /// Carrier frequency in cycles per sample, in (0, 0.5).
    pub freq: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub lines: Vec<SpectralLine>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub num_classes: usize,
    pub points_per_class: usize,
    pub window_len: usize,
    pub windows_per_point: usize,
    pub signatures: Vec<ClassSignature>,
    /// Standard deviation of the additive white noise.
    pub noise_floor: f64,
    /// AR(1) coefficient of the line amplitudes; closer to 1 means narrower lines.
    pub modulation_rho: f64,
    /// Standard deviation of the per-point log gain.
    pub gain_jitter: f64,
    /// Standard deviation of the per-point shift of every line frequency.
    pub freq_jitter: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams::with_classes(3)
    }
}

impl GeneratorParams {
    /// Default parameters with `num_classes` evenly staggered signatures.
    pub fn with_classes(num_classes: usize) -> Self {
        GeneratorParams {
            num_classes,
            points_per_class: 500,
            window_len: 20,
            windows_per_point: 64,
            signatures: default_signatures(num_classes),
            noise_floor: 1.0,
            modulation_rho: 0.9,
            gain_jitter: 0.6,
            freq_jitter: 0.015,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.num_classes == 0 || self.points_per_class == 0 {
            return bad("need at least one class and one point per class".into());
        }
        if self.window_len < 2 {
            return bad(format!("window length {} < 2", self.window_len));
        }
        if self.windows_per_point < self.window_len {
            return bad(format!(
                "{} windows per point cannot give a full-rank {}x{} covariance",
                self.windows_per_point, self.window_len, self.window_len
            ));
        }
        if self.signatures.len() != self.num_classes {
            return bad(format!(
                "{} signatures for {} classes",
                self.signatures.len(),
                self.num_classes
            ));
        }
        for (c, sig) in self.signatures.iter().enumerate() {
            for l in &sig.lines {
                if !(l.freq > 0.0 && l.freq < 0.5) {
                    return bad(format!("class {c}: frequency {} outside (0, 0.5)", l.freq));
                }
                if !(l.amplitude >= 0.0) || !l.amplitude.is_finite() {
                    return bad(format!(
                        "class {c}: amplitude {} is not a finite non-negative number",
                        l.amplitude
                    ));
                }
            }
        }
        if !(self.noise_floor >= 0.0) || !self.noise_floor.is_finite() {
            return bad(format!(
                "noise floor {} is not finite and non-negative",
                self.noise_floor
            ));
        }
        if !(0.0..1.0).contains(&self.modulation_rho) {
            return bad(format!("modulation coefficient {} outside [0, 1)", self.modulation_rho));
        }
        for (name, v) in [("gain", self.gain_jitter), ("frequency", self.freq_jitter)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} jitter {v} is not finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn series_len(&self) -> usize {
        self.window_len * self.windows_per_point
    }
}

/// Two lines per class: a strong carrier and a harmonic at half its amplitude,
/// with carriers spread evenly over `[0.06, 0.36)`.
pub fn default_signatures(num_classes: usize) -> Vec<ClassSignature> {
    (0..num_classes)
        .map(|c| {
            let f = 0.06 + 0.3 * c as f64 / num_classes as f64;
            ClassSignature {
                lines: vec![
                    SpectralLine {
                        freq: f,
                        amplitude: 12.0,
                    },
                    SpectralLine {
                        freq: (2.0 * f).min(0.45),
                        amplitude: 6.0,
                    },
                ],
            }
        })
        .collect()
}

/// One generated realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub label: usize,
    pub series: Vec<f64>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn generate_point(params: &GeneratorParams, label: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = params.series_len();
    let gain = (params.gain_jitter * normal(&mut rng)).exp();
    let rho = params.modulation_rho;
    let innov = (1.0 - rho * rho).sqrt();
    let mut x: Vec<f64> = (0..len).map(|_| params.noise_floor * normal(&mut rng)).collect();
    for line in &params.signatures[label].lines {
        let f = (line.freq + params.freq_jitter * normal(&mut rng)).clamp(1e-3, 0.5 - 1e-3);
        let (mut g1, mut g2) = (normal(&mut rng), normal(&mut rng));
        for (t, xt) in x.iter_mut().enumerate() {
            let phase = 2.0 * PI * f * t as f64;
            *xt += line.amplitude * (g1 * phase.cos() + g2 * phase.sin());
            g1 = rho * g1 + innov * normal(&mut rng);
            g2 = rho * g2 + innov * normal(&mut rng);
        }
    }
    x.iter_mut().for_each(|v| *v *= gain);
    x
}

/// All points, class-major. Point `i` of class `c` is drawn from the stream
/// `derive_seed(seed, c * points_per_class + i)`.
pub fn generate_signals(params: &GeneratorParams) -> Result<Vec<Signal>> {
    params.validate()?;
    let mut out = Vec::with_capacity(params.num_classes * params.points_per_class);
    for c in 0..params.num_classes {
        for i in 0..params.points_per_class {
            let idx = (c * params.points_per_class + i) as u64;
            out.push(Signal {
                label: c,
                series: generate_point(params, c, derive_seed(params.seed, idx)),
            });
        }
    }
    Ok(out)
}

/// Sample covariance of the non-overlapping length-`n` windows of `series`, plus
/// `RIDGE_FACTOR · tr(C)/n · I`. A series with zero power gets the ridge of a
/// unit-power one.
pub fn covariance_descriptor(series: &[f64], n: usize) -> Result<SpdMatrix> {
    if n == 0 || series.len() < 2 * n {
        return Err(Error::InvalidInput(format!(
            "series of length {} is too short for windows of length {n}",
            series.len()
        )));
    }
    let windows = series.len() / n;
    let x = DMatrix::from_column_slice(n, windows, &series[..n * windows]);
    let mut c = &x * x.transpose() / windows as f64;
    let power = c.trace() / n as f64;
    let ridge = RIDGE_FACTOR * if power > 0.0 { power } else { 1.0 };
    for i in 0..n {
        c[(i, i)] += ridge;
    }
    SpdMatrix::new(c)
}

/// Generated descriptors with their labels, class-major.
pub fn generate_descriptors(params: &GeneratorParams) -> Result<SpdBatch> {
    let signals = generate_signals(params)?;
    let mut items = Vec::with_capacity(signals.len());
    let mut labels = Vec::with_capacity(signals.len());
    for s in signals {
        items.push(covariance_descriptor(&s.series, params.window_len)?);
        labels.push(s.label);
    }
    SpdBatch::new(items, Some(labels))
}

fn class_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn check_fraction(f: f64, allow_one: bool) -> Result<()> {
    let ok = f > 0.0 && (f < 1.0 || (allow_one && f == 1.0));
    if ok {
        Ok(())
    } else {
        let range = if allow_one { "(0, 1]" } else { "(0, 1)" };
        Err(Error::InvalidInput(format!("fraction {f} outside {range}")))
    }
}

/// Stratified split of positions `0..labels.len()`. Per class, `round(f · k)`
/// points are drawn without replacement for the first part; both parts keep
/// ascending order.
pub fn split_indices(labels: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(train_fraction, false)?;
    stratified_pick(labels, train_fraction, seed, true)
}

fn stratified_pick(labels: &[usize], fraction: f64, seed: u64, need_rest: bool) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    let mut rest = Vec::new();
    for (c, members) in class_members(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let k = (fraction * members.len() as f64).round() as usize;
        if k == 0 || (need_rest && k == members.len()) {
            return Err(Error::InvalidInput(format!(
                "fraction {fraction} leaves class {c} ({} points) with an empty partition",
                members.len()
            )));
        }
        let mut shuffled = members;
        shuffled.shuffle(&mut rng);
        picked.extend_from_slice(&shuffled[..k]);
        rest.extend_from_slice(&shuffled[k..]);
    }
    picked.sort_unstable();
    rest.sort_unstable();
    Ok((picked, rest))
}

fn labels_of(batch: &SpdBatch) -> Result<&[usize]> {
    batch
        .labels()
        .ok_or_else(|| Error::InvalidInput("dataset split needs labeled items".into()))
}

/// Stratified train/test split, `0 < train_fraction < 1`.
pub fn split(batch: &SpdBatch, train_fraction: f64, seed: u64) -> Result<(SpdBatch, SpdBatch)> {
    let (tr, te) = split_indices(labels_of(batch)?, train_fraction, seed)?;
    Ok((batch.select(&tr)?, batch.select(&te)?))
}

/// Stratified subsample keeping `round(fraction · k)` points per class,
/// `0 < fraction ≤ 1`. A fraction of 1 returns the batch unchanged.
pub fn subsample(batch: &SpdBatch, fraction: f64, seed: u64) -> Result<SpdBatch> {
    check_fraction(fraction, true)?;
    if fraction == 1.0 {
        return Ok(batch.clone());
    }
    let (keep, _) = stratified_pick(labels_of(batch)?, fraction, seed, false)?;
    batch.select(&keep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub items: usize,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub seed: u64,
    /// Positions of the train and test items in the generated, class-major sequence.
    pub train_source: Vec<usize>,
    pub test_source: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub dim: usize,
    pub num_classes: usize,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub train_blob: BlobInfo,
    pub test_blob: BlobInfo,
    pub split: Option<SplitInfo>,
    pub generator: Option<GeneratorParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: SpdBatch,
    pub test: SpdBatch,
}

fn counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    labels.iter().for_each(|&l| c[l] += 1);
    c
}

fn blob_info(file: &str, items: usize, dim: usize) -> BlobInfo {
    BlobInfo {
        file: file.into(),
        items,
        offset: 0,
        bytes: (items * dim * dim * 8) as u64,
    }
}

impl Dataset {
    /// Wraps labeled train and test batches, building the manifest.
    pub fn new(
        train: SpdBatch,
        test: SpdBatch,
        num_classes: usize,
        split: Option<SplitInfo>,
        generator: Option<GeneratorParams>,
    ) -> Result<Self> {
        if train.dim() != test.dim() {
            return Err(Error::InvalidInput(format!(
                "train dim {} differs from test dim {}",
                train.dim(),
                test.dim()
            )));
        }
        let dim = train.dim();
        let train_labels = labels_of(&train)?.to_vec();
        let test_labels = labels_of(&test)?.to_vec();
        if let Some(&l) = train_labels.iter().chain(&test_labels).find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!("label {l} with {num_classes} classes")));
        }
        let manifest = DatasetManifest {
            version: DATASET_VERSION,
            dim,
            num_classes,
            train_counts: counts(&train_labels, num_classes),
            test_counts: counts(&test_labels, num_classes),
            train_blob: blob_info(TRAIN_FILE, train.len(), dim),
            test_blob: blob_info(TEST_FILE, test.len(), dim),
            train_labels,
            test_labels,
            split,
            generator,
        };
        Ok(Dataset { manifest, train, test })
    }

    /// Generates descriptors and splits them.
    pub fn generate(params: &GeneratorParams, train_fraction: f64, split_seed: u64) -> Result<Self> {
        let all = generate_descriptors(params)?;
        let (tr, te) = split_indices(labels_of(&all)?, train_fraction, split_seed)?;
        let split = SplitInfo {
            train_fraction,
            seed: split_seed,
            train_source: tr.clone(),
            test_source: te.clone(),
        };
        Dataset::new(
            all.select(&tr)?,
            all.select(&te)?,
            params.num_classes,
            Some(split),
            Some(params.clone()),
        )
    }
}

fn encode_items(items: &[SpdMatrix]) -> Vec<u8> {
    let n = items.first().map_or(0, |p| p.dim());
    let mut out = Vec::with_capacity(items.len() * n * n * 8);
    for p in items {
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&p[(i, j)].to_le_bytes());
            }
        }
    }
    out
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    let manifest = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    write(TRAIN_FILE, &encode_items(ds.train.items()))?;
    write(TEST_FILE, &encode_items(ds.test.items()))?;
    write(MANIFEST_FILE, manifest.as_bytes())
}

fn validate_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    let fail = |msg: String| Err(Error::format(path, 0, msg));
    if m.version != DATASET_VERSION {
        return fail(format!("unsupported dataset version {}", m.version));
    }
    if m.dim == 0 || m.num_classes == 0 {
        return fail("dim and num_classes must be positive".into());
    }
    for (name, labels, cnt, blob) in [
        ("train", &m.train_labels, &m.train_counts, &m.train_blob),
        ("test", &m.test_labels, &m.test_counts, &m.test_blob),
    ] {
        if let Some(&l) = labels.iter().find(|&&l| l >= m.num_classes) {
            return fail(format!("{name}: label {l} with {} classes", m.num_classes));
        }
        if labels.is_empty() {
            return fail(format!("{name}: no items"));
        }
        if *cnt != counts(labels, m.num_classes) {
            return fail(format!("{name}: class counts disagree with labels"));
        }
        if blob.items != labels.len() {
            return fail(format!("{name}: {} items for {} labels", blob.items, labels.len()));
        }
        let expected = blob.items as u64 * (m.dim * m.dim * 8) as u64;
        if blob.bytes != expected {
            return fail(format!(
                "{name}: blob length {} does not match {} items of dim {} ({expected} bytes)",
                blob.bytes, blob.items, m.dim
            ));
        }
        if blob.file.contains(['/', '\\']) || blob.file == ".." {
            return fail(format!("{name}: blob file {:?} must be a plain file name", blob.file));
        }
    }
    Ok(())
}

fn read_items(dir: &Path, blob: &BlobInfo, dim: usize) -> Result<Vec<SpdMatrix>> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let end = blob.offset + blob.bytes;
    if (bytes.len() as u64) < end {
        return Err(Error::format(
            &path,
            bytes.len() as u64,
            format!("truncated blob: expected {end} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() as u64 > end {
        return Err(Error::format(
            &path,
            end,
            format!("{} unexpected trailing bytes", bytes.len() as u64 - end),
        ));
    }
    let item_bytes = dim * dim * 8;
    let data = &bytes[blob.offset as usize..end as usize];
    let mut items = Vec::with_capacity(blob.items);
    for (k, chunk) in data.chunks_exact(item_bytes).enumerate() {
        let base = blob.offset + (k * item_bytes) as u64;
        let vals: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(&path, base + 8 * i as u64, "non-finite value"));
        }
        let m = DMatrix::from_row_slice(dim, dim, &vals);
        if m != m.transpose() {
            return Err(Error::format(&path, base, format!("item {k} is not symmetric")));
        }
        let p = SpdMatrix::new(m).map_err(|e| Error::format(&path, base, format!("item {k}: {e}")))?;
        items.push(p);
    }
    Ok(items)
}

/// Loads a dataset directory. The manifest is validated before any blob is
/// read, and nothing is returned unless every item parses.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(|e| {
        let pos = crate::net::json_error_offset(&text, &e);
        Error::format(&mpath, pos, format!("bad manifest: {e}"))
    })?;
    validate_manifest(&mpath, &manifest)?;
    let train = read_items(dir, &manifest.train_blob, manifest.dim)?;
    let test = read_items(dir, &manifest.test_blob, manifest.dim)?;
    let train = SpdBatch::new(train, Some(manifest.train_labels.clone()))?;
    let test = SpdBatch::new(test, Some(manifest.test_labels.clone()))?;
    Ok(Dataset { manifest, train, test })
}

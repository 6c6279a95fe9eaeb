//! Checkpoint file format.
//!
//! ```text
//! bytes 0..8     magic "SPDNETCK"
//! bytes 8..16    header length H, u64 little-endian
//! bytes 16..16+H JSON header
//! then           parameter blobs, f64 little-endian, row-major, in header order
//! ```
//!
//! Blob offsets in the header are relative to the end of the header. Blobs are
//! stored in declaration order: for each block the BiMap weight, then (with
//! RBN) the bias and the running mean; finally the head weights and bias.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BiMapLayer, Block, DenseHead, Network, NetworkSpec, RbnLayer, ReEigLayer};
use crate::error::{Error, Result};
use crate::symlin::SpdMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPDNETCK";
const FORMAT_VERSION: u32 = 1;
const PREAMBLE: u64 = 16;

/// A network plus the run metadata stored alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: NetworkSpec,
    seed: u64,
    epoch: usize,
    blobs: Vec<BlobEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
    len: u64,
}

fn blob_layout(spec: &NetworkSpec) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for (l, w) in spec.dims.windows(2).enumerate() {
        out.push((format!("block{l}.bimap.weight"), w[0], w[1]));
        if spec.use_rbn {
            out.push((format!("block{l}.rbn.bias"), w[1], w[1]));
            out.push((format!("block{l}.rbn.running_mean"), w[1], w[1]));
        }
    }
    out.push(("head.weights".into(), spec.num_classes, spec.feature_len()));
    out.push(("head.bias".into(), spec.num_classes, 1));
    out
}

fn push_row_major(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

fn network_blobs(net: &Network) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for b in &net.blocks {
        out.push(b.bimap.weight().clone());
        if let Some(r) = &b.rbn {
            out.push(r.bias.matrix().clone());
            out.push(r.running_mean.matrix().clone());
        }
    }
    out.push(net.head.weights.clone());
    out.push(DMatrix::from_column_slice(
        net.head.bias.len(),
        1,
        net.head.bias.as_slice(),
    ));
    out
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let spec = ckpt.network.spec().clone();
    let mut data = Vec::new();
    let mut blobs = Vec::new();
    for ((name, rows, cols), m) in blob_layout(&spec).into_iter().zip(network_blobs(&ckpt.network)) {
        debug_assert_eq!((rows, cols), m.shape());
        let offset = data.len() as u64;
        push_row_major(&mut data, &m);
        blobs.push(BlobEntry {
            name,
            rows,
            cols,
            offset,
            len: (rows * cols * 8) as u64,
        });
    }
    let header = Header {
        version: FORMAT_VERSION,
        spec,
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        blobs,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE as usize + json.len() + data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

/// Byte offset of a serde_json error inside `text`.
pub(crate) fn json_error_offset(text: &[u8], err: &serde_json::Error) -> u64 {
    let (line, col) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let mut cur_line = 1;
    for (i, &b) in text.iter().enumerate() {
        if cur_line == line {
            return (i + col.saturating_sub(1)) as u64;
        }
        if b == b'\n' {
            cur_line += 1;
        }
    }
    text.len() as u64
}

/// Parses a checkpoint; every failure is reported with the offending byte offset.
pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let fail = |pos: u64, msg: String| Error::format(path, pos, msg);
    if bytes.len() < PREAMBLE as usize {
        return Err(fail(
            bytes.len() as u64,
            "file too short for checkpoint preamble".into(),
        ));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail(0, "bad magic, not a checkpoint".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let data_start = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| {
            fail(
                8,
                format!("header length {header_len} exceeds file size {}", bytes.len()),
            )
        })?;
    let json = &bytes[PREAMBLE as usize..data_start as usize];
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| fail(PREAMBLE + json_error_offset(json, &e), format!("bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(fail(
            PREAMBLE,
            format!("unsupported checkpoint version {}", header.version),
        ));
    }
    header
        .spec
        .validate()
        .map_err(|e| fail(PREAMBLE, format!("invalid spec in header: {e}")))?;

    let layout = blob_layout(&header.spec);
    if layout.len() != header.blobs.len() {
        return Err(fail(
            PREAMBLE,
            format!("header lists {} blobs, spec needs {}", header.blobs.len(), layout.len()),
        ));
    }
    let data = &bytes[data_start as usize..];
    let mut expected_offset = 0u64;
    let mut mats = Vec::with_capacity(layout.len());
    for ((name, rows, cols), entry) in layout.iter().zip(&header.blobs) {
        if &entry.name != name || entry.rows != *rows || entry.cols != *cols {
            return Err(fail(
                PREAMBLE,
                format!(
                    "blob {} ({}x{}) does not match expected {name} ({rows}x{cols})",
                    entry.name, entry.rows, entry.cols
                ),
            ));
        }
        if entry.offset != expected_offset || entry.len != (rows * cols * 8) as u64 {
            return Err(fail(PREAMBLE, format!("blob {name} has inconsistent offset or length")));
        }
        let start = data_start + entry.offset;
        let end = expected_offset + entry.len;
        if end > data.len() as u64 {
            return Err(fail(
                bytes.len() as u64,
                format!("truncated: blob {name} needs bytes up to {}", data_start + end),
            ));
        }
        let raw = &data[entry.offset as usize..end as usize];
        let mut m = DMatrix::zeros(*rows, *cols);
        for (k, chunk) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(fail(start + 8 * k as u64, format!("non-finite value in {name}")));
            }
            m[(k / cols, k % cols)] = v;
        }
        mats.push((start, m));
        expected_offset = end;
    }
    if expected_offset != data.len() as u64 {
        return Err(fail(
            data_start + expected_offset,
            format!("{} trailing bytes after last blob", data.len() as u64 - expected_offset),
        ));
    }

    let spec = header.spec;
    let mut mats = mats.into_iter();
    let mut blocks = Vec::with_capacity(spec.dims.len() - 1);
    for _ in spec.dims.windows(2) {
        let (pos, w) = mats.next().expect("layout checked");
        let bimap = BiMapLayer::new(w).map_err(|e| fail(pos, e.to_string()))?;
        let rbn = if spec.use_rbn {
            let (pos_b, bias) = mats.next().expect("layout checked");
            let (pos_m, mean) = mats.next().expect("layout checked");
            let mut layer = RbnLayer::new(
                bimap.output_dim(),
                spec.momentum,
                spec.karcher,
                spec.karcher_backprop_iters,
            )
            .map_err(|e| fail(PREAMBLE, e.to_string()))?;
            layer.bias = SpdMatrix::new(bias).map_err(|e| fail(pos_b, format!("rbn bias: {e}")))?;
            layer.running_mean = SpdMatrix::new(mean).map_err(|e| fail(pos_m, format!("running mean: {e}")))?;
            Some(layer)
        } else {
            None
        };
        let reeig = ReEigLayer::new(spec.reeig_eps).map_err(|e| fail(PREAMBLE, e.to_string()))?;
        blocks.push(Block { bimap, rbn, reeig });
    }
    let (_, weights) = mats.next().expect("layout checked");
    let (_, bias) = mats.next().expect("layout checked");
    let head = DenseHead {
        weights,
        bias: DVector::from_column_slice(bias.as_slice()),
    };
    let network = Network::from_parts(spec, blocks, head).map_err(|e| fail(PREAMBLE, e.to_string()))?;
    Ok(Checkpoint {
        network,
        seed: header.seed,
        epoch: header.epoch,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}

//! SPD network layers and their composition.
//!
//! Every layer works on whole batches: forward passes return the outputs plus
//! whatever the backward pass needs, backward passes take per-item upstream
//! gradients (symmetric matrices for manifold-valued outputs) and return
//! per-item input gradients together with parameter gradients.

mod bimap;
mod checkpoint;
mod head;
mod logeig;
mod network;
mod rbn;
mod reeig;

pub use bimap::BiMapLayer;
pub(crate) use checkpoint::json_error_offset;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
};
pub use head::{softmax_xent, DenseHead};
pub use logeig::{logeig_backward, logeig_forward, LogEigCache};
pub use network::{input_gradients, Block, ForwardOutput, Gradients, Mode, Network, NetworkCache, NetworkSpec};
pub use rbn::{RbnCache, RbnLayer};
pub use reeig::{ReEigCache, ReEigLayer};

use crate::error::{Error, Result};
use crate::symlin::SpdMatrix;

/// An ordered batch of equally sized SPD matrices with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdBatch {
    items: Vec<SpdMatrix>,
    labels: Option<Vec<usize>>,
}

impl SpdBatch {
    pub fn new(items: Vec<SpdMatrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        if let Some(bad) = items.iter().find(|p| p.dim() != first.dim()) {
            return Err(Error::InvalidInput(format!(
                "batch mixes dimensions {} and {}",
                first.dim(),
                bad.dim()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != items.len() {
                return Err(Error::InvalidInput(format!(
                    "{} labels for {} items",
                    l.len(),
                    items.len()
                )));
            }
        }
        Ok(SpdBatch { items, labels })
    }

    pub fn unlabeled(items: Vec<SpdMatrix>) -> Result<Self> {
        SpdBatch::new(items, None)
    }

    pub fn dim(&self) -> usize {
        self.items[0].dim()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[SpdMatrix] {
        &self.items
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Sub-batch at the given positions, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<SpdBatch> {
        let items = idx.iter().map(|&i| self.items[i].clone()).collect();
        let labels = self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        SpdBatch::new(items, labels)
    }

    pub fn into_parts(self) -> (Vec<SpdMatrix>, Option<Vec<usize>>) {
        (self.items, self.labels)
    }
}

fn check_item_dims(items: &[SpdMatrix], expected: usize, layer: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::InvalidInput(format!("{layer}: empty batch")));
    }
    if let Some(p) = items.iter().find(|p| p.dim() != expected) {
        return Err(Error::InvalidInput(format!(
            "{layer}: expected {expected}x{expected} inputs, got {}x{}",
            p.dim(),
            p.dim()
        )));
    }
    Ok(())
}

fn check_upstream_len(got: usize, expected: usize, layer: &str) -> Result<()> {
    if got != expected {
        return Err(Error::InvalidInput(format!(
            "{layer}: {got} upstream gradients for {expected} items"
        )));
    }
    Ok(())
}

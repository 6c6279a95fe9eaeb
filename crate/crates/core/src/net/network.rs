use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    logeig_backward, logeig_forward, softmax_xent, BiMapLayer, DenseHead, LogEigCache, RbnCache, RbnLayer, ReEigCache,
    ReEigLayer, SpdBatch,
};
use crate::error::{Error, Result};
use crate::manifold::KarcherConfig;
use crate::symlin::{SpdMatrix, SymMatrix};

/// Architecture and layer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `{n_0, …, n_L}`: input size followed by each BiMap output size.
    pub dims: Vec<usize>,
    pub num_classes: usize,
    pub use_rbn: bool,
    pub reeig_eps: f64,
    /// RBN running-mean momentum `η`.
    pub momentum: f64,
    pub karcher: KarcherConfig,
    /// 0: batch means are constants for backprop. 1: backprop through the last flow step.
    pub karcher_backprop_iters: usize,
}

impl NetworkSpec {
    pub fn new(dims: Vec<usize>, num_classes: usize, use_rbn: bool) -> Self {
        NetworkSpec {
            dims,
            num_classes,
            use_rbn,
            reeig_eps: 1e-4,
            momentum: 0.9,
            karcher: KarcherConfig::default(),
            karcher_backprop_iters: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dims.len() < 2 {
            return bad(format!("need at least two dims, got {:?}", self.dims));
        }
        if self.dims.contains(&0) {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if self.dims.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!("dims must be non-increasing, got {:?}", self.dims));
        }
        if self.num_classes < 2 {
            return bad(format!("need at least two classes, got {}", self.num_classes));
        }
        if !(self.reeig_eps > 0.0) {
            return bad(format!("reeig eps must be positive, got {}", self.reeig_eps));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return bad(format!("momentum must lie in (0, 1), got {}", self.momentum));
        }
        if self.karcher_backprop_iters > 1 {
            return bad(format!(
                "karcher_backprop_iters must be 0 or 1, got {}",
                self.karcher_backprop_iters
            ));
        }
        self.karcher.validate().map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn feature_len(&self) -> usize {
        let last = *self.dims.last().expect("validated");
        last * last
    }
}

/// BiMap → (RBN) → ReEig.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub bimap: BiMapLayer,
    pub rbn: Option<RbnLayer>,
    pub reeig: ReEigLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pub blocks: Vec<Block>,
    pub head: DenseHead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; RBN running means are updated.
    Train,
    /// Running statistics; no state is mutated.
    Eval,
}

#[derive(Clone, Debug)]
struct BlockCache {
    bimap_inputs: Vec<SpdMatrix>,
    rbn: Option<RbnCache>,
    reeig: ReEigCache,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct NetworkCache {
    blocks: Vec<BlockCache>,
    logeig: LogEigCache,
    features: Vec<DVector<f64>>,
    logits: Vec<DVector<f64>>,
    labels: Option<Vec<usize>>,
    mode: Mode,
    layer_outputs: Vec<(String, Vec<SpdMatrix>)>,
}

impl NetworkCache {
    /// Batch means used by each RBN layer (`None` for blocks without RBN or in eval mode).
    pub fn batch_means(&self) -> Vec<Option<SpdMatrix>> {
        self.blocks
            .iter()
            .map(|b| b.rbn.as_ref().map(|c| c.batch_mean().clone()))
            .collect()
    }

    /// Outputs of every BiMap, RBN and ReEig layer in forward order, tagged
    /// with the layer name.
    pub fn layer_outputs(&self) -> &[(String, Vec<SpdMatrix>)] {
        &self.layer_outputs
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }
}

pub struct ForwardOutput {
    pub logits: Vec<DVector<f64>>,
    /// Mean cross-entropy, when the batch is labeled.
    pub loss: Option<f64>,
    pub cache: NetworkCache,
}

impl ForwardOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.iter().map(argmax).collect()
    }
}

pub(crate) fn argmax(v: &DVector<f64>) -> usize {
    // lowest index wins ties
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Parameter gradients, one entry per block.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub bimap: Vec<DMatrix<f64>>,
    pub rbn_bias: Vec<Option<DMatrix<f64>>>,
    pub head_weights: DMatrix<f64>,
    pub head_bias: DVector<f64>,
}

enum Means<'a> {
    Batch,
    Given(&'a [SpdMatrix]),
    Running,
}

impl Network {
    /// Random semi-orthogonal BiMap weights, identity RBN parameters and a
    /// Gaussian head.
    pub fn new(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.dims.len() - 1);
        for w in spec.dims.windows(2) {
            blocks.push(Network::block(&spec, BiMapLayer::random(w[0], w[1], rng)?)?);
        }
        let head = DenseHead::random(spec.num_classes, spec.feature_len(), rng);
        Ok(Network { spec, blocks, head })
    }

    /// Truncated-identity BiMap weights, identity RBN parameters and a zero head.
    pub fn identity(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.dims.len() - 1);
        for w in spec.dims.windows(2) {
            blocks.push(Network::block(&spec, BiMapLayer::truncated_identity(w[0], w[1])?)?);
        }
        let head = DenseHead::zeros(spec.num_classes, spec.feature_len());
        Ok(Network { spec, blocks, head })
    }

    fn block(spec: &NetworkSpec, bimap: BiMapLayer) -> Result<Block> {
        let n = bimap.output_dim();
        let rbn = if spec.use_rbn {
            Some(RbnLayer::new(
                n,
                spec.momentum,
                spec.karcher,
                spec.karcher_backprop_iters,
            )?)
        } else {
            None
        };
        Ok(Block {
            bimap,
            rbn,
            reeig: ReEigLayer::new(spec.reeig_eps)?,
        })
    }

    /// Assembles a network from explicit layers, checking them against `spec`.
    pub fn from_parts(spec: NetworkSpec, blocks: Vec<Block>, head: DenseHead) -> Result<Self> {
        spec.validate()?;
        if blocks.len() != spec.dims.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "{} blocks for dims {:?}",
                blocks.len(),
                spec.dims
            )));
        }
        for (b, w) in blocks.iter().zip(spec.dims.windows(2)) {
            if b.bimap.input_dim() != w[0] || b.bimap.output_dim() != w[1] {
                return Err(Error::InvalidSpec("bimap shape does not match dims".into()));
            }
            if b.rbn.is_some() != spec.use_rbn || b.rbn.as_ref().is_some_and(|r| r.dim() != w[1]) {
                return Err(Error::InvalidSpec("rbn layers do not match spec".into()));
            }
        }
        if head.num_classes() != spec.num_classes || head.input_len() != spec.feature_len() {
            return Err(Error::InvalidSpec("head shape does not match spec".into()));
        }
        Ok(Network { spec, blocks, head })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn run(&self, batch: &SpdBatch, means: Means<'_>, mode: Mode) -> Result<ForwardOutput> {
        if batch.dim() != self.spec.input_dim() {
            return Err(Error::InvalidInput(format!(
                "network expects {}x{} inputs, got {}x{}",
                self.spec.input_dim(),
                self.spec.input_dim(),
                batch.dim(),
                batch.dim()
            )));
        }
        if let Some(labels) = batch.labels() {
            if let Some(&bad) = labels.iter().find(|&&y| y >= self.spec.num_classes) {
                return Err(Error::InvalidInput(format!(
                    "label {bad} out of range for {} classes",
                    self.spec.num_classes
                )));
            }
        }
        let mut x = batch.items().to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut layer_outputs = Vec::with_capacity(3 * self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let bimap_out = block.bimap.forward(&x)?;
            let bimap_inputs = std::mem::replace(&mut x, bimap_out);
            layer_outputs.push((format!("bimap{l}"), x.clone()));
            let mut rbn_cache = None;
            if let Some(rbn) = &block.rbn {
                x = match &means {
                    Means::Batch => {
                        let km = rbn.batch_mean(&x)?;
                        let mean = km.mean.clone();
                        let (out, cache) = rbn.normalize_with_mean(&x, &mean, Some(km))?;
                        rbn_cache = Some(cache);
                        out
                    }
                    Means::Given(m) => {
                        let mean = m
                            .get(l)
                            .ok_or_else(|| Error::InvalidInput(format!("no batch mean supplied for block {l}")))?;
                        let (out, cache) = rbn.normalize_with_mean(&x, mean, None)?;
                        rbn_cache = Some(cache);
                        out
                    }
                    Means::Running => rbn.forward_eval(&x)?,
                };
                layer_outputs.push((format!("rbn{l}"), x.clone()));
            }
            let (out, reeig) = block.reeig.forward(&x)?;
            x = out;
            layer_outputs.push((format!("reeig{l}"), x.clone()));
            caches.push(BlockCache {
                bimap_inputs,
                rbn: rbn_cache,
                reeig,
            });
        }
        let (features, logeig) = logeig_forward(&x)?;
        let logits = self.head.forward(&features)?;
        let loss = match batch.labels() {
            Some(labels) => Some(softmax_xent(&logits, labels)?.0),
            None => None,
        };
        Ok(ForwardOutput {
            logits: logits.clone(),
            loss,
            cache: NetworkCache {
                blocks: caches,
                logeig,
                features,
                logits,
                labels: batch.labels().map(<[usize]>::to_vec),
                mode,
                layer_outputs,
            },
        })
    }

    /// Forward pass. In train mode each RBN layer normalizes with its batch
    /// mean and updates its running mean.
    pub fn forward(&mut self, batch: &SpdBatch, mode: Mode) -> Result<ForwardOutput> {
        match mode {
            Mode::Eval => self.forward_eval(batch),
            Mode::Train => {
                let out = self.run(batch, Means::Batch, Mode::Train)?;
                for (block, mean) in self.blocks.iter_mut().zip(out.cache.batch_means()) {
                    if let (Some(rbn), Some(mean)) = (block.rbn.as_mut(), mean) {
                        rbn.update_running_mean(&mean)?;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn forward_eval(&self, batch: &SpdBatch) -> Result<ForwardOutput> {
        self.run(batch, Means::Running, Mode::Eval)
    }

    /// Train-path forward with the RBN batch means held at `means` (one per
    /// block; entries for blocks without RBN are ignored). No state changes.
    /// This is the function whose gradient [`Network::backward`] computes.
    pub fn forward_with_batch_means(&self, batch: &SpdBatch, means: &[SpdMatrix]) -> Result<ForwardOutput> {
        self.run(batch, Means::Given(means), Mode::Train)
    }

    /// Class predictions in eval mode.
    pub fn predict(&self, items: &[SpdMatrix]) -> Result<Vec<usize>> {
        let batch = SpdBatch::unlabeled(items.to_vec())?;
        Ok(self.forward_eval(&batch)?.predictions())
    }

    /// Gradients of the mean cross-entropy of a labeled train-mode forward pass.
    pub fn backward(&self, cache: &NetworkCache) -> Result<Gradients> {
        let labels = cache
            .labels
            .as_deref()
            .ok_or_else(|| Error::InvalidState("backward needs a labeled forward pass".into()))?;
        let (_, dlogits) = softmax_xent(&cache.logits, labels)?;
        self.backward_from_logits(cache, &dlogits)
    }

    /// Backward pass for arbitrary upstream gradients on the logits.
    pub fn backward_from_logits(&self, cache: &NetworkCache, dlogits: &[DVector<f64>]) -> Result<Gradients> {
        if cache.mode != Mode::Train && self.spec.use_rbn {
            return Err(Error::InvalidState(
                "backward through batch normalization needs a train-mode forward pass".into(),
            ));
        }
        if cache.blocks.len() != self.blocks.len() {
            return Err(Error::InvalidState("cache does not belong to this network".into()));
        }
        let (head_weights, head_bias, dfeat) = self.head.backward(&cache.features, dlogits)?;
        let mut grad = logeig_backward(&cache.logeig, &dfeat)?;
        let mut bimap = vec![DMatrix::zeros(0, 0); self.blocks.len()];
        let mut rbn_bias = vec![None; self.blocks.len()];
        for (l, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            grad = block.reeig.backward(&bc.reeig, &grad)?;
            if let Some(rbn) = &block.rbn {
                let (dg, dx) = rbn.backward(bc.rbn.as_ref(), &grad)?;
                rbn_bias[l] = Some(dg);
                grad = dx;
            }
            let (dw, dx) = block.bimap.backward(&bc.bimap_inputs, &grad)?;
            bimap[l] = dw;
            grad = dx;
        }
        Ok(Gradients {
            bimap,
            rbn_bias,
            head_weights,
            head_bias,
        })
    }
}

/// Symmetric gradients with respect to the network inputs are not needed by
/// training; exposed for gradient checks.
pub fn input_gradients(net: &Network, cache: &NetworkCache, dlogits: &[DVector<f64>]) -> Result<Vec<SymMatrix>> {
    let (_, _, dfeat) = net.head.backward(&cache.features, dlogits)?;
    let mut grad = logeig_backward(&cache.logeig, &dfeat)?;
    for (block, bc) in net.blocks.iter().zip(&cache.blocks).rev() {
        grad = block.reeig.backward(&bc.reeig, &grad)?;
        if let Some(rbn) = &block.rbn {
            grad = rbn.backward(bc.rbn.as_ref(), &grad)?.1;
        }
        grad = block.bimap.backward(&bc.bimap_inputs, &grad)?.1;
    }
    Ok(grad)
}

//! Riemannian batch normalization.
//!
//! Training: the batch is centered at its Karcher mean `𝔊_B` by transport to
//! the identity and then biased by transport from the identity to the learnt
//! SPD parameter `G`, i.e. `P̃ᵢ = G^{1/2} 𝔊_B^{-1/2} Pᵢ 𝔊_B^{-1/2} G^{1/2}`.
//! The running mean moves along the geodesic towards `𝔊_B` by `1 − η`.
//! Evaluation uses the running mean in place of `𝔊_B`.
//!
//! Gradients treat `𝔊_B` as a constant unless `karcher_backprop_iters` is 1,
//! in which case they also flow through the last Karcher flow step.

use nalgebra::DMatrix;

use super::{check_item_dims, check_upstream_len};
use crate::error::{Error, Result};
use crate::manifold::{
    geodesic_barycenter2, karcher_mean, KarcherConfig, KarcherInit, KarcherResult, SpdRoots, WeightVector,
};
use crate::symlin::{sym_eig, EigDecomposition, ScalarFun, SpdMatrix, SymMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct RbnLayer {
    /// Learnt bias `G`.
    pub bias: SpdMatrix,
    /// Running estimate `𝔊_S` of the data mean, used at evaluation time.
    pub running_mean: SpdMatrix,
    momentum: f64,
    karcher: KarcherConfig,
    karcher_backprop_iters: usize,
}

/// State kept by a training forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct RbnCache {
    inputs: Vec<SpdMatrix>,
    batch_mean: SpdMatrix,
    mean_inv_sqrt: DMatrix<f64>,
    bias_eig: EigDecomposition,
    bias_sqrt: DMatrix<f64>,
    centered: Vec<SpdMatrix>,
    karcher: Option<KarcherResult>,
}

impl RbnCache {
    pub fn batch_mean(&self) -> &SpdMatrix {
        &self.batch_mean
    }

    pub fn karcher(&self) -> Option<&KarcherResult> {
        self.karcher.as_ref()
    }
}

impl RbnLayer {
    /// Identity bias and identity running mean.
    pub fn new(dim: usize, momentum: f64, karcher: KarcherConfig, karcher_backprop_iters: usize) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidInput(format!(
                "momentum must lie in (0, 1), got {momentum}"
            )));
        }
        if karcher_backprop_iters > 1 {
            return Err(Error::InvalidInput(format!(
                "karcher backprop supports 0 or 1 iterations, got {karcher_backprop_iters}"
            )));
        }
        karcher.validate()?;
        Ok(RbnLayer {
            bias: SpdMatrix::identity(dim),
            running_mean: SpdMatrix::identity(dim),
            momentum,
            karcher,
            karcher_backprop_iters,
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.dim()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn karcher_config(&self) -> &KarcherConfig {
        &self.karcher
    }

    pub fn karcher_backprop_iters(&self) -> usize {
        self.karcher_backprop_iters
    }

    /// Uniformly weighted Karcher mean of the batch.
    pub fn batch_mean(&self, items: &[SpdMatrix]) -> Result<KarcherResult> {
        check_item_dims(items, self.dim(), "rbn")?;
        karcher_mean(items, &WeightVector::uniform(items.len()), &self.karcher)
    }

    /// `𝔊_S ← Bar_{(η, 1−η)}(𝔊_S, 𝔊_B)`.
    pub fn update_running_mean(&mut self, batch_mean: &SpdMatrix) -> Result<()> {
        self.running_mean = geodesic_barycenter2(&self.running_mean, batch_mean, self.momentum)?;
        Ok(())
    }

    /// Centers with `mean` and biases with `G`, without touching layer state.
    /// `karcher` is the flow run that produced `mean`, if any.
    pub fn normalize_with_mean(
        &self,
        items: &[SpdMatrix],
        mean: &SpdMatrix,
        karcher: Option<KarcherResult>,
    ) -> Result<(Vec<SpdMatrix>, RbnCache)> {
        check_item_dims(items, self.dim(), "rbn")?;
        if mean.dim() != self.dim() {
            return Err(Error::InvalidInput("rbn: mean has the wrong dimension".into()));
        }
        let mean_inv_sqrt = SpdRoots::new(mean)?.inv_sqrt;
        let bias_eig = self.bias.eig()?;
        let bias_sqrt = bias_eig.apply(ScalarFun::Sqrt)?.into_matrix();
        let centered: Vec<SpdMatrix> = items.iter().map(|p| p.congruence(&mean_inv_sqrt)).collect();
        let out = centered.iter().map(|c| c.congruence(&bias_sqrt)).collect();
        let cache = RbnCache {
            inputs: items.to_vec(),
            batch_mean: mean.clone(),
            mean_inv_sqrt,
            bias_eig,
            bias_sqrt,
            centered,
            karcher,
        };
        Ok((out, cache))
    }

    /// Training pass: batch mean, running-mean update, centering and biasing.
    pub fn forward_train(&mut self, items: &[SpdMatrix]) -> Result<(Vec<SpdMatrix>, RbnCache)> {
        let km = self.batch_mean(items)?;
        let mean = km.mean.clone();
        self.update_running_mean(&mean)?;
        self.normalize_with_mean(items, &mean, Some(km))
    }

    /// Evaluation pass with the running mean. Each output depends only on its
    /// own input.
    pub fn forward_eval(&self, items: &[SpdMatrix]) -> Result<Vec<SpdMatrix>> {
        Ok(self.normalize_with_mean(items, &self.running_mean, None)?.0)
    }

    /// Returns `(∂G, ∂Pᵢ)` for upstream gradients on the normalized outputs.
    pub fn backward(&self, cache: Option<&RbnCache>, upstream: &[SymMatrix]) -> Result<(DMatrix<f64>, Vec<SymMatrix>)> {
        let cache =
            cache.ok_or_else(|| Error::InvalidState("rbn backward called without a training forward cache".into()))?;
        check_upstream_len(upstream.len(), cache.inputs.len(), "rbn")?;
        let s = &cache.bias_sqrt;
        let c = &cache.mean_inv_sqrt;
        let n = self.dim();

        let mut d_sqrt = DMatrix::zeros(n, n);
        let mut d_centered = Vec::with_capacity(upstream.len());
        for (pbar, g) in cache.centered.iter().zip(upstream) {
            if g.dim() != n {
                return Err(Error::InvalidInput(
                    "rbn: upstream gradient has the wrong dimension".into(),
                ));
            }
            // P̃ = S P̄ S
            let a = pbar.matrix() * s * g.matrix();
            d_sqrt += &a + a.transpose();
            d_centered.push(SymMatrix::sym(s * g.matrix() * s));
        }
        let d_bias = cache.bias_eig.backward(ScalarFun::Sqrt, &SymMatrix::sym(d_sqrt))?;

        // P̄ = C P C
        let mut d_inputs: Vec<SymMatrix> = d_centered.iter().map(|d| d.congruence(c)).collect();

        if self.karcher_backprop_iters == 1 {
            let mut d_c = DMatrix::zeros(n, n);
            for (p, d) in cache.inputs.iter().zip(&d_centered) {
                let a = p.matrix() * c * d.matrix();
                d_c += &a + a.transpose();
            }
            let d_mean = sym_eig(&cache.batch_mean.to_sym())?.backward(ScalarFun::InvSqrt, &SymMatrix::sym(d_c))?;
            let extra = self.mean_backward(cache, &d_mean)?;
            for (d, e) in d_inputs.iter_mut().zip(extra) {
                *d = d.lincomb(1.0, &e, 1.0);
            }
        }
        Ok((d_bias.into_matrix(), d_inputs))
    }

    /// Gradient of the batch mean with respect to the inputs through the last
    /// flow step, holding the iterate it started from fixed.
    fn mean_backward(&self, cache: &RbnCache, d_mean: &SymMatrix) -> Result<Vec<SymMatrix>> {
        let items = &cache.inputs;
        let w = 1.0 / items.len() as f64;
        let previous = cache.karcher.as_ref().and_then(|k| k.previous.as_ref());
        let Some(prev) = previous else {
            // no flow step was taken: the mean is the initial guess
            let n = self.dim();
            return Ok(match self.karcher.init {
                KarcherInit::ArithmeticMean => vec![d_mean.scale(w); items.len()],
                KarcherInit::FirstElement => {
                    let mut v = vec![SymMatrix::zeros(n); items.len()];
                    v[0] = d_mean.clone();
                    v
                }
            });
        };
        // 𝔊_B = A exp(M) A,  M = Σ w log(A⁻¹ Pᵢ A⁻¹),  A = prev^{1/2}
        let roots = SpdRoots::new(prev)?;
        let whitened: Vec<SymMatrix> = items.iter().map(|p| roots.whiten(p.matrix())).collect();
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        let mut eigs = Vec::with_capacity(items.len());
        for q in &whitened {
            let eig = sym_eig(q)?;
            m += eig.apply(ScalarFun::Log)?.matrix() * w;
            eigs.push(eig);
        }
        let d_exp = roots.color(d_mean.matrix());
        let d_m = sym_eig(&SymMatrix::sym(m))?.backward(ScalarFun::Exp, &d_exp)?;
        eigs.iter()
            .map(|eig| {
                let dq = eig.backward(ScalarFun::Log, &d_m)?;
                Ok(roots.whiten(dq.matrix()).scale(w))
            })
            .collect()
    }
}

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_item_dims, check_upstream_len};
use crate::error::{Error, Result};
use crate::optim::orthonormal_factor;
use crate::symlin::{SpdMatrix, SymMatrix};

/// Bilinear map `X = Wᵀ P W` with a semi-orthogonal `n_in × n_out` weight.
#[derive(Clone, Debug, PartialEq)]
pub struct BiMapLayer {
    weight: DMatrix<f64>,
}

pub(crate) const ORTHO_TOL: f64 = 1e-8;

pub(crate) fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    (w.transpose() * w - DMatrix::identity(w.ncols(), w.ncols())).norm()
}

impl BiMapLayer {
    pub fn new(weight: DMatrix<f64>) -> Result<Self> {
        if weight.nrows() < weight.ncols() || weight.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "bimap weight must be n_in x n_out with n_in >= n_out >= 1, got {}x{}",
                weight.nrows(),
                weight.ncols()
            )));
        }
        let err = orthogonality_error(&weight);
        if !(err < ORTHO_TOL) {
            return Err(Error::InvalidInput(format!(
                "bimap weight is not semi-orthogonal (|WᵀW - I| = {err:e})"
            )));
        }
        Ok(BiMapLayer { weight })
    }

    /// Orthonormal factor of a Gaussian matrix.
    pub fn random(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let g = DMatrix::from_fn(n_in, n_out, |_, _| rng.sample::<f64, _>(StandardNormal));
        BiMapLayer::new(orthonormal_factor(&g)?)
    }

    /// The first `n_out` columns of the identity.
    pub fn truncated_identity(n_in: usize, n_out: usize) -> Result<Self> {
        BiMapLayer::new(DMatrix::identity(n_in, n_out))
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Replaces the weight, re-checking semi-orthogonality.
    pub fn set_weight(&mut self, weight: DMatrix<f64>) -> Result<()> {
        if weight.shape() != self.weight.shape() {
            return Err(Error::InvalidInput("bimap weight shape changed".into()));
        }
        *self = BiMapLayer::new(weight)?;
        Ok(())
    }

    pub fn forward(&self, items: &[SpdMatrix]) -> Result<Vec<SpdMatrix>> {
        check_item_dims(items, self.input_dim(), "bimap")?;
        let wt = self.weight.transpose();
        Ok(items.iter().map(|p| p.congruence(&wt)).collect())
    }

    /// Returns `(∂W, ∂Pᵢ)` with `∂Pᵢ = W Gᵢ Wᵀ` and `∂W = Σ (Pᵢ W Gᵢ + Pᵢᵀ W Gᵢᵀ)`.
    pub fn backward(&self, inputs: &[SpdMatrix], upstream: &[SymMatrix]) -> Result<(DMatrix<f64>, Vec<SymMatrix>)> {
        check_item_dims(inputs, self.input_dim(), "bimap")?;
        check_upstream_len(upstream.len(), inputs.len(), "bimap")?;
        let w = &self.weight;
        let mut dw = DMatrix::zeros(w.nrows(), w.ncols());
        let mut dp = Vec::with_capacity(inputs.len());
        for (p, g) in inputs.iter().zip(upstream) {
            if g.dim() != self.output_dim() {
                return Err(Error::InvalidInput(format!(
                    "bimap: upstream gradient is {}x{}, expected {}x{}",
                    g.dim(),
                    g.dim(),
                    self.output_dim(),
                    self.output_dim()
                )));
            }
            let wg = w * g.matrix();
            // P and G are symmetric, so both terms of the product rule coincide.
            dw += (p.matrix() * &wg) * 2.0;
            dp.push(SymMatrix::sym(&wg * w.transpose()));
        }
        Ok((dw, dp))
    }
}

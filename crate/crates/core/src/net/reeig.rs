use serde::{Deserialize, Serialize};

use super::check_upstream_len;
use crate::error::{Error, Result};
use crate::symlin::{EigDecomposition, ScalarFun, SpdMatrix, SymMatrix};

/// Eigenvalue rectification `U max(Σ, εI) Uᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReEigLayer {
    eps: f64,
}

/// Eigendecompositions of the layer inputs.
#[derive(Clone, Debug)]
pub struct ReEigCache {
    eigs: Vec<EigDecomposition>,
}

impl ReEigLayer {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(format!(
                "reeig threshold must be positive, got {eps}"
            )));
        }
        Ok(ReEigLayer { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn fun(&self) -> ScalarFun {
        ScalarFun::Rect(self.eps)
    }

    pub fn forward(&self, items: &[SpdMatrix]) -> Result<(Vec<SpdMatrix>, ReEigCache)> {
        let mut out = Vec::with_capacity(items.len());
        let mut eigs = Vec::with_capacity(items.len());
        for p in items {
            let eig = p.eig()?;
            if eig.min_eigenvalue() > self.eps {
                // inactive rectifier
                out.push(p.clone());
            } else {
                out.push(SpdMatrix::from_sym_unchecked(eig.apply(self.fun())?));
            }
            eigs.push(eig);
        }
        Ok((out, ReEigCache { eigs }))
    }

    pub fn backward(&self, cache: &ReEigCache, upstream: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
        check_upstream_len(upstream.len(), cache.eigs.len(), "reeig")?;
        cache
            .eigs
            .iter()
            .zip(upstream)
            .map(|(eig, g)| eig.backward(self.fun(), g))
            .collect()
    }
}

use nalgebra::{DMatrix, DVector};

use super::check_upstream_len;
use crate::error::{Error, Result};
use crate::symlin::{EigDecomposition, ScalarFun, SpdMatrix, SymMatrix};

/// Eigendecompositions of the LogEig inputs.
#[derive(Clone, Debug)]
pub struct LogEigCache {
    eigs: Vec<EigDecomposition>,
}

/// `vec(U log(Σ) Uᵀ)`, row-major, length n².
pub fn logeig_forward(items: &[SpdMatrix]) -> Result<(Vec<DVector<f64>>, LogEigCache)> {
    let mut feats = Vec::with_capacity(items.len());
    let mut eigs = Vec::with_capacity(items.len());
    for p in items {
        let eig = p.eig()?;
        let log = eig.apply(ScalarFun::Log)?;
        // symmetric, so the column-major storage is also the row-major vec
        feats.push(DVector::from_column_slice(log.matrix().as_slice()));
        eigs.push(eig);
    }
    Ok((feats, LogEigCache { eigs }))
}

/// Maps gradients with respect to the n²-vectors back to the SPD inputs.
pub fn logeig_backward(cache: &LogEigCache, upstream: &[DVector<f64>]) -> Result<Vec<SymMatrix>> {
    check_upstream_len(upstream.len(), cache.eigs.len(), "logeig")?;
    cache
        .eigs
        .iter()
        .zip(upstream)
        .map(|(eig, g)| {
            let n = eig.dim();
            if g.len() != n * n {
                return Err(Error::InvalidInput(format!(
                    "logeig: upstream has length {}, expected {}",
                    g.len(),
                    n * n
                )));
            }
            let m = DMatrix::from_row_slice(n, n, g.as_slice());
            eig.backward(ScalarFun::Log, &SymMatrix::sym(m))
        })
        .collect()
}

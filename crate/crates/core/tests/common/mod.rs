//! Random instances and finite-difference helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spdnet::{SpdMatrix, SymMatrix};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-ish random orthogonal matrix.
pub fn rotation(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    gaussian(rng, n, n).qr().q()
}

/// `Q diag(eigs) Qᵀ` with a random rotation `Q`.
pub fn with_spectrum(rng: &mut impl Rng, eigs: &[f64]) -> DMatrix<f64> {
    let q = rotation(rng, eigs.len());
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigs));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Eigenvalues log-uniform in `[lo, hi]`.
pub fn log_uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp())
        .collect()
}

pub fn random_spd(rng: &mut impl Rng, n: usize) -> SpdMatrix {
    let eigs = log_uniform(rng, n, 0.2, 5.0);
    SpdMatrix::new(with_spectrum(rng, &eigs)).unwrap()
}

pub fn random_sym(rng: &mut impl Rng, n: usize) -> SymMatrix {
    SymMatrix::new(gaussian(rng, n, n)).unwrap()
}

pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central difference of `f` at `t = 0`.
pub fn central_diff(f: impl Fn(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

pub fn spd_plus(p: &SpdMatrix, v: &SymMatrix, t: f64) -> SpdMatrix {
    SpdMatrix::new(p.matrix() + v.matrix() * t).unwrap()
}

pub fn ortho_err(w: &DMatrix<f64>) -> f64 {
    (w.transpose() * w - DMatrix::identity(w.ncols(), w.ncols())).norm()
}

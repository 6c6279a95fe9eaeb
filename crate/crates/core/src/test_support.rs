//! Random instances shared by the unit tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::symlin::{SpdMatrix, SymMatrix};

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `A Aᵀ / n + 0.1 I` with Gaussian `A`.
pub fn random_spd(rng: &mut impl Rng, n: usize) -> SpdMatrix {
    let a = gaussian(rng, n, n);
    let m = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
    SpdMatrix::new(m).unwrap()
}

pub fn random_sym(rng: &mut impl Rng, n: usize, scale: f64) -> SymMatrix {
    SymMatrix::new(gaussian(rng, n, n) * scale).unwrap()
}

/// `‖a - b‖_F / ‖b‖_F`.
pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

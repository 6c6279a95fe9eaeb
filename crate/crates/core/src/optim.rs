//! Parameter updates that keep each parameter on its constraint set.
//!
//! - BiMap weights live on the Stiefel manifold: the Euclidean gradient is
//!   projected onto the tangent space and the step is retracted with a thin QR.
//! - RBN biases live on the SPD manifold: the gradient is projected with
//!   `G·sym(∂G)·G` and the step follows the geodesic through the exponential map.
//! - Head parameters are Euclidean and use SGD with momentum.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::exp_map;
use crate::net::{Gradients, Network};
use crate::symlin::{SpdMatrix, SymMatrix};

const QR_RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    /// Momentum of the Euclidean (head) parameters.
    pub momentum: f64,
    pub update_bimap: bool,
    pub update_rbn: bool,
    pub update_head: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-2,
            momentum: 0.9,
            update_bimap: true,
            update_rbn: true,
            update_head: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Orthonormal factor of the thin QR decomposition, with the signs chosen so
/// that `R` has a positive diagonal.
pub fn orthonormal_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() < m.ncols() {
        return Err(Error::InvalidInput(format!(
            "thin QR needs rows >= cols, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for j in 0..m.ncols() {
        let d = r[(j, j)];
        if d.abs() <= QR_RANK_TOL * scale {
            return Err(Error::NumericalFailure(format!(
                "rank-deficient matrix in QR retraction (|R[{j},{j}]| = {:e})",
                d.abs()
            )));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `G·sym(∂G)·G`, the Riemannian gradient of the bias.
pub fn spd_riemannian_gradient(g: &SpdMatrix, grad: &DMatrix<f64>) -> SymMatrix {
    let sym = SymMatrix::sym((grad + grad.transpose()) * 0.5);
    SymMatrix::sym(g.matrix() * sym.matrix() * g.matrix())
}

/// `Exp_G(−lr · G·sym(∂G)·G)`.
pub fn spd_step(g: &SpdMatrix, grad: &DMatrix<f64>, lr: f64) -> Result<SpdMatrix> {
    if grad.shape() != (g.dim(), g.dim()) {
        return Err(Error::InvalidInput("spd step: gradient shape mismatch".into()));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("spd step: non-finite gradient".into()));
    }
    exp_map(g, &spd_riemannian_gradient(g, grad).scale(-lr))
}

/// Projection of a Euclidean gradient onto the tangent space of the Stiefel
/// manifold at `W`: `∂ − W·sym(Wᵀ∂)`.
pub fn stiefel_tangent(w: &DMatrix<f64>, grad: &DMatrix<f64>) -> DMatrix<f64> {
    let wtg = w.transpose() * grad;
    let sym = (&wtg + wtg.transpose()) * 0.5;
    grad - w * sym
}

/// `qf(W − lr·ξ)` with `ξ` the tangent gradient.
pub fn stiefel_step(w: &DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) -> Result<DMatrix<f64>> {
    if grad.shape() != w.shape() {
        return Err(Error::InvalidInput("stiefel step: gradient shape mismatch".into()));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("stiefel step: non-finite gradient".into()));
    }
    let xi = stiefel_tangent(w, grad);
    orthonormal_factor(&(w - xi * lr))
}

/// `v ← momentum·v + grad; param ← param − lr·v`, in place.
pub fn euclid_sgd_step(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), velocity.len());
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Applies one update to every parameter of a network. Owns the momentum
/// buffers of the head.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimConfig,
    head_weight_velocity: DMatrix<f64>,
    head_bias_velocity: Vec<f64>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, net: &Network) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            head_weight_velocity: DMatrix::zeros(net.head.weights.nrows(), net.head.weights.ncols()),
            head_bias_velocity: vec![0.0; net.head.bias.len()],
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let lr = self.cfg.lr;
        if grads.bimap.len() != net.blocks.len() || grads.rbn_bias.len() != net.blocks.len() {
            return Err(Error::InvalidInput("gradients do not match the network".into()));
        }
        for (block, (dw, dg)) in net.blocks.iter_mut().zip(grads.bimap.iter().zip(&grads.rbn_bias)) {
            if self.cfg.update_bimap {
                let w = stiefel_step(block.bimap.weight(), dw, lr)?;
                block.bimap.set_weight(w)?;
            }
            if self.cfg.update_rbn {
                if let (Some(rbn), Some(dg)) = (block.rbn.as_mut(), dg) {
                    rbn.bias = spd_step(&rbn.bias, dg, lr)?;
                }
            }
        }
        if self.cfg.update_head {
            euclid_sgd_step(
                net.head.weights.as_mut_slice(),
                grads.head_weights.as_slice(),
                self.head_weight_velocity.as_mut_slice(),
                lr,
                self.cfg.momentum,
            );
            euclid_sgd_step(
                net.head.bias.as_mut_slice(),
                grads.head_bias.as_slice(),
                &mut self.head_bias_velocity,
                lr,
                self.cfg.momentum,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{airm_distance, SpdRoots};
    use crate::symlin::{sym_fun, ScalarFun};
    use crate::test_support::{gaussian, random_spd, random_sym};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ortho_err(w: &DMatrix<f64>) -> f64 {
        (w.transpose() * w - DMatrix::identity(w.ncols(), w.ncols())).norm()
    }

    #[test]
    fn spd_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_spd(&mut rng, 4);
        let same = spd_step(&g, &DMatrix::zeros(4, 4), 0.1).unwrap();
        assert!((same.matrix() - g.matrix()).norm() < 1e-12);

        let d = gaussian(&mut rng, 4, 4);
        let lr = 0.05;
        let stepped = spd_step(&SpdMatrix::identity(4), &d, lr).unwrap();
        let sym = SymMatrix::sym((&d + d.transpose()) * 0.5);
        let direct = sym_fun(&sym.scale(-lr), ScalarFun::Exp).unwrap();
        assert!((stepped.matrix() - direct.matrix()).norm() < 1e-12);

        for (g, d, lr) in [(2.0, 3.0, 0.1), (0.5, -4.0, 1.0), (3.0, 20.0, 10.0)] {
            let out = spd_step(
                &SpdMatrix::from_diagonal(&[g]).unwrap(),
                &DMatrix::from_element(1, 1, d),
                lr,
            )
            .unwrap();
            let expected = g * (-lr * g * d).exp();
            assert!((out[(0, 0)] - expected).abs() <= 1e-12 * expected);
            assert!(out[(0, 0)] > 0.0);
        }
    }

    #[test]
    fn spd_step_moves_along_the_geodesic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_spd(&mut rng, 5);
        let d = gaussian(&mut rng, 5, 5);
        let lr = 0.03;
        let next = spd_step(&g, &d, lr).unwrap();
        let riem = spd_riemannian_gradient(&g, &d).scale(lr);
        let norm = 0.5 * SpdRoots::new(&g).unwrap().whiten(riem.matrix()).norm();
        assert!((airm_distance(&g, &next).unwrap() - norm).abs() < 1e-8);
    }

    #[test]
    fn stiefel_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = orthonormal_factor(&gaussian(&mut rng, 6, 3)).unwrap();
        let same = stiefel_step(&w, &DMatrix::zeros(6, 3), 0.1).unwrap();
        assert!((&same - &w).norm() < 1e-12);

        let s = random_sym(&mut rng, 3, 1.0);
        let normal = &w * s.matrix();
        assert!(stiefel_tangent(&w, &normal).norm() < 1e-12);
        let same = stiefel_step(&w, &normal, 0.1).unwrap();
        assert!((&same - &w).norm() < 1e-12);

        let d = gaussian(&mut rng, 6, 3);
        let next = stiefel_step(&w, &d, 0.2).unwrap();
        assert!(ortho_err(&next) < 1e-10);
    }

    #[test]
    fn stiefel_step_decreases_a_quadratic_loss() {
        // loss(W) = ½‖W − T‖², Euclidean gradient W − T
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = orthonormal_factor(&gaussian(&mut rng, 5, 2)).unwrap();
        let t = gaussian(&mut rng, 5, 2);
        let loss = |w: &DMatrix<f64>| 0.5 * (w - &t).norm_squared();
        let grad = &w - &t;
        let next = stiefel_step(&w, &grad, 1e-4).unwrap();
        assert!(loss(&next) < loss(&w));
        assert_eq!(stiefel_step(&w, &grad, 0.0).unwrap(), orthonormal_factor(&w).unwrap());
    }

    #[test]
    fn qr_rejects_rank_deficiency() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(orthonormal_factor(&m), Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn sgd_cases() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        euclid_sgd_step(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0);
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);

        let mut p = vec![3.0];
        let mut v = vec![0.0];
        euclid_sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9);
        assert_eq!(p, vec![3.0]);

        // two steps, constant gradient: displacement lr·g·(1 + 1.9)
        let (lr, g) = (0.1, 2.0);
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        euclid_sgd_step(&mut p, &[g], &mut v, lr, 0.9);
        euclid_sgd_step(&mut p, &[g], &mut v, lr, 0.9);
        assert!((p[0] + lr * g * (1.0 + 1.9)).abs() < 1e-15);
    }

    #[test]
    fn constraints_hold_over_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = orthonormal_factor(&gaussian(&mut rng, 8, 4)).unwrap();
        let mut g = random_spd(&mut rng, 4);
        for _ in 0..1000 {
            w = stiefel_step(&w, &gaussian(&mut rng, 8, 4), 0.05).unwrap();
            g = spd_step(&g, &(gaussian(&mut rng, 4, 4) * 0.1), 0.05).unwrap();
        }
        assert!(ortho_err(&w) < 1e-8);
        assert!(g.eig().unwrap().min_eigenvalue() > 0.0);
    }
}

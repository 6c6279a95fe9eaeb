use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Affine classification head `logits = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Gradients `(∂W, ∂b, ∂xᵢ)` of the head.
pub type HeadGrads = (DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>);

impl DenseHead {
    pub fn zeros(num_classes: usize, input_len: usize) -> Self {
        DenseHead {
            weights: DMatrix::zeros(num_classes, input_len),
            bias: DVector::zeros(num_classes),
        }
    }

    /// Gaussian weights with standard deviation `1/√input_len`, zero bias.
    pub fn random(num_classes: usize, input_len: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (input_len as f64).sqrt();
        DenseHead {
            weights: DMatrix::from_fn(num_classes, input_len, |_, _| {
                std * rng.sample::<f64, _>(StandardNormal)
            }),
            bias: DVector::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_len(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, features: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        features
            .iter()
            .map(|x| {
                if x.len() != self.input_len() {
                    return Err(Error::InvalidInput(format!(
                        "head expects {} features, got {}",
                        self.input_len(),
                        x.len()
                    )));
                }
                Ok(&self.weights * x + &self.bias)
            })
            .collect()
    }

    /// Returns `(∂W, ∂b, ∂xᵢ)`.
    pub fn backward(&self, features: &[DVector<f64>], dlogits: &[DVector<f64>]) -> Result<HeadGrads> {
        if features.len() != dlogits.len() {
            return Err(Error::InvalidInput(format!(
                "head: {} logit gradients for {} inputs",
                dlogits.len(),
                features.len()
            )));
        }
        let mut dw = DMatrix::zeros(self.num_classes(), self.input_len());
        let mut db = DVector::zeros(self.num_classes());
        let mut dx = Vec::with_capacity(features.len());
        for (x, d) in features.iter().zip(dlogits) {
            dw.ger(1.0, d, x, 1.0);
            db += d;
            dx.push(self.weights.tr_mul(d));
        }
        Ok((dw, db, dx))
    }
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// the logits.
pub fn softmax_xent(logits: &[DVector<f64>], labels: &[usize]) -> Result<(f64, Vec<DVector<f64>>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} logit vectors for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {} classes",
                z.len()
            )));
        }
        let max = z.max();
        let shifted = z.map(|v| (v - max).exp());
        let total = shifted.sum();
        loss += total.ln() - (z[y] - max);
        let mut g = shifted / total;
        g[y] -= 1.0;
        grads.push(g / n);
    }
    Ok((loss / n, grads))
}

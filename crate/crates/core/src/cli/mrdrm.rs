//! Minimum distance to Riemannian mean classifier.

use crate::error::{Error, Result};
use crate::manifold::{airm_distance_from, karcher_mean, KarcherConfig, SpdRoots, WeightVector};
use crate::net::SpdBatch;
use crate::symlin::SpdMatrix;

/// One Karcher mean per class; a query goes to the class whose mean is closest
/// in AIRM distance, ties to the lowest class index.
#[derive(Clone, Debug)]
pub struct Mrdrm {
    means: Vec<SpdMatrix>,
    roots: Vec<SpdRoots>,
}

impl Mrdrm {
    pub fn fit(train: &SpdBatch, num_classes: usize, cfg: &KarcherConfig) -> Result<Self> {
        let labels = train
            .labels()
            .ok_or_else(|| Error::InvalidInput("baseline needs labeled training data".into()))?;
        let mut means = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let pts: Vec<SpdMatrix> = train
                .items()
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p.clone())
                .collect();
            if pts.is_empty() {
                return Err(Error::InvalidInput(format!("class {c} has no training points")));
            }
            means.push(karcher_mean(&pts, &WeightVector::uniform(pts.len()), cfg)?.mean);
        }
        Mrdrm::from_means(means)
    }

    pub fn from_means(means: Vec<SpdMatrix>) -> Result<Self> {
        let roots = means.iter().map(SpdRoots::new).collect::<Result<_>>()?;
        Ok(Mrdrm { means, roots })
    }

    pub fn means(&self) -> &[SpdMatrix] {
        &self.means
    }

    pub fn distances(&self, p: &SpdMatrix) -> Result<Vec<f64>> {
        self.roots.iter().map(|r| airm_distance_from(r, p)).collect()
    }

    pub fn predict_one(&self, p: &SpdMatrix) -> Result<usize> {
        Ok(argmin(&self.distances(p)?))
    }

    pub fn predict(&self, items: &[SpdMatrix]) -> Result<Vec<usize>> {
        items.iter().map(|p| self.predict_one(p)).collect()
    }
}

/// Index of the smallest entry, the first one on ties.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::random_spd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_classes_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items: Vec<SpdMatrix> = (0..4).map(|_| random_spd(&mut rng, 4)).collect();
        let batch = SpdBatch::new(items.clone(), Some(vec![0, 1, 2, 3])).unwrap();
        let m = Mrdrm::fit(&batch, 4, &KarcherConfig::default()).unwrap();
        assert_eq!(m.predict(&items).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
        let p = SpdMatrix::identity(3);
        let m = Mrdrm::from_means(vec![SpdMatrix::from_diagonal(&[2.0; 3]).unwrap(), p.clone(), p.clone()]).unwrap();
        assert_eq!(m.predict_one(&p).unwrap(), 1);
    }

    #[test]
    fn argmin_invariant_to_positive_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let means: Vec<SpdMatrix> = (0..3).map(|_| random_spd(&mut rng, 4)).collect();
        let m = Mrdrm::from_means(means).unwrap();
        for _ in 0..20 {
            let d = m.distances(&random_spd(&mut rng, 4)).unwrap();
            let scaled: Vec<f64> = d.iter().map(|x| 7.5 * x).collect();
            assert_eq!(argmin(&d), argmin(&scaled));
        }
    }

    #[test]
    fn empty_class_rejected() {
        let batch = SpdBatch::new(vec![SpdMatrix::identity(2)], Some(vec![0])).unwrap();
        assert!(Mrdrm::fit(&batch, 2, &KarcherConfig::default()).is_err());
    }
}

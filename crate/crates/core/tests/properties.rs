mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use spdnet::data::split_indices;
use spdnet::manifold::{airm_distance, exp_map, geodesic_barycenter2, log_map};
use spdnet::optim::{orthonormal_factor, spd_step, stiefel_step};
use spdnet::symlin::{spd_fun, sym_eig};
use spdnet::{ScalarFun, SpdMatrix};

fn spd_pair() -> impl Strategy<Value = (SpdMatrix, SpdMatrix)> {
    (2usize..8, any::<u64>()).prop_map(|(n, seed)| {
        let mut r = rng(seed);
        (random_spd(&mut r, n), random_spd(&mut r, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigendecomposition_reconstructs((p, _) in spd_pair()) {
        let e = p.eig().unwrap();
        prop_assert!((e.reconstruct().matrix() - p.matrix()).norm() < 1e-10 * p.matrix().norm());
        prop_assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        let q = &e.basis;
        prop_assert!((q.transpose() * q - DMatrix::identity(p.dim(), p.dim())).norm() < 1e-10);
        let s = sym_eig(&p.to_sym()).unwrap();
        prop_assert_eq!(s.eigenvalues, e.eigenvalues);
    }

    #[test]
    fn distance_is_a_symmetric_positive_function((p, q) in spd_pair()) {
        let (d1, d2) = (airm_distance(&p, &q).unwrap(), airm_distance(&q, &p).unwrap());
        prop_assert!(d1 > 0.0);
        prop_assert!((d1 - d2).abs() < 1e-9 * d1.max(1.0));
        prop_assert!(airm_distance(&p, &p).unwrap() < 1e-7);
    }

    #[test]
    fn log_then_exp_is_identity((p, q) in spd_pair()) {
        let back = exp_map(&p, &log_map(&p, &q).unwrap()).unwrap();
        prop_assert!((back.matrix() - q.matrix()).norm() < 1e-8 * q.matrix().norm());
    }

    #[test]
    fn barycenter_splits_the_geodesic((p, q) in spd_pair(), w in 0.0f64..1.0) {
        let b = geodesic_barycenter2(&p, &q, w).unwrap();
        let d = airm_distance(&p, &q).unwrap();
        prop_assert!((airm_distance(&p, &b).unwrap() - (1.0 - w) * d).abs() < 1e-7);
        prop_assert!((airm_distance(&b, &q).unwrap() - w * d).abs() < 1e-7);
    }

    #[test]
    fn sqrt_squares_back((p, _) in spd_pair()) {
        let s = spd_fun(&p, ScalarFun::Sqrt).unwrap();
        prop_assert!((s.matrix() * s.matrix() - p.matrix()).norm() < 1e-9 * p.matrix().norm());
    }

    #[test]
    fn steps_stay_on_their_manifolds(n_in in 2usize..9, k in 1usize..9, seed in any::<u64>(), lr in 1e-4f64..1.0) {
        let n_out = k.min(n_in);
        let mut r = rng(seed);
        let w = orthonormal_factor(&gaussian(&mut r, n_in, n_out)).unwrap();
        let w2 = stiefel_step(&w, &gaussian(&mut r, n_in, n_out), lr).unwrap();
        prop_assert!(ortho_err(&w2) < 1e-10);
        let g = random_spd(&mut r, n_in);
        let g2 = spd_step(&g, &gaussian(&mut r, n_in, n_in), lr).unwrap();
        prop_assert!(g2.eig().unwrap().min_eigenvalue() > 0.0);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_stratified(
        counts in proptest::collection::vec(4usize..40, 1..5),
        f in 0.3f64..0.7,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
        let (tr, te) = split_indices(&labels, f, seed).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &k) in counts.iter().enumerate() {
            let got = tr.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(got, (f * k as f64).round() as usize);
        }
        prop_assert_eq!(split_indices(&labels, f, seed).unwrap(), (tr, te));
    }
}

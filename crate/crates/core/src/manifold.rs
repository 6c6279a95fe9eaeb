//! Affine-invariant geometry of the SPD cone: distance, exponential and
//! logarithmic mappings, barycenters, parallel transport and the
//! maximum-entropy log-density.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symlin::{sym_eig, sym_fun, ScalarFun, SpdMatrix, SymMatrix};

/// How the Karcher flow picks its starting point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KarcherInit {
    ArithmeticMean,
    FirstElement,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KarcherConfig {
    pub max_iters: usize,
    /// Convergence threshold on the Frobenius norm of the tangent mean,
    /// relative to `1 + ‖G‖_F`.
    pub step_tol: f64,
    pub init: KarcherInit,
}

impl Default for KarcherConfig {
    fn default() -> Self {
        KarcherConfig {
            max_iters: 10,
            step_tol: 1e-6,
            init: KarcherInit::ArithmeticMean,
        }
    }
}

impl KarcherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.step_tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "karcher config needs max_iters >= 1 and step_tol > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Convex weights: non-negative and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidInput("empty weight vector".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `P^{1/2}` and `P^{-1/2}` from a single eigendecomposition.
#[derive(Clone, Debug)]
pub struct SpdRoots {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

impl SpdRoots {
    pub fn new(p: &SpdMatrix) -> Result<Self> {
        let eig = p.eig()?;
        Ok(SpdRoots {
            sqrt: eig.apply(ScalarFun::Sqrt)?.into_matrix(),
            inv_sqrt: eig.apply(ScalarFun::InvSqrt)?.into_matrix(),
        })
    }

    /// `P^{-1/2} X P^{-1/2}`
    pub fn whiten(&self, x: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::sym(&self.inv_sqrt * x * &self.inv_sqrt)
    }

    /// `P^{1/2} X P^{1/2}`
    pub fn color(&self, x: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::sym(&self.sqrt * x * &self.sqrt)
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// `½ Σ log²(σᵢ)` square-rooted: half the Frobenius norm of a matrix log,
/// from the eigenvalues of the whitened point.
fn half_log_norm(q: &SymMatrix) -> Result<f64> {
    let eig = sym_eig(q)?;
    let mut acc = 0.0;
    for &s in eig.eigenvalues.iter() {
        if !(s > 0.0) {
            return Err(Error::Domain {
                function: "log".into(),
                eigenvalue: s,
            });
        }
        acc += s.ln().powi(2);
    }
    Ok(0.5 * acc.sqrt())
}

/// Affine-invariant distance `½ ‖log(P1^{-1/2} P2 P1^{-1/2})‖_F`.
pub fn airm_distance(p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64> {
    check_dims(p1.dim(), p2.dim())?;
    let roots = SpdRoots::new(p1)?;
    half_log_norm(&roots.whiten(p2))
}

/// Distance from a point with precomputed roots.
pub fn airm_distance_from(roots: &SpdRoots, p: &SpdMatrix) -> Result<f64> {
    check_dims(roots.sqrt.nrows(), p.dim())?;
    half_log_norm(&roots.whiten(p))
}

/// `Exp_{P0}(S) = P0^{1/2} exp(P0^{-1/2} S P0^{-1/2}) P0^{1/2}`.
pub fn exp_map(p0: &SpdMatrix, s: &SymMatrix) -> Result<SpdMatrix> {
    check_dims(p0.dim(), s.dim())?;
    let roots = SpdRoots::new(p0)?;
    exp_map_from(&roots, s)
}

pub fn exp_map_from(roots: &SpdRoots, s: &SymMatrix) -> Result<SpdMatrix> {
    let inner = sym_fun(&roots.whiten(s), ScalarFun::Exp)?;
    Ok(SpdMatrix::from_sym_unchecked(roots.color(&inner)))
}

/// `Log_{P0}(P) = P0^{1/2} log(P0^{-1/2} P P0^{-1/2}) P0^{1/2}`.
pub fn log_map(p0: &SpdMatrix, p: &SpdMatrix) -> Result<SymMatrix> {
    check_dims(p0.dim(), p.dim())?;
    let roots = SpdRoots::new(p0)?;
    log_map_from(&roots, p)
}

pub fn log_map_from(roots: &SpdRoots, p: &SpdMatrix) -> Result<SymMatrix> {
    let inner = sym_fun(&roots.whiten(p), ScalarFun::Log)?;
    Ok(roots.color(&inner))
}

/// Weighted barycenter of two points, `P2^{1/2} (P2^{-1/2} P1 P2^{-1/2})^w P2^{1/2}`.
/// `w = 1` gives `P1`, `w = 0` gives `P2`.
pub fn geodesic_barycenter2(p1: &SpdMatrix, p2: &SpdMatrix, w: f64) -> Result<SpdMatrix> {
    check_dims(p1.dim(), p2.dim())?;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidInput(format!("barycenter weight {w} is outside [0, 1]")));
    }
    if w == 0.0 {
        return Ok(p2.clone());
    }
    if w == 1.0 {
        return Ok(p1.clone());
    }
    let roots = SpdRoots::new(p2)?;
    let pw = sym_fun(&roots.whiten(p1), ScalarFun::Power(w))?;
    Ok(SpdMatrix::from_sym_unchecked(roots.color(&pw)))
}

/// Outcome of a Karcher flow run.
#[derive(Clone, Debug)]
pub struct KarcherResult {
    pub mean: SpdMatrix,
    pub converged: bool,
    /// Number of tangent-mean evaluations.
    pub iterations: usize,
    /// Weighted inertia `Σ wᵢ δ²(G, Pᵢ)` at each evaluated iterate.
    pub inertia: Vec<f64>,
    /// The iterate the final flow step started from; `None` if no step was taken.
    pub previous: Option<SpdMatrix>,
}

/// Result of one tangent-space averaging pass at a base point.
pub(crate) struct TangentMean {
    pub roots: SpdRoots,
    /// `Σ wᵢ log(G^{-1/2} Pᵢ G^{-1/2})`, the tangent mean in whitened coordinates.
    pub whitened: SymMatrix,
    pub inertia: f64,
}

pub(crate) fn tangent_mean(g: &SpdMatrix, points: &[SpdMatrix], weights: &[f64]) -> Result<TangentMean> {
    let roots = SpdRoots::new(g)?;
    let n = g.dim();
    let mut acc = DMatrix::zeros(n, n);
    let mut inertia = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        let eig = sym_eig(&roots.whiten(p))?;
        let log = eig.apply(ScalarFun::Log)?;
        let sq: f64 = eig.eigenvalues.iter().map(|s| s.ln().powi(2)).sum();
        inertia += w * 0.25 * sq;
        acc += log.matrix() * w;
    }
    Ok(TangentMean {
        roots,
        whitened: SymMatrix::sym(acc),
        inertia,
    })
}

/// One full flow step `G ← Exp_G(Σ wᵢ Log_G(Pᵢ))`.
pub fn karcher_step(g: &SpdMatrix, points: &[SpdMatrix], weights: &WeightVector) -> Result<SpdMatrix> {
    let tm = tangent_mean(g, points, weights.as_slice())?;
    let e = sym_fun(&tm.whitened, ScalarFun::Exp)?;
    Ok(SpdMatrix::from_sym_unchecked(tm.roots.color(&e)))
}

fn arithmetic_mean(points: &[SpdMatrix], weights: &[f64]) -> SpdMatrix {
    let n = points[0].dim();
    let mut acc = DMatrix::zeros(n, n);
    for (p, &w) in points.iter().zip(weights) {
        acc += p.matrix() * w;
    }
    SpdMatrix::from_sym_unchecked(SymMatrix::sym(acc))
}

/// Weighted Fréchet mean by Karcher flow with unit step. Running out of
/// iterations is reported through [`KarcherResult::converged`], not as an error.
pub fn karcher_mean(points: &[SpdMatrix], weights: &WeightVector, cfg: &KarcherConfig) -> Result<KarcherResult> {
    cfg.validate()?;
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("karcher mean of an empty batch".into()))?;
    if weights.len() != points.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} points",
            weights.len(),
            points.len()
        )));
    }
    for p in points {
        check_dims(first.dim(), p.dim())?;
    }

    let mut g = match cfg.init {
        KarcherInit::ArithmeticMean => arithmetic_mean(points, weights.as_slice()),
        KarcherInit::FirstElement => first.clone(),
    };
    let mut previous = None;
    let mut inertia = Vec::with_capacity(cfg.max_iters);
    for it in 1..=cfg.max_iters {
        let tm = tangent_mean(&g, points, weights.as_slice())?;
        inertia.push(tm.inertia);
        let tangent = tm.roots.color(tm.whitened.matrix());
        if tangent.norm() < cfg.step_tol * (1.0 + g.norm()) {
            return Ok(KarcherResult {
                mean: g,
                converged: true,
                iterations: it,
                inertia,
                previous,
            });
        }
        let e = sym_fun(&tm.whitened, ScalarFun::Exp)?;
        let next = SpdMatrix::from_sym_unchecked(tm.roots.color(&e));
        previous = Some(std::mem::replace(&mut g, next));
    }
    Ok(KarcherResult {
        mean: g,
        converged: false,
        iterations: cfg.max_iters,
        inertia,
        previous,
    })
}

/// The matrix `E = (P2 P1^{-1})^{1/2}`, computed through symmetric
/// decompositions only as `P1^{1/2} (P1^{-1/2} P2 P1^{-1/2})^{1/2} P1^{-1/2}`.
/// Transport from `P1` to `P2` is the congruence `X ↦ E X Eᵀ`.
pub fn transport_matrix(p1: &SpdMatrix, p2: &SpdMatrix) -> Result<DMatrix<f64>> {
    check_dims(p1.dim(), p2.dim())?;
    let roots = SpdRoots::new(p1)?;
    let mid = sym_fun(&roots.whiten(p2), ScalarFun::Sqrt)?;
    Ok(&roots.sqrt * mid.matrix() * &roots.inv_sqrt)
}

/// Parallel transport of a tangent vector at `P1` to the tangent space at `P2`.
pub fn parallel_transport(p1: &SpdMatrix, p2: &SpdMatrix, s: &SymMatrix) -> Result<SymMatrix> {
    check_dims(p1.dim(), s.dim())?;
    Ok(s.congruence(&transport_matrix(p1, p2)?))
}

/// Point-level transport (log map, parallel transport, exp map), which reduces
/// to the same congruence as [`parallel_transport`].
pub fn spd_transport(p1: &SpdMatrix, p2: &SpdMatrix, p: &SpdMatrix) -> Result<SpdMatrix> {
    check_dims(p1.dim(), p.dim())?;
    Ok(p.congruence(&transport_matrix(p1, p2)?))
}

/// Unnormalized log-density `log det(α M⁻¹) − tr(α M⁻¹ P)` with `α = (n+1)/2`.
pub fn spd_log_density(p: &SpdMatrix, mean: &SpdMatrix) -> Result<f64> {
    check_dims(p.dim(), mean.dim())?;
    let n = p.dim();
    let alpha = (n as f64 + 1.0) / 2.0;
    let chol = mean
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("mean is not positive definite".into()))?;
    let log_det_mean: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = chol.solve(p.matrix()).trace();
    Ok(n as f64 * alpha.ln() - log_det_mean - alpha * trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{gaussian, random_spd, random_sym, rel_frob};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn distance_basic_cases() {
        let mut r = rng(10);
        let p = random_spd(&mut r, 5);
        assert!(airm_distance(&p, &p).unwrap() < 1e-9);

        let e2 = std::f64::consts::E.powi(2);
        let d = airm_distance(&SpdMatrix::identity(1), &SpdMatrix::from_diagonal(&[e2]).unwrap()).unwrap();
        assert!((d - 0.5 * e2.ln()).abs() < 1e-15);
        assert!((d - 1.0).abs() < 1e-14);

        let q = random_spd(&mut r, 5);
        let d1 = airm_distance(&p, &q).unwrap();
        let d2 = airm_distance(&q, &p).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(airm_distance(&p, &SpdMatrix::identity(4)).is_err());
    }

    #[test]
    fn distance_is_affine_invariant() {
        let mut r = rng(11);
        for _ in 0..10 {
            let p = random_spd(&mut r, 5);
            let q = random_spd(&mut r, 5);
            let a = gaussian(&mut r, 5, 5);
            let d = airm_distance(&p, &q).unwrap();
            let da = airm_distance(&p.congruence(&a), &q.congruence(&a)).unwrap();
            assert!((d - da).abs() < 1e-8, "{d} vs {da}");
        }
    }

    #[test]
    fn exp_log_basic_cases() {
        let mut r = rng(12);
        let p0 = random_spd(&mut r, 4);
        let e = exp_map(&p0, &SymMatrix::zeros(4)).unwrap();
        assert!(rel_frob(e.matrix(), p0.matrix()) < 1e-12);
        assert!(log_map(&p0, &p0).unwrap().norm() < 1e-12);

        let s = random_sym(&mut r, 4, 1.0);
        let e = exp_map(&SpdMatrix::identity(4), &s).unwrap();
        let direct = sym_fun(&s, ScalarFun::Exp).unwrap();
        assert!(rel_frob(e.matrix(), direct.matrix()) < 1e-12);

        let p = random_spd(&mut r, 4);
        let l = log_map(&SpdMatrix::identity(4), &p).unwrap();
        let direct = crate::symlin::spd_fun(&p, ScalarFun::Log).unwrap();
        assert!((l.matrix() - direct.matrix()).norm() < 1e-12);
    }

    #[test]
    fn exp_log_round_trips() {
        let mut r = rng(13);
        for _ in 0..10 {
            let p0 = random_spd(&mut r, 5);
            let p = random_spd(&mut r, 5);
            let back = exp_map(&p0, &log_map(&p0, &p).unwrap()).unwrap();
            assert!(rel_frob(back.matrix(), p.matrix()) < 1e-8);

            // tangent vector of Riemannian norm 5 at p0
            let s0 = random_sym(&mut r, 5, 1.0);
            let s = SpdRoots::new(&p0).unwrap().color(&(s0.matrix() * (5.0 / s0.norm())));
            let back = log_map(&p0, &exp_map(&p0, &s).unwrap()).unwrap();
            assert!(rel_frob(back.matrix(), s.matrix()) < 1e-8);
        }
    }

    #[test]
    fn log_map_norm_matches_distance() {
        let mut r = rng(14);
        for _ in 0..5 {
            let p0 = random_spd(&mut r, 6);
            let p = random_spd(&mut r, 6);
            let roots = SpdRoots::new(&p0).unwrap();
            let l = log_map(&p0, &p).unwrap();
            let lhs = 0.5 * roots.whiten(l.matrix()).norm();
            assert!((lhs - airm_distance(&p0, &p).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn barycenter2_endpoints_and_commuting_case() {
        let mut r = rng(15);
        let p1 = random_spd(&mut r, 3);
        let p2 = random_spd(&mut r, 3);
        assert_eq!(geodesic_barycenter2(&p1, &p2, 1.0).unwrap(), p1);
        assert_eq!(geodesic_barycenter2(&p1, &p2, 0.0).unwrap(), p2);
        assert!(geodesic_barycenter2(&p1, &p2, 1.5).is_err());
        assert!(geodesic_barycenter2(&p1, &p2, -0.1).is_err());

        let a = SpdMatrix::from_diagonal(&[1.0, 1.0]).unwrap();
        let b = SpdMatrix::from_diagonal(&[4.0, 4.0]).unwrap();
        let m = geodesic_barycenter2(&a, &b, 0.5).unwrap();
        let geo = (1.0f64 * 4.0).sqrt();
        assert!((m.matrix() - DMatrix::identity(2, 2) * geo).norm() < 1e-12);
    }

    #[test]
    fn barycenter2_traces_the_geodesic() {
        let mut r = rng(16);
        let p1 = random_spd(&mut r, 5);
        let p2 = random_spd(&mut r, 5);
        let d = airm_distance(&p2, &p1).unwrap();
        for w in [0.25, 0.5, 0.75] {
            let b = geodesic_barycenter2(&p1, &p2, w).unwrap();
            assert!((airm_distance(&p2, &b).unwrap() - w * d).abs() < 1e-7);
        }
    }

    #[test]
    fn barycenter2_is_a_local_minimizer() {
        let mut r = rng(17);
        let p1 = random_spd(&mut r, 4);
        let p2 = random_spd(&mut r, 4);
        let w = 0.3;
        let objective = |g: &SpdMatrix| {
            w * airm_distance(g, &p1).unwrap().powi(2) + (1.0 - w) * airm_distance(g, &p2).unwrap().powi(2)
        };
        let g = geodesic_barycenter2(&p1, &p2, w).unwrap();
        let best = objective(&g);
        for _ in 0..20 {
            let dir = random_sym(&mut r, 4, 1e-3);
            let perturbed = exp_map(&g, &dir).unwrap();
            assert!(objective(&perturbed) >= best - 1e-14);
        }
    }

    #[test]
    fn karcher_identical_points() {
        let mut r = rng(18);
        let p = random_spd(&mut r, 4);
        let pts = vec![p.clone(); 5];
        let res = karcher_mean(&pts, &WeightVector::uniform(5), &KarcherConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.previous.is_none());
        assert!(rel_frob(res.mean.matrix(), p.matrix()) < 1e-12);
    }

    #[test]
    fn karcher_two_points_matches_closed_form() {
        let mut r = rng(19);
        for _ in 0..5 {
            let p1 = random_spd(&mut r, 5);
            let p2 = random_spd(&mut r, 5);
            let cfg = KarcherConfig {
                max_iters: 100,
                step_tol: 1e-10,
                ..Default::default()
            };
            let res = karcher_mean(&[p1.clone(), p2.clone()], &WeightVector::uniform(2), &cfg).unwrap();
            assert!(res.converged);
            let closed = geodesic_barycenter2(&p1, &p2, 0.5).unwrap();
            assert!((res.mean.matrix() - closed.matrix()).norm() < 1e-7);
        }
    }

    #[test]
    fn karcher_inertia_is_non_increasing_and_fixed_point_holds() {
        let mut r = rng(20);
        let pts: Vec<_> = (0..12).map(|_| random_spd(&mut r, 6)).collect();
        let mut w: Vec<f64> = (1..=12).map(|i| i as f64).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let weights = WeightVector::new(w).unwrap();
        let cfg = KarcherConfig {
            max_iters: 50,
            ..Default::default()
        };
        let res = karcher_mean(&pts, &weights, &cfg).unwrap();
        assert!(res.converged);
        for pair in res.inertia.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{:?}", res.inertia);
        }
        let g = &res.mean;
        let mut t = DMatrix::zeros(6, 6);
        for (p, &wi) in pts.iter().zip(weights.as_slice()) {
            t += log_map(g, p).unwrap().matrix() * wi;
        }
        assert!(t.norm() < cfg.step_tol * (1.0 + g.norm()));
    }

    #[test]
    fn karcher_is_affine_equivariant() {
        let mut r = rng(21);
        let pts: Vec<_> = (0..8).map(|_| random_spd(&mut r, 4)).collect();
        let a = gaussian(&mut r, 4, 4) + DMatrix::identity(4, 4) * 2.0;
        let cfg = KarcherConfig {
            max_iters: 100,
            step_tol: 1e-12,
            ..Default::default()
        };
        let w = WeightVector::uniform(8);
        let m = karcher_mean(&pts, &w, &cfg).unwrap().mean;
        let moved: Vec<_> = pts.iter().map(|p| p.congruence(&a)).collect();
        let mm = karcher_mean(&moved, &w, &cfg).unwrap().mean;
        assert!(rel_frob(mm.matrix(), m.congruence(&a).matrix()) < 1e-6);
    }

    #[test]
    fn karcher_rejects_bad_input() {
        let cfg = KarcherConfig::default();
        assert!(karcher_mean(&[], &WeightVector::uniform(1), &cfg).is_err());
        let p = SpdMatrix::identity(2);
        assert!(karcher_mean(std::slice::from_ref(&p), &WeightVector::uniform(2), &cfg).is_err());
        let bad = KarcherConfig { max_iters: 0, ..cfg };
        assert!(karcher_mean(&[p], &WeightVector::uniform(1), &bad).is_err());
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn karcher_non_convergence_is_flagged() {
        let mut r = rng(22);
        let pts: Vec<_> = (0..6).map(|_| random_spd(&mut r, 5)).collect();
        let cfg = KarcherConfig {
            max_iters: 1,
            step_tol: 1e-14,
            ..Default::default()
        };
        let res = karcher_mean(&pts, &WeightVector::uniform(6), &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.previous.is_some());
    }

    #[test]
    fn transport_cases() {
        let mut r = rng(23);
        let p = random_spd(&mut r, 4);
        let s = random_sym(&mut r, 4, 1.0);
        let same = parallel_transport(&p, &p, &s).unwrap();
        assert!((same.matrix() - s.matrix()).norm() < 1e-10);

        let g = random_spd(&mut r, 4);
        let x = random_spd(&mut r, 4);
        let centered = spd_transport(&g, &SpdMatrix::identity(4), &x).unwrap();
        let roots = SpdRoots::new(&g).unwrap();
        assert!(rel_frob(centered.matrix(), roots.whiten(x.matrix()).matrix()) < 1e-10);

        let y = random_spd(&mut r, 4);
        let d = airm_distance(&x, &y).unwrap();
        let cy = spd_transport(&g, &SpdMatrix::identity(4), &y).unwrap();
        assert!((airm_distance(&centered, &cy).unwrap() - d).abs() < 1e-8);
    }

    #[test]
    fn transport_matrix_squares_to_p2_p1_inverse() {
        let mut r = rng(24);
        let p1 = random_spd(&mut r, 5);
        let p2 = random_spd(&mut r, 5);
        let e = transport_matrix(&p1, &p2).unwrap();
        let target = p2.matrix() * p1.matrix().clone().try_inverse().unwrap();
        assert!(rel_frob(&(&e * &e), &target) < 1e-10);
        // transport along the geodesic maps P1 to P2
        let moved = spd_transport(&p1, &p2, &p1).unwrap();
        assert!(rel_frob(moved.matrix(), p2.matrix()) < 1e-10);
    }

    #[test]
    fn log_density_cases() {
        let v = spd_log_density(
            &SpdMatrix::from_diagonal(&[2.0]).unwrap(),
            &SpdMatrix::from_diagonal(&[1.0]).unwrap(),
        )
        .unwrap();
        assert!((v + 2.0).abs() < 1e-15);

        let mut r = rng(25);
        let p = random_spd(&mut r, 4);
        let m = random_spd(&mut r, 4);
        let q = crate::symlin::sym_eig(&random_sym(&mut r, 4, 1.0)).unwrap().basis;
        let a = spd_log_density(&p, &m).unwrap();
        let b = spd_log_density(&p.congruence(&q), &m.congruence(&q)).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn log_density_is_maximized_over_the_mean_at_alpha_p() {
        // d/dM [-log det M - α tr(M⁻¹P)] = -M⁻¹ + α M⁻¹ P M⁻¹ vanishes at M = αP.
        let mut r = rng(26);
        let n = 4;
        let p = random_spd(&mut r, n);
        let alpha = (n as f64 + 1.0) / 2.0;
        let best_mean = SpdMatrix::new(p.matrix() * alpha).unwrap();
        let best = spd_log_density(&p, &best_mean).unwrap();
        for _ in 0..20 {
            let perturbed = exp_map(&best_mean, &random_sym(&mut r, n, 1e-2)).unwrap();
            assert!(spd_log_density(&p, &perturbed).unwrap() < best);
        }
    }
}

//! Symmetric eigendecomposition, spectral matrix functions `U f(Σ) Uᵀ` and
//! their exact backward pass through the Loewner (divided-difference) matrix.

use std::fmt;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative gap under which two eigenvalues are treated as equal by
/// [`loewner`].
pub const DEFAULT_PAIR_TOL: f64 = 1e-8;

const EIG_MAX_ITERS: usize = 10_000;
const SIGN_TOL: f64 = 1e-10;

/// A symmetric matrix. Tangent vectors and gradients live here.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

/// A symmetric positive definite matrix: a point of the manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl SymMatrix {
    /// Wraps `m`, replacing it by `(m + mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        Ok(SymMatrix(symmetrize(m)))
    }

    /// Symmetrizes a matrix known to be square.
    pub(crate) fn sym(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        SymMatrix(symmetrize(m))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, a: f64) -> SymMatrix {
        SymMatrix(&self.0 * a)
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &SymMatrix, b: f64) -> SymMatrix {
        SymMatrix(&self.0 * a + &other.0 * b)
    }

    /// `A · self · Aᵀ` for any conformable `A`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::sym(a * &self.0 * a.transpose())
    }
}

impl SpdMatrix {
    /// Symmetrizes `m` and verifies positive definiteness with a Cholesky factorization.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let m = symmetrize(m);
        if m.clone().cholesky().is_none() {
            return Err(Error::InvalidInput("matrix is not positive definite".into()));
        }
        Ok(SpdMatrix(m))
    }

    /// Wraps a matrix that is SPD by construction (congruences, spectral maps with
    /// positive outputs). Only symmetrizes.
    pub(crate) fn from_sym_unchecked(s: SymMatrix) -> Self {
        SpdMatrix(s.0)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    /// Diagonal SPD matrix; every entry of `d` must be positive.
    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        if d.is_empty() || d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("diagonal {d:?} is not positive")));
        }
        Ok(SpdMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d))))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    pub fn eig(&self) -> Result<EigDecomposition> {
        sym_eig_matrix(&self.0)
    }

    /// `A · self · Aᵀ`. Positive definite whenever `A` has full row rank.
    pub fn congruence(&self, a: &DMatrix<f64>) -> SpdMatrix {
        SpdMatrix(symmetrize(a * &self.0 * a.transpose()))
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Deref for SpdMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<SpdMatrix> for SymMatrix {
    fn from(p: SpdMatrix) -> Self {
        SymMatrix(p.0)
    }
}

/// Orthonormal eigenbasis (columns) and ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct EigDecomposition {
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

/// Scalar function applied to eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "param", rename_all = "snake_case")]
pub enum ScalarFun {
    Sqrt,
    InvSqrt,
    Log,
    Exp,
    Power(f64),
    /// `max(σ, ε)`; derivative 1 above ε and 0 otherwise.
    Rect(f64),
}

impl fmt::Display for ScalarFun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFun::Sqrt => write!(f, "sqrt"),
            ScalarFun::InvSqrt => write!(f, "invsqrt"),
            ScalarFun::Log => write!(f, "log"),
            ScalarFun::Exp => write!(f, "exp"),
            ScalarFun::Power(w) => write!(f, "power({w})"),
            ScalarFun::Rect(eps) => write!(f, "rect({eps})"),
        }
    }
}

impl ScalarFun {
    pub fn value(self, s: f64) -> f64 {
        match self {
            ScalarFun::Sqrt => s.sqrt(),
            ScalarFun::InvSqrt => 1.0 / s.sqrt(),
            ScalarFun::Log => s.ln(),
            ScalarFun::Exp => s.exp(),
            ScalarFun::Power(w) => s.powf(w),
            ScalarFun::Rect(eps) => s.max(eps),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            ScalarFun::Sqrt => 0.5 / s.sqrt(),
            ScalarFun::InvSqrt => -0.5 / (s * s.sqrt()),
            ScalarFun::Log => 1.0 / s,
            ScalarFun::Exp => s.exp(),
            ScalarFun::Power(w) => w * s.powf(w - 1.0),
            ScalarFun::Rect(eps) => {
                if s > eps {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether the function is only defined for strictly positive eigenvalues.
    pub fn needs_positive(self) -> bool {
        !matches!(self, ScalarFun::Exp | ScalarFun::Rect(_))
    }

    fn check(self, s: f64) -> Result<()> {
        if !s.is_finite() || (self.needs_positive() && s <= 0.0) {
            return Err(Error::Domain {
                function: self.to_string(),
                eigenvalue: s,
            });
        }
        Ok(())
    }

    /// `(f(a) - f(b)) / (a - b)` for `a != b`, in a cancellation-free form where
    /// one is available.
    fn divided_difference(self, a: f64, b: f64) -> f64 {
        match self {
            ScalarFun::Sqrt => 1.0 / (a.sqrt() + b.sqrt()),
            ScalarFun::InvSqrt => {
                let (ra, rb) = (a.sqrt(), b.sqrt());
                -1.0 / (ra * rb * (ra + rb))
            }
            ScalarFun::Log => (a / b).ln() / (a - b),
            ScalarFun::Exp => b.exp() * (a - b).exp_m1() / (a - b),
            ScalarFun::Power(_) | ScalarFun::Rect(_) => (self.value(a) - self.value(b)) / (a - b),
        }
    }
}

fn sym_eig_matrix(m: &DMatrix<f64>) -> Result<EigDecomposition> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(symmetrize(m.clone()), f64::EPSILON, EIG_MAX_ITERS)
        .ok_or_else(|| Error::NumericalFailure(format!("eigensolver did not converge on a {n}x{n} matrix")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut basis = DMatrix::zeros(n, n);
    let mut eigenvalues = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let flip = col.iter().find(|v| v.abs() > SIGN_TOL).is_some_and(|&v| v < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        basis.set_column(dst, &(col * sign));
    }
    Ok(EigDecomposition { basis, eigenvalues })
}

/// Eigendecomposition of a symmetric matrix with ascending eigenvalues and the
/// first non-negligible component of each eigenvector made positive.
pub fn sym_eig(s: &SymMatrix) -> Result<EigDecomposition> {
    sym_eig_matrix(&s.0)
}

impl EigDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// `U diag(d) Uᵀ`.
    pub fn compose(&self, d: &DVector<f64>) -> SymMatrix {
        let mut scaled = self.basis.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= d[j];
        }
        SymMatrix::sym(scaled * self.basis.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.compose(&self.eigenvalues)
    }

    /// `U f(Σ) Uᵀ`.
    pub fn apply(&self, f: ScalarFun) -> Result<SymMatrix> {
        for &s in self.eigenvalues.iter() {
            f.check(s)?;
        }
        Ok(self.compose(&self.eigenvalues.map(|s| f.value(s))))
    }

    /// Gradient of `⟨upstream, f(P)⟩` with respect to `P`, for the `P` this is
    /// the decomposition of: `U (L ⊙ (Uᵀ upstream U)) Uᵀ`.
    pub fn backward(&self, f: ScalarFun, upstream: &SymMatrix) -> Result<SymMatrix> {
        if upstream.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.dim(),
                upstream.dim(),
                self.dim(),
                self.dim()
            )));
        }
        let l = loewner(self.eigenvalues.as_slice(), f, DEFAULT_PAIR_TOL)?;
        let ut = self.basis.transpose();
        let inner = (&ut * upstream.matrix() * &self.basis).component_mul(&l);
        Ok(SymMatrix::sym(&self.basis * inner * ut))
    }
}

/// Loewner matrix of divided differences of `f` over `sigma`, with `f′` on the
/// (near-)diagonal branch.
pub fn loewner(sigma: &[f64], f: ScalarFun, pair_tol: f64) -> Result<DMatrix<f64>> {
    for &s in sigma {
        f.check(s)?;
    }
    let n = sigma.len();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = f.derivative(sigma[i]);
        for j in (i + 1)..n {
            let (a, b) = (sigma[i], sigma[j]);
            let scale = a.abs().max(b.abs()).max(1.0);
            let v = if (a - b).abs() > pair_tol * scale {
                f.divided_difference(a, b)
            } else {
                f.derivative(a)
            };
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    Ok(l)
}

/// `U f(Σ) Uᵀ` for an SPD matrix.
pub fn spd_fun(p: &SpdMatrix, f: ScalarFun) -> Result<SymMatrix> {
    p.eig()?.apply(f)
}

/// `U f(Σ) Uᵀ` for a general symmetric matrix; fails with [`Error::Domain`]
/// when `f` needs positive eigenvalues and one is not.
pub fn sym_fun(s: &SymMatrix, f: ScalarFun) -> Result<SymMatrix> {
    sym_eig(s)?.apply(f)
}

/// Like [`spd_fun`] for functions whose image is positive (sqrt, invsqrt, exp,
/// rect with ε > 0, powers).
pub fn spd_fun_spd(p: &SpdMatrix, f: ScalarFun) -> Result<SpdMatrix> {
    debug_assert!(!matches!(f, ScalarFun::Log));
    Ok(SpdMatrix::from_sym_unchecked(spd_fun(p, f)?))
}

/// Backward pass of [`spd_fun`].
pub fn spd_fun_backward(p: &SpdMatrix, f: ScalarFun, upstream: &SymMatrix) -> Result<SymMatrix> {
    p.eig()?.backward(f, upstream)
}

/// Backward pass of [`sym_fun`].
pub fn sym_fun_backward(s: &SymMatrix, f: ScalarFun, upstream: &SymMatrix) -> Result<SymMatrix> {
    sym_eig(s)?.backward(f, upstream)
}

/// Frobenius inner product `tr(Aᵀ B)`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

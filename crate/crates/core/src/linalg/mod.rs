//! Dense complex Hermitian linear algebra.
//!
//! Storage is column-major [`faer::Mat`] of [`C64`]. Eigendecompositions are
//! delegated to faer's self-adjoint solver; this module adds the input
//! validation, a deterministic eigenvector gauge, and an explicit
//! reconstruction-residual check so that every downstream sum knows how
//! accurate its spectrum is.

mod cache;
mod dense;

pub use cache::{read_eigensystem, write_eigensystem, EigenCache, EigensystemHeader};
pub use dense::{matmul, matmul_adj_lhs, matmul_adj_rhs, max_abs, real_times_complex, unitarity_defect};
pub(crate) use dense::{adj_mat_vec, dot, is_real, mat_vec, max_abs_diff, row_times};

use faer::{Mat, MatRef, Par, Side};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Inputs whose anti-Hermitian part exceeds this (relative to their largest
/// entry) are rejected instead of symmetrized.
const HERMITIAN_REJECT: f64 = 1e-8;

/// Relative reconstruction residual an eigendecomposition must meet.
pub const EIGEN_RESIDUAL_BOUND: f64 = 1e-9;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Dense square matrix equal to its conjugate transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    data: Mat<C64>,
}

impl HermitianMatrix {
    /// Validates and symmetrizes `m`. Entries are replaced by `(A + A^H)/2`
    /// so the stored matrix is exactly Hermitian.
    pub fn new(m: Mat<C64>) -> Result<Self> {
        let (rows, cols) = (m.nrows(), m.ncols());
        if rows != cols || rows == 0 {
            return Err(Error::BadShape { rows, cols });
        }
        let asym = asymmetry(m.as_ref());
        let scale = max_abs(m.as_ref()).max(1.0);
        if !(asym <= HERMITIAN_REJECT * scale) {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        let data = Mat::from_fn(rows, cols, |i, j| {
            if i == j {
                C64::new(m[(i, i)].re, 0.0)
            } else {
                (m[(i, j)] + m[(j, i)].conj()) * 0.5
            }
        });
        Ok(Self { data })
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Result<Self> {
        Self::new(Mat::from_fn(dim, dim, f))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_fn(diag.len(), |i, j| if i == j { C64::new(diag[i], 0.0) } else { ZERO })
    }

    pub(crate) fn from_trusted(data: Mat<C64>) -> Self {
        debug_assert!(asymmetry(data.as_ref()) == 0.0);
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_ref(&self) -> MatRef<'_, C64> {
        self.data.as_ref()
    }

    pub fn into_inner(self) -> Mat<C64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[(i, j)]
    }

    /// Largest entry modulus, `max_ij |A_ij|`.
    pub fn max_abs(&self) -> f64 {
        max_abs(self.data.as_ref())
    }

    pub fn is_real(&self) -> bool {
        is_real(self.data.as_ref())
    }

    pub fn asymmetry(&self) -> f64 {
        asymmetry(self.data.as_ref())
    }

    pub fn trace(&self) -> f64 {
        trace(self.data.as_ref()).re
    }

    /// `H * v`
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        check_dim(self.dim(), v.len())?;
        Ok(mat_vec(self.data.as_ref(), v))
    }

    /// Max-entry norm of the commutator `[self, other]`.
    pub fn commutator_norm(&self, other: &HermitianMatrix) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dense::commutator_max_abs(self.as_ref(), other.as_ref()))
    }
}

/// Ascending eigenvalues and the unitary whose columns are the eigenvectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigensystem {
    energies: Vec<f64>,
    basis: Mat<C64>,
    residual: f64,
}

impl Eigensystem {
    /// Assembles an eigensystem from stored parts (e.g. a cache file).
    pub fn from_parts(energies: Vec<f64>, basis: Mat<C64>, residual: f64) -> Result<Self> {
        let d = energies.len();
        if basis.nrows() != d || basis.ncols() != d || d == 0 {
            return Err(Error::BadShape { rows: basis.nrows(), cols: basis.ncols() });
        }
        if energies.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("eigenvalues must be non-decreasing".into()));
        }
        Ok(Self { energies, basis, residual })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn basis(&self) -> MatRef<'_, C64> {
        self.basis.as_ref()
    }

    /// Absolute reconstruction residual `max |H - V diag(E) V^H|` measured when
    /// the decomposition was computed.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn vector(&self, n: usize) -> Vec<C64> {
        self.basis.col(n).iter().copied().collect()
    }

    pub fn spectral_width(&self) -> f64 {
        self.energies[self.dim() - 1] - self.energies[0]
    }

    /// `V diag(E) V^H`
    pub fn reconstruct(&self) -> Mat<C64> {
        let scaled = Mat::from_fn(self.dim(), self.dim(), |i, j| {
            self.basis[(i, j)] * self.energies[j]
        });
        matmul_adj_rhs(scaled.as_ref(), self.basis.as_ref())
    }

    /// `V^H A V`, the matrix elements of `a` between eigenvectors.
    pub fn rotate_into(&self, a: &HermitianMatrix) -> Result<HermitianMatrix> {
        check_dim(self.dim(), a.dim())?;
        let av = matmul(a.as_ref(), self.basis.as_ref());
        let m = matmul_adj_lhs(self.basis.as_ref(), av.as_ref());
        Ok(HermitianMatrix::from_trusted(hermitize(m)))
    }
}

/// Dense unitary matrix (propagators, kick operators).
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryMatrix {
    data: Mat<C64>,
}

impl UnitaryMatrix {
    pub(crate) fn from_mat(data: Mat<C64>) -> Self {
        Self { data }
    }

    pub fn identity(dim: usize) -> Self {
        Self { data: Mat::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_ref(&self) -> MatRef<'_, C64> {
        self.data.as_ref()
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        check_dim(self.dim(), v.len())?;
        Ok(mat_vec(self.data.as_ref(), v))
    }

    pub fn adjoint(&self) -> Self {
        Self { data: adjoint(self.data.as_ref()) }
    }

    pub fn compose(&self, other: &UnitaryMatrix) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self { data: matmul(self.as_ref(), other.as_ref()) })
    }

    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(self.data.as_ref())
    }
}

/// Hermitian eigendecomposition with ascending eigenvalues.
///
/// Each eigenvector is phase-fixed so that its largest-modulus component
/// (first one on ties) is real and positive; results are therefore
/// reproducible bit for bit on the same platform. The solver runs on one
/// thread so the result does not depend on the size of the rayon pool.
pub fn diagonalize(h: &HermitianMatrix) -> Result<Eigensystem> {
    faer::set_global_parallelism(Par::Seq);
    let n = h.dim();
    let (values, vectors) = if h.is_real() {
        let re = dense::real_part(h.as_ref());
        let evd = re
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::EigenNotConverged { residual: f64::NAN, bound: 0.0 })?;
        let vals: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
        (vals, dense::complexify(evd.U()))
    } else {
        let evd = h
            .as_ref()
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::EigenNotConverged { residual: f64::NAN, bound: 0.0 })?;
        let vals: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
        (vals, evd.U().to_owned())
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let energies: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let mut basis = Mat::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    fix_gauge(&mut basis);

    let mut eig = Eigensystem { energies, basis, residual: 0.0 };
    let residual = max_abs_diff(h.as_ref(), eig.reconstruct().as_ref());
    let bound = EIGEN_RESIDUAL_BOUND * h.max_abs().max(f64::MIN_POSITIVE);
    if !(residual <= bound) {
        return Err(Error::EigenNotConverged { residual, bound });
    }
    eig.residual = residual;
    Ok(eig)
}

fn fix_gauge(basis: &mut Mat<C64>) {
    for j in 0..basis.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0_f64;
        for i in 0..basis.nrows() {
            let a = basis[(i, j)].norm();
            if a > best_abs * (1.0 + 1e-12) {
                best = i;
                best_abs = a;
            }
        }
        let pivot = basis[(best, j)];
        if pivot.norm() == 0.0 {
            continue;
        }
        let phase = pivot.conj() / pivot.norm();
        if phase == C64::new(1.0, 0.0) {
            continue;
        }
        for i in 0..basis.nrows() {
            basis[(i, j)] *= phase;
        }
    }
}

/// Exponential `exp(-i t A)` of a Hermitian matrix, kept in factored form so
/// it can be re-evaluated for many `t` or applied to vectors without forming
/// the dense unitary.
#[derive(Clone, Debug)]
pub struct HermitianExp {
    eig: Eigensystem,
}

impl HermitianExp {
    pub fn new(a: &HermitianMatrix) -> Result<Self> {
        Ok(Self { eig: diagonalize(a)? })
    }

    pub fn from_eigensystem(eig: Eigensystem) -> Self {
        Self { eig }
    }

    pub fn eigensystem(&self) -> &Eigensystem {
        &self.eig
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    /// Dense `exp(-i t A) = W exp(-i t a) W^H`.
    pub fn unitary(&self, t: f64) -> UnitaryMatrix {
        let n = self.dim();
        let w = self.eig.basis();
        let phases = self.phases(t);
        let scaled = Mat::from_fn(n, n, |i, j| w[(i, j)] * phases[j]);
        UnitaryMatrix::from_mat(matmul_adj_rhs(scaled.as_ref(), w))
    }

    /// `exp(-i t A) v`
    pub fn apply(&self, t: f64, v: &[C64]) -> Result<Vec<C64>> {
        check_dim(self.dim(), v.len())?;
        let w = self.eig.basis();
        let mut coeffs = adj_mat_vec(w, v);
        for (c, p) in coeffs.iter_mut().zip(self.phases(t)) {
            *c *= p;
        }
        Ok(mat_vec(w, &coeffs))
    }

    fn phases(&self, t: f64) -> Vec<C64> {
        self.eig
            .energies()
            .iter()
            .map(|&a| C64::from_polar(1.0, -t * a))
            .collect()
    }
}

/// `exp(-i scale A)` as a dense unitary.
pub fn unitary_from_hermitian(a: &HermitianMatrix, scale: f64) -> Result<UnitaryMatrix> {
    if !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("exponent scale must be finite, got {scale}")));
    }
    Ok(HermitianExp::new(a)?.unitary(scale))
}

pub fn adjoint(a: MatRef<'_, C64>) -> Mat<C64> {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

pub fn trace(a: MatRef<'_, C64>) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// `<psi|A|psi>` for a normalized `psi`. The imaginary part of a Hermitian
/// expectation value is pure round-off and is dropped.
pub fn expectation(psi: &[C64], a: &HermitianMatrix) -> Result<f64> {
    check_dim(a.dim(), psi.len())?;
    let av = mat_vec(a.as_ref(), psi);
    let value = dot(psi, &av);
    debug_assert!(value.im.abs() <= 1e-10 * a.max_abs().max(1.0) * dot(psi, psi).re.max(1.0));
    Ok(value.re)
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn asymmetry(m: MatRef<'_, C64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..=j.min(m.nrows() - 1) {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(M + M^H) / 2`
pub(crate) fn hermitize(m: Mat<C64>) -> Mat<C64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(m[(i, i)].re, 0.0)
        } else {
            (m[(i, j)] + m[(j, i)].conj()) * 0.5
        }
    })
}

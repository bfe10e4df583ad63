//! Dense complex linear algebra and the quantum-information primitives the
//! rest of the crate is built on.
//!
//! [`ComplexMatrix`] is a thin square-matrix wrapper over `nalgebra`'s dense
//! storage. [`DensityMatrix`] is a `ComplexMatrix` that has passed the
//! Hermiticity, unit-trace and positivity checks.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{QslError, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Hermiticity tolerance for a valid density matrix.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Allowed deviation of the trace from one.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative eigenvalue tolerated in a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Hermiticity tolerance accepted by the eigensolver.
pub const EIGEN_HERMITIAN_TOL: f64 = 1e-8;
/// Fidelity values in `(1, 1 + FIDELITY_SLACK]` are clamped to one.
pub const FIDELITY_SLACK: f64 = 1e-12;

/// Square dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self(DMatrix::from_fn(dim, dim, f))
    }

    /// Builds a matrix from row-major entries. Panics if `entries.len()` is
    /// not a positive perfect square.
    pub fn from_row_slice(entries: &[C64]) -> Self {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        assert!(
            dim >= 1 && dim * dim == entries.len(),
            "row slice of length {} is not square",
            entries.len()
        );
        Self(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), |i, j| {
            if i == j {
                C64::new(diag[i], 0.0)
            } else {
                ZERO
            }
        })
    }

    /// The projector `|ψ⟩⟨ψ|` (no normalisation applied).
    pub fn outer(ket: &[C64]) -> Self {
        Self::from_fn(ket.len(), |i, j| ket[i] * ket[j].conj())
    }

    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(QslError::DimensionMismatch(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// `self + s * other`, in place.
    pub fn axpy(&mut self, s: C64, other: &ComplexMatrix) {
        self.0.zip_apply(&other.0, |a, b| *a += s * b);
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).norm()))
    }

    /// `max |m - m†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                err = err.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        err
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &ComplexMatrix) -> C64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let n = self.dim();
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.0[(i, k)] * other.0[(k, i)];
            }
        }
        acc
    }

    /// Returns `(m + m†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    pub fn commutator(&self, other: &ComplexMatrix) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut C64 {
        &mut self.0[idx]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.0 += &rhs.0;
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-&self.0)
    }
}

/// A Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Validates `mat` against the density-matrix tolerances.
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        let herm = mat.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(QslError::InvalidState(format!(
                "not Hermitian: max |rho - rho†| = {herm:.3e}"
            )));
        }
        let tr = mat.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(QslError::InvalidState(format!(
                "trace {tr} deviates from 1"
            )));
        }
        let min_eig = hermitian_eigenvalues(&mat)?[0];
        if min_eig < -POSITIVITY_TOL {
            return Err(QslError::InvalidState(format!(
                "not positive semidefinite: minimum eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self(mat))
    }

    /// The pure state `|ψ⟩⟨ψ|` for a normalised `ket`.
    pub fn pure(ket: &[C64]) -> Result<Self> {
        Self::new(ComplexMatrix::outer(ket))
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// Wraps `mat` without validation. Callers guarantee the invariants.
    pub(crate) fn new_unchecked(mat: ComplexMatrix) -> Self {
        Self(mat)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

impl AsRef<ComplexMatrix> for DensityMatrix {
    fn as_ref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// Which factor of a bipartite space survives a partial trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keep {
    A,
    B,
}

/// Kronecker product, left factor most significant.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix(a.0.kronecker(&b.0))
}

/// Partial trace of an arbitrary matrix on `C^dA ⊗ C^dB`.
pub fn partial_trace_matrix(
    m: &ComplexMatrix,
    dims: (usize, usize),
    keep: Keep,
) -> Result<ComplexMatrix> {
    let (da, db) = dims;
    if da == 0 || db == 0 || m.dim() != da * db {
        return Err(QslError::DimensionMismatch(format!(
            "matrix of dimension {} cannot be split as {da} x {db}",
            m.dim()
        )));
    }
    let out = match keep {
        Keep::A => ComplexMatrix::from_fn(da, |i, j| {
            (0..db).map(|k| m[(i * db + k, j * db + k)]).sum()
        }),
        Keep::B => ComplexMatrix::from_fn(db, |i, j| {
            (0..da).map(|k| m[(k * db + i, k * db + j)]).sum()
        }),
    };
    Ok(out)
}

/// Partial trace of a density matrix; the result is re-validated.
pub fn partial_trace(
    rho: &DensityMatrix,
    dims: (usize, usize),
    keep: Keep,
) -> Result<DensityMatrix> {
    DensityMatrix::new(partial_trace_matrix(rho.matrix(), dims, keep)?)
}

/// `Tr(ρ²)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.matrix().trace_product(rho.matrix()).re
}

/// The normalised Hilbert–Schmidt overlap
/// `Tr(ρ₀ρ_t) / sqrt(Tr(ρ₀²) Tr(ρ_t²))`.
pub fn fidelity(rho0: &DensityMatrix, rhot: &DensityMatrix) -> Result<f64> {
    if rho0.dim() != rhot.dim() {
        return Err(QslError::DimensionMismatch(format!(
            "fidelity between {}x{} and {}x{} states",
            rho0.dim(),
            rho0.dim(),
            rhot.dim(),
            rhot.dim()
        )));
    }
    let overlap = rho0.matrix().trace_product(rhot.matrix());
    let norm = (purity(rho0) * purity(rhot)).sqrt();
    if overlap.im.abs() > FIDELITY_SLACK * norm.max(1.0) {
        return Err(QslError::InvalidState(format!(
            "overlap has imaginary residue {:.3e}",
            overlap.im
        )));
    }
    let f = overlap.re / norm;
    if f > 1.0 + FIDELITY_SLACK {
        return Err(QslError::FidelityExcursion(f));
    }
    if f < -FIDELITY_SLACK {
        return Err(QslError::InvalidState(format!("negative overlap {f:.3e}")));
    }
    Ok(f.clamp(0.0, 1.0))
}

/// Eigenvalues and eigenvectors (as columns) of a Hermitian matrix, ascending.
pub fn hermitian_eigen(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    let herm = m.hermiticity_error();
    if herm > EIGEN_HERMITIAN_TOL {
        return Err(QslError::NotHermitian(herm));
    }
    let eig = SymmetricEigen::new(m.hermitian_part().into_dmatrix());
    let mut order: Vec<usize> = (0..m.dim()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(m.dim(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Real eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    hermitian_eigen(m).map(|(values, _)| values)
}

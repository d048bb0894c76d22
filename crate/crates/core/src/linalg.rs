//! Small dense complex linear-algebra helpers shared by the solvers.
//!
//! `vec`/`unvec` are column-major throughout: `unvec(v, rows, cols)` fills
//! the first column first, matching nalgebra's storage order.

use nalgebra::SymmetricEigen;

use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Stacks the columns of `m` into one vector.
pub fn vec(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Reshapes a length `rows * cols` vector into a `rows x cols` matrix, column by column.
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch { what: "unvec length", expected: rows * cols, actual: v.len() });
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Eigendecomposition of a Hermitian positive semidefinite matrix.
///
/// Eigenvalues below zero (round-off) are clamped to zero.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(h: &CMatrix) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::invalid(format!(
                "Hermitian eigendecomposition needs a square matrix, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if h.nrows() == 0 {
            return Ok(Self { values: Vec::new(), vectors: CMatrix::zeros(0, 0) });
        }
        // Symmetrize so round-off asymmetry never leaks into the decomposition.
        let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(sym);
        let values = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        Ok(Self { values, vectors: eig.eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Solves `(H + shift * I) x = y` for every column of `y`.
    ///
    /// Directions whose shifted eigenvalue vanishes are dropped, which gives the
    /// minimum-norm solution when `shift = 0` and `H` is singular.
    pub fn solve_shifted(&self, y: &CMatrix, shift: f64) -> CMatrix {
        let mut coeffs = self.vectors.adjoint() * y;
        let floor = if shift > 0.0 { 0.0 } else { self.singular_floor() };
        for (i, &l) in self.values.iter().enumerate() {
            let d = l + shift;
            let scale = if d > floor { 1.0 / d } else { 0.0 };
            coeffs.row_mut(i).scale_mut(scale);
        }
        &self.vectors * coeffs
    }

    /// Threshold under which a shifted eigenvalue is treated as zero.
    pub(crate) fn singular_floor(&self) -> f64 {
        self.max_value() * 1e-13 * (self.dim().max(1) as f64) + f64::MIN_POSITIVE
    }
}

/// Principal eigenvector of a Hermitian PSD matrix by power iteration.
///
/// The start vector is the first canonical basis vector plus a small fixed
/// perturbation, so results are reproducible. The returned vector has unit
/// norm and its first nonzero entry is real and positive.
pub fn principal_eigenvector(a: &CMatrix, tol: f64, max_iter: usize) -> Result<(f64, CVector)> {
    let n = a.nrows();
    if n == 0 || !a.is_square() {
        return Err(Error::invalid("principal eigenvector needs a nonempty square matrix"));
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::invalid("principal eigenvector of the zero matrix is undefined"));
    }
    let mut x = CVector::from_fn(n, |i, _| {
        let base = if i == 0 { 1.0 } else { 0.0 };
        Complex64::new(base + 1e-3 / (i as f64 + 2.0), 1e-4 * i as f64)
    });
    x.unscale_mut(x.norm());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let y = a * &x;
        let rayleigh = x.dotc(&y).re;
        residual = (&y - &x * Complex64::new(rayleigh, 0.0)).norm();
        if residual <= tol * rayleigh.abs().max(scale * f64::EPSILON) {
            return Ok((rayleigh, normalize_phase(x)));
        }
        let norm = y.norm();
        if norm == 0.0 {
            break;
        }
        x = y.unscale(norm);
    }
    Err(Error::EigenNotConverged { iterations: max_iter, residual })
}

/// Rotates `x` so its first non-negligible entry is real and positive.
pub fn normalize_phase(mut x: CVector) -> CVector {
    let max = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(pivot) = x.iter().find(|z| z.norm() > 1e-8 * max).copied() {
        let rot = pivot.conj() / pivot.norm();
        x *= rot;
    }
    x
}

/// Squared Frobenius norm.
pub fn norm_sqr(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

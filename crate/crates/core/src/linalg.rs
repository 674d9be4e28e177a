//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::scalar::{lit, Real};

pub fn symmetric_part<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Largest absolute entry (max norm).
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone().singular_values().iter().fold(T::zero(), |acc, &v| acc.max(v))
}

/// Schur sweeps allowed per matrix row before giving up on a shift.
const SCHUR_ITERS_PER_ROW: usize = 200;

/// Eigenvalues of a general square matrix, or `None` if the QR iteration
/// fails to converge.
///
/// nalgebra's `complex_eigenvalues` iterates without bound and cycles on
/// some inputs, so the iteration is capped and retried on a few shifted
/// copies `m + σI` (whose eigenvalues are `λ + σ`).
pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> Option<Vec<Complex<T>>> {
    let n = m.nrows();
    let scale = max_abs(m);
    for shift in [0.0, 0.37, -0.61, 1.13] {
        let sigma = lit::<T>(shift) * scale;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += sigma;
        }
        if let Some(schur) = a.try_schur(T::default_epsilon(), SCHUR_ITERS_PER_ROW * n.max(1)) {
            return Some(schur.complex_eigenvalues().iter().map(|z| Complex::new(z.re - sigma, z.im)).collect());
        }
    }
    None
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut ev: Vec<T> = symmetric_part(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or(T::zero())
}

pub fn max_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).last().copied().unwrap_or(T::zero())
}

pub fn is_symmetric<T: Real>(m: &DMatrix<T>, tol: T) -> bool {
    m.is_square() && max_abs(&(m - m.transpose())) <= tol
}

/// Symmetric positive semidefinite square root via eigendecomposition.
/// Negative eigenvalues (roundoff) are clamped to zero.
pub fn sym_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(symmetric_part(m));
    let d = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let chol = symmetric_part(m).cholesky()?;
    Some(symmetric_part(&chol.inverse()))
}

/// Lower-triangular factor `G` with `G·Gᵀ = m` for a positive semidefinite `m`.
///
/// Columns whose pivot falls below `rel_tol·max|m|` are zeroed, so singular
/// (e.g. zero) covariances are accepted. Returns `None` if the reconstruction
/// misses `m` by more than `1e-10·max|m|`, i.e. `m` is indefinite.
pub fn psd_cholesky<T: Real>(m: &DMatrix<T>, rel_tol: T) -> Option<DMatrix<T>> {
    let n = m.nrows();
    if !m.is_square() {
        return None;
    }
    let scale = max_abs(m);
    let mut g = DMatrix::<T>::zeros(n, n);
    if scale == T::zero() {
        return Some(g);
    }
    let piv_tol = rel_tol * scale;
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= g[(j, k)] * g[(j, k)];
        }
        if d > piv_tol {
            let djj = d.sqrt();
            g[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= g[(i, k)] * g[(j, k)];
                }
                g[(i, j)] = s / djj;
            }
        } else if d < -piv_tol {
            return None;
        }
    }
    let err = max_abs(&(&g * g.transpose() - m));
    if err <= lit::<T>(1e-10) * scale {
        Some(g)
    } else {
        None
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec_of<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec<T: Real>(v: &DVector<T>, rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance used for (semi)definiteness tests.
pub const DEFINITENESS_TOL: f64 = 1e-10;

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn symmetrize_in_place<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn eigen_extremes<T: Real>(m: &DMatrix<T>) -> (T, T) {
    if m.nrows() == 0 {
        return (T::zero(), T::zero());
    }
    if m.nrows() == 1 {
        return (m[(0, 0)], m[(0, 0)]);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut lo = eig.eigenvalues[0];
    let mut hi = lo;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    eigen_extremes(m).0
}

pub fn max_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    eigen_extremes(m).1
}

pub fn is_psd<T: Real>(m: &DMatrix<T>, tol: T) -> bool {
    min_eigenvalue(m) >= -tol
}

pub fn is_pd<T: Real>(m: &DMatrix<T>, tol: T) -> bool {
    min_eigenvalue(m) > tol
}

pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    (m - m.transpose()).norm()
}

pub fn inverse<T: Real>(m: &DMatrix<T>, name: &'static str) -> Result<DMatrix<T>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            what: name,
            expected: "square matrix".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    m.clone().try_inverse().ok_or(Error::Singular(name))
}

pub fn trace_product<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    // tr(AB) without forming AB
    let mut s = T::zero();
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// `out = m · x` on raw slices, for allocation-free inner loops.
#[inline]
pub fn matvec_into<T: Real>(m: &DMatrix<T>, x: &[T], out: &mut [T]) {
    let (r, c) = m.shape();
    debug_assert_eq!(x.len(), c);
    debug_assert_eq!(out.len(), r);
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for j in 0..c {
        let xj = x[j];
        let col = m.column(j);
        for i in 0..r {
            out[i] += col[i] * xj;
        }
    }
}

/// `xᵀ m x` on raw slices.
#[inline]
pub fn quad_form<T: Real>(m: &DMatrix<T>, x: &[T]) -> T {
    let n = x.len();
    let mut s = T::zero();
    for j in 0..n {
        let mut col = T::zero();
        for i in 0..n {
            col += m[(i, j)] * x[i];
        }
        s += col * x[j];
    }
    s
}

pub fn dvec<T: Real>(xs: &[f64]) -> DVector<T> {
    DVector::from_iterator(xs.len(), xs.iter().map(|&x| T::lit(x)))
}

/// Row-major constructor from `f64` literals.
pub fn dmat<T: Real>(rows: usize, cols: usize, xs: &[f64]) -> DMatrix<T> {
    assert_eq!(xs.len(), rows * cols, "dmat: wrong literal count");
    DMatrix::from_row_iterator(rows, cols, xs.iter().map(|&x| T::lit(x)))
}

pub fn scalar_identity<T: Real>(n: usize, s: f64) -> DMatrix<T> {
    DMatrix::identity(n, n) * T::lit(s)
}

//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{HiveError, Result};

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HiveError::NonFinite(what))
    }
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted in nonincreasing order.
///
/// Returns `(u, s, v)` with `m = u * diag(s) * v^T`, `u` n×r, `v` p×r and
/// r = min(n, p).
pub fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let r = m.nrows().min(m.ncols());
    if r == 0 {
        return (
            DMatrix::zeros(m.nrows(), 0),
            DVector::zeros(0),
            DMatrix::zeros(m.ncols(), 0),
        );
    }
    let svd = to_faer(m).thin_svd().expect("svd of a finite matrix");
    let s = svd.S().column_vector();
    (
        from_faer(svd.U()),
        DVector::from_fn(r, |k, _| s[k]),
        from_faer(svd.V()),
    )
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in
/// nonincreasing order. Eigenvectors follow [`fix_signs`].
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let dim = m.nrows();
    let eig = to_faer(&symmetrize(m))
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("eigendecomposition of a finite symmetric matrix");
    // faer returns ascending order
    let s = eig.S().column_vector();
    let u = eig.U();
    let values = DVector::from_fn(dim, |k, _| s[dim - 1 - k]);
    let mut vectors = DMatrix::from_fn(dim, dim, |i, k| u[(i, dim - 1 - k)]);
    fix_signs(&mut vectors);
    (values, vectors)
}

/// Flips each column so its largest-magnitude entry is positive; ties go
/// to the lowest row index.
pub fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `U U^T` for a matrix with orthonormal columns.
pub fn projector(u: &DMatrix<f64>) -> DMatrix<f64> {
    u * u.transpose()
}

/// Orthogonal projector onto the row space of `b` (k×m), i.e.
/// `B^T (B B^T)^{-1} B`, computed through the SVD of `b`.
pub fn row_space_projector(b: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let basis = row_space_basis(b, rank_tol)?;
    Ok(projector(&basis))
}

/// Orthonormal basis (m×k) of the row space of a full-row-rank `b`.
pub fn row_space_basis(b: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let (_, s, v) = thin_svd(b);
    let k = b.nrows();
    let top = s.iter().cloned().fold(0.0f64, f64::max);
    let rank = s.iter().filter(|&&d| d > rank_tol * top && d > 0.0).count();
    if rank < k {
        return Err(HiveError::RankDeficient(format!(
            "matrix with {k} rows has numerical rank {rank}"
        )));
    }
    let mut basis = v.columns(0, k).into_owned();
    fix_signs(&mut basis);
    Ok(basis)
}

/// Numerical rank with singular values above `rel_tol * s_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let (_, s, _) = thin_svd(m);
    let top = s.iter().cloned().fold(0.0f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&d| d > rel_tol * top).count()
}

pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

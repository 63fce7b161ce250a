use nalgebra::DMatrix;

use crate::error::{invalid, shape, HiveError, Result};
use crate::factor::{ProjectionEstimate, ProjectionMethod};
use crate::group_lasso::GroupLassoOptions;
use crate::linalg::{ensure_finite, fix_signs, row_space_basis, thin_svd};
use crate::pipeline::{fit_theta_projected, ThetaEstimate};
use crate::smoother::{DesignFactorization, RidgeSmoother, SmootherMode, DEFAULT_RANK_TOL};

fn full_rank_ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_finite(x, "design matrix")?;
    ensure_finite(y, "response matrix")?;
    let (n, p) = x.shape();
    if y.nrows() != n {
        return shape(format!("X has {n} rows but Y has {}", y.nrows()));
    }
    if n <= p {
        return Err(HiveError::RankDeficient(format!(
            "least squares needs n > p, got n = {n}, p = {p}"
        )));
    }
    let f = DesignFactorization::new(x, DEFAULT_RANK_TOL)?;
    if f.rank() < p {
        return Err(HiveError::RankDeficient(format!(
            "design has rank {} < p = {p}",
            f.rank()
        )));
    }
    Ok(RidgeSmoother::from_factorization(f, 0.0)?
        .backsolve(y)?
        .coef)
}

/// `(X^T X)^{-1} X^T Y`.
pub fn baseline_ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    full_rank_ols(x, y)
}

/// Least squares, then removal of the top-k right singular directions of
/// the least-squares residuals.
pub fn baseline_sva(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<ThetaEstimate> {
    let m = y.ncols();
    if k == 0 || k >= m {
        return invalid(format!("k must satisfy 1 <= k < m = {m}, got {k}"));
    }
    let ols = full_rank_ols(x, y)?;
    let resid = y - x * &ols;
    let (_, _, v) = thin_svd(&resid);
    let mut u_hat = v.columns(0, k).into_owned();
    fix_signs(&mut u_hat);
    let projection = ProjectionEstimate::from_basis(u_hat, ProjectionMethod::ResidualSvd);
    let theta = projection.project_out(&ols)?;
    Ok(ThetaEstimate {
        theta,
        support: (0..x.ncols()).collect(),
        lambda3: 0.0,
        kkt_violation: 0.0,
        converged: true,
        iterations: 0,
        projection,
    })
}

/// Projection onto the row space of `b_true`.
pub fn oracle_projection(b_true: &DMatrix<f64>) -> Result<ProjectionEstimate> {
    Ok(ProjectionEstimate::from_basis(
        row_space_basis(b_true, DEFAULT_RANK_TOL)?,
        ProjectionMethod::Oracle,
    ))
}

/// Projected group-lasso with the exact row-space projector of `b_true`.
pub fn baseline_oracle(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    b_true: &DMatrix<f64>,
    lambda3: f64,
    solver: &GroupLassoOptions,
) -> Result<ThetaEstimate> {
    fit_theta_projected(x, y, &oracle_projection(b_true)?, lambda3, solver)
}

#[derive(Debug, Clone)]
pub struct RrrFit {
    pub l_hat: DMatrix<f64>,
    pub fitted: DMatrix<f64>,
    pub k: usize,
}

/// Rank-k reduced-rank regression: the rank-k truncation of the
/// least-squares fit and its minimum-norm coefficient.
pub fn baseline_rrr(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<RrrFit> {
    ensure_finite(x, "design matrix")?;
    ensure_finite(y, "response matrix")?;
    if y.nrows() != x.nrows() {
        return shape(format!("X has {} rows but Y has {}", x.nrows(), y.nrows()));
    }
    let smoother = RidgeSmoother::build(x, 0.0, DEFAULT_RANK_TOL)?;
    let bound = x.ncols().min(y.ncols()).min(smoother.rank());
    if k == 0 || k > bound {
        return invalid(format!("rank must satisfy 1 <= k <= {bound}, got {k}"));
    }
    let ls_fit = smoother.apply(SmootherMode::P, y)?;
    let (u, s, v) = thin_svd(&ls_fit);
    let fitted = u.columns(0, k)
        * DMatrix::from_diagonal(&s.rows(0, k).into_owned())
        * v.columns(0, k).transpose();
    let l_hat = smoother.backsolve(&fitted)?.coef;
    Ok(RrrFit { l_hat, fitted, k })
}

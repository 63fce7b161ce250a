//! Sparse-plus-dense stage-1 fit.
//!
//! Solves
//!
//! ```text
//! min_{Psi, L} (1/n) ||Y - X (Psi + L)||_F^2 + lambda1 ||Psi||_{l1/l2} + lambda2 ||L||_F^2
//! ```
//!
//! by profiling out `L`: `Psi` is a group-lasso on `(Q^{1/2} X, Q^{1/2} Y)`
//! and `L = (X^T X + n lambda2 I)^{-1} X^T (Y - X Psi)`, which gives fitted
//! values `X F = P Y + Q X Psi`.

use nalgebra::DMatrix;

use crate::error::{invalid, shape, Result};
use crate::group_lasso::{fit_gram, penalty, GramProblem, GroupLassoOptions};
use crate::linalg::ensure_finite;
use crate::smoother::{RidgeSmoother, SmootherMode, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Options {
    pub solver: GroupLassoOptions,
    pub rank_tol: f64,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Self {
            solver: GroupLassoOptions::default(),
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Fit {
    pub psi_hat: DMatrix<f64>,
    pub l_hat: DMatrix<f64>,
    pub f_hat: DMatrix<f64>,
    pub fitted: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    pub sigma_eps_hat: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub psi_support: Vec<usize>,
    pub converged: bool,
    pub kkt_violation: f64,
    pub iterations: usize,
    /// `lambda2 = 0` on a rank-deficient design: `L` is the minimum-norm solve.
    pub pseudo_inverse: bool,
    /// Residual covariance is singular because the fit interpolates
    /// (`lambda2 = 0` and rank(X) = n).
    pub degenerate_covariance: bool,
}

impl Stage1Fit {
    /// Ridge-plus-group-lasso objective at the stored `(psi_hat, l_hat)`.
    pub fn objective(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        stage1_objective(x, y, &self.psi_hat, &self.l_hat, self.lambda1, self.lambda2)
    }
}

pub fn stage1_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    l: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let resid = y - x * (psi + l);
    resid.norm_squared() / x.nrows() as f64 + lambda1 * penalty(psi) + lambda2 * l.norm_squared()
}

/// `(1/n) R^T R`.
pub fn residual_covariance(residuals: &DMatrix<f64>) -> DMatrix<f64> {
    let n = residuals.nrows() as f64;
    let mut cov = residuals.transpose() * residuals / n;
    // exact symmetry
    for i in 0..cov.nrows() {
        for j in (i + 1)..cov.ncols() {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Group-lasso sufficient statistics of the `Q^{1/2}`-transformed problem.
pub fn transformed_problem(
    smoother: &RidgeSmoother,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<GramProblem> {
    let xt = smoother.apply(SmootherMode::QHalf, x)?;
    let yt = smoother.apply(SmootherMode::QHalf, y)?;
    GramProblem::new(&xt, &yt)
}

/// Smallest `lambda1` that zeroes `Psi` at this `lambda2`.
pub fn lambda1_max(smoother: &RidgeSmoother, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    Ok(transformed_problem(smoother, x, y)?.lambda_max())
}

pub fn fit_stage1(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
    opts: &Stage1Options,
) -> Result<Stage1Fit> {
    ensure_finite(x, "design matrix")?;
    ensure_finite(y, "response matrix")?;
    let smoother = RidgeSmoother::build(x, lambda2, opts.rank_tol)?;
    fit_stage1_with_smoother(x, y, &smoother, lambda1, opts, None)
}

/// Stage-1 fit reusing a smoother built from `x`; `warm_start` seeds the
/// group-lasso (useful along a `lambda1` path).
pub fn fit_stage1_with_smoother(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    smoother: &RidgeSmoother,
    lambda1: f64,
    opts: &Stage1Options,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<Stage1Fit> {
    let problem = transformed_problem(smoother, x, y)?;
    fit_stage1_from_problem(x, y, smoother, &problem, lambda1, opts, warm_start)
}

/// As [`fit_stage1_with_smoother`] with the transformed statistics already built.
pub fn fit_stage1_from_problem(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    smoother: &RidgeSmoother,
    problem: &GramProblem,
    lambda1: f64,
    opts: &Stage1Options,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<Stage1Fit> {
    if x.nrows() != y.nrows() {
        return shape(format!("X has {} rows but Y has {}", x.nrows(), y.nrows()));
    }
    if x.shape() != (smoother.n(), smoother.p()) {
        return shape("smoother was built for a different design");
    }
    if !lambda1.is_finite() || lambda1 < 0.0 {
        return invalid(format!("lambda1 must be finite and >= 0, got {lambda1}"));
    }
    let gl = fit_gram(problem, lambda1, &opts.solver, warm_start)?;
    let psi_hat = gl.coef;

    let partial = y - x * &psi_hat;
    let ridge = smoother.backsolve(&partial)?;
    let l_hat = ridge.coef;
    let f_hat = &psi_hat + &l_hat;
    let fitted = x * &f_hat;
    let residuals = y - &fitted;
    let sigma_eps_hat = residual_covariance(&residuals);

    Ok(Stage1Fit {
        psi_support: gl.support,
        converged: gl.converged,
        kkt_violation: gl.kkt_violation,
        iterations: gl.iterations,
        pseudo_inverse: ridge.pseudo_inverse,
        degenerate_covariance: smoother.lambda2 == 0.0 && smoother.rank() >= smoother.n(),
        psi_hat,
        l_hat,
        f_hat,
        fitted,
        residuals,
        sigma_eps_hat,
        lambda1,
        lambda2: smoother.lambda2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_lasso::fit_group_lasso;
    use crate::testutil::gaussian_matrix;

    #[test]
    fn covariance_hand_example() {
        let r = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let cov = residual_covariance(&r);
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) / 3.0;
        assert!((cov - want).amax() < 1e-15);
        assert_eq!(
            residual_covariance(&DMatrix::zeros(4, 3)),
            DMatrix::zeros(3, 3)
        );
    }

    #[test]
    fn covariance_matches_direct_and_is_psd() {
        let r = gaussian_matrix(15, 6, 1);
        let cov = residual_covariance(&r);
        let direct = r.transpose() * &r / 15.0;
        assert!((&cov - direct).amax() < 1e-12);
        assert_eq!(crate::linalg::asymmetry(&cov), 0.0);
        let (vals, _) = crate::linalg::symmetric_eigen_desc(&cov);
        assert!(vals.iter().all(|v| *v >= -1e-10));
    }

    #[test]
    fn lambda1_above_null_gives_ridge_fit() {
        let x = gaussian_matrix(20, 5, 2);
        let y = gaussian_matrix(20, 4, 3);
        let smoother = RidgeSmoother::build(&x, 0.5, DEFAULT_RANK_TOL).unwrap();
        let lmax = lambda1_max(&smoother, &x, &y).unwrap();
        let fit = fit_stage1(&x, &y, lmax * 1.001, 0.5, &Stage1Options::default()).unwrap();
        assert!(fit.psi_hat.iter().all(|v| *v == 0.0));
        let py = smoother.apply(SmootherMode::P, &y).unwrap();
        assert!((&fit.fitted - py).amax() < 1e-9);
    }

    #[test]
    fn huge_lambda2_is_plain_group_lasso() {
        let x = gaussian_matrix(20, 5, 4);
        let y = gaussian_matrix(20, 4, 5);
        let fit = fit_stage1(&x, &y, 0.2, 1e12, &Stage1Options::default()).unwrap();
        let gl = fit_group_lasso(&x, &y, 0.2, &GroupLassoOptions::default(), None).unwrap();
        assert!(fit.l_hat.norm() <= 1e-6 * fit.f_hat.norm());
        assert!((&fit.psi_hat - &gl.coef).amax() < 1e-6);
    }

    #[test]
    fn fitted_value_identity_and_closed_form_l() {
        let x = gaussian_matrix(20, 5, 6);
        let y = gaussian_matrix(20, 4, 7);
        let fit = fit_stage1(&x, &y, 0.3, 0.5, &Stage1Options::default()).unwrap();
        let smoother = RidgeSmoother::build(&x, 0.5, DEFAULT_RANK_TOL).unwrap();
        let xpsi = &x * &fit.psi_hat;
        let want = smoother.apply(SmootherMode::P, &y).unwrap()
            + smoother.apply(SmootherMode::Q, &xpsi).unwrap();
        assert!((&fit.fitted - want).amax() < 1e-8);
        let xl = &x * &fit.l_hat;
        let p_partial = smoother.apply(SmootherMode::P, &(&y - &xpsi)).unwrap();
        assert!((xl - p_partial).amax() < 1e-8);
        assert_eq!(fit.f_hat, &fit.psi_hat + &fit.l_hat);
    }

    #[test]
    fn zero_penalties_give_min_norm_ols() {
        let x = gaussian_matrix(6, 9, 8);
        let y = gaussian_matrix(6, 3, 9);
        let fit = fit_stage1(&x, &y, 0.0, 0.0, &Stage1Options::default()).unwrap();
        assert!(fit.pseudo_inverse);
        assert!(fit.degenerate_covariance);
        assert!(fit.residuals.amax() < 1e-9);
    }

    #[test]
    fn rejects_mismatched_rows() {
        let x = gaussian_matrix(6, 2, 10);
        let y = gaussian_matrix(5, 2, 11);
        assert!(fit_stage1(&x, &y, 0.1, 0.1, &Stage1Options::default()).is_err());
    }
}

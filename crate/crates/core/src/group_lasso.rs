//! Multivariate group-lasso with a row-wise l1/l2 penalty.
//!
//! Minimizes `(1/n) ||Y - X B||_F^2 + lambda * sum_j ||B_j.||_2` by cyclic
//! block coordinate descent, one predictor row per block. Every block update
//! is exact: with `z_j = X_j^T R_j` (partial residual without predictor j)
//! and `s_j = X_j^T X_j`,
//!
//! ```text
//! B_j. = 0                                     if ||z_j|| <= n lambda / 2
//! B_j. = (1 - n lambda / (2 ||z_j||)) z_j / s_j otherwise
//! ```
//!
//! The solver works on the sufficient statistics `X^T X`, `X^T Y` and
//! `||Y||_F^2`, so a sweep costs O(p^2 m) regardless of n.

use nalgebra::DMatrix;

use crate::error::{invalid, shape, Result};
use crate::linalg::ensure_finite;

/// Rows with norm below this are treated as zero when certifying KKT.
pub const ZERO_ROW_NORM: f64 = 1e-14;

/// Columns with `X_j^T X_j <= n * ZERO_COLUMN_SCALE` get a zero row.
const ZERO_COLUMN_SCALE: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLassoOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the objective after every sweep in [`GroupLassoResult::objective_path`].
    pub record_path: bool,
}

impl Default for GroupLassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            record_path: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupLassoResult {
    pub coef: DMatrix<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_violation: f64,
    pub converged: bool,
    pub objective_path: Vec<f64>,
}

/// Sufficient statistics of a least-squares problem.
#[derive(Debug, Clone)]
pub struct GramProblem {
    pub gram: DMatrix<f64>,
    pub xty: DMatrix<f64>,
    pub yty: f64,
    pub n: usize,
}

impl GramProblem {
    pub fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return shape(format!("X has {} rows but Y has {}", x.nrows(), y.nrows()));
        }
        ensure_finite(x, "design matrix")?;
        ensure_finite(y, "response matrix")?;
        Ok(Self {
            gram: x.transpose() * x,
            xty: x.transpose() * y,
            yty: y.norm_squared(),
            n: x.nrows(),
        })
    }

    pub fn p(&self) -> usize {
        self.gram.nrows()
    }

    pub fn m(&self) -> usize {
        self.xty.ncols()
    }

    /// Smallest lambda for which the zero matrix is optimal:
    /// `(2/n) max_j ||X_j^T Y||_2`.
    pub fn lambda_max(&self) -> f64 {
        let n = self.n as f64;
        (0..self.p())
            .map(|j| self.xty.row(j).norm())
            .fold(0.0, f64::max)
            * 2.0
            / n
    }

    pub fn objective(&self, coef: &DMatrix<f64>, lambda: f64) -> f64 {
        let n = self.n as f64;
        let gb = &self.gram * coef;
        let rss = self.yty - 2.0 * self.xty.dot(coef) + coef.dot(&gb);
        rss.max(0.0) / n + lambda * penalty(coef)
    }

    /// `(2/n) X^T (Y - X coef)`.
    pub fn gradient_term(&self, coef: &DMatrix<f64>) -> DMatrix<f64> {
        (&self.xty - &self.gram * coef) * (2.0 / self.n as f64)
    }

    pub fn kkt_violation(&self, coef: &DMatrix<f64>, lambda: f64) -> f64 {
        kkt_from_gradient(&self.gradient_term(coef), coef, lambda)
    }
}

/// Sum of row norms.
pub fn penalty(coef: &DMatrix<f64>) -> f64 {
    coef.row_iter().map(|r| r.norm()).sum()
}

pub fn support_of(coef: &DMatrix<f64>) -> Vec<usize> {
    coef.row_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|v| *v != 0.0))
        .map(|(j, _)| j)
        .collect()
}

fn kkt_from_gradient(grad: &DMatrix<f64>, coef: &DMatrix<f64>, lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..coef.nrows() {
        let g = grad.row(j);
        let row = coef.row(j);
        let row_norm = row.norm();
        let v = if row_norm < ZERO_ROW_NORM {
            (g.norm() - lambda).max(0.0)
        } else {
            (g - row * (lambda / row_norm)).norm()
        };
        worst = worst.max(v);
    }
    worst
}

/// Stationarity violation of `coef` for the group-lasso problem on `(x, y)`.
pub fn kkt_violation(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    coef: &DMatrix<f64>,
) -> Result<f64> {
    if x.nrows() != y.nrows() || coef.shape() != (x.ncols(), y.ncols()) {
        return shape(format!(
            "X {}x{}, Y {}x{}, coef {}x{} are inconsistent",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            coef.nrows(),
            coef.ncols()
        ));
    }
    let resid = y - x * coef;
    let grad = x.transpose() * resid * (2.0 / x.nrows() as f64);
    Ok(kkt_from_gradient(&grad, coef, lambda))
}

pub fn group_lasso_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    coef: &DMatrix<f64>,
) -> f64 {
    (y - x * coef).norm_squared() / x.nrows() as f64 + lambda * penalty(coef)
}

pub fn fit_group_lasso(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    opts: &GroupLassoOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<GroupLassoResult> {
    let problem = GramProblem::new(x, y)?;
    fit_gram(&problem, lambda, opts, warm_start)
}

/// Block coordinate descent on precomputed sufficient statistics.
pub fn fit_gram(
    problem: &GramProblem,
    lambda: f64,
    opts: &GroupLassoOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<GroupLassoResult> {
    if !lambda.is_finite() || lambda < 0.0 {
        return invalid(format!("lambda must be finite and >= 0, got {lambda}"));
    }
    if !(opts.tol > 0.0) {
        return invalid("solver tolerance must be positive");
    }
    let (p, m) = (problem.p(), problem.m());
    let n = problem.n as f64;
    let threshold = n * lambda / 2.0;

    let mut coef = match warm_start {
        Some(w) => {
            if w.shape() != (p, m) {
                return shape(format!(
                    "warm start is {}x{}, expected {p}x{m}",
                    w.nrows(),
                    w.ncols()
                ));
            }
            ensure_finite(w, "warm start")?;
            w.clone()
        }
        None => DMatrix::zeros(p, m),
    };
    let active: Vec<bool> = (0..p)
        .map(|j| problem.gram[(j, j)] > n * ZERO_COLUMN_SCALE)
        .collect();
    for j in 0..p {
        if !active[j] {
            coef.row_mut(j).fill(0.0);
        }
    }
    let mut gb = &problem.gram * &coef;

    let mut path = Vec::new();
    if opts.record_path {
        path.push(problem.objective(&coef, lambda));
    }

    let mut z = DMatrix::zeros(1, m);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            if !active[j] {
                continue;
            }
            let s = problem.gram[(j, j)];
            // z_j = X_j^T Y - sum_{k != j} G_jk B_k
            for c in 0..m {
                z[(0, c)] = problem.xty[(j, c)] - gb[(j, c)] + s * coef[(j, c)];
            }
            let z_norm = z.norm();
            let scale = if z_norm <= threshold {
                0.0
            } else {
                (1.0 - threshold / z_norm) / s
            };
            let mut change_sq = 0.0;
            let mut moved = false;
            for c in 0..m {
                let new = scale * z[(0, c)];
                let delta = new - coef[(j, c)];
                if delta != 0.0 {
                    moved = true;
                    change_sq += delta * delta;
                    coef[(j, c)] = new;
                    for i in 0..p {
                        gb[(i, c)] += problem.gram[(i, j)] * delta;
                    }
                }
            }
            if moved {
                max_change = max_change.max(change_sq.sqrt());
            }
        }
        if opts.record_path {
            path.push(problem.objective(&coef, lambda));
        }
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }

    let kkt = kkt_from_gradient(&((&problem.xty - &gb) * (2.0 / n)), &coef, lambda);
    Ok(GroupLassoResult {
        support: support_of(&coef),
        objective: problem.objective(&coef, lambda),
        iterations,
        kkt_violation: kkt,
        converged,
        objective_path: path,
        coef,
    })
}

/// Descending log-spaced grid from `top` to `top * ratio`.
pub fn log_grid(top: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![top];
    }
    let (hi, lo) = (top.ln(), (top * ratio).ln());
    (0..len)
        .map(|i| (hi + (lo - hi) * i as f64 / (len - 1) as f64).exp())
        .collect()
}

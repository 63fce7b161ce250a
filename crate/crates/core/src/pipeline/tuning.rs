//! K-fold cross-validation for the stage-1 pair `(lambda1, lambda2)`, the
//! projected group-lasso level `lambda3`, and the ridge/group-lasso
//! baselines.
//!
//! Folds come from a seeded shuffle cut into contiguous blocks. Every grid
//! point is scored by the mean squared prediction error on held-out rows,
//! averaged over folds. Among exact ties the larger penalty wins.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, shape, Result};
use crate::factor::ProjectionEstimate;
use crate::group_lasso::{fit_gram, log_grid, GramProblem, GroupLassoOptions};
use crate::linalg::{ensure_finite, select_rows};
use crate::rng::derived_rng;
use crate::smoother::{DesignFactorization, RidgeSmoother};
use crate::stage1::{fit_stage1_from_problem, lambda1_max, transformed_problem, Stage1Options};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_C0: f64 = 4.0;
pub const DEFAULT_PATH_LEN: usize = 20;
pub const DEFAULT_PATH_RATIO: f64 = 1e-3;
const FOLD_STREAM: u64 = 0xf01d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningMethod {
    /// Two-way grid over `(lambda1, lambda2)`.
    Grid,
    /// `lambda2` with `lambda1` tied to it, then `lambda1` at the chosen `lambda2`.
    Sequential,
    Lambda3,
    Ridge,
    GroupLasso,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvPoint {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    /// 1 for the tied search of sequential tuning, 2 for its second stage,
    /// 0 otherwise.
    pub stage: u8,
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningRecord {
    pub method: TuningMethod,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub grid1: Vec<f64>,
    pub grid2: Vec<f64>,
    pub grid3: Vec<f64>,
    pub points: Vec<CvPoint>,
    pub folds: usize,
    pub seed: u64,
    pub c0: Option<f64>,
    /// The projection was estimated once on all rows and reused in every fold.
    pub projection_fixed_across_folds: bool,
}

impl TuningRecord {
    fn new(method: TuningMethod, folds: usize, seed: u64) -> Self {
        Self {
            method,
            lambda1: None,
            lambda2: None,
            lambda3: None,
            grid1: Vec::new(),
            grid2: Vec::new(),
            grid3: Vec::new(),
            points: Vec::new(),
            folds,
            seed,
            c0: None,
            projection_fixed_across_folds: false,
        }
    }
}

/// Held-out row indices for each fold.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return invalid(format!("need at least 2 folds, got {folds}"));
    }
    if n < folds {
        return invalid(format!("{n} rows cannot be split into {folds} folds"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, &[FOLD_STREAM]));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut block = order[start..start + len].to_vec();
        block.sort_unstable();
        out.push(block);
        start += len;
    }
    Ok(out)
}

struct Split {
    x_train: DMatrix<f64>,
    y_train: DMatrix<f64>,
    x_test: DMatrix<f64>,
    y_test: DMatrix<f64>,
}

fn make_splits(x: &DMatrix<f64>, y: &DMatrix<f64>, folds: &[Vec<usize>]) -> Vec<Split> {
    let n = x.nrows();
    folds
        .iter()
        .map(|test| {
            let mut is_test = vec![false; n];
            for &i in test {
                is_test[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|i| !is_test[*i]).collect();
            Split {
                x_train: select_rows(x, &train),
                y_train: select_rows(y, &train),
                x_test: select_rows(x, test),
                y_test: select_rows(y, test),
            }
        })
        .collect()
}

fn prediction_mse(x_test: &DMatrix<f64>, y_test: &DMatrix<f64>, coef: &DMatrix<f64>) -> f64 {
    (y_test - x_test * coef).norm_squared() / (y_test.nrows() * y_test.ncols()) as f64
}

fn check_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>, folds: usize) -> Result<()> {
    ensure_finite(x, "design matrix")?;
    ensure_finite(y, "response matrix")?;
    if x.nrows() != y.nrows() {
        return shape(format!("X has {} rows but Y has {}", x.nrows(), y.nrows()));
    }
    if folds < 2 {
        return invalid(format!("need at least 2 folds, got {folds}"));
    }
    if x.nrows() < folds {
        return invalid(format!(
            "{} rows cannot be split into {folds} folds",
            x.nrows()
        ));
    }
    Ok(())
}

fn check_grid(grid: &[f64], name: &str) -> Result<()> {
    if grid.is_empty() {
        return invalid(format!("{name} grid is empty"));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return invalid(format!("{name} grid must hold finite nonnegative values"));
    }
    Ok(())
}

/// Indices of `grid` in decreasing value order (stable on ties).
fn descending_order(grid: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    idx.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(a.cmp(&b)));
    idx
}

/// Lower mean error wins; exact ties go to the larger penalties, compared
/// in the order given by `penalties`.
fn best_point(points: &[CvPoint], penalties: impl Fn(&CvPoint) -> Vec<f64>) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        let (a, b) = (&points[i], &points[best]);
        let better = match a.mean_error.total_cmp(&b.mean_error) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => penalties(a) > penalties(b),
        };
        if better {
            best = i;
        }
    }
    best
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ridge grid spanning `10 * sigma_1 .. 1e-4 * sigma_1` where `sigma_1` is
/// the top eigenvalue of `X^T X / n`.
pub fn default_lambda2_grid(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let f = DesignFactorization::new(x, crate::smoother::DEFAULT_RANK_TOL)?;
    let top = f
        .gram_eigenvalues()
        .first()
        .copied()
        .unwrap_or(1.0)
        .max(1e-12);
    Ok(log_grid(10.0 * top, 1e-5, 11))
}

/// Stage-1 prediction errors for every `lambda1` at one `(fold, lambda2)`,
/// in the original order of `grid1`.
fn stage1_fold_errors(
    split: &Split,
    factorization: &DesignFactorization,
    lambda2: f64,
    grid1: &[f64],
    opts: &Stage1Options,
) -> Result<Vec<f64>> {
    let smoother = RidgeSmoother::from_factorization(factorization.clone(), lambda2)?;
    let problem = transformed_problem(&smoother, &split.x_train, &split.y_train)?;
    let mut errors = vec![0.0; grid1.len()];
    let mut warm: Option<DMatrix<f64>> = None;
    for idx in descending_order(grid1) {
        let fit = fit_stage1_from_problem(
            &split.x_train,
            &split.y_train,
            &smoother,
            &problem,
            grid1[idx],
            opts,
            warm.as_ref(),
        )?;
        errors[idx] = prediction_mse(&split.x_test, &split.y_test, &fit.f_hat);
        warm = Some(fit.psi_hat);
    }
    Ok(errors)
}

fn fold_factorizations(splits: &[Split], rank_tol: f64) -> Result<Vec<DesignFactorization>> {
    splits
        .par_iter()
        .map(|s| DesignFactorization::new(&s.x_train, rank_tol))
        .collect()
}

/// Two-way grid search for `(lambda1, lambda2)`.
pub fn cv_tune_stage1(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid1: &[f64],
    grid2: &[f64],
    folds: usize,
    seed: u64,
    opts: &Stage1Options,
) -> Result<TuningRecord> {
    check_inputs(x, y, folds)?;
    check_grid(grid1, "lambda1")?;
    check_grid(grid2, "lambda2")?;
    let splits = make_splits(x, y, &fold_assignment(x.nrows(), folds, seed)?);
    let facts = fold_factorizations(&splits, opts.rank_tol)?;

    let jobs: Vec<(usize, usize)> = (0..grid2.len())
        .flat_map(|l2| (0..folds).map(move |f| (l2, f)))
        .collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(l2, f)| stage1_fold_errors(&splits[f], &facts[f], grid2[l2], grid1, opts))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(grid1.len() * grid2.len());
    for (l2, &lambda2) in grid2.iter().enumerate() {
        for (l1, &lambda1) in grid1.iter().enumerate() {
            let fold_errors: Vec<f64> = (0..folds).map(|f| results[l2 * folds + f][l1]).collect();
            points.push(CvPoint {
                lambda1: Some(lambda1),
                lambda2: Some(lambda2),
                lambda3: None,
                stage: 0,
                mean_error: mean(&fold_errors),
                fold_errors,
            });
        }
    }
    let best = best_point(&points, |p| vec![p.lambda1.unwrap(), p.lambda2.unwrap()]);

    let mut record = TuningRecord::new(TuningMethod::Grid, folds, seed);
    record.lambda1 = points[best].lambda1;
    record.lambda2 = points[best].lambda2;
    record.grid1 = grid1.to_vec();
    record.grid2 = grid2.to_vec();
    record.points = points;
    Ok(record)
}

/// `c0 * sqrt(max_j M_jj) * (sqrt(m/n) + sqrt(2 log p / n))` with
/// `M = X^T Q^2 X / n` evaluated on `smoother`.
pub fn lambda1_from_lambda2(smoother: &RidgeSmoother, c0: f64, m: usize) -> f64 {
    let n = smoother.n() as f64;
    let p = smoother.p() as f64;
    let max_m = smoother.m_diagonal().into_iter().fold(0.0, f64::max);
    c0 * max_m.sqrt() * ((m as f64 / n).sqrt() + (2.0 * p.ln() / n).sqrt())
}

/// Sequential search: `lambda2` first with `lambda1` tied to it by
/// [`lambda1_from_lambda2`], then `lambda1` over a log path at the chosen
/// `lambda2`.
pub fn sequential_tune(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid2: &[f64],
    c0: f64,
    folds: usize,
    seed: u64,
    opts: &Stage1Options,
) -> Result<TuningRecord> {
    check_inputs(x, y, folds)?;
    check_grid(grid2, "lambda2")?;
    if !(c0 > 0.0) {
        return invalid("c0 must be positive");
    }
    let full = DesignFactorization::new(x, opts.rank_tol)?;
    let tied: Vec<f64> = grid2
        .iter()
        .map(|&l2| {
            RidgeSmoother::from_factorization(full.clone(), l2)
                .map(|s| lambda1_from_lambda2(&s, c0, y.ncols()))
        })
        .collect::<Result<_>>()?;

    let splits = make_splits(x, y, &fold_assignment(x.nrows(), folds, seed)?);
    let facts = fold_factorizations(&splits, opts.rank_tol)?;

    let jobs: Vec<(usize, usize)> = (0..grid2.len())
        .flat_map(|l2| (0..folds).map(move |f| (l2, f)))
        .collect();
    let stage_a: Vec<f64> = jobs
        .par_iter()
        .map(|&(l2, f)| {
            stage1_fold_errors(&splits[f], &facts[f], grid2[l2], &[tied[l2]], opts).map(|e| e[0])
        })
        .collect::<Result<_>>()?;

    let mut points: Vec<CvPoint> = grid2
        .iter()
        .enumerate()
        .map(|(l2, &lambda2)| {
            let fold_errors: Vec<f64> = stage_a[l2 * folds..(l2 + 1) * folds].to_vec();
            CvPoint {
                lambda1: Some(tied[l2]),
                lambda2: Some(lambda2),
                lambda3: None,
                stage: 1,
                mean_error: mean(&fold_errors),
                fold_errors,
            }
        })
        .collect();
    let best_a = best_point(&points, |p| vec![p.lambda2.unwrap()]);
    let lambda2 = points[best_a].lambda2.unwrap();

    let smoother = RidgeSmoother::from_factorization(full, lambda2)?;
    let top = lambda1_max(&smoother, x, y)?;
    let grid1 = if top > 0.0 {
        log_grid(top, DEFAULT_PATH_RATIO, DEFAULT_PATH_LEN)
    } else {
        vec![0.0]
    };
    let stage_b: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| stage1_fold_errors(&splits[f], &facts[f], lambda2, &grid1, opts))
        .collect::<Result<_>>()?;
    let first_b = points.len();
    for (l1, &lambda1) in grid1.iter().enumerate() {
        let fold_errors: Vec<f64> = stage_b.iter().map(|e| e[l1]).collect();
        points.push(CvPoint {
            lambda1: Some(lambda1),
            lambda2: Some(lambda2),
            lambda3: None,
            stage: 2,
            mean_error: mean(&fold_errors),
            fold_errors,
        });
    }
    let best_b = first_b + best_point(&points[first_b..], |p| vec![p.lambda1.unwrap()]);

    let mut record = TuningRecord::new(TuningMethod::Sequential, folds, seed);
    record.lambda1 = points[best_b].lambda1;
    record.lambda2 = Some(lambda2);
    record.grid1 = grid1;
    record.grid2 = grid2.to_vec();
    record.c0 = Some(c0);
    record.points = points;
    Ok(record)
}

/// Group-lasso CV on `(x, target)` along `grid`, warm-started in
/// decreasing order. Returns the scored points in grid order.
fn cv_group_lasso_points(
    x: &DMatrix<f64>,
    target: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
    solver: &GroupLassoOptions,
) -> Result<Vec<CvPoint>> {
    let splits = make_splits(x, target, &fold_assignment(x.nrows(), folds, seed)?);
    let per_fold: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|s| {
            let problem = GramProblem::new(&s.x_train, &s.y_train)?;
            let mut errors = vec![0.0; grid.len()];
            let mut warm: Option<DMatrix<f64>> = None;
            for idx in descending_order(grid) {
                let fit = fit_gram(&problem, grid[idx], solver, warm.as_ref())?;
                errors[idx] = prediction_mse(&s.x_test, &s.y_test, &fit.coef);
                warm = Some(fit.coef);
            }
            Ok(errors)
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let fold_errors: Vec<f64> = per_fold.iter().map(|e| e[i]).collect();
            CvPoint {
                lambda1: None,
                lambda2: None,
                lambda3: Some(lambda),
                stage: 0,
                mean_error: mean(&fold_errors),
                fold_errors,
            }
        })
        .collect())
}

/// Default group-lasso path: `lambda_max` of `(x, target)` down by 1e-3.
pub fn default_group_lasso_grid(x: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<Vec<f64>> {
    let top = GramProblem::new(x, target)?.lambda_max();
    Ok(if top > 0.0 {
        log_grid(top, DEFAULT_PATH_RATIO, DEFAULT_PATH_LEN)
    } else {
        vec![0.0]
    })
}

/// CV for the projected group-lasso. The projection is held fixed: the
/// projected response `Y (I - P)` is formed once from all rows.
pub fn cv_tune_lambda3(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    projection: &ProjectionEstimate,
    grid3: &[f64],
    folds: usize,
    seed: u64,
    solver: &GroupLassoOptions,
) -> Result<TuningRecord> {
    check_inputs(x, y, folds)?;
    check_grid(grid3, "lambda3")?;
    let target = projection.project_out(y)?;
    let points = cv_group_lasso_points(x, &target, grid3, folds, seed, solver)?;
    let best = best_point(&points, |p| vec![p.lambda3.unwrap()]);
    let mut record = TuningRecord::new(TuningMethod::Lambda3, folds, seed);
    record.lambda3 = points[best].lambda3;
    record.grid3 = grid3.to_vec();
    record.points = points;
    record.projection_fixed_across_folds = true;
    Ok(record)
}

/// CV for a plain group-lasso on `(x, y)`; the selected level is reported
/// in `lambda3`.
pub fn cv_tune_group_lasso(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
    solver: &GroupLassoOptions,
) -> Result<TuningRecord> {
    check_inputs(x, y, folds)?;
    check_grid(grid, "group-lasso")?;
    let points = cv_group_lasso_points(x, y, grid, folds, seed, solver)?;
    let best = best_point(&points, |p| vec![p.lambda3.unwrap()]);
    let mut record = TuningRecord::new(TuningMethod::GroupLasso, folds, seed);
    record.lambda3 = points[best].lambda3;
    record.grid3 = grid.to_vec();
    record.points = points;
    Ok(record)
}

/// CV for multivariate ridge regression over `grid2`.
pub fn cv_tune_ridge(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid2: &[f64],
    folds: usize,
    seed: u64,
    rank_tol: f64,
) -> Result<TuningRecord> {
    check_inputs(x, y, folds)?;
    check_grid(grid2, "lambda2")?;
    let splits = make_splits(x, y, &fold_assignment(x.nrows(), folds, seed)?);
    let per_fold: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|s| {
            let fact = DesignFactorization::new(&s.x_train, rank_tol)?;
            grid2
                .iter()
                .map(|&l2| {
                    let sm = RidgeSmoother::from_factorization(fact.clone(), l2)?;
                    let coef = sm.backsolve(&s.y_train)?.coef;
                    Ok(prediction_mse(&s.x_test, &s.y_test, &coef))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let points: Vec<CvPoint> = grid2
        .iter()
        .enumerate()
        .map(|(i, &lambda2)| {
            let fold_errors: Vec<f64> = per_fold.iter().map(|e| e[i]).collect();
            CvPoint {
                lambda1: None,
                lambda2: Some(lambda2),
                lambda3: None,
                stage: 0,
                mean_error: mean(&fold_errors),
                fold_errors,
            }
        })
        .collect();
    let best = best_point(&points, |p| vec![p.lambda2.unwrap()]);
    let mut record = TuningRecord::new(TuningMethod::Ridge, folds, seed);
    record.lambda2 = points[best].lambda2;
    record.grid2 = grid2.to_vec();
    record.points = points;
    Ok(record)
}

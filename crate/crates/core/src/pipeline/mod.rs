//! End-to-end HIVE and H-HIVE estimation.
//!
//! The steps run in order: standardize, stage-1 sparse-plus-dense fit,
//! residual covariance, row-space projection (PCA or HeteroPCA), and a
//! group-lasso of `X` on the projected response `Y (I - U U^T)`. Every
//! intermediate is kept in [`HiveFit`].

mod standardize;
pub mod tuning;

pub use standardize::{standardize, StandardizationRecord};
pub use tuning::{
    cv_tune_group_lasso, cv_tune_lambda3, cv_tune_ridge, cv_tune_stage1, default_group_lasso_grid,
    default_lambda2_grid, fold_assignment, lambda1_from_lambda2, sequential_tune, CvPoint,
    TuningMethod, TuningRecord, DEFAULT_C0, DEFAULT_FOLDS,
};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, shape, HiveError, Result};
use crate::factor::{
    default_k_bar, eigenvalue_ratios, hetero_pca, parallel_analysis, pca_projection,
    select_k_ratio, ParallelAnalysis, ProjectionEstimate, ProjectionMethod, DEFAULT_HETERO_ITERS,
};
use crate::group_lasso::{fit_gram, log_grid, GramProblem, GroupLassoOptions};
use crate::linalg::{ensure_finite, symmetric_eigen_desc};
use crate::rng::derive_seed;
use crate::smoother::{DesignFactorization, RidgeSmoother};
use crate::stage1::{fit_stage1_with_smoother, lambda1_max, Stage1Fit, Stage1Options};

/// `m` above which automatic K selection uses the eigenvalue ratio rather
/// than parallel analysis.
pub const AUTO_RATIO_MIN_M: usize = 25;
pub const DEFAULT_PA_PERMUTATIONS: usize = 100;
pub const DEFAULT_PA_QUANTILE: f64 = 0.95;
const PA_STREAM: u64 = 0x9a;

#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    pub theta: DMatrix<f64>,
    pub support: Vec<usize>,
    pub lambda3: f64,
    pub kkt_violation: f64,
    pub converged: bool,
    pub iterations: usize,
    pub projection: ProjectionEstimate,
}

/// Group-lasso of `x` on `y (I - U U^T)`.
pub fn fit_theta_projected(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    projection: &ProjectionEstimate,
    lambda3: f64,
    solver: &GroupLassoOptions,
) -> Result<ThetaEstimate> {
    let target = projection.project_out(y)?;
    let problem = GramProblem::new(x, &target)?;
    fit_theta_on_problem(&problem, projection, lambda3, solver)
}

fn fit_theta_on_problem(
    problem: &GramProblem,
    projection: &ProjectionEstimate,
    lambda3: f64,
    solver: &GroupLassoOptions,
) -> Result<ThetaEstimate> {
    if !lambda3.is_finite() || lambda3 < 0.0 {
        return invalid(format!("lambda3 must be finite and >= 0, got {lambda3}"));
    }
    let gl = fit_gram(problem, lambda3, solver, None)?;
    Ok(ThetaEstimate {
        theta: gl.coef,
        support: gl.support,
        lambda3,
        kkt_violation: gl.kkt_violation,
        converged: gl.converged,
        iterations: gl.iterations,
        projection: projection.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum KChoice {
    Fixed(usize),
    /// Largest eigenvalue ratio among the first `k_bar` (default `min(n, m) / 2`).
    Ratio {
        k_bar: Option<usize>,
    },
    ParallelAnalysis {
        n_perm: usize,
        quantile: f64,
    },
    /// Ratio when `m > 25`, parallel analysis otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage1Tuning {
    Fixed {
        lambda1: f64,
        lambda2: f64,
    },
    /// Two-way CV grid; `None` uses the default grids.
    Grid {
        grid1: Option<Vec<f64>>,
        grid2: Option<Vec<f64>>,
    },
    Sequential {
        grid2: Option<Vec<f64>>,
        c0: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lambda3Tuning {
    Fixed(f64),
    Cv { grid: Option<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiveOptions {
    pub k: KChoice,
    pub stage1_tuning: Stage1Tuning,
    pub lambda3_tuning: Lambda3Tuning,
    pub folds: usize,
    pub seed: u64,
    pub standardize: bool,
    /// On a selected K of 0, fit a plain group-lasso instead of failing.
    pub allow_no_hidden: bool,
    pub stage1: Stage1Options,
}

impl Default for HiveOptions {
    fn default() -> Self {
        Self {
            k: KChoice::Auto,
            stage1_tuning: Stage1Tuning::Sequential {
                grid2: None,
                c0: DEFAULT_C0,
            },
            lambda3_tuning: Lambda3Tuning::Cv { grid: None },
            folds: DEFAULT_FOLDS,
            seed: 0,
            standardize: true,
            allow_no_hidden: false,
            stage1: Stage1Options::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KSelectionMethod {
    Ratio,
    ParallelAnalysis,
}

#[derive(Debug, Clone, Serialize)]
pub struct KSelectionRecord {
    pub method: KSelectionMethod,
    pub k: usize,
    /// Eigenvalues of the residual covariance, largest first.
    pub eigenvalues: Vec<f64>,
    pub ratios: Vec<f64>,
    pub k_bar: Option<usize>,
    pub parallel_analysis: Option<ParallelAnalysis>,
}

/// Coefficients mapped back to the scale of the unstandardized `X`.
#[derive(Debug, Clone)]
pub struct OriginalScale {
    pub theta: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// Intercept paired with `f`.
    pub intercept: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HiveFit {
    pub stage1: Stage1Fit,
    pub projection: ProjectionEstimate,
    pub theta: ThetaEstimate,
    pub k_used: usize,
    pub k_selection: Option<KSelectionRecord>,
    pub standardization: StandardizationRecord,
    pub stage1_tuning: Option<TuningRecord>,
    pub lambda3_tuning: Option<TuningRecord>,
}

impl HiveFit {
    pub fn original_scale(&self) -> OriginalScale {
        let s = &self.standardization;
        let f = s.unscale_coef(&self.stage1.f_hat);
        OriginalScale {
            theta: s.unscale_coef(&self.theta.theta),
            psi: s.unscale_coef(&self.stage1.psi_hat),
            l: s.unscale_coef(&self.stage1.l_hat),
            intercept: s.intercept(&f),
            f,
        }
    }

    pub fn converged(&self) -> bool {
        self.stage1.converged && self.theta.converged
    }
}

/// Selects K from stage-1 residuals.
pub fn select_k(
    residuals: &DMatrix<f64>,
    choice: &KChoice,
    seed: u64,
) -> Result<(usize, Option<KSelectionRecord>)> {
    let (n, m) = residuals.shape();
    let choice = match choice {
        KChoice::Fixed(k) => return Ok((*k, None)),
        KChoice::Auto if m > AUTO_RATIO_MIN_M => KChoice::Ratio { k_bar: None },
        KChoice::Auto => KChoice::ParallelAnalysis {
            n_perm: DEFAULT_PA_PERMUTATIONS,
            quantile: DEFAULT_PA_QUANTILE,
        },
        other => other.clone(),
    };
    let sigma = crate::stage1::residual_covariance(residuals);
    let eigenvalues: Vec<f64> = symmetric_eigen_desc(&sigma).0.iter().cloned().collect();
    match choice {
        KChoice::Ratio { k_bar } => {
            let k_bar = k_bar.unwrap_or_else(|| default_k_bar(n, m));
            let ratios = eigenvalue_ratios(&eigenvalues, k_bar)?;
            let k = select_k_ratio(&eigenvalues, k_bar)?;
            Ok((
                k,
                Some(KSelectionRecord {
                    method: KSelectionMethod::Ratio,
                    k,
                    eigenvalues,
                    ratios,
                    k_bar: Some(k_bar),
                    parallel_analysis: None,
                }),
            ))
        }
        KChoice::ParallelAnalysis { n_perm, quantile } => {
            let pa =
                parallel_analysis(residuals, n_perm, quantile, derive_seed(seed, &[PA_STREAM]))?;
            Ok((
                pa.k,
                Some(KSelectionRecord {
                    method: KSelectionMethod::ParallelAnalysis,
                    k: pa.k,
                    eigenvalues,
                    ratios: Vec::new(),
                    k_bar: None,
                    parallel_analysis: Some(pa),
                }),
            ))
        }
        KChoice::Fixed(_) | KChoice::Auto => unreachable!(),
    }
}

/// Stage-1 penalties from the requested tuning.
pub fn tune_stage1(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    tuning: &Stage1Tuning,
    folds: usize,
    seed: u64,
    opts: &Stage1Options,
) -> Result<(f64, f64, Option<TuningRecord>)> {
    match tuning {
        Stage1Tuning::Fixed { lambda1, lambda2 } => Ok((*lambda1, *lambda2, None)),
        Stage1Tuning::Grid { grid1, grid2 } => {
            let grid2 = match grid2 {
                Some(g) => g.clone(),
                None => default_lambda2_grid(x)?,
            };
            let grid1 = match grid1 {
                Some(g) => g.clone(),
                None => default_lambda1_grid(x, y, &grid2, opts.rank_tol)?,
            };
            let rec = cv_tune_stage1(x, y, &grid1, &grid2, folds, seed, opts)?;
            Ok((rec.lambda1.unwrap(), rec.lambda2.unwrap(), Some(rec)))
        }
        Stage1Tuning::Sequential { grid2, c0 } => {
            let grid2 = match grid2 {
                Some(g) => g.clone(),
                None => default_lambda2_grid(x)?,
            };
            let rec = sequential_tune(x, y, &grid2, *c0, folds, seed, opts)?;
            Ok((rec.lambda1.unwrap(), rec.lambda2.unwrap(), Some(rec)))
        }
    }
}

/// Ten log-spaced `lambda1` values from the largest null threshold over
/// `grid2` down by 1e-3.
pub fn default_lambda1_grid(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid2: &[f64],
    rank_tol: f64,
) -> Result<Vec<f64>> {
    let f = DesignFactorization::new(x, rank_tol)?;
    let mut top = 0.0f64;
    for &l2 in grid2 {
        let s = RidgeSmoother::from_factorization(f.clone(), l2)?;
        top = top.max(lambda1_max(&s, x, y)?);
    }
    Ok(if top > 0.0 {
        log_grid(top, 1e-3, 10)
    } else {
        vec![0.0]
    })
}

fn fit_with(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    opts: &HiveOptions,
    hetero: Option<usize>,
) -> Result<HiveFit> {
    ensure_finite(x, "design matrix")?;
    ensure_finite(y, "response matrix")?;
    if x.nrows() != y.nrows() {
        return shape(format!("X has {} rows but Y has {}", x.nrows(), y.nrows()));
    }
    let m = y.ncols();
    if m < 2 {
        return invalid("the response needs at least 2 columns");
    }
    if let KChoice::Fixed(k) = opts.k {
        if k >= m {
            return invalid(format!("k must be smaller than m = {m}, got {k}"));
        }
        if k == 0 && !opts.allow_no_hidden {
            return invalid("k = 0 requested; enable allow_no_hidden to fit a plain group-lasso");
        }
    }

    let (xw, yw, standardization) = if opts.standardize {
        standardize(x, y)
    } else {
        (
            x.clone(),
            y.clone(),
            StandardizationRecord::identity(x.ncols(), m),
        )
    };

    let (lambda1, lambda2, stage1_tuning) = tune_stage1(
        &xw,
        &yw,
        &opts.stage1_tuning,
        opts.folds,
        opts.seed,
        &opts.stage1,
    )?;
    let smoother = RidgeSmoother::build(&xw, lambda2, opts.stage1.rank_tol)?;
    let stage1 = fit_stage1_with_smoother(&xw, &yw, &smoother, lambda1, &opts.stage1, None)?;

    let (k, k_selection) = select_k(&stage1.residuals, &opts.k, opts.seed)?;
    if k >= m {
        return invalid(format!("k must be smaller than m = {m}, got {k}"));
    }
    let projection = if k == 0 {
        if !opts.allow_no_hidden {
            return Err(HiveError::NoHiddenVariables);
        }
        ProjectionEstimate::from_basis(DMatrix::zeros(m, 0), ProjectionMethod::Pca)
    } else {
        match hetero {
            Some(t) => hetero_pca(&stage1.sigma_eps_hat, k, t)?,
            None => pca_projection(&stage1.sigma_eps_hat, k)?,
        }
    };

    let target = projection.project_out(&yw)?;
    let (lambda3, lambda3_tuning) = match &opts.lambda3_tuning {
        Lambda3Tuning::Fixed(l) => (*l, None),
        Lambda3Tuning::Cv { grid } => {
            let grid = match grid {
                Some(g) => g.clone(),
                None => default_group_lasso_grid(&xw, &target)?,
            };
            let rec = cv_tune_lambda3(
                &xw,
                &yw,
                &projection,
                &grid,
                opts.folds,
                opts.seed,
                &opts.stage1.solver,
            )?;
            (rec.lambda3.unwrap(), Some(rec))
        }
    };
    let problem = GramProblem::new(&xw, &target)?;
    let theta = fit_theta_on_problem(&problem, &projection, lambda3, &opts.stage1.solver)?;

    Ok(HiveFit {
        stage1,
        k_used: projection.k,
        projection,
        theta,
        k_selection,
        standardization,
        stage1_tuning,
        lambda3_tuning,
    })
}

/// HIVE with a PCA projection.
pub fn fit_hive(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &HiveOptions) -> Result<HiveFit> {
    fit_with(x, y, opts, None)
}

/// H-HIVE: HeteroPCA with `t_iters` iterations in place of PCA.
pub fn fit_hhive(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    t_iters: usize,
    opts: &HiveOptions,
) -> Result<HiveFit> {
    fit_with(x, y, opts, Some(t_iters))
}

/// [`fit_hhive`] with the default iteration count.
pub fn fit_hhive_default(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    opts: &HiveOptions,
) -> Result<HiveFit> {
    fit_hhive(x, y, DEFAULT_HETERO_ITERS, opts)
}

//! Recovery of the hidden-variable row space from a residual covariance.
//!
//! [`pca_projection`] takes the top-K eigenvectors directly; [`hetero_pca`]
//! first imputes the diagonal by iterated rank-K truncation so that a
//! heteroscedastic (unequal) noise diagonal does not bias the eigenspace.
//! The number of factors comes from [`select_k_ratio`] (largest
//! eigenvalue gap) or [`select_k_pa`] (parallel analysis).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::linalg::{
    asymmetry, ensure_finite, fix_signs, projector, symmetric_eigen_desc, thin_svd,
};
use crate::rng::derived_rng;
use crate::stage1::residual_covariance;

pub const DEFAULT_HETERO_ITERS: usize = 5;
pub const RATIO_FLOOR: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMethod {
    Pca,
    HeteroPca,
    /// Projector built from a known loading matrix.
    Oracle,
    /// Right singular vectors of OLS residuals (surrogate variable analysis).
    ResidualSvd,
}

#[derive(Debug, Clone)]
pub struct ProjectionEstimate {
    pub u_hat: DMatrix<f64>,
    pub k: usize,
    pub method: ProjectionMethod,
    pub heteropca_iterations: usize,
    pub eigenvalues: Vec<f64>,
}

impl ProjectionEstimate {
    pub fn from_basis(u_hat: DMatrix<f64>, method: ProjectionMethod) -> Self {
        let k = u_hat.ncols();
        Self {
            u_hat,
            k,
            method,
            heteropca_iterations: 0,
            eigenvalues: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.u_hat.nrows()
    }

    /// `U U^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        projector(&self.u_hat)
    }

    /// `Y (I - U U^T)` without forming the m×m projector.
    pub fn project_out(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.ncols() != self.m() {
            return shape(format!(
                "response has {} columns, projection is for {}",
                y.ncols(),
                self.m()
            ));
        }
        Ok(y - (y * &self.u_hat) * self.u_hat.transpose())
    }
}

fn check_square_symmetric(sigma: &DMatrix<f64>, k: usize) -> Result<()> {
    ensure_finite(sigma, "covariance matrix")?;
    let m = sigma.nrows();
    if sigma.ncols() != m {
        return shape(format!(
            "covariance must be square, got {}x{}",
            m,
            sigma.ncols()
        ));
    }
    if k == 0 || k >= m {
        return invalid(format!("k must satisfy 1 <= k < m = {m}, got {k}"));
    }
    let scale = sigma.amax().max(1.0);
    if asymmetry(sigma) > SYMMETRY_TOL * scale {
        return invalid("covariance matrix is not symmetric");
    }
    Ok(())
}

/// Top-k eigenvectors of a symmetric matrix.
pub fn pca_projection(sigma: &DMatrix<f64>, k: usize) -> Result<ProjectionEstimate> {
    check_square_symmetric(sigma, k)?;
    let (vals, vecs) = symmetric_eigen_desc(sigma);
    Ok(ProjectionEstimate {
        u_hat: vecs.columns(0, k).into_owned(),
        k,
        method: ProjectionMethod::Pca,
        heteropca_iterations: 0,
        eigenvalues: vals.iter().take(k).cloned().collect(),
    })
}

/// Rank-k truncation used inside [`hetero_pca_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Top-k singular triplets.
    Singular,
    /// Top-k eigenpairs by signed eigenvalue. Differs from `Singular` only
    /// when a negative eigenvalue outweighs a retained positive one, which
    /// the zeroed diagonal makes likely for a weak factor.
    #[default]
    Eigen,
}

/// Top-k factors of a symmetric matrix: `(basis, weights, rank-k part)`.
fn truncate(
    n: &DMatrix<f64>,
    k: usize,
    rule: Truncation,
) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    match rule {
        Truncation::Singular => {
            let (u, s, v) = thin_svd(n);
            let low = u.columns(0, k)
                * DMatrix::from_diagonal(&s.rows(0, k).into_owned())
                * v.columns(0, k).transpose();
            (
                u.columns(0, k).into_owned(),
                s.iter().take(k).cloned().collect(),
                low,
            )
        }
        Truncation::Eigen => {
            let (vals, vecs) = symmetric_eigen_desc(n);
            let basis = vecs.columns(0, k).into_owned();
            let low =
                &basis * DMatrix::from_diagonal(&vals.rows(0, k).into_owned()) * basis.transpose();
            (basis, vals.iter().take(k).cloned().collect(), low)
        }
    }
}

fn heteropca_run<F>(
    sigma: &DMatrix<f64>,
    k: usize,
    t_iters: usize,
    rule: Truncation,
    mut observe: F,
) -> ProjectionEstimate
where
    F: FnMut(usize, &DMatrix<f64>),
{
    let m = sigma.nrows();
    let mut current = sigma.clone();
    current.fill_diagonal(0.0);

    for t in 0..t_iters {
        observe(t, &current);
        let (_, _, low) = truncate(&current, k, rule);
        for i in 0..m {
            current[(i, i)] = low[(i, i)];
        }
    }
    observe(t_iters, &current);

    let (mut u_hat, weights, _) = truncate(&current, k, rule);
    fix_signs(&mut u_hat);
    ProjectionEstimate {
        u_hat,
        k,
        method: ProjectionMethod::HeteroPca,
        heteropca_iterations: t_iters,
        eigenvalues: weights,
    }
}

/// Diagonal-deletion PCA: starting from `sigma` with a zeroed diagonal,
/// repeatedly replace the diagonal with that of the best rank-k
/// approximation, then return the top-k eigenvectors.
pub fn hetero_pca(sigma: &DMatrix<f64>, k: usize, t_iters: usize) -> Result<ProjectionEstimate> {
    hetero_pca_with(sigma, k, t_iters, Truncation::default())
}

pub fn hetero_pca_with(
    sigma: &DMatrix<f64>,
    k: usize,
    t_iters: usize,
    rule: Truncation,
) -> Result<ProjectionEstimate> {
    check_square_symmetric(sigma, k)?;
    Ok(heteropca_run(sigma, k, t_iters, rule, |_, _| {}))
}

/// Every iterate `N^(0), ..., N^(T)` of [`hetero_pca`].
pub fn hetero_pca_iterates(
    sigma: &DMatrix<f64>,
    k: usize,
    t_iters: usize,
) -> Result<Vec<DMatrix<f64>>> {
    check_square_symmetric(sigma, k)?;
    let mut out = Vec::with_capacity(t_iters + 1);
    heteropca_run(sigma, k, t_iters, Truncation::default(), |_, n| {
        out.push(n.clone())
    });
    Ok(out)
}

/// `lambda_j / max(lambda_{j+1}, floor)` for j = 1..=k_bar, with
/// `floor = 1e-12 * lambda_1`.
pub fn eigenvalue_ratios(eigenvalues: &[f64], k_bar: usize) -> Result<Vec<f64>> {
    if k_bar == 0 {
        return invalid("k_bar must be at least 1");
    }
    if eigenvalues.len() < k_bar + 1 {
        return invalid(format!(
            "need at least k_bar + 1 = {} eigenvalues, got {}",
            k_bar + 1,
            eigenvalues.len()
        ));
    }
    let floor = RATIO_FLOOR * eigenvalues[0].max(0.0);
    Ok((0..k_bar)
        .map(|j| {
            let den = eigenvalues[j + 1].max(floor);
            if den > 0.0 {
                eigenvalues[j] / den
            } else {
                // all-zero spectrum
                1.0
            }
        })
        .collect())
}

/// Index (1-based) of the largest eigenvalue ratio; ties go to the smallest j.
pub fn select_k_ratio(eigenvalues: &[f64], k_bar: usize) -> Result<usize> {
    let ratios = eigenvalue_ratios(eigenvalues, k_bar)?;
    let mut best = 0;
    for (j, r) in ratios.iter().enumerate() {
        if *r > ratios[best] {
            best = j;
        }
    }
    Ok(best + 1)
}

/// Default search bound `floor(min(n, m) / 2)`, clamped to `[1, m - 1]`.
pub fn default_k_bar(n: usize, m: usize) -> usize {
    (n.min(m) / 2).clamp(1, m.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, Serialize)]
pub struct ParallelAnalysis {
    pub k: usize,
    pub observed: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub n_perm: usize,
    pub quantile: f64,
}

/// Linear-interpolation quantile of unsorted data.
fn quantile_of(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}

/// Parallel analysis on a residual matrix: each permutation replicate
/// shuffles every column independently, and the observed eigenvalues of
/// `R^T R / n` are compared with the per-index permutation quantiles.
pub fn parallel_analysis(
    residuals: &DMatrix<f64>,
    n_perm: usize,
    quantile: f64,
    seed: u64,
) -> Result<ParallelAnalysis> {
    if n_perm < 1 {
        return invalid("n_perm must be at least 1");
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return invalid(format!("quantile must lie in (0, 1), got {quantile}"));
    }
    ensure_finite(residuals, "residual matrix")?;
    let (n, m) = residuals.shape();
    if n < 2 || m < 2 {
        return shape("parallel analysis needs at least 2 rows and 2 columns");
    }

    let observed: Vec<f64> = symmetric_eigen_desc(&residual_covariance(residuals))
        .0
        .iter()
        .cloned()
        .collect();

    let permuted: Vec<Vec<f64>> = (0..n_perm)
        .into_par_iter()
        .map(|b| {
            let mut rng = derived_rng(seed, &[b as u64]);
            let mut shuffled = residuals.clone();
            let mut idx: Vec<usize> = (0..n).collect();
            for c in 0..m {
                idx.shuffle(&mut rng);
                for (i, &src) in idx.iter().enumerate() {
                    shuffled[(i, c)] = residuals[(src, c)];
                }
            }
            symmetric_eigen_desc(&residual_covariance(&shuffled))
                .0
                .iter()
                .cloned()
                .collect()
        })
        .collect();

    let thresholds: Vec<f64> = (0..m)
        .map(|j| {
            let mut col: Vec<f64> = permuted.iter().map(|ev| ev[j]).collect();
            quantile_of(&mut col, quantile)
        })
        .collect();

    let k = observed
        .iter()
        .zip(&thresholds)
        .take_while(|(o, t)| o > t)
        .count();

    Ok(ParallelAnalysis {
        k,
        observed,
        thresholds,
        n_perm,
        quantile,
    })
}

pub fn select_k_pa(
    residuals: &DMatrix<f64>,
    n_perm: usize,
    quantile: f64,
    seed: u64,
) -> Result<usize> {
    Ok(parallel_analysis(residuals, n_perm, quantile, seed)?.k)
}

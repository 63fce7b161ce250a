//! Ridge smoother operators built from a thin SVD of the design.
//!
//! For a design `X = U diag(d) V^T` (rank q) and ridge level `lambda2` the
//! hat matrix `P = X (X^T X + n lambda2 I)^{-1} X^T` has eigenvalues
//! `d_k^2 / (d_k^2 + n lambda2)` on the column space of `X` and zero on its
//! complement. `Q = I - P` and its principal square root share the same
//! eigenvectors, so all three act on an n×c matrix through `U` alone and no
//! n×n matrix is ever formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, shape, Result};
use crate::linalg::{ensure_finite, thin_svd};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Thin factorization `X = left * diag(singular_values) * right^T` truncated
/// to the numerical rank.
#[derive(Debug, Clone)]
pub struct DesignFactorization {
    pub left_basis: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub right_basis: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
}

impl DesignFactorization {
    pub fn new(x: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        ensure_finite(x, "design matrix")?;
        if !(rank_tol >= 0.0) {
            return invalid("rank tolerance must be nonnegative");
        }
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return shape("design matrix must be non-empty");
        }
        let (u, s, v) = thin_svd(x);
        let top = if s.is_empty() { 0.0 } else { s[0] };
        let q = s
            .iter()
            .take_while(|&&d| d > 0.0 && d > rank_tol * top)
            .count();

        Ok(Self {
            left_basis: u.columns(0, q).into_owned(),
            singular_values: s.rows(0, q).into_owned(),
            right_basis: v.columns(0, q).into_owned(),
            n,
            p,
        })
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Nonzero eigenvalues of `X^T X / n`.
    pub fn gram_eigenvalues(&self) -> Vec<f64> {
        self.singular_values
            .iter()
            .map(|d| d * d / self.n as f64)
            .collect()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank() < self.n.min(self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmootherMode {
    /// The ridge hat matrix.
    P,
    /// `I - P`.
    Q,
    /// Principal square root of `I - P`.
    QHalf,
}

#[derive(Debug, Clone)]
pub struct RidgeSmoother {
    pub factorization: DesignFactorization,
    pub lambda2: f64,
    pub p_eigs: Vec<f64>,
    pub q_eigs: Vec<f64>,
}

/// Coefficient matrix from [`RidgeSmoother::backsolve`].
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub coef: DMatrix<f64>,
    /// Set when `lambda2 = 0` and the design has fewer than p independent
    /// columns, so the minimum-norm least-squares solution was returned.
    pub pseudo_inverse: bool,
}

impl RidgeSmoother {
    pub fn build(x: &DMatrix<f64>, lambda2: f64, rank_tol: f64) -> Result<Self> {
        let factorization = DesignFactorization::new(x, rank_tol)?;
        Self::from_factorization(factorization, lambda2)
    }

    /// Reuses an existing factorization; a λ2 path only needs one SVD.
    pub fn from_factorization(factorization: DesignFactorization, lambda2: f64) -> Result<Self> {
        if !lambda2.is_finite() || lambda2 < 0.0 {
            return invalid(format!("lambda2 must be finite and >= 0, got {lambda2}"));
        }
        let shift = factorization.n as f64 * lambda2;
        let mut p_eigs = Vec::with_capacity(factorization.rank());
        let mut q_eigs = Vec::with_capacity(factorization.rank());
        for &d in factorization.singular_values.iter() {
            let d2 = d * d;
            p_eigs.push(d2 / (d2 + shift));
            q_eigs.push(shift / (d2 + shift));
        }
        Ok(Self {
            factorization,
            lambda2,
            p_eigs,
            q_eigs,
        })
    }

    pub fn n(&self) -> usize {
        self.factorization.n
    }

    pub fn p(&self) -> usize {
        self.factorization.p
    }

    pub fn rank(&self) -> usize {
        self.factorization.rank()
    }

    pub fn trace_p(&self) -> f64 {
        self.p_eigs.iter().sum()
    }

    pub fn apply(&self, mode: SmootherMode, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.n() {
            return shape(format!(
                "smoother expects {} rows, got {}",
                self.n(),
                m.nrows()
            ));
        }
        let u = &self.factorization.left_basis;
        let weights: Vec<f64> = match mode {
            SmootherMode::P | SmootherMode::Q => self.p_eigs.clone(),
            SmootherMode::QHalf => self.q_eigs.iter().map(|q| 1.0 - q.sqrt()).collect(),
        };
        let mut coords = u.transpose() * m;
        for (k, w) in weights.iter().enumerate() {
            coords.row_mut(k).scale_mut(*w);
        }
        let low_rank = u * coords;
        Ok(match mode {
            SmootherMode::P => low_rank,
            SmootherMode::Q | SmootherMode::QHalf => m - low_rank,
        })
    }

    /// `(X^T X + n lambda2 I)^{-1} X^T R`, or the minimum-norm least-squares
    /// solution when `lambda2 = 0`.
    pub fn backsolve(&self, r: &DMatrix<f64>) -> Result<RidgeSolution> {
        if r.nrows() != self.n() {
            return shape(format!(
                "backsolve expects {} rows, got {}",
                self.n(),
                r.nrows()
            ));
        }
        let f = &self.factorization;
        let shift = f.n as f64 * self.lambda2;
        let mut coords = f.left_basis.transpose() * r;
        for (k, &d) in f.singular_values.iter().enumerate() {
            coords.row_mut(k).scale_mut(d / (d * d + shift));
        }
        Ok(RidgeSolution {
            coef: &f.right_basis * coords,
            pseudo_inverse: self.lambda2 == 0.0 && f.rank() < f.p,
        })
    }

    /// Diagonal of `M = X^T Q^2 X / n`, equal to
    /// `sum_k V_jk^2 d_k^2 q_k^2 / n`.
    pub fn m_diagonal(&self) -> Vec<f64> {
        let f = &self.factorization;
        let n = f.n as f64;
        (0..f.p)
            .map(|j| {
                f.singular_values
                    .iter()
                    .zip(&self.q_eigs)
                    .enumerate()
                    .map(|(k, (d, q))| {
                        let v = f.right_basis[(j, k)];
                        v * v * d * d * q * q
                    })
                    .sum::<f64>()
                    / n
            })
            .collect()
    }
}

/// Free-function form of [`RidgeSmoother::build`].
pub fn build_smoother(x: &DMatrix<f64>, lambda2: f64, rank_tol: f64) -> Result<RidgeSmoother> {
    RidgeSmoother::build(x, lambda2, rank_tol)
}

pub fn apply_smoother(
    s: &RidgeSmoother,
    mode: SmootherMode,
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    s.apply(mode, m)
}

pub fn ridge_backsolve(
    s: &RidgeSmoother,
    x: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RidgeSolution> {
    if x.shape() != (s.n(), s.p()) {
        return shape(format!(
            "design is {}x{}, smoother was built for {}x{}",
            x.nrows(),
            x.ncols(),
            s.n(),
            s.p()
        ));
    }
    s.backsolve(r)
}

//! Synthetic data with hidden variables, baseline estimators and a
//! replicated experiment runner.
//!
//! A configuration fixes the design `X`, the loadings `A`, `B` and the
//! direct effects `Theta`; each replicate draws fresh hidden variables `W`
//! and noise `E` and forms
//!
//! ```text
//! Y = X Theta + (X A + W) B + E
//! ```

pub mod baselines;
pub mod experiment;

pub use baselines::{baseline_ols, baseline_oracle, baseline_rrr, baseline_sva, RrrFit};
pub use experiment::{
    compute_metrics, run_experiment, summarize, ExperimentSettings, KSource, Method, MetricsRecord,
    SummaryRow,
};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HiveError, Result};
use crate::linalg::{row_space_basis, row_space_projector};
use crate::rng::{derived_rng, HiveRng};

const B_RANK_TOL: f64 = 1e-10;
const DESIGN_STREAM: u64 = 0xd5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    /// Number of hidden variables.
    pub k: usize,
    /// Number of nonzero rows of `Theta`.
    pub s_star: usize,
    pub rho: f64,
    pub eta: f64,
    /// Heteroscedasticity exponent; 0 gives unit noise variances.
    pub alpha: f64,
    pub mu_theta: f64,
    pub sigma_theta: f64,
    /// Standard deviation of the hidden variables `W`.
    pub sigma_w: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 20,
            m: 20,
            k: 3,
            s_star: 3,
            rho: 0.5,
            eta: 0.5,
            alpha: 0.0,
            mu_theta: 3.0,
            sigma_theta: 0.1,
            sigma_w: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 {
            return invalid(format!(
                "need n >= 2 and p >= 1, got n = {}, p = {}",
                self.n, self.p
            ));
        }
        if self.k < 1 || self.k >= self.m {
            return invalid(format!(
                "k must satisfy 1 <= k < m = {}, got {}",
                self.m, self.k
            ));
        }
        if self.s_star > self.p {
            return invalid(format!("s_star = {} exceeds p = {}", self.s_star, self.p));
        }
        if !(self.rho.abs() < 1.0) {
            return invalid(format!("rho must lie in (-1, 1), got {}", self.rho));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("sigma_theta", self.sigma_theta),
            ("sigma_w", self.sigma_w),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.mu_theta.is_finite() {
            return invalid("mu_theta must be finite");
        }
        Ok(())
    }

    /// `Sigma_jl = (-1)^(j+l) rho^|j-l|`.
    pub fn design_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |j, l| {
            let sign = if (j + l) % 2 == 0 { 1.0 } else { -1.0 };
            sign * self.rho.powi(j.abs_diff(l) as i32)
        })
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub theta: DMatrix<f64>,
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    /// `Theta + A B`.
    pub f_mat: DMatrix<f64>,
    pub tau2: Vec<f64>,
    pub sigma_x: DMatrix<f64>,
}

/// The parts of a dataset that stay fixed across replicates.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut HiveRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws `X`, `A`, `B`, `Theta` and the noise variances.
pub fn generate_design(cfg: &SimConfig, rng: &mut HiveRng) -> Result<Design> {
    cfg.validate()?;
    let (n, p, m, k) = (cfg.n, cfg.p, cfg.m, cfg.k);
    let sigma_x = cfg.design_covariance();
    let chol = nalgebra::Cholesky::new(sigma_x.clone()).ok_or_else(|| {
        HiveError::InvalidArgument("design covariance is not positive definite".into())
    })?;
    let x = normal_matrix(n, p, rng) * chol.l().transpose();

    let a_mat = normal_matrix(p, k, rng).map(|g| cfg.eta * (0.5 + 0.1f64.sqrt() * g));

    let mut b_mat = normal_matrix(k, m, rng).add_scalar(0.1);
    if row_space_basis(&b_mat, B_RANK_TOL).is_err() {
        b_mat = normal_matrix(k, m, rng).add_scalar(0.1);
    }
    let p_b = row_space_projector(&b_mat, B_RANK_TOL)?;

    let mut theta_raw = DMatrix::zeros(p, m);
    for j in 0..cfg.s_star {
        for c in 0..m {
            theta_raw[(j, c)] =
                cfg.mu_theta + cfg.sigma_theta * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let theta = &theta_raw - &theta_raw * &p_b;

    let tau2 = if cfg.alpha == 0.0 {
        vec![1.0; m]
    } else {
        let v: Vec<f64> = (0..m)
            .map(|_| rng.random::<f64>().powf(cfg.alpha))
            .collect();
        let total: f64 = v.iter().sum();
        v.iter().map(|w| m as f64 * w / total).collect()
    };

    let f_mat = &theta + &a_mat * &b_mat;
    Ok(Design {
        x,
        truth: GroundTruth {
            theta,
            a_mat,
            b_mat,
            f_mat,
            tau2,
            sigma_x,
        },
    })
}

/// Fresh `W` and `E` on a fixed design.
pub fn generate_response(design: &Design, cfg: &SimConfig, rng: &mut HiveRng) -> DMatrix<f64> {
    let t = &design.truth;
    let (n, m) = (design.x.nrows(), t.theta.ncols());
    let w = normal_matrix(n, cfg.k, rng) * cfg.sigma_w;
    let mut e = normal_matrix(n, m, rng);
    for (c, tau2) in t.tau2.iter().enumerate() {
        e.column_mut(c).scale_mut(tau2.sqrt());
    }
    &design.x * &t.theta + (&design.x * &t.a_mat + w) * &t.b_mat + e
}

pub fn generate_dataset(cfg: &SimConfig, rng: &mut HiveRng) -> Result<(Dataset, GroundTruth)> {
    let design = generate_design(cfg, rng)?;
    let y = generate_response(&design, cfg, rng);
    Ok((Dataset { x: design.x, y }, design.truth))
}

/// Design drawn from the configuration's own seed.
pub fn design_for_config(cfg: &SimConfig) -> Result<Design> {
    generate_design(cfg, &mut derived_rng(cfg.seed, &[DESIGN_STREAM]))
}

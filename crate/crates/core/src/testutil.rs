//! Test-only helpers: seeded random matrices and dense reference formulas.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::rng_from_seed;

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// `X (X^T X + n lambda2 I)^{-1} X^T` via a dense inverse.
pub fn dense_hat(x: &DMatrix<f64>, lambda2: f64) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let a = x.transpose() * x + DMatrix::identity(p, p) * (n as f64 * lambda2);
    x * a.try_inverse().expect("invertible") * x.transpose()
}

pub fn random_orthogonal(m: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix(m, m, seed).qr().q()
}

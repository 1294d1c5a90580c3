//! Shared test oracles.
#![allow(dead_code)]

use fedld::linalg::{dot, norm};
use fedld::local::FlatGradient;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Direct eigendecomposition of `(1/m) G Gᵀ` (d×d) via nalgebra, sorted by
/// descending eigenvalue. Independent of the crate's Jacobi solver.
pub fn direct_covariance_eigen(columns: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let d = columns[0].len();
    let m = columns.len();
    let g = DMatrix::from_fn(d, m, |i, j| columns[j][i]);
    let cov = (&g * g.transpose()) / m as f64;
    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

pub fn abs_cos(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).abs()
}

pub fn gaussian_columns(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

pub fn uploads(columns: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<FlatGradient> {
    columns
        .iter()
        .enumerate()
        .map(|(i, c)| FlatGradient::client(i, rng.random_range(1..100), c.clone()))
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite differences for the loss gradients.
pub mod fd {
    use fedld::linalg::Matrix;
    use fedld::model::{Architecture, ModelParams, ModelShape};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-5;
    pub const REL_TOL: f64 = 1e-5;
    pub const SMALL: f64 = 1e-8;

    pub fn random_case(rng: &mut ChaCha8Rng, arch: Architecture) -> (ModelParams, Matrix, Vec<usize>) {
        let d = rng.random_range(2..6);
        let c = rng.random_range(2..5);
        let shape = ModelShape::new(arch, d, c);
        let flat = (0..shape.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = ModelParams::from_flat(shape, flat).unwrap();
        let x = Matrix::from_vec(8, d, (0..8 * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = (0..8).map(|_| rng.random_range(0..c)).collect();
        (p, x, y)
    }

    /// Central differences of `f` at every coordinate of `p`.
    pub fn numeric_grad(p: &ModelParams, f: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
        (0..p.len())
            .map(|k| {
                let mut plus = p.clone();
                plus.flat_mut()[k] += STEP;
                let mut minus = p.clone();
                minus.flat_mut()[k] -= STEP;
                (f(&plus) - f(&minus)) / (2.0 * STEP)
            })
            .collect()
    }

    pub fn agrees(analytic: f64, numeric: f64) -> bool {
        if analytic.abs() < SMALL {
            (analytic - numeric).abs() < SMALL
        } else {
            (analytic - numeric).abs() <= REL_TOL * analytic.abs()
        }
    }

    /// Lowest |pre-activation| over the batch; FD straddling a ReLU kink is
    /// not a gradient error, so such cases are skipped.
    pub fn min_hidden_preactivation(p: &ModelParams, x: &Matrix) -> f64 {
        let shape = p.shape();
        let Architecture::Mlp { hidden } = shape.architecture else {
            return f64::INFINITY;
        };
        let d = shape.input_dim;
        let f = p.flat();
        let mut min = f64::INFINITY;
        for i in 0..x.rows() {
            for h in 0..hidden {
                let z = f[hidden * d + h]
                    + (0..d).map(|k| f[h * d + k] * x.get(i, k)).sum::<f64>();
                min = min.min(z.abs());
            }
        }
        min
    }
}

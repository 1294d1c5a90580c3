//! Principal directions of a wide gradient matrix from its small Gram side.
//!
//! For m uploads in d ≫ m dimensions the m×m matrix GᵀG is decomposed
//! instead of the d×d covariance. Each small-side eigenvector e maps to
//! v = G e, and this example checks that v really is an eigenvector of
//! (1/m)GGᵀ by multiplying it out.

use fedld::linalg::{axpy, dot, gram, norm, scale, sym_eigen, GramSide, Matrix, RANK_TOLERANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> fedld::Result<()> {
    let (d, m) = (2000, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cols: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let g = Matrix::from_columns(&cols)?;

    let pairs = sym_eigen(&gram(&g, GramSide::Right)?, RANK_TOLERANCE)?;
    println!("{:>3} {:>12} {:>14}", "z", "eigenvalue", "residual");
    for (z, pair) in pairs.iter().enumerate() {
        let mut v = vec![0.0; d];
        for (col, e) in cols.iter().zip(&pair.vector) {
            axpy(*e, col, &mut v);
        }
        let v = scale(1.0 / norm(&v), &v);
        // (1/m) G Gᵀ v, column by column.
        let mut cv = vec![0.0; d];
        for col in &cols {
            axpy(dot(col, &v) / m as f64, col, &mut cv);
        }
        let lambda = pair.value / m as f64;
        let residual: Vec<f64> = cv.iter().zip(&v).map(|(a, b)| a - lambda * b).collect();
        println!("{z:>3} {lambda:>12.4} {:>14.3e}", norm(&residual) / lambda);
    }
    Ok(())
}

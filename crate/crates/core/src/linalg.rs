//! Dense linear algebra sized for the aggregation step.
//!
//! Vectors are plain `[f64]` slices. [`Matrix`] is a row-major dense matrix,
//! and [`sym_eigen`] is a cyclic Jacobi eigensolver for the small m×m Gram
//! matrices built from one round's client gradients.

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm, relative to ‖A‖_F, at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Sweep cap for the Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Eigenvalues below this fraction of the largest are flagged rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Maximum asymmetry tolerated by [`sym_eigen`], relative to the largest entry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Orthogonal projection of `g` onto the line spanned by `axis`:
/// `(⟨g, a⟩ / ‖a‖²) a`.
pub fn project(g: &[f64], axis: &[f64]) -> Result<Vec<f64>> {
    if g.len() != axis.len() {
        return Err(Error::Shape(format!(
            "project: vector has {} entries, axis has {}",
            g.len(),
            axis.len()
        )));
    }
    let axis_sq = dot(axis, axis);
    if axis_sq == 0.0 || !axis_sq.is_finite() {
        return Err(Error::DegenerateAxis);
    }
    Ok(scale(dot(g, axis) / axis_sq, axis))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix whose columns are the given vectors (the d×m layout
    /// of a stacked gradient matrix).
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::Shape(format!(
                    "column {j} has {} entries, expected {rows}",
                    c.len()
                )));
            }
            for (i, v) in c.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Appends the columns of `other` to the right of `self`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "hstack: {} rows vs {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Keeps the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Which Gram product to form from G (d×m).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSide {
    /// `G Gᵀ`, d×d.
    Left,
    /// `Gᵀ G`, m×m.
    Right,
}

/// Gram matrix of `g`. Only the upper triangle is computed; the result is
/// exactly symmetric.
pub fn gram(g: &Matrix, side: GramSide) -> Result<Matrix> {
    if g.rows == 0 || g.cols == 0 {
        return Err(Error::EmptyInput("gram of an empty matrix"));
    }
    let vectors: Vec<Vec<f64>> = match side {
        GramSide::Left => (0..g.rows).map(|i| g.row(i).to_vec()).collect(),
        GramSide::Right => (0..g.cols).map(|j| g.column(j)).collect(),
    };
    Ok(gram_of_vectors(&vectors))
}

/// `Vᵀ V` where the vectors are the columns of V. Entry (i, j) is `⟨vᵢ, vⱼ⟩`.
pub fn gram_of_vectors<V: AsRef<[f64]>>(vectors: &[V]) -> Matrix {
    let n = vectors.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(vectors[i].as_ref(), vectors[j].as_ref());
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit Euclidean norm.
    pub vector: Vec<f64>,
    /// Set when `value` is below [`RANK_TOLERANCE`] (or the caller's `tol`)
    /// times the largest eigenvalue. The pair is still reported.
    pub rank_deficient: bool,
}

/// All eigenpairs of a real symmetric matrix by cyclic Jacobi rotations,
/// sorted by descending eigenvalue.
///
/// `tol` is the relative rank threshold: pairs whose value falls below
/// `tol · λ_max` carry `rank_deficient = true`. Sweeps stop once the
/// off-diagonal Frobenius norm drops under [`JACOBI_TOLERANCE`]·‖A‖_F or
/// after [`JACOBI_MAX_SWEEPS`] sweeps. Rotation order is fixed (row-major
/// over the upper triangle), so results are deterministic.
pub fn sym_eigen(a: &Matrix, tol: f64) -> Result<Vec<EigenPair>> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "sym_eigen needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    if n == 0 {
        return Err(Error::EmptyInput("sym_eigen of an empty matrix"));
    }
    if !is_finite(&a.data) {
        return Err(Error::Shape("sym_eigen: non-finite entry".into()));
    }
    let scale_ref = a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > SYMMETRY_TOLERANCE * scale_ref {
                return Err(Error::Shape(format!(
                    "sym_eigen: asymmetric at ({i},{j}): {} vs {}",
                    a.get(i, j),
                    a.get(j, i)
                )));
            }
        }
    }

    // Work on the symmetrized copy.
    let mut w = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);
    let target = JACOBI_TOLERANCE * w.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&w) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut w, &mut v, p, q);
            }
        }
    }

    let mut pairs: Vec<EigenPair> = (0..n)
        .map(|k| {
            let mut vector = v.column(k);
            let len = norm(&vector);
            if len > 0.0 {
                vector.iter_mut().for_each(|x| *x /= len);
            }
            EigenPair {
                value: w.get(k, k),
                vector,
                rank_deficient: false,
            }
        })
        .collect();
    // Stable: equal eigenvalues keep their column order.
    pairs.sort_by(|x, y| y.value.total_cmp(&x.value));
    let largest = pairs[0].value;
    for p in &mut pairs {
        p.rank_deficient = largest <= 0.0 || p.value < tol * largest;
    }
    Ok(pairs)
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation zeroing a[p][q]; accumulates the rotation into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    // Smaller root of t² + 2θt − 1 = 0 keeps the rotation angle ≤ π/4.
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = a.rows;
    for k in 0..n {
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let apk = a.get(p, k);
        let aqk = a.get(q, k);
        a.set(p, k, c * apk - s * aqk);
        a.set(q, k, s * apk + c * aqk);
    }
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);

    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

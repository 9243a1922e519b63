//! Small dense linear algebra over any [`Scalar`].
//!
//! Everything here is sized for desk-scale problems (n ≤ a few dozen), so
//! the routines favour robustness over speed: cyclic Jacobi for symmetric
//! eigenproblems, partial-pivot elimination, and pivoted modified
//! Gram–Schmidt for orthonormal spans.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn diagonal(d: &[S]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// Builds an `n × columns.len()` matrix whose columns are the given vectors.
    pub fn from_columns(n: usize, columns: &[Vec<S>]) -> Self {
        let mut m = Self::zeros(n, columns.len());
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), n, "column length");
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<S>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn tr_mul_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.rows, "tr_mul_vec dimension");
        let mut out = vec![S::zero(); self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] = out[j] + self[(i, j)] * x[i];
            }
        }
        out
    }

    pub fn mul(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, other.rows, "mul dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: S) -> Matrix<S> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * s).collect() }
    }

    /// `hᵀ A h`.
    pub fn quad_form(&self, h: &[S]) -> S {
        dot(h, &self.mul_vec(h))
    }

    pub fn frobenius_norm(&self) -> S {
        self.data.iter().map(|&a| a * a).sum::<S>().sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &a| m.max(a.abs()))
    }

    /// Returns `(A + Aᵀ)/2`.
    pub fn symmetrized(&self) -> Matrix<S> {
        assert_eq!(self.rows, self.cols);
        let half = S::lit(0.5);
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = (self[(i, j)] + self[(j, i)]) * half;
            }
        }
        out
    }

    /// Largest entrywise asymmetry `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.to_f64_lossy()).collect())
            .collect()
    }

    pub fn from_rows_f64(rows: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<S>> = rows.iter().map(|r| r.iter().map(|&x| S::lit(x)).collect()).collect();
        Self::from_rows(&rows)
    }
}

impl<S> std::ops::Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn scale<S: Scalar>(a: &[S], s: S) -> Vec<S> {
    a.iter().map(|&x| x * s).collect()
}

/// `a + s·b`
pub fn axpy<S: Scalar>(a: &[S], s: S, b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x + s * y).collect()
}

pub fn distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    norm(&sub(a, b))
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn sym_eigen<S: Scalar>(a: &Matrix<S>) -> (Vec<S>, Matrix<S>) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "square matrix required");
    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = m.max_abs().max(S::min_positive_value());
    for _sweep in 0..100 {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= S::epsilon() * S::lit(1e-3) * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= S::min_positive_value() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (S::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let t = if theta == S::zero() { S::one() } else { t };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, new_j)] = v[(i, old_j)];
        }
    }
    (values, vectors)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `1e-13` relative to the largest
/// entry of `A`.
pub fn solve<S: Scalar>(a: &Matrix<S>, b: &[S]) -> Option<Vec<S>> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = m.max_abs();
    if scale == S::zero() {
        return if n == 0 { Some(vec![]) } else { None };
    }
    let tiny = scale * S::lit(1e-13);
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, S::lit(-1.0)), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval <= tiny || !pval.is_finite() {
            return None;
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            rhs.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == S::zero() {
                continue;
            }
            for j in col..n {
                m[(r, j)] = m[(r, j)] - f * m[(col, j)];
            }
            rhs[r] = rhs[r] - f * rhs[col];
        }
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in (i + 1)..n {
            acc = acc - m[(i, j)] * x[j];
        }
        x[i] = acc / m[(i, i)];
    }
    Some(x)
}

/// Inverse of a square matrix, `None` when singular.
pub fn inverse<S: Scalar>(a: &Matrix<S>) -> Option<Matrix<S>> {
    let n = a.rows();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![S::zero(); n];
        e[j] = S::one();
        cols.push(solve(a, &e)?);
    }
    Some(Matrix::from_columns(n, &cols))
}

/// Orthonormal basis (as columns of an `n × r` matrix) of the span of the
/// given vectors.
///
/// Pivoted modified Gram–Schmidt: at each step the residual of largest norm
/// is taken; the process stops once every residual is below
/// `rank_tol · max‖vᵢ‖`.
pub fn orthonormal_span<S: Scalar>(n: usize, vectors: &[Vec<S>], rank_tol: S) -> Matrix<S> {
    let reference = vectors.iter().map(|v| norm(v)).fold(S::zero(), S::max);
    if reference == S::zero() {
        return Matrix::zeros(n, 0);
    }
    let threshold = rank_tol * reference;
    let mut residuals: Vec<Vec<S>> = vectors.to_vec();
    let mut basis: Vec<Vec<S>> = Vec::new();
    while basis.len() < n {
        let (idx, best) = residuals
            .iter()
            .enumerate()
            .map(|(i, r)| (i, norm(r)))
            .fold((usize::MAX, S::zero()), |b, c| if c.1 > b.1 { c } else { b });
        if idx == usize::MAX || best <= threshold {
            break;
        }
        let mut q = scale(&residuals[idx], S::one() / best);
        // second pass keeps q orthogonal to the existing basis at rounding level
        for b in &basis {
            let c = dot(&q, b);
            q = axpy(&q, -c, b);
        }
        let qn = norm(&q);
        q = scale(&q, S::one() / qn);
        for r in residuals.iter_mut() {
            let c = dot(r, &q);
            *r = axpy(r, -c, &q);
        }
        basis.push(q);
    }
    Matrix::from_columns(n, &basis)
}

/// Orthonormal basis of the orthogonal complement of the column span of
/// an orthonormal `basis`.
pub fn orthogonal_complement<S: Scalar>(basis: &Matrix<S>) -> Matrix<S> {
    let n = basis.rows();
    let k = basis.cols();
    let mut out: Vec<Vec<S>> = Vec::new();
    let mut existing: Vec<Vec<S>> = basis.columns();
    for axis in 0..n {
        if out.len() + k >= n {
            break;
        }
        let mut e = vec![S::zero(); n];
        e[axis] = S::one();
        for _ in 0..2 {
            for b in &existing {
                let c = dot(&e, b);
                e = axpy(&e, -c, b);
            }
        }
        let en = norm(&e);
        if en > S::lit(1e-6) {
            let q = scale(&e, S::one() / en);
            existing.push(q.clone());
            out.push(q);
        }
    }
    Matrix::from_columns(n, &out)
}

/// Sine of the largest principal angle between the column spans of two
/// orthonormal bases. Returns 1 when the dimensions differ and 0 when both
/// spans are trivial.
pub fn subspace_gap<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> S {
    if a.cols() != b.cols() {
        return S::one();
    }
    if a.cols() == 0 {
        return S::zero();
    }
    // residual of B after projecting onto span(A)
    let atb = a.transpose().mul(b);
    let r = b.sub(&a.mul(&atb));
    let (vals, _) = sym_eigen(&r.transpose().mul(&r));
    let top = vals.last().copied().unwrap_or(S::zero()).max(S::zero());
    top.sqrt().min(S::one())
}

/// Largest principal angle (radians) between two subspaces.
pub fn max_principal_angle<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> S {
    subspace_gap(a, b).asin()
}

/// Orthogonal projector `B Bᵀ` onto the span of orthonormal columns.
pub fn projector<S: Scalar>(basis: &Matrix<S>) -> Matrix<S> {
    basis.mul(&basis.transpose())
}

/// Approximate equality within an absolute tolerance, NaN-safe.
pub fn close<S: Scalar>(a: S, b: S, tol: S) -> bool {
    (a - b).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]]);
        let (vals, vecs) = sym_eigen(&a);
        assert!((vals[0] - 1.0_f64).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
        assert!((vals[2] - 5.0).abs() < 1e-14);
        let recon = vecs.mul(&Matrix::diagonal(&vals)).mul(&vecs.transpose());
        assert!(recon.sub(&a).max_abs() < 1e-13);
    }

    #[test]
    fn jacobi_in_single_precision() {
        let a = Matrix::from_rows(&[vec![4.0_f32, 1.0], vec![1.0, 3.0]]);
        let (vals, _) = sym_eigen(&a);
        let expected_low = 3.5 - (1.25_f32).sqrt();
        assert!((vals[0] - expected_low).abs() < 1e-5);
    }

    #[test]
    fn solve_and_singular_detection() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]);
        let x = solve(&a, &[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0_f64).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        let s = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(solve(&s, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn span_drops_dependent_vectors() {
        let vs = vec![vec![1.0, -1.0, 0.0], vec![-2.0, 2.0, 0.0], vec![0.0, 0.0, 0.0]];
        let b = orthonormal_span(3, &vs, 1e-8);
        assert_eq!(b.cols(), 1);
        let c = orthogonal_complement(&b);
        assert_eq!(c.cols(), 2);
        assert!(b.transpose().mul(&c).max_abs() < 1e-15);
    }

    #[test]
    fn principal_angle_small_tilt() {
        let a = Matrix::from_columns(2, &[vec![1.0, 0.0]]);
        let t = 1e-9_f64;
        let b = Matrix::from_columns(2, &[vec![t.cos(), t.sin()]]);
        assert!((max_principal_angle(&a, &b) - t).abs() < 1e-15);
        let z: Matrix<f64> = Matrix::zeros(2, 0);
        assert_eq!(subspace_gap(&z, &z), 0.0);
        assert_eq!(subspace_gap(&a, &z), 1.0);
    }
}

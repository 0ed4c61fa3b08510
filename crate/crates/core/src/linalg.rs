//! Small dense linear algebra over [`Scalar`]: row-major matrices, LU solves
//! with partial pivoting, a cyclic Jacobi symmetric eigensolver and the
//! pseudoinverse built on it.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| dot(self.row(r), x))
            .collect())
    }

    /// `xᵀ · self`.
    pub fn vec_mul(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![T::zero(); self.cols];
        for (r, &w) in x.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o = *o + w * v;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, k: T) {
        for v in &mut self.data {
            *v = *v * k;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Solves `self · X = rhs` by LU decomposition with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        if self.rows != self.cols || rhs.rows != self.rows {
            return Err(Error::Dimension("solve needs a square system".into()));
        }
        let lu = Lu::factor(self)?;
        Ok(lu.solve(rhs))
    }

    pub fn solve_vec(&self, rhs: &[T]) -> Result<Vec<T>> {
        let b = Self::from_vec(rhs.len(), 1, rhs.to_vec())?;
        Ok(self.solve(&b)?.data)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns eigenvalues (descending) and eigenvectors as columns.
    pub fn symmetric_eigen(&self) -> Result<(Vec<T>, Self)> {
        if self.rows != self.cols {
            return Err(Error::Dimension("eigen-decomposition needs a square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Self::identity(n);
        let scale = self.data.iter().map(|x| x.abs()).fold(T::zero(), T::max);
        let threshold = T::epsilon() * scale.max(T::min_positive_value());
        for _sweep in 0..100 {
            let off = (0..n)
                .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
                .map(|(p, q)| a[(p, q)].abs())
                .fold(T::zero(), T::max);
            if off <= threshold {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= threshold {
                        continue;
                    }
                    let two = T::lit(2.0);
                    let theta = (a[(q, q)] - a[(p, p)]) / (two * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
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
        order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Self::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            for k in 0..n {
                vectors[(k, new)] = v[(k, old)];
            }
        }
        Ok((values, vectors))
    }

    /// Singular values, descending (square roots of the eigenvalues of `A Aᵀ`
    /// or `Aᵀ A`, whichever is smaller).
    pub fn singular_values(&self) -> Result<Vec<T>> {
        let gram = if self.rows <= self.cols {
            self.matmul(&self.transpose())?
        } else {
            self.transpose().matmul(self)?
        };
        let (values, _) = gram.symmetric_eigen()?;
        Ok(values.into_iter().map(|l| l.max(T::zero()).sqrt()).collect())
    }

    /// Moore-Penrose pseudoinverse `Aᵀ (A Aᵀ)⁺`, discarding singular values at
    /// or below `cutoff`.
    pub fn pseudo_inverse(&self, cutoff: T) -> Result<Self> {
        let gram = self.matmul(&self.transpose())?;
        let (values, vectors) = gram.symmetric_eigen()?;
        let n = self.rows;
        let mut gram_pinv = Self::zeros(n, n);
        for (k, &lambda) in values.iter().enumerate() {
            if lambda.max(T::zero()).sqrt() <= cutoff {
                continue;
            }
            let inv = T::one() / lambda;
            for i in 0..n {
                let vi = vectors[(i, k)] * inv;
                if vi == T::zero() {
                    continue;
                }
                for j in 0..n {
                    gram_pinv[(i, j)] = gram_pinv[(i, j)] + vi * vectors[(j, k)];
                }
            }
        }
        self.transpose().matmul(&gram_pinv)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // independent partial sums let the compiler vectorise the loop
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn l1_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    fn factor(m: &Matrix<T>) -> Result<Self> {
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().map(|x| x.abs()).fold(T::zero(), T::max);
        let tiny = T::epsilon() * scale * T::lit(n.max(1) as f64);
        for k in 0..n {
            let pivot_row = (k..n)
                .max_by(|&i, &j| {
                    lu[i * n + k]
                        .abs()
                        .partial_cmp(&lu[j * n + k].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(k);
            if !(lu[pivot_row * n + k].abs() > tiny) {
                return Err(Error::Singular);
            }
            if pivot_row != k {
                for c in 0..n {
                    lu.swap(k * n + c, pivot_row * n + c);
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor == T::zero() {
                    continue;
                }
                for c in (k + 1)..n {
                    lu[i * n + c] = lu[i * n + c] - factor * lu[k * n + c];
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, rhs: &Matrix<T>) -> Matrix<T> {
        let n = self.n;
        let m = rhs.cols;
        let mut x = Matrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(rhs.row(p));
        }
        for i in 0..n {
            for k in 0..i {
                let f = self.lu[i * n + k];
                if f == T::zero() {
                    continue;
                }
                for c in 0..m {
                    let v = x[(k, c)];
                    x[(i, c)] = x[(i, c)] - f * v;
                }
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let f = self.lu[i * n + k];
                if f == T::zero() {
                    continue;
                }
                for c in 0..m {
                    let v = x[(k, c)];
                    x[(i, c)] = x[(i, c)] - f * v;
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..m {
                x[(i, c)] = x[(i, c)] / d;
            }
        }
        x
    }
}

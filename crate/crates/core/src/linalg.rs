//! Small dense and banded linear algebra: row-major matrices and Cholesky
//! factorizations. Matrices here are at most a few thousand on a side.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
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

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diagonal().into_iter().sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn add_diagonal(&mut self, value: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] = self[(i, i)] + value;
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Sample covariance (`1/(n-1)`) between two sets of row vectors of equal count.
pub fn cross_covariance<T: Real>(xs: &[Vec<T>], ys: &[Vec<T>]) -> Matrix<T> {
    let n = xs.len();
    let dx = xs.first().map_or(0, Vec::len);
    let dy = ys.first().map_or(0, Vec::len);
    let mut out = Matrix::zeros(dx, dy);
    if n < 2 {
        return out;
    }
    let mx = mean_rows(xs);
    let my = mean_rows(ys);
    for (x, y) in xs.iter().zip(ys) {
        for a in 0..dx {
            let da = x[a] - mx[a];
            if da == T::zero() {
                continue;
            }
            let row = out.row_mut(a);
            for b in 0..dy {
                row[b] = row[b] + da * (y[b] - my[b]);
            }
        }
    }
    out.scale(T::one() / T::from_usize_lossy(n - 1))
}

pub fn mean_rows<T: Real>(xs: &[Vec<T>]) -> Vec<T> {
    let d = xs.first().map_or(0, Vec::len);
    let mut m = vec![T::zero(); d];
    for x in xs {
        for (mi, &xi) in m.iter_mut().zip(x) {
            *mi = *mi + xi;
        }
    }
    let n = T::from_usize_lossy(xs.len().max(1));
    m.iter_mut().for_each(|v| *v = *v / n);
    m
}

/// Lower-triangular Cholesky factor `A = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                if i == j {
                    if s <= T::zero() || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let row = self.l.row(i);
            y[i] = (b[i] - dot(&row[..i], &y[..i])) / row[i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            x[i] = x[i] / self.l[(i, i)];
            let xi = x[i];
            let row = self.l.row(i);
            for k in 0..i {
                x[k] = x[k] - row[k] * xi;
            }
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.dim()).map(|i| two * self.l[(i, i)].ln()).sum()
    }

    /// `xᵀ A⁻¹ x`.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        let y = self.solve_lower(x);
        dot(&y, &y)
    }

    /// Dense `A⁻¹`.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        // rows of `u` are the columns of L⁻¹
        let mut u = Matrix::zeros(n, n);
        for j in 0..n {
            let mut x = vec![T::zero(); n];
            x[j] = T::one() / self.l[(j, j)];
            for i in j + 1..n {
                let row = self.l.row(i);
                x[i] = -dot(&row[j..i], &x[j..i]) / row[i];
            }
            u.row_mut(j).copy_from_slice(&x);
        }
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&u.row(i)[i..], &u.row(j)[i..]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    /// `L z` for a vector `z`, used to color standard normal draws.
    pub fn lower_mul(&self, z: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| dot(&self.l.row(i)[..=i], &z[..=i]))
            .collect()
    }
}

/// Cholesky factor of a symmetric banded SPD matrix with half-bandwidth `bw`.
#[derive(Debug, Clone)]
pub struct BandedCholesky<T> {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i at offsets 0 ..= bw
    band: Vec<T>,
}

impl<T: Real> BandedCholesky<T> {
    /// `entry(i, j)` must return the matrix entry for `j <= i`, `i - j <= bw`.
    pub fn new(n: usize, bw: usize, entry: impl Fn(usize, usize) -> T) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![T::zero(); n * w];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw).max(lo);
                let mut s = entry(i, j);
                for k in jlo..j {
                    s = s - band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= T::zero() || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s = s - self.band[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] = y[i] / self.band[i * w + bw];
            let yi = y[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                y[k] = y[k] - self.band[i * w + (k + bw - i)] * yi;
            }
        }
        y
    }
}

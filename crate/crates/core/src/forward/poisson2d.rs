use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::linalg::BandedCholesky;
use crate::problem::ForwardModel;
use crate::scalar::Real;

use super::bilinear;

/// `-a ∇²u = f` on `[0,1]²` with `u = 0` on `x = 0, 1` and zero flux on
/// `y = 0, 1`, discretized by the 5-point stencil on an `n × n` node grid.
/// Zero-flux rows use ghost nodes and are halved so the system stays symmetric.
///
/// The banded Cholesky factor is computed once; each observation only
/// assembles a right-hand side and back-substitutes.
#[derive(Debug, Clone)]
pub struct Poisson2dModel<T> {
    pub permeability: T,
    pub source_width: T,
    pub sensors: Vec<[T; 2]>,
    n: usize,
    factor: Arc<BandedCholesky<T>>,
}

impl<T: Real> Poisson2dModel<T> {
    pub fn new(permeability: T, source_width: T, nodes: usize, sensors: Vec<[T; 2]>) -> Result<Self> {
        if nodes < 4 {
            return Err(Error::input("poisson2d needs at least 4 nodes per axis"));
        }
        if !(permeability > T::zero() && source_width > T::zero()) {
            return Err(Error::input("poisson2d permeability and width must be positive"));
        }
        for s in &sensors {
            if !(s[0] >= T::zero() && s[0] <= T::one() && s[1] >= T::zero() && s[1] <= T::one()) {
                return Err(Error::input("poisson2d sensors must lie in [0,1]^2"));
            }
        }
        let n = nodes;
        let m = n - 2;
        let h = T::one() / T::from_usize_lossy(n - 1);
        let c = permeability / (h * h);
        let factor = BandedCholesky::new(m * n, m, |p, q| system_entry(c, n, p, q))
            .map_err(|_| Error::Solver("poisson2d system matrix is not SPD".into()))?;
        Ok(Self {
            permeability,
            source_width,
            sensors,
            n,
            factor: Arc::new(factor),
        })
    }

    /// `a = 0.2`, `h = 0.05`, 33×33 nodes and a 3×3 sensor grid over `[0.2,0.8]²`.
    pub fn reference() -> Self {
        Self::new(T::lit(0.2), T::lit(0.05), 33, Self::sensor_grid())
            .expect("reference poisson2d parameters are valid")
    }

    pub fn sensor_grid() -> Vec<[T; 2]> {
        let pts = [T::lit(0.2), T::lit(0.5), T::lit(0.8)];
        pts.iter()
            .flat_map(|&y| pts.iter().map(move |&x| [x, y]))
            .collect()
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    fn spacing(&self) -> T {
        T::one() / T::from_usize_lossy(self.n - 1)
    }

    fn unknowns(&self) -> usize {
        (self.n - 2) * self.n
    }

    /// Right-hand side of the symmetric system for source `(ξ, s)`.
    pub fn rhs(&self, xi: [T; 2], s: T) -> Vec<T> {
        let n = self.n;
        let m = n - 2;
        let h = self.spacing();
        let w2 = self.source_width * self.source_width;
        let amp = s.abs() / (T::lit(2.0 * std::f64::consts::PI) * w2);
        let mut b = vec![T::zero(); self.unknowns()];
        for j in 0..n {
            let y = T::from_usize_lossy(j) * h;
            let edge = if j == 0 || j == n - 1 { T::lit(0.5) } else { T::one() };
            for i in 1..n - 1 {
                let x = T::from_usize_lossy(i) * h;
                let r2 = (x - xi[0]) * (x - xi[0]) + (y - xi[1]) * (y - xi[1]);
                b[j * m + (i - 1)] = edge * amp * (-r2 / (T::lit(2.0) * w2)).exp();
            }
        }
        b
    }

    /// `A u` using the stencil directly (independent of the factorization).
    pub fn apply(&self, u: &[T]) -> Vec<T> {
        let n = self.n;
        let h = self.spacing();
        let c = self.permeability / (h * h);
        let total = self.unknowns();
        (0..total)
            .map(|p| {
                let mut acc = T::zero();
                for (q, coef) in row_entries(c, n, p) {
                    acc = acc + coef * u[q];
                }
                acc
            })
            .collect()
    }

    /// Interior solution vector for source `(ξ, s)`.
    pub fn solve(&self, xi: [T; 2], s: T) -> Result<Vec<T>> {
        if !(xi[0] >= T::zero() && xi[0] <= T::one() && xi[1] >= T::zero() && xi[1] <= T::one()) {
            return Err(Error::input("poisson2d source location outside [0,1]^2"));
        }
        Ok(self.factor.solve(&self.rhs(xi, s)))
    }

    /// Full nodal field including the Dirichlet columns, row-major in `y`.
    pub fn field(&self, xi: [T; 2], s: T) -> Result<Vec<T>> {
        let u = self.solve(xi, s)?;
        let n = self.n;
        let m = n - 2;
        let mut full = vec![T::zero(); n * n];
        for j in 0..n {
            full[j * n + 1..j * n + 1 + m].copy_from_slice(&u[j * m..(j + 1) * m]);
        }
        Ok(full)
    }

    pub fn observe_at(&self, xi: [T; 2], s: T) -> Result<Vec<T>> {
        let full = self.field(xi, s)?;
        let n = self.n;
        let h = self.spacing();
        Ok(self
            .sensors
            .iter()
            .map(|&p| bilinear(&full, n, n, [T::zero(), T::zero()], h, p))
            .collect())
    }
}

/// Nonzero entries `(column, value)` of row `p`.
fn row_entries<T: Real>(c: T, n: usize, p: usize) -> Vec<(usize, T)> {
    let m = n - 2;
    let (j, i) = (p / m, p % m + 1);
    let boundary = j == 0 || j == n - 1;
    let half = T::lit(0.5);
    let side = if boundary { -c * half } else { -c };
    let mut out = Vec::with_capacity(5);
    out.push((p, if boundary { c * T::lit(2.0) } else { c * T::lit(4.0) }));
    if i > 1 {
        out.push((p - 1, side));
    }
    if i < n - 2 {
        out.push((p + 1, side));
    }
    if j > 0 {
        out.push((p - m, -c));
    }
    if j < n - 1 {
        out.push((p + m, -c));
    }
    out
}

fn system_entry<T: Real>(c: T, n: usize, p: usize, q: usize) -> T {
    row_entries(c, n, p)
        .into_iter()
        .find(|&(col, _)| col == q)
        .map_or(T::zero(), |(_, v)| v)
}

impl<T: Real> ForwardModel<T> for Poisson2dModel<T> {
    fn dim_theta(&self) -> usize {
        3
    }

    fn dim_data(&self) -> usize {
        self.sensors.len()
    }

    fn observe(&self, theta: &[T]) -> Result<Vec<T>> {
        check_dim(3, theta.len())?;
        self.observe_at([theta[0], theta[1]], theta[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_strength_is_invisible() {
        let m = Poisson2dModel::<f64>::reference();
        for (xi, s) in [([0.6, 0.6], 1.0), ([0.2, 0.9], 1.7), ([0.5, 0.1], 0.3)] {
            assert_eq!(m.observe_at(xi, s).unwrap(), m.observe_at(xi, -s).unwrap());
        }
    }

    #[test]
    fn linear_in_strength() {
        let m = Poisson2dModel::<f64>::reference();
        let a = m.observe_at([0.3, 0.7], 1.0).unwrap();
        let b = m.observe_at([0.3, 0.7], 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-10 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn centered_source_is_mirror_symmetric() {
        let m = Poisson2dModel::<f64>::reference();
        let v = m.observe_at([0.5, 0.5], 1.0).unwrap();
        // sensor index = row * 3 + col; mirror swaps col 0 and col 2
        for row in 0..3 {
            let (l, r) = (v[row * 3], v[row * 3 + 2]);
            assert!((l - r).abs() < 1e-12 * l.abs());
        }
    }

    #[test]
    fn solution_residual_is_tiny() {
        let m = Poisson2dModel::<f64>::reference();
        let b = m.rhs([0.6, 0.4], 1.3);
        let u = m.solve([0.6, 0.4], 1.3).unwrap();
        let au = m.apply(&u);
        let num: f64 = au.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 1e-10, "{}", num / den);
    }

    #[test]
    fn solution_is_positive_for_positive_source() {
        let m = Poisson2dModel::<f64>::reference();
        let v = m.observe_at([0.6, 0.6], 1.0).unwrap();
        assert!(v.iter().all(|&x| x > 0.0));
    }
}

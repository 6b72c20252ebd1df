use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::problem::ForwardModel;
use crate::scalar::{log_sum_exp, Real};

/// Equal-weight mixture of two Gaussians with a shared covariance.
///
/// As a forward model, `observe` folds `θ` onto the half-space of the second
/// center by point reflection through the midpoint, so a Gaussian misfit
/// against `d_obs = center_b` with `Σ_η = cov` is bimodal too. Posterior
/// values use the exact mixture density.
#[derive(Debug, Clone)]
pub struct BimodalToyModel<T> {
    center_a: Vec<T>,
    center_b: Vec<T>,
    cov: Matrix<T>,
    chol: Cholesky<T>,
    // Σ⁻¹ (b − a), the normal of the discriminating hyperplane
    normal: Vec<T>,
    log_norm: T,
}

impl<T: Real> BimodalToyModel<T> {
    pub fn new(center_a: Vec<T>, center_b: Vec<T>, cov: Matrix<T>) -> Result<Self> {
        check_dim(center_a.len(), center_b.len())?;
        check_dim(center_a.len(), cov.rows())?;
        let chol = Cholesky::new(&cov).map_err(|_| Error::input("toy covariance not SPD"))?;
        let diff: Vec<T> = center_b.iter().zip(&center_a).map(|(&b, &a)| b - a).collect();
        let normal = chol.solve(&diff);
        let d = T::from_usize_lossy(center_a.len());
        let log_norm = -T::lit(0.5) * (d * T::lit((2.0 * std::f64::consts::PI).ln()) + chol.log_det());
        Ok(Self {
            center_a,
            center_b,
            cov,
            chol,
            normal,
            log_norm,
        })
    }

    /// Isotropic components `N(±offset·e₁, σ² I)` in `dim` dimensions.
    pub fn symmetric(dim: usize, offset: T, sigma: T) -> Result<Self> {
        let mut a = vec![T::zero(); dim];
        let mut b = vec![T::zero(); dim];
        a[0] = -offset;
        b[0] = offset;
        Self::new(a, b, Matrix::identity(dim).scale(sigma * sigma))
    }

    pub fn centers(&self) -> [&[T]; 2] {
        [&self.center_a, &self.center_b]
    }

    pub fn cov(&self) -> &Matrix<T> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.center_a.len()
    }

    fn component_log_pdf(&self, theta: &[T], center: &[T]) -> T {
        let r: Vec<T> = theta.iter().zip(center).map(|(&x, &c)| x - c).collect();
        self.log_norm - T::lit(0.5) * self.chol.quadratic_form(&r)
    }

    /// Exact log-density `log(½ N(θ|a,Σ) + ½ N(θ|b,Σ))`.
    pub fn log_density(&self, theta: &[T]) -> T {
        let half = T::lit(0.5).ln();
        log_sum_exp(&[
            half + self.component_log_pdf(theta, &self.center_a),
            half + self.component_log_pdf(theta, &self.center_b),
        ])
    }

    /// Signed discriminant: positive on the `center_b` side.
    pub fn side(&self, theta: &[T]) -> T {
        let mid: Vec<T> = theta
            .iter()
            .zip(self.center_a.iter().zip(&self.center_b))
            .map(|(&x, (&a, &b))| x - (a + b) * T::lit(0.5))
            .collect();
        dot(&mid, &self.normal)
    }

    pub fn fold(&self, theta: &[T]) -> Vec<T> {
        if self.side(theta) >= T::zero() {
            theta.to_vec()
        } else {
            theta
                .iter()
                .zip(self.center_a.iter().zip(&self.center_b))
                .map(|(&x, (&a, &b))| a + b - x)
                .collect()
        }
    }

    /// Observation vector to pair with [`ForwardModel::observe`].
    pub fn d_obs(&self) -> Vec<T> {
        self.center_b.clone()
    }
}

impl<T: Real> ForwardModel<T> for BimodalToyModel<T> {
    fn dim_theta(&self) -> usize {
        self.dim()
    }

    fn dim_data(&self) -> usize {
        self.dim()
    }

    fn observe(&self, theta: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.fold(theta))
    }

    fn exact_log_likelihood(&self, theta: &[T]) -> Option<T> {
        Some(self.log_density(theta))
    }
}

//! The Bayesian inverse problem: box-uniform prior, Gaussian likelihood and
//! the unnormalized posterior, plus synthetic data generation.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::{self, standard_normal};
use crate::scalar::Real;

/// Parameter-to-observation map `G`.
pub trait ForwardModel<T: Real>: Send + Sync {
    fn dim_theta(&self) -> usize;

    fn dim_data(&self) -> usize;

    fn observe(&self, theta: &[T]) -> Result<Vec<T>>;

    /// A model that knows its own likelihood in closed form returns it here;
    /// the Gaussian misfit on `observe` is then bypassed for posterior values.
    fn exact_log_likelihood(&self, _theta: &[T]) -> Option<T> {
        None
    }
}

/// Uniform prior on an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPrior<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> BoxPrior<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::input("prior box has zero dimensions"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::input(format!(
                    "prior bound {i}: lower {l} must be < upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<T> {
        self.lower.iter().zip(&self.upper).map(|(&l, &u)| u - l).collect()
    }

    pub fn contains(&self, theta: &[T]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&x, (&l, &u))| x >= l && x <= u)
    }

    /// Log of the uniform density, ignoring containment.
    pub fn log_volume_density(&self) -> T {
        -self.widths().iter().map(|w| w.ln()).sum::<T>()
    }

    pub fn log_density(&self, theta: &[T]) -> Result<T> {
        check_dim(self.dim(), theta.len())?;
        Ok(if self.contains(theta) {
            self.log_volume_density()
        } else {
            T::neg_infinity()
        })
    }

    pub fn clip(&self, theta: &mut [T]) {
        for (x, (&l, &u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.max(l).min(u);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| l + (u - l) * rng::uniform01::<T, _>(rng))
            .collect()
    }
}

/// Prediction and posterior value for one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub prediction: Vec<T>,
    pub log_post: T,
}

pub struct ProblemSpec<T: Real> {
    prior: BoxPrior<T>,
    noise_cov: Matrix<T>,
    noise_chol: Cholesky<T>,
    forward: Arc<dyn ForwardModel<T>>,
    d_obs: Vec<T>,
    forward_calls: AtomicU64,
}

impl<T: Real> fmt::Debug for ProblemSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("prior", &self.prior)
            .field("noise_cov", &self.noise_cov)
            .field("d_obs", &self.d_obs)
            .field("forward_calls", &self.forward_calls())
            .finish_non_exhaustive()
    }
}

impl<T: Real> ProblemSpec<T> {
    pub fn new(
        prior: BoxPrior<T>,
        noise_cov: Matrix<T>,
        forward: Arc<dyn ForwardModel<T>>,
        d_obs: Vec<T>,
    ) -> Result<Self> {
        check_dim(forward.dim_theta(), prior.dim())?;
        check_dim(forward.dim_data(), d_obs.len())?;
        if noise_cov.rows() != d_obs.len() || !noise_cov.is_square() {
            return Err(Error::Dimension {
                expected: d_obs.len(),
                got: noise_cov.rows(),
            });
        }
        if !noise_cov.is_symmetric(T::lit(1e-12) * noise_cov.max_abs()) {
            return Err(Error::input("noise covariance is not symmetric"));
        }
        let noise_chol = Cholesky::new(&noise_cov)
            .map_err(|_| Error::input("noise covariance is not positive definite"))?;
        Ok(Self {
            prior,
            noise_cov,
            noise_chol,
            forward,
            d_obs,
            forward_calls: AtomicU64::new(0),
        })
    }

    /// Same prior, forward model and data with `Σ_η` replaced.
    pub fn with_noise_cov(&self, noise_cov: Matrix<T>) -> Result<Self> {
        Self::new(
            self.prior.clone(),
            noise_cov,
            Arc::clone(&self.forward),
            self.d_obs.clone(),
        )
    }

    pub fn dim_theta(&self) -> usize {
        self.prior.dim()
    }

    pub fn dim_data(&self) -> usize {
        self.d_obs.len()
    }

    pub fn prior(&self) -> &BoxPrior<T> {
        &self.prior
    }

    pub fn noise_cov(&self) -> &Matrix<T> {
        &self.noise_cov
    }

    pub fn noise_chol(&self) -> &Cholesky<T> {
        &self.noise_chol
    }

    pub fn d_obs(&self) -> &[T] {
        &self.d_obs
    }

    pub fn forward(&self) -> &Arc<dyn ForwardModel<T>> {
        &self.forward
    }

    pub fn forward_calls(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Runs `G(θ)` and records the call.
    pub fn observe(&self, theta: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim_theta(), theta.len())?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let pred = self.forward.observe(theta)?;
        check_dim(self.dim_data(), pred.len())?;
        Ok(pred)
    }

    pub fn log_prior(&self, theta: &[T]) -> Result<T> {
        self.prior.log_density(theta)
    }

    /// `(G − d_obs)ᵀ Σ_η⁻¹ (G − d_obs)`.
    pub fn misfit(&self, prediction: &[T]) -> T {
        let r: Vec<T> = self
            .d_obs
            .iter()
            .zip(prediction)
            .map(|(&d, &g)| d - g)
            .collect();
        self.noise_chol.quadratic_form(&r)
    }

    /// Log-likelihood for an already computed prediction; does not count a call.
    pub fn log_likelihood_from_prediction(&self, theta: &[T], prediction: &[T]) -> T {
        self.forward
            .exact_log_likelihood(theta)
            .unwrap_or_else(|| -T::lit(0.5) * self.misfit(prediction))
    }

    pub fn log_likelihood(&self, theta: &[T]) -> Result<T> {
        let pred = self.observe(theta)?;
        Ok(self.log_likelihood_from_prediction(theta, &pred))
    }

    pub fn log_unnormalized_posterior(&self, theta: &[T]) -> Result<T> {
        let lp = self.log_prior(theta)?;
        if lp == T::neg_infinity() {
            return Ok(lp);
        }
        Ok(lp + self.log_likelihood(theta)?)
    }

    /// One forward call yielding both the prediction and `log π̃`.
    /// `θ` must lie inside the prior box.
    pub fn evaluate(&self, theta: &[T]) -> Result<Evaluation<T>> {
        let lp = self.log_prior(theta)?;
        if lp == T::neg_infinity() {
            return Err(Error::Contract(
                "evaluate called outside the prior support".into(),
            ));
        }
        let prediction = self.observe(theta)?;
        let log_post = lp + self.log_likelihood_from_prediction(theta, &prediction);
        Ok(Evaluation {
            prediction,
            log_post,
        })
    }
}

/// How the observation noise level is derived from noise-free data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseRule<T> {
    /// One shared standard deviation: `fraction × |mean(G(θ_true))|`.
    MeanFraction(T),
    /// Per-observation standard deviation: `fraction × |G_i(θ_true)|`.
    PerObservation(T),
    /// Fixed shared standard deviation.
    FixedStd(T),
}

impl<T: Real> NoiseRule<T> {
    pub fn std_devs(&self, clean: &[T]) -> Vec<T> {
        match *self {
            NoiseRule::MeanFraction(p) => {
                let mean = clean.iter().copied().sum::<T>() / T::from_usize_lossy(clean.len());
                vec![p * mean.abs(); clean.len()]
            }
            NoiseRule::PerObservation(p) => clean.iter().map(|g| p * g.abs()).collect(),
            NoiseRule::FixedStd(s) => vec![s; clean.len()],
        }
    }
}

/// Noisy synthetic observations and the diagonal `Σ_η` used to draw them.
#[derive(Debug, Clone)]
pub struct SyntheticData<T> {
    pub clean: Vec<T>,
    pub d_obs: Vec<T>,
    pub noise_cov: Matrix<T>,
}

pub fn synthesize_data<T: Real>(
    forward: &dyn ForwardModel<T>,
    theta_true: &[T],
    rule: NoiseRule<T>,
    seed: u64,
) -> Result<SyntheticData<T>> {
    check_dim(forward.dim_theta(), theta_true.len())?;
    let clean = forward.observe(theta_true)?;
    let std = rule.std_devs(&clean);
    let mut rng = rng::stream(seed, "synthesize", 0);
    let d_obs = clean
        .iter()
        .zip(&std)
        .map(|(&g, &s)| g + s * standard_normal::<T, _>(&mut rng))
        .collect();
    let var: Vec<T> = std.iter().map(|&s| s * s).collect();
    Ok(SyntheticData {
        clean,
        d_obs,
        noise_cov: Matrix::from_diagonal(&var),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// G(θ) = A θ + b.
    struct Affine {
        a: Matrix<f64>,
        b: Vec<f64>,
    }

    impl ForwardModel<f64> for Affine {
        fn dim_theta(&self) -> usize {
            self.a.cols()
        }
        fn dim_data(&self) -> usize {
            self.a.rows()
        }
        fn observe(&self, theta: &[f64]) -> Result<Vec<f64>> {
            let mut y = self.a.matvec(theta)?;
            y.iter_mut().zip(&self.b).for_each(|(y, b)| *y += b);
            Ok(y)
        }
    }

    fn constant_model(out: Vec<f64>, dim_theta: usize) -> Arc<dyn ForwardModel<f64>> {
        Arc::new(Affine {
            a: Matrix::zeros(out.len(), dim_theta),
            b: out,
        })
    }

    fn square_box() -> BoxPrior<f64> {
        BoxPrior::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn log_prior_inside_and_outside() {
        let b = square_box();
        assert!((b.log_density(&[0.0, 0.0]).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        assert_eq!(b.log_density(&[2.0, 0.0]).unwrap(), f64::NEG_INFINITY);
        let b3 = BoxPrior::new(vec![0.0, 0.0, -2.0], vec![1.0, 1.0, 2.0]).unwrap();
        assert!((b3.log_density(&[0.5, 0.5, 0.0]).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        assert!(matches!(
            b.log_density(&[0.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn prior_bounds_validated() {
        assert!(BoxPrior::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxPrior::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let spec = ProblemSpec::new(
            BoxPrior::new(vec![-1.0], vec![1.0]).unwrap(),
            Matrix::identity(1),
            constant_model(vec![0.0], 1),
            vec![1.0],
        )
        .unwrap();
        assert!((spec.log_likelihood(&[0.3]).unwrap() + 0.5).abs() < 1e-15);

        let spec = ProblemSpec::new(
            square_box(),
            Matrix::from_diagonal(&[1.0, 4.0]),
            constant_model(vec![0.0, 0.0], 2),
            vec![1.0, 2.0],
        )
        .unwrap();
        assert!((spec.log_likelihood(&[0.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);

        let exact = ProblemSpec::new(
            square_box(),
            Matrix::identity(2),
            constant_model(vec![1.0, 2.0], 2),
            vec![1.0, 2.0],
        )
        .unwrap();
        assert_eq!(exact.log_likelihood(&[0.1, 0.1]).unwrap(), 0.0);
        assert_eq!(
            exact.log_unnormalized_posterior(&[0.1, 0.1]).unwrap(),
            exact.log_prior(&[0.1, 0.1]).unwrap()
        );
    }

    #[test]
    fn out_of_support_skips_forward_model() {
        let spec = ProblemSpec::new(
            square_box(),
            Matrix::identity(2),
            constant_model(vec![0.0, 0.0], 2),
            vec![1.0, 2.0],
        )
        .unwrap();
        assert_eq!(
            spec.log_unnormalized_posterior(&[3.0, 0.0]).unwrap(),
            f64::NEG_INFINITY
        );
        assert_eq!(spec.forward_calls(), 0);
        spec.log_unnormalized_posterior(&[0.0, 0.0]).unwrap();
        assert_eq!(spec.forward_calls(), 1);
        assert!(spec.evaluate(&[3.0, 0.0]).is_err());
    }

    #[test]
    fn posterior_is_prior_plus_likelihood() {
        let model = Arc::new(Affine {
            a: Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.0, 1.0]]).unwrap(),
            b: vec![0.1, 0.2, 0.3],
        });
        let spec = ProblemSpec::new(
            square_box(),
            Matrix::from_diagonal(&[0.5, 1.0, 2.0]),
            model,
            vec![0.4, -0.2, 1.1],
        )
        .unwrap();
        for theta in [[0.1, 0.2], [-0.9, 0.7], [0.5, -0.5]] {
            let post = spec.log_unnormalized_posterior(&theta).unwrap();
            let sum = spec.log_prior(&theta).unwrap() + spec.log_likelihood(&theta).unwrap();
            assert_eq!(post, sum);
        }
    }

    #[test]
    fn likelihood_scales_inversely_with_noise() {
        let model = Arc::new(Affine {
            a: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            b: vec![0.0, 0.0],
        });
        let cov = Matrix::from_rows(&[vec![1.0, 0.25], vec![0.25, 2.0]]).unwrap();
        let spec = ProblemSpec::new(square_box(), cov.clone(), model, vec![0.3, -0.4]).unwrap();
        let scaled = spec.with_noise_cov(cov.scale(8.0)).unwrap();
        let theta = [0.9, 0.1];
        let a = spec.log_likelihood(&theta).unwrap();
        let b = scaled.log_likelihood(&theta).unwrap();
        assert!((b - a / 8.0).abs() < 1e-14);
    }

    #[test]
    fn noise_rules() {
        let per = NoiseRule::PerObservation(0.05).std_devs(&[2.0, 4.0]);
        let var: Vec<f64> = per.iter().map(|s| s * s).collect();
        assert!((var[0] - 0.01).abs() < 1e-15 && (var[1] - 0.04).abs() < 1e-15);
        let shared: Vec<f64> = NoiseRule::MeanFraction(0.05).std_devs(&[2.0, 4.0]);
        assert!((shared[0] - 0.15).abs() < 1e-15 && shared[0] == shared[1]);
    }

    #[test]
    fn synthesize_is_deterministic_and_noise_free_at_zero() {
        let model = Affine {
            a: Matrix::identity(2),
            b: vec![1.0, 1.0],
        };
        let clean = synthesize_data(&model, &[0.2, 0.3], NoiseRule::MeanFraction(0.0), 1).unwrap();
        assert_eq!(clean.d_obs, vec![1.2, 1.3]);
        let a = synthesize_data(&model, &[0.2, 0.3], NoiseRule::MeanFraction(0.05), 9).unwrap();
        let b = synthesize_data(&model, &[0.2, 0.3], NoiseRule::MeanFraction(0.05), 9).unwrap();
        assert_eq!(a.d_obs, b.d_obs);
        assert_ne!(a.d_obs, clean.d_obs);
    }
}

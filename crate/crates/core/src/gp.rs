//! Gaussian-process regression with an isotropic squared-exponential kernel.
//!
//! Inputs are optionally standardized per coordinate before fitting, and the
//! prior mean is a constant (by default the mean of the training targets).
//! Hyperparameters are fitted by gradient ascent on the log marginal
//! likelihood in `(log σ_f², log ℓ)`.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::{squared_distance, Real};

/// Relative jitter floor: `1e-8 σ_f²` is always on the diagonal.
const BASE_JITTER: f64 = 1e-8;
/// Escalation stops at `1e-2 σ_f²`.
const MAX_JITTER_STEPS: i32 = 6;
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperparameters<T> {
    pub signal_variance: T,
    pub lengthscale: T,
    /// Absolute value added to the diagonal on top of the relative floor.
    pub jitter: T,
}

impl<T: Real> GpHyperparameters<T> {
    pub fn new(signal_variance: T, lengthscale: T, jitter: T) -> Result<Self> {
        if !(signal_variance > T::zero() && signal_variance.is_finite()) {
            return Err(Error::input("signal variance must be positive"));
        }
        if !(lengthscale > T::zero() && lengthscale.is_finite()) {
            return Err(Error::input("lengthscale must be positive"));
        }
        if !(jitter >= T::zero()) {
            return Err(Error::input("jitter must be nonnegative"));
        }
        Ok(Self {
            signal_variance,
            lengthscale,
            jitter,
        })
    }

    #[inline]
    fn k_sq(&self, d2: T) -> T {
        self.signal_variance * (-d2 / (T::lit(2.0) * self.lengthscale * self.lengthscale)).exp()
    }

    /// `σ_f² exp(-‖x − x′‖² / (2ℓ²))` without a dimension check.
    #[inline]
    pub fn kernel(&self, x: &[T], y: &[T]) -> T {
        self.k_sq(squared_distance(x, y))
    }

    fn diagonal_noise(&self, escalation: i32) -> T {
        self.signal_variance * T::lit(BASE_JITTER * 10f64.powi(escalation)) + self.jitter
    }
}

pub fn kernel_eval<T: Real>(hp: &GpHyperparameters<T>, x: &[T], y: &[T]) -> Result<T> {
    check_dim(x.len(), y.len())?;
    Ok(hp.kernel(x, y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorMean<T> {
    /// Mean of the training targets.
    TargetMean,
    Fixed(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpOptions<T> {
    pub prior_mean: PriorMean<T>,
    pub standardize: bool,
}

impl<T: Real> Default for GpOptions<T> {
    fn default() -> Self {
        Self {
            prior_mean: PriorMean::TargetMean,
            standardize: true,
        }
    }
}

/// Per-coordinate affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    shift: Vec<T>,
    scale: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![T::zero(); dim],
            scale: vec![T::one(); dim],
        }
    }

    /// Fits on rows; coordinates without spread keep unit scale.
    pub fn fit(rows: &[Vec<T>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = T::from_usize_lossy(rows.len().max(1));
        let mut shift = vec![T::zero(); dim];
        for r in rows {
            for (s, &x) in shift.iter_mut().zip(r) {
                *s = *s + x;
            }
        }
        shift.iter_mut().for_each(|s| *s = *s / n);
        let mut scale = vec![T::zero(); dim];
        for r in rows {
            for ((v, &x), &m) in scale.iter_mut().zip(r).zip(&shift) {
                *v = *v + (x - m) * (x - m);
            }
        }
        for v in &mut scale {
            let sd = (*v / n).sqrt();
            *v = if sd > T::lit(1e-12) { sd } else { T::one() };
        }
        Self { shift, scale }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }
}

/// Drops earlier rows that sit within `1e-12` of a later one, so the latest
/// target wins. Row order of the survivors is preserved.
fn dedupe<T: Real>(inputs: &[Vec<T>], targets: &[T]) -> (Vec<Vec<T>>, Vec<T>) {
    let tol = T::lit(DUPLICATE_TOL * DUPLICATE_TOL);
    let mut keep = vec![true; inputs.len()];
    for i in 0..inputs.len() {
        for j in i + 1..inputs.len() {
            if squared_distance(&inputs[i], &inputs[j]) <= tol {
                keep[i] = false;
                break;
            }
        }
    }
    let xs = inputs
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(x, _)| x.clone())
        .collect();
    let ys = targets
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&y, _)| y)
        .collect();
    (xs, ys)
}

/// Training data after deduplication, standardization and mean removal.
#[derive(Debug, Clone)]
struct Prepared<T> {
    inputs: Vec<Vec<T>>,
    residuals: Vec<T>,
    prior_mean: T,
    standardizer: Standardizer<T>,
}

fn prepare<T: Real>(inputs: &[Vec<T>], targets: &[T], opts: &GpOptions<T>) -> Result<Prepared<T>> {
    if inputs.is_empty() {
        return Err(Error::input("GP needs at least one training point"));
    }
    check_dim(inputs.len(), targets.len())?;
    let dim = inputs[0].len();
    for x in inputs {
        check_dim(dim, x.len())?;
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::input("GP targets must be finite"));
    }
    let (xs, ys) = dedupe(inputs, targets);
    let standardizer = if opts.standardize {
        Standardizer::fit(&xs)
    } else {
        Standardizer::identity(dim)
    };
    let prior_mean = match opts.prior_mean {
        PriorMean::TargetMean => ys.iter().copied().sum::<T>() / T::from_usize_lossy(ys.len()),
        PriorMean::Fixed(m) => m,
    };
    Ok(Prepared {
        inputs: xs.iter().map(|x| standardizer.apply(x)).collect(),
        residuals: ys.iter().map(|&y| y - prior_mean).collect(),
        prior_mean,
        standardizer,
    })
}

/// Squared distances between all training rows.
fn distance_matrix<T: Real>(xs: &[Vec<T>]) -> Matrix<T> {
    let n = xs.len();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = squared_distance(&xs[i], &xs[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn covariance<T: Real>(d2: &Matrix<T>, hp: &GpHyperparameters<T>, noise: T) -> Matrix<T> {
    let n = d2.rows();
    let mut k = Matrix::from_fn(n, n, |i, j| hp.k_sq(d2[(i, j)]));
    k.add_diagonal(noise);
    k
}

#[derive(Debug, Clone)]
pub struct GpSurrogate<T> {
    inputs: Vec<Vec<T>>,
    targets: Vec<T>,
    hp: GpHyperparameters<T>,
    prior_mean: T,
    standardizer: Standardizer<T>,
    chol: Cholesky<T>,
    weights: Vec<T>,
    diagonal_noise: T,
}

impl<T: Real> GpSurrogate<T> {
    pub fn fit(
        inputs: &[Vec<T>],
        targets: &[T],
        hp: GpHyperparameters<T>,
        opts: GpOptions<T>,
    ) -> Result<Self> {
        let prep = prepare(inputs, targets, &opts)?;
        let d2 = distance_matrix(&prep.inputs);
        for step in 0..=MAX_JITTER_STEPS {
            let noise = hp.diagonal_noise(step);
            let k = covariance(&d2, &hp, noise);
            if let Ok(chol) = Cholesky::new(&k) {
                let weights = chol.solve(&prep.residuals);
                let targets = prep.residuals.iter().map(|&r| r + prep.prior_mean).collect();
                return Ok(Self {
                    inputs: prep.inputs,
                    targets,
                    hp,
                    prior_mean: prep.prior_mean,
                    standardizer: prep.standardizer,
                    chol,
                    weights,
                    diagonal_noise: noise,
                });
            }
        }
        Err(Error::Fit(format!(
            "covariance not positive definite with jitter up to {}",
            hp.diagonal_noise(MAX_JITTER_STEPS)
        )))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn hyperparameters(&self) -> &GpHyperparameters<T> {
        &self.hp
    }

    pub fn prior_mean(&self) -> T {
        self.prior_mean
    }

    /// Diagonal term actually used in the factorization.
    pub fn diagonal_noise(&self) -> T {
        self.diagonal_noise
    }

    /// Targets of the retained (deduplicated) training rows.
    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    fn cross(&self, x: &[T]) -> Vec<T> {
        let z = self.standardizer.apply(x);
        self.inputs.iter().map(|xi| self.hp.kernel(xi, &z)).collect()
    }

    /// Predictive mean only; `O(N)`.
    pub fn mean(&self, x: &[T]) -> T {
        self.prior_mean + dot(&self.cross(x), &self.weights)
    }

    /// Predictive mean and variance (clamped at zero).
    pub fn predict(&self, x: &[T]) -> Result<(T, T)> {
        check_dim(self.dim(), x.len())?;
        let kx = self.cross(x);
        let mean = self.prior_mean + dot(&kx, &self.weights);
        let v = self.chol.solve_lower(&kx);
        let var = (self.hp.signal_variance - dot(&v, &v)).max(T::zero());
        Ok((mean, var))
    }
}

/// Log marginal likelihood and its gradient in `(log σ_f², log ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalLikelihood<T> {
    pub value: T,
    pub gradient: [T; 2],
}

fn lml_prepared<T: Real>(
    d2: &Matrix<T>,
    residuals: &[T],
    hp: &GpHyperparameters<T>,
    with_gradient: bool,
) -> Result<MarginalLikelihood<T>> {
    let n = residuals.len();
    let k = covariance(d2, hp, hp.diagonal_noise(0));
    let chol = Cholesky::new(&k)?;
    let alpha = chol.solve(residuals);
    let half = T::lit(0.5);
    let value = -half * dot(residuals, &alpha)
        - half * chol.log_det()
        - half * T::from_usize_lossy(n) * T::lit((2.0 * std::f64::consts::PI).ln());
    if !with_gradient {
        return Ok(MarginalLikelihood {
            value,
            gradient: [T::zero(); 2],
        });
    }
    // ∂/∂p = ½ tr((ααᵀ − K⁻¹) ∂K/∂p)
    let kinv = chol.inverse();
    let l2 = hp.lengthscale * hp.lengthscale;
    let base = hp.signal_variance * T::lit(BASE_JITTER);
    let (mut g_var, mut g_len) = (T::zero(), T::zero());
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let kij = hp.k_sq(d2[(i, j)]);
            let dvar = if i == j { kij + base } else { kij };
            g_var = g_var + w * dvar;
            g_len = g_len + w * kij * d2[(i, j)] / l2;
        }
    }
    Ok(MarginalLikelihood {
        value,
        gradient: [half * g_var, half * g_len],
    })
}

/// Log marginal likelihood of `targets` under `hp`, with the same
/// preprocessing as [`GpSurrogate::fit`].
pub fn log_marginal_likelihood<T: Real>(
    inputs: &[Vec<T>],
    targets: &[T],
    hp: &GpHyperparameters<T>,
    opts: GpOptions<T>,
) -> Result<MarginalLikelihood<T>> {
    let prep = prepare(inputs, targets, &opts)?;
    lml_prepared(&distance_matrix(&prep.inputs), &prep.residuals, hp, true)
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome<T> {
    pub hyperparameters: GpHyperparameters<T>,
    pub initial_objective: T,
    pub objective: T,
    pub iterations: usize,
    /// Set when no step could be evaluated and `init` was returned as is.
    pub warning: Option<String>,
}

const LOG_VAR_RANGE: (f64, f64) = (-23.0, 23.0);
const LOG_LEN_RANGE: (f64, f64) = (-7.0, 7.0);

/// Gradient ascent with backtracking on `(log σ_f², log ℓ)`. Every accepted
/// step strictly increases the objective, so the result is never worse than
/// `init`.
pub fn optimize_hyperparameters<T: Real>(
    inputs: &[Vec<T>],
    targets: &[T],
    init: GpHyperparameters<T>,
    iters: usize,
    opts: GpOptions<T>,
) -> Result<OptimizeOutcome<T>> {
    let prep = prepare(inputs, targets, &opts)?;
    if prep.inputs.len() < 2 {
        return Err(Error::input("hyperparameter optimization needs N >= 2"));
    }
    let d2 = distance_matrix(&prep.inputs);
    let eval = |p: [f64; 2], grad: bool| -> Option<MarginalLikelihood<T>> {
        let hp = GpHyperparameters {
            signal_variance: T::lit(p[0].exp()),
            lengthscale: T::lit(p[1].exp()),
            jitter: init.jitter,
        };
        lml_prepared(&d2, &prep.residuals, &hp, grad)
            .ok()
            .filter(|m| m.value.is_finite())
    };
    let mut p = [
        init.signal_variance.to_f64_lossy().ln(),
        init.lengthscale.to_f64_lossy().ln(),
    ];
    let Some(mut cur) = eval(p, true) else {
        return Ok(OptimizeOutcome {
            hyperparameters: init,
            initial_objective: T::neg_infinity(),
            objective: T::neg_infinity(),
            iterations: 0,
            warning: Some("initial hyperparameters give a non-PD covariance".into()),
        });
    };
    let initial_objective = cur.value;
    let mut best = init;
    let mut step = 0.1;
    let mut iterations = 0;
    let clamp = |v: f64, (lo, hi): (f64, f64)| v.max(lo).min(hi);
    for _ in 0..iters {
        let g = [cur.gradient[0].to_f64_lossy(), cur.gradient[1].to_f64_lossy()];
        let gnorm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if !(gnorm > 1e-10) {
            break;
        }
        let dir = [g[0] / gnorm, g[1] / gnorm];
        let mut accepted = None;
        for _ in 0..40 {
            let trial = [
                clamp(p[0] + step * dir[0], LOG_VAR_RANGE),
                clamp(p[1] + step * dir[1], LOG_LEN_RANGE),
            ];
            if let Some(m) = eval(trial, true) {
                if m.value > cur.value {
                    accepted = Some((trial, m));
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
        let Some((trial, m)) = accepted else { break };
        let gain = (m.value - cur.value).to_f64_lossy();
        p = trial;
        cur = m;
        iterations += 1;
        best = GpHyperparameters {
            signal_variance: T::lit(p[0].exp()),
            lengthscale: T::lit(p[1].exp()),
            jitter: init.jitter,
        };
        step = (step * 2.0).min(2.0);
        if gain < 1e-9 * (1.0 + cur.value.to_f64_lossy().abs()) {
            break;
        }
    }
    Ok(OptimizeOutcome {
        hyperparameters: best,
        initial_objective,
        objective: cur.value,
        iterations,
        warning: None,
    })
}

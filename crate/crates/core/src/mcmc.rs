//! Metropolis sampling with an adaptive Gaussian-mixture independence proposal.

use rand::Rng;

use crate::density::DensityEstimate;
use crate::error::{check_dim, Error, Result};
use crate::gp::GpSurrogate;
use crate::mixture::GaussianMixtureState;
use crate::problem::BoxPrior;
use crate::rng::uniform01;
use crate::scalar::Real;

pub trait LogDensity<T: Real>: Sync {
    fn dim(&self) -> usize;
    /// `−∞` where the density vanishes.
    fn log_density(&self, theta: &[T]) -> T;
}

/// `f̂_n(θ) + log p̂_n(θ)` inside the prior box, `−∞` outside.
#[derive(Debug, Clone, Copy)]
pub struct TargetDensity<'a, T> {
    pub surrogate: &'a GpSurrogate<T>,
    pub kde: &'a DensityEstimate<T>,
    pub prior: &'a BoxPrior<T>,
}

impl<'a, T: Real> TargetDensity<'a, T> {
    pub fn new(surrogate: &'a GpSurrogate<T>, kde: &'a DensityEstimate<T>, prior: &'a BoxPrior<T>) -> Result<Self> {
        check_dim(prior.dim(), surrogate.dim())?;
        check_dim(prior.dim(), kde.dim())?;
        Ok(Self { surrogate, kde, prior })
    }

    pub fn log_target(&self, theta: &[T]) -> Result<T> {
        check_dim(self.prior.dim(), theta.len())?;
        Ok(self.log_density(theta))
    }
}

impl<T: Real> LogDensity<T> for TargetDensity<'_, T> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density(&self, theta: &[T]) -> T {
        if !self.prior.contains(theta) {
            return T::neg_infinity();
        }
        self.surrogate.mean(theta) + self.kde.log_pdf_unchecked(theta)
    }
}

/// A log-density given by a closure, masked to a box.
pub struct BoxedFn<'a, T, F> {
    pub prior: &'a BoxPrior<T>,
    pub f: F,
}

impl<T: Real, F: Fn(&[T]) -> T + Sync> LogDensity<T> for BoxedFn<'_, T, F> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density(&self, theta: &[T]) -> T {
        if self.prior.contains(theta) {
            (self.f)(theta)
        } else {
            T::neg_infinity()
        }
    }
}

fn log_ratio<T: Real>(target_star: T, target_prev: T, q_star: T, q_prev: T) -> Result<T> {
    if target_prev == T::neg_infinity() || target_prev.is_nan() {
        return Err(Error::Contract("chain state has zero target density".into()));
    }
    if target_star == T::neg_infinity() {
        return Ok(T::neg_infinity());
    }
    Ok((target_star + q_prev - target_prev - q_star).min(T::zero()))
}

/// `min{1, π(θ*) q(θ_prev) / (π(θ_prev) q(θ*))}` with both `q` terms from
/// the same mixture state.
pub fn acceptance_probability<T: Real, L: LogDensity<T>>(
    target: &L,
    gm: &GaussianMixtureState<T>,
    theta_star: &[T],
    theta_prev: &[T],
) -> Result<T> {
    check_dim(target.dim(), theta_star.len())?;
    check_dim(target.dim(), theta_prev.len())?;
    let ts = target.log_density(theta_star);
    let tp = target.log_density(theta_prev);
    if ts == T::neg_infinity() {
        log_ratio(ts, tp, T::zero(), T::zero())?;
        return Ok(T::zero());
    }
    Ok(log_ratio(ts, tp, gm.log_pdf(theta_star)?, gm.log_pdf(theta_prev)?)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig<T> {
    pub chain_length: usize,
    pub burn_in_fraction: T,
    pub adapt: bool,
    /// Stop adapting once burn-in ends.
    pub freeze_after_burn_in: bool,
    /// Also assimilate the retained state after a rejection.
    pub adapt_on_reject: bool,
}

impl<T: Real> McmcConfig<T> {
    pub fn new(chain_length: usize, burn_in_fraction: T) -> Result<Self> {
        if chain_length == 0 {
            return Err(Error::input("chain length must be positive"));
        }
        if !(burn_in_fraction >= T::zero() && burn_in_fraction < T::one()) {
            return Err(Error::input("burn-in fraction must lie in [0, 1)"));
        }
        Ok(Self {
            chain_length,
            burn_in_fraction,
            adapt: true,
            freeze_after_burn_in: true,
            adapt_on_reject: true,
        })
    }

    pub fn frozen(mut self) -> Self {
        self.adapt = false;
        self
    }

    pub fn burn_in(&self) -> usize {
        (self.burn_in_fraction * T::from_usize_lossy(self.chain_length))
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(self.chain_length - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics<T> {
    pub steps: usize,
    pub accepted: usize,
    pub acceptance_rate: T,
    /// Retained samples per mixture component (by largest responsibility).
    pub mode_visits: Vec<u64>,
    pub degraded: bool,
}

#[derive(Debug, Clone)]
pub struct ChainOutput<T> {
    /// Post-burn-in states.
    pub samples: Vec<Vec<T>>,
    pub log_targets: Vec<T>,
    pub diagnostics: ChainDiagnostics<T>,
    pub mixture: GaussianMixtureState<T>,
}

pub fn mcmc_run<T: Real, L: LogDensity<T>, R: Rng + ?Sized>(
    target: &L,
    mut gm: GaussianMixtureState<T>,
    cfg: &McmcConfig<T>,
    rng: &mut R,
    theta_init: &[T],
) -> Result<ChainOutput<T>> {
    check_dim(target.dim(), theta_init.len())?;
    check_dim(target.dim(), gm.dim())?;
    let mut theta = theta_init.to_vec();
    let mut lt = target.log_density(&theta);
    if !lt.is_finite() {
        return Err(Error::Contract("initial chain state has zero target density".into()));
    }
    let burn = cfg.burn_in();
    let keep = cfg.chain_length - burn;
    let mut samples = Vec::with_capacity(keep);
    let mut log_targets = Vec::with_capacity(keep);
    let mut visits = vec![0u64; gm.k()];
    let mut accepted = 0usize;
    for step in 0..cfg.chain_length {
        let star = gm.sample(rng);
        let lt_star = target.log_density(&star);
        let log_alpha = if lt_star == T::neg_infinity() {
            T::neg_infinity()
        } else {
            log_ratio(lt_star, lt, gm.log_pdf(&star)?, gm.log_pdf(&theta)?)?
        };
        let u: T = uniform01(rng);
        let moved = u.ln() < log_alpha;
        if moved {
            theta = star;
            lt = lt_star;
            accepted += 1;
        }
        let adapting = cfg.adapt && (moved || cfg.adapt_on_reject) && !(cfg.freeze_after_burn_in && step >= burn);
        if adapting {
            gm.adapt(&theta)?;
        }
        if step >= burn {
            visits[gm.assign_mode(&theta)?] += 1;
            samples.push(theta.clone());
            log_targets.push(lt);
        }
    }
    let diagnostics = ChainDiagnostics {
        steps: cfg.chain_length,
        accepted,
        acceptance_rate: T::from_usize_lossy(accepted) / T::from_usize_lossy(cfg.chain_length),
        mode_visits: visits,
        degraded: gm.is_degraded(),
    };
    Ok(ChainOutput {
        samples,
        log_targets,
        diagnostics,
        mixture: gm,
    })
}

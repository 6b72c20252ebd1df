//! The outer adaptive loop: archive, training targets, convergence test.

use std::time::Instant;

use rayon::prelude::*;

use crate::density::{kl_divergence_estimate, DensityEstimate, MIN_KL_SAMPLES};
use crate::ensemble::{ilues_step, Ensemble, LocalUpdateConfig};
use crate::error::{check_dim, Error, Result};
use crate::gp::{optimize_hyperparameters, GpHyperparameters, GpOptions, GpSurrogate};
use crate::mcmc::{mcmc_run, LogDensity, McmcConfig, TargetDensity};
use crate::mixture::{elbow_select_k, kmeans, CovarianceRecursion, GaussianMixtureState, ELBOW_RESTARTS};
use crate::problem::ProblemSpec;
use crate::rng;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRow<T> {
    pub theta: Vec<T>,
    pub log_post: T,
    pub generation: usize,
}

/// Append-only record of every forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationArchive<T> {
    dim: usize,
    rows: Vec<ArchiveRow<T>>,
}

impl<T: Real> EvaluationArchive<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[ArchiveRow<T>] {
        &self.rows
    }

    pub fn push(&mut self, theta: Vec<T>, log_post: T, generation: usize) -> Result<()> {
        check_dim(self.dim, theta.len())?;
        if !log_post.is_finite() {
            return Err(Error::Contract(format!("non-finite log posterior {log_post} in archive")));
        }
        self.rows.push(ArchiveRow {
            theta,
            log_post,
            generation,
        });
        Ok(())
    }

    pub fn push_ensemble(&mut self, e: &Ensemble<T>) -> Result<()> {
        for (m, &lp) in e.members.iter().zip(&e.log_posts) {
            self.push(m.clone(), lp, e.iteration)?;
        }
        Ok(())
    }

    pub fn inputs(&self) -> Vec<Vec<T>> {
        self.rows.iter().map(|r| r.theta.clone()).collect()
    }
}

/// `f_n(θ_i) = log π̃(θ_i) − log p̂_n(θ_i)` for every archive row.
pub fn build_training_targets<T: Real>(
    archive: &EvaluationArchive<T>,
    p_hat: &DensityEstimate<T>,
) -> Result<(Vec<Vec<T>>, Vec<T>)> {
    if archive.is_empty() {
        return Err(Error::input("empty archive"));
    }
    check_dim(archive.dim(), p_hat.dim())?;
    let targets = archive
        .rows()
        .par_iter()
        .map(|r| r.log_post - p_hat.log_pdf_unchecked(&r.theta))
        .collect();
    Ok((archive.inputs(), targets))
}

/// Raises every target to at least `max − depth`.
pub fn floor_targets<T: Real>(targets: &mut [T], depth: T) {
    let max = targets.iter().copied().fold(T::neg_infinity(), T::max);
    let floor = max - depth;
    targets.iter_mut().filter(|t| **t < floor).for_each(|t| *t = floor);
}

/// Length of the trailing run of values below `delta`, and whether it has
/// reached `n_kl_max`.
pub fn convergence_check<T: Real>(kl_history: &[T], delta: T, n_kl_max: usize) -> (bool, usize) {
    let streak = kl_history.iter().rev().take_while(|&&kl| kl < delta).count();
    (streak >= n_kl_max, streak)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<T> {
    pub ensemble_size: usize,
    pub initial_iters: usize,
    pub alpha: T,
    pub gp_jitter: T,
    pub gp_optimizer_iters: usize,
    /// Hyperparameters are tuned on an evenly strided subset of this size.
    pub gp_max_opt_points: usize,
    /// Training targets more than this far below the largest are raised to
    /// that level before fitting.
    pub gp_target_depth: Option<T>,
    pub chain_length: usize,
    pub burn_in_fraction: T,
    /// Relative regularization of the mixture covariances.
    pub epsilon: T,
    pub recursion: CovarianceRecursion,
    /// Adapt the mixture on rejected steps too (the retained state counts).
    pub adapt_on_reject: bool,
    pub delta_kl: T,
    pub n_kl_max: usize,
    pub n_max: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl<T: Real> PipelineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::input(m.to_string()));
        if self.ensemble_size < 2 {
            return fail("ensemble size must be at least 2");
        }
        if self.initial_iters == 0 || self.n_max == 0 || self.k_max == 0 || self.n_kl_max == 0 {
            return fail("iteration counts must be positive");
        }
        LocalUpdateConfig::new(self.alpha)?.local_size(self.ensemble_size)?;
        McmcConfig::new(self.chain_length, self.burn_in_fraction)?;
        if !(self.epsilon > T::zero()) || self.gp_jitter < T::zero() || !(self.delta_kl > T::zero()) {
            return fail("epsilon and delta_kl must be positive, jitter nonnegative");
        }
        let kept = self.chain_length - McmcConfig::new(self.chain_length, self.burn_in_fraction)?.burn_in();
        if kept < MIN_KL_SAMPLES {
            return fail("chain keeps too few samples for the KL estimate");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub n: usize,
    pub kl: T,
    pub accept_rate: T,
    pub k_clusters: usize,
    pub forward_calls: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    /// Post-burn-in states of the last chain.
    pub samples: Vec<Vec<T>>,
    /// Surrogate `log π̃` (`f̂ + log p̂`) at each sample.
    pub log_targets: Vec<T>,
    pub converged: bool,
    pub mode_visits: Vec<u64>,
}

/// State of one run; the archive and iteration log stay readable after a
/// failure so they can be checkpointed.
pub struct Pipeline<'a, T: Real> {
    spec: &'a ProblemSpec<T>,
    cfg: PipelineConfig<T>,
    archive: EvaluationArchive<T>,
    records: Vec<IterationRecord<T>>,
}

impl<'a, T: Real> Pipeline<'a, T> {
    pub fn new(spec: &'a ProblemSpec<T>, cfg: PipelineConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            archive: EvaluationArchive::new(spec.dim_theta()),
            spec,
            cfg,
            records: Vec::new(),
        })
    }

    pub fn archive(&self) -> &EvaluationArchive<T> {
        &self.archive
    }

    pub fn records(&self) -> &[IterationRecord<T>] {
        &self.records
    }

    pub fn config(&self) -> &PipelineConfig<T> {
        &self.cfg
    }

    fn fit_surrogate(
        &self,
        p_hat: &DensityEstimate<T>,
        warm: Option<GpHyperparameters<T>>,
    ) -> Result<GpSurrogate<T>> {
        let (inputs, mut targets) = build_training_targets(&self.archive, p_hat)?;
        if let Some(depth) = self.cfg.gp_target_depth {
            floor_targets(&mut targets, depth);
        }
        let opts = GpOptions::default();
        let init = match warm {
            Some(hp) => hp,
            None => {
                let n = T::from_usize_lossy(targets.len());
                let mean = targets.iter().copied().sum::<T>() / n;
                let var = targets.iter().map(|&t| (t - mean) * (t - mean)).sum::<T>() / n;
                GpHyperparameters::new(var.max(T::lit(1e-6)), T::one(), self.cfg.gp_jitter)?
            }
        };
        let hp = if self.cfg.gp_optimizer_iters > 0 {
            let stride = inputs.len().div_ceil(self.cfg.gp_max_opt_points.max(2));
            let sub_x: Vec<Vec<T>> = inputs.iter().step_by(stride).cloned().collect();
            let sub_y: Vec<T> = targets.iter().step_by(stride).copied().collect();
            let out = optimize_hyperparameters(&sub_x, &sub_y, init, self.cfg.gp_optimizer_iters, opts)?;
            if let Some(w) = &out.warning {
                log::warn!("hyperparameter search: {w}");
            }
            out.hyperparameters
        } else {
            init
        };
        GpSurrogate::fit(&inputs, &targets, hp, opts)
    }

    /// Prior draws until the target is finite and within 100 nats of the
    /// best archive site; falls back to that site.
    fn initial_state(&self, target: &TargetDensity<'_, T>, n: usize) -> Vec<T> {
        let (best_site, best) = self
            .archive
            .rows()
            .iter()
            .map(|r| (&r.theta, target.log_density(&r.theta)))
            .fold((None, T::neg_infinity()), |acc, (t, v)| if v > acc.1 { (Some(t), v) } else { acc });
        let mut rng = rng::stream(self.cfg.seed, "mcmc-init", n as u64);
        for _ in 0..INITIAL_STATE_DRAWS {
            let theta = self.spec.prior().sample(&mut rng);
            let v = target.log_density(&theta);
            if v.is_finite() && v > best - T::lit(100.0) {
                return theta;
            }
        }
        best_site.cloned().unwrap_or_else(|| self.archive.rows()[0].theta.clone())
    }

    pub fn run(&mut self) -> Result<PipelineOutput<T>> {
        let cfg = self.cfg.clone();
        let spec = self.spec;
        let local = LocalUpdateConfig::new(cfg.alpha)?;
        let mcmc_cfg = McmcConfig {
            adapt_on_reject: cfg.adapt_on_reject,
            ..McmcConfig::new(cfg.chain_length, cfg.burn_in_fraction)?
        };
        let widths = spec.prior().widths();
        let calls_before = spec.forward_calls();

        let mut ensemble = Ensemble::from_prior(spec, cfg.ensemble_size, &mut rng::stream(cfg.seed, "ilues-init", 0))?;
        self.archive.push_ensemble(&ensemble)?;
        for t in 0..cfg.initial_iters {
            ensemble = ilues_step(&ensemble, spec, &local, rng::stream_seed(cfg.seed, "ilues", t as u64))?;
            self.archive.push_ensemble(&ensemble)?;
        }
        let mut p_hat = DensityEstimate::fit(&ensemble.members, &widths)?;
        let mut kl_history = Vec::new();
        let mut hp = None;
        let mut last = None;
        for n in 0..cfg.n_max {
            let started = Instant::now();
            let gp = self.fit_surrogate(&p_hat, hp)?;
            hp = Some(*gp.hyperparameters());

            let mut krng = rng::stream(cfg.seed, "kmeans", n as u64);
            let k = elbow_select_k(&ensemble.members, cfg.k_max, &mut krng)?;
            let clusters = kmeans(&ensemble.members, k, &mut krng, ELBOW_RESTARTS)?;
            let gm = GaussianMixtureState::from_clustering(&ensemble.members, &clusters, cfg.epsilon)?
                .with_recursion(cfg.recursion);

            let target = TargetDensity::new(&gp, &p_hat, spec.prior())?;
            let theta0 = self.initial_state(&target, n);
            let chain = mcmc_run(&target, gm, &mcmc_cfg, &mut rng::stream(cfg.seed, "mcmc", n as u64), &theta0)?;
            if chain.diagnostics.degraded {
                log::warn!("iteration {}: a mixture covariance update was discarded", n + 1);
            }
            let next = DensityEstimate::fit(&chain.samples, &widths)?;
            let kl = kl_divergence_estimate(&next, &p_hat, None)?;
            kl_history.push(kl);
            let (stop, _) = convergence_check(&kl_history, cfg.delta_kl, cfg.n_kl_max);

            ensemble = ilues_step(
                &ensemble,
                spec,
                &local,
                rng::stream_seed(cfg.seed, "ilues", (cfg.initial_iters + n) as u64),
            )?;
            self.archive.push_ensemble(&ensemble)?;
            p_hat = next;

            let record = IterationRecord {
                n: n + 1,
                kl,
                accept_rate: chain.diagnostics.acceptance_rate,
                k_clusters: k,
                forward_calls: spec.forward_calls() - calls_before,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            log::info!(
                "iteration {}: kl {:.4} accept {:.3} K {} calls {}",
                record.n,
                kl.to_f64_lossy(),
                record.accept_rate.to_f64_lossy(),
                k,
                record.forward_calls
            );
            self.records.push(record);
            last = Some((chain, stop));
            if stop {
                break;
            }
        }
        let (chain, converged) = last.expect("n_max >= 1");
        Ok(PipelineOutput {
            samples: chain.samples,
            log_targets: chain.log_targets,
            converged,
            mode_visits: chain.diagnostics.mode_visits,
        })
    }
}

const INITIAL_STATE_DRAWS: usize = 100;

pub fn run_ilues_agpr<T: Real>(
    spec: &ProblemSpec<T>,
    cfg: PipelineConfig<T>,
) -> Result<(PipelineOutput<T>, Vec<IterationRecord<T>>, EvaluationArchive<T>)> {
    let mut p = Pipeline::new(spec, cfg)?;
    let out = p.run()?;
    Ok((out, p.records, p.archive))
}

//! JSON run configuration: sections with defaults, unknown keys rejected,
//! every diagnostic names the offending key.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{BimodalToyModel, Heat2dModel, Poisson2dModel};
use crate::linalg::Matrix;
use crate::mixture::CovarianceRecursion;
use crate::pipeline::PipelineConfig;
use crate::problem::{synthesize_data, BoxPrior, ForwardModel, NoiseRule, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub ilues: IluesConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default = "default_kmax")]
    pub kmax: usize,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub seed: u64,
}

fn default_kmax() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Heat2d(Heat2dConfig),
    Poisson2d(Poisson2dConfig),
    Toy(ToyConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Heat2dConfig {
    pub diffusion: f64,
    pub mass: f64,
    pub source_radius: f64,
    pub dx: f64,
    pub dt: f64,
    pub final_time: f64,
    pub sensors: Vec<[f64; 2]>,
}

impl Default for Heat2dConfig {
    fn default() -> Self {
        let m = Heat2dModel::<f64>::reference();
        Self {
            diffusion: m.diffusion,
            mass: m.mass,
            source_radius: m.source_radius,
            dx: m.dx,
            dt: m.dt,
            final_time: m.final_time,
            sensors: m.sensors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Poisson2dConfig {
    pub permeability: f64,
    pub source_width: f64,
    pub nodes: usize,
    pub sensors: Vec<[f64; 2]>,
}

impl Default for Poisson2dConfig {
    fn default() -> Self {
        let m = Poisson2dModel::<f64>::reference();
        Self {
            permeability: m.permeability,
            source_width: m.source_width,
            nodes: m.nodes_per_axis(),
            sensors: m.sensors.clone(),
        }
    }
}

/// Two isotropic Gaussians at `±offset` along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub dim: usize,
    pub offset: f64,
    pub sigma: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            offset: 1.0,
            sigma: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRuleName {
    /// One shared std: percentage of |mean clean observation|.
    #[default]
    MeanFraction,
    /// Per-observation std: percentage of each |clean observation|.
    PerObservation,
}

/// Either synthetic data (`truth` + `noise_percent`) or explicit `d_obs` with
/// `noise_std`. Unset fields take per-problem defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_percent: Option<f64>,
    pub noise_rule: NoiseRuleName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_obs: Option<Vec<f64>>,
    /// One value (shared) or one per observation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<Vec<f64>>,
    /// Noise-realization seed; falls back to the run seed in the file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IluesConfig {
    pub ensemble_size: usize,
    pub initial_iters: usize,
    pub alpha: f64,
}

impl Default for IluesConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 80,
            initial_iters: 1,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub jitter: f64,
    pub optimizer_iters: usize,
    pub max_opt_points: usize,
    /// `null` disables target flooring.
    pub target_depth: Option<f64>,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            jitter: 1e-6,
            optimizer_iters: 200,
            max_opt_points: 400,
            target_depth: Some(50.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecursionName {
    AsPrinted,
    #[default]
    Welford,
}

impl From<RecursionName> for CovarianceRecursion {
    fn from(r: RecursionName) -> Self {
        match r {
            RecursionName::AsPrinted => CovarianceRecursion::AsPrinted,
            RecursionName::Welford => CovarianceRecursion::Welford,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub chain_length: usize,
    pub burn_in_fraction: f64,
    pub epsilon: f64,
    pub recursion: RecursionName,
    pub adapt_on_reject: bool,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self {
            chain_length: 10_000,
            burn_in_fraction: 0.2,
            epsilon: 1e-6,
            recursion: RecursionName::Welford,
            adapt_on_reject: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub delta_kl: f64,
    pub n_kl_max: usize,
    pub n_max: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            delta_kl: 0.05,
            n_kl_max: 2,
            n_max: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Axis on which the posterior is even; defaults to `s` for poisson2d.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mirror_axis: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// With `false`, `wall_ms` is written as 0 so logs are reproducible.
    pub wall_clock: bool,
    pub marginal_bins: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            wall_clock: true,
            marginal_bins: 40,
        }
    }
}

/// Everything a command needs, built from a validated config.
pub struct Experiment {
    pub spec: ProblemSpec<f64>,
    pub pipeline: PipelineConfig<f64>,
    pub mirror_axis: Option<usize>,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        let key = if path == "." || path.is_empty() {
            missing_field(&msg).unwrap_or_else(|| ".".to_string())
        } else {
            match missing_field(&msg) {
                Some(f) => format!("{path}.{f}"),
                None => path,
            }
        };
        Error::config(key, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("missing field `")?;
    Some(rest.split('`').next()?.to_string())
}

pub fn serialize_config(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        match &self.problem {
            ProblemConfig::Heat2d(_) => 2,
            ProblemConfig::Poisson2d(_) => 3,
            ProblemConfig::Toy(t) => t.dim,
        }
    }

    pub fn prior_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        if let Some(p) = &self.prior {
            return (p.lower.clone(), p.upper.clone());
        }
        match &self.problem {
            ProblemConfig::Heat2d(_) => (vec![-1.0; 2], vec![1.0; 2]),
            ProblemConfig::Poisson2d(_) => (vec![0.0, 0.0, -2.0], vec![1.0, 1.0, 2.0]),
            ProblemConfig::Toy(t) => (vec![-3.0; t.dim], vec![3.0; t.dim]),
        }
    }

    pub fn mirror_axis(&self) -> Option<usize> {
        match (&self.oracle.mirror_axis, &self.problem) {
            (Some(a), _) => Some(*a),
            (None, ProblemConfig::Poisson2d(_)) => Some(2),
            _ => None,
        }
    }

    fn default_truth(&self) -> Vec<f64> {
        match &self.problem {
            ProblemConfig::Heat2d(_) => vec![0.5, 0.5],
            ProblemConfig::Poisson2d(_) => vec![0.6, 0.6, 1.0],
            ProblemConfig::Toy(t) => vec![0.0; t.dim],
        }
    }

    fn default_noise_percent(&self) -> f64 {
        match &self.problem {
            ProblemConfig::Poisson2d(_) => 1.0,
            _ => 5.0,
        }
    }

    /// Replaces the run seed, pinning the data seed to the old one so the
    /// observations do not change.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if self.data.seed.is_none() {
            self.data.seed = Some(self.seed);
        }
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Err(Error::config(k, m));
        let dim = self.dim();
        match &self.problem {
            ProblemConfig::Toy(t) if t.dim == 0 => return bad("problem.dim", "must be positive".into()),
            ProblemConfig::Toy(t) if !(t.sigma > 0.0) => return bad("problem.sigma", "must be positive".into()),
            _ => {}
        }
        if let Some(p) = &self.prior {
            if p.lower.len() != dim {
                return bad("prior.lower", format!("expected {dim} values"));
            }
            if p.upper.len() != dim {
                return bad("prior.upper", format!("expected {dim} values"));
            }
            if p.lower.iter().zip(&p.upper).any(|(l, u)| !(l < u)) {
                return bad("prior.upper", "must exceed prior.lower coordinatewise".into());
            }
        }
        let d = &self.data;
        if let Some(t) = &d.truth {
            if t.len() != dim {
                return bad("data.truth", format!("expected {dim} values"));
            }
            let (lo, hi) = self.prior_bounds();
            if t.iter().zip(lo.iter().zip(&hi)).any(|(x, (l, h))| !(x >= l && x <= h)) {
                return bad("data.truth", "outside the prior box".into());
            }
        }
        if let Some(p) = d.noise_percent {
            if !(p >= 0.0 && p.is_finite()) {
                return bad("data.noise_percent", "must be nonnegative".into());
            }
        }
        if d.d_obs.is_some() != d.noise_std.is_some() {
            let k = if d.d_obs.is_some() { "data.noise_std" } else { "data.d_obs" };
            return bad(k, "data.d_obs and data.noise_std go together".into());
        }
        if d.d_obs.is_some() && (d.truth.is_some() || d.noise_percent.is_some()) {
            return bad("data.d_obs", "cannot be combined with data.truth or data.noise_percent".into());
        }
        if let Some(s) = &d.noise_std {
            if s.iter().any(|&v| !(v > 0.0)) || s.is_empty() {
                return bad("data.noise_std", "must be positive".into());
            }
        }
        if matches!(self.problem, ProblemConfig::Toy(_)) && (d.truth.is_some() || d.d_obs.is_some()) {
            return bad("data", "the toy problem carries its own observations".into());
        }

        let i = &self.ilues;
        if i.ensemble_size < 2 {
            return bad("ilues.ensemble_size", "must be at least 2".into());
        }
        if i.initial_iters == 0 {
            return bad("ilues.initial_iters", "must be positive".into());
        }
        if !(i.alpha > 0.0 && i.alpha <= 1.0) {
            return bad("ilues.alpha", format!("{} is outside (0, 1]", i.alpha));
        }
        if (i.alpha * i.ensemble_size as f64).ceil() < 2.0 {
            return bad("ilues.alpha", "local ensembles need at least 2 members".into());
        }
        let g = &self.gp;
        if !(g.jitter >= 0.0) {
            return bad("gp.jitter", "must be nonnegative".into());
        }
        if g.max_opt_points < 2 {
            return bad("gp.max_opt_points", "must be at least 2".into());
        }
        if let Some(t) = g.target_depth {
            if !(t > 0.0) {
                return bad("gp.target_depth", "must be positive".into());
            }
        }
        let m = &self.mcmc;
        if m.chain_length == 0 {
            return bad("mcmc.chain_length", "must be positive".into());
        }
        if !(m.burn_in_fraction >= 0.0 && m.burn_in_fraction < 1.0) {
            return bad("mcmc.burn_in_fraction", "must lie in [0, 1)".into());
        }
        let burn = ((m.chain_length as f64) * m.burn_in_fraction).floor() as usize;
        if m.chain_length - burn.min(m.chain_length - 1) < crate::density::MIN_KL_SAMPLES {
            return bad(
                "mcmc.chain_length",
                format!("fewer than {} samples left after burn-in", crate::density::MIN_KL_SAMPLES),
            );
        }
        if !(m.epsilon > 0.0) {
            return bad("mcmc.epsilon", "must be positive".into());
        }
        let c = &self.convergence;
        if !(c.delta_kl > 0.0) {
            return bad("convergence.delta_kl", "must be positive".into());
        }
        if c.n_kl_max == 0 {
            return bad("convergence.n_kl_max", "must be positive".into());
        }
        if c.n_max == 0 {
            return bad("convergence.n_max", "must be positive".into());
        }
        if self.kmax == 0 {
            return bad("kmax", "must be positive".into());
        }
        if let Some(a) = self.oracle.mirror_axis {
            if a >= dim {
                return bad("oracle.mirror_axis", format!("must be below {dim}"));
            }
        }
        if self.output.marginal_bins == 0 {
            return bad("output.marginal_bins", "must be positive".into());
        }
        Ok(())
    }

    fn forward(&self) -> Result<Arc<dyn ForwardModel<f64>>> {
        let wrap = |e: Error| Error::config("problem", e.to_string());
        Ok(match &self.problem {
            ProblemConfig::Heat2d(h) => Arc::new(
                Heat2dModel::new(h.diffusion, h.mass, h.source_radius, h.dx, h.dt, h.final_time, h.sensors.clone())
                    .map_err(wrap)?,
            ),
            ProblemConfig::Poisson2d(p) => Arc::new(
                Poisson2dModel::new(p.permeability, p.source_width, p.nodes, p.sensors.clone()).map_err(wrap)?,
            ),
            ProblemConfig::Toy(t) => Arc::new(BimodalToyModel::symmetric(t.dim, t.offset, t.sigma).map_err(wrap)?),
        })
    }

    pub fn pipeline_config(&self) -> PipelineConfig<f64> {
        PipelineConfig {
            ensemble_size: self.ilues.ensemble_size,
            initial_iters: self.ilues.initial_iters,
            alpha: self.ilues.alpha,
            gp_jitter: self.gp.jitter,
            gp_optimizer_iters: self.gp.optimizer_iters,
            gp_max_opt_points: self.gp.max_opt_points,
            gp_target_depth: self.gp.target_depth,
            chain_length: self.mcmc.chain_length,
            burn_in_fraction: self.mcmc.burn_in_fraction,
            epsilon: self.mcmc.epsilon,
            recursion: self.mcmc.recursion.into(),
            adapt_on_reject: self.mcmc.adapt_on_reject,
            delta_kl: self.convergence.delta_kl,
            n_kl_max: self.convergence.n_kl_max,
            n_max: self.convergence.n_max,
            k_max: self.kmax,
            seed: self.seed,
        }
    }

    /// Builds the forward model, the data and the problem.
    pub fn build(&self) -> Result<Experiment> {
        self.validate()?;
        let forward = self.forward()?;
        let (lo, hi) = self.prior_bounds();
        let prior = BoxPrior::new(lo, hi).map_err(|e| Error::config("prior", e.to_string()))?;
        let (d_obs, noise_cov) = match (&self.problem, &self.data.d_obs) {
            (ProblemConfig::Toy(t), _) => {
                let toy = BimodalToyModel::symmetric(t.dim, t.offset, t.sigma)?;
                (toy.d_obs(), toy.cov().clone())
            }
            (_, Some(d)) => {
                if d.len() != forward.dim_data() {
                    return Err(Error::config("data.d_obs", format!("expected {} values", forward.dim_data())));
                }
                let std = self.data.noise_std.as_ref().expect("validated");
                let var: Vec<f64> = match std.len() {
                    1 => vec![std[0] * std[0]; d.len()],
                    n if n == d.len() => std.iter().map(|s| s * s).collect(),
                    _ => return Err(Error::config("data.noise_std", "expected 1 value or one per observation")),
                };
                (d.clone(), Matrix::from_diagonal(&var))
            }
            (_, None) => {
                let truth = self.data.truth.clone().unwrap_or_else(|| self.default_truth());
                let fraction = self.data.noise_percent.unwrap_or_else(|| self.default_noise_percent()) / 100.0;
                let rule = match self.data.noise_rule {
                    NoiseRuleName::MeanFraction => NoiseRule::MeanFraction(fraction),
                    NoiseRuleName::PerObservation => NoiseRule::PerObservation(fraction),
                };
                let data = synthesize_data(forward.as_ref(), &truth, rule, self.data.seed.unwrap_or(self.seed))?;
                (data.d_obs, data.noise_cov)
            }
        };
        let spec = ProblemSpec::new(prior, noise_cov, forward, d_obs)
            .map_err(|e| Error::config("data", e.to_string()))?;
        Ok(Experiment {
            spec,
            pipeline: self.pipeline_config(),
            mirror_axis: self.mirror_axis(),
        })
    }
}

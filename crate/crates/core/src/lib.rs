pub mod error;
pub mod forward;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod scalar;
pub mod gp;
pub mod density;
pub mod mixture;
pub mod ensemble;
pub mod pipeline;
pub mod mcmc;
pub mod oracle;
pub mod cli;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type Problem = problem::ProblemSpec<f64>;
pub type Gp = gp::GpSurrogate<f64>;
pub type GpParams = gp::GpHyperparameters<f64>;
pub type Kde = density::DensityEstimate<f64>;
pub type Mixture = mixture::GaussianMixtureState<f64>;
pub type Archive = pipeline::EvaluationArchive<f64>;
pub type Settings = pipeline::PipelineConfig<f64>;
pub type Grid = oracle::GridPosterior<f64>;

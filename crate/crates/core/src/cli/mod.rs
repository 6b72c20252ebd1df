//! Config parsing, output formats and the command layer behind the binary.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{compare, oracle, run, stats, Failure};
pub use config::{parse_config, serialize_config, RunConfig};
pub use output::{summarize_samples, SampleStats, Summary};

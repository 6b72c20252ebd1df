//! The four subcommands. Each returns its stdout text so tests can check it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{parse_config, serialize_config, RunConfig};
use super::output::*;
use crate::error::Error;
use crate::oracle::{grid_moments, grid_posterior};
use crate::pipeline::Pipeline;

/// Fraction of the box width within which a cluster matches an oracle mode.
pub const MODE_MATCH_TOLERANCE: f64 = 0.1;
const STATS_K_MAX: usize = 6;

#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

/// Config errors stay config errors; anything else is a runtime failure.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config { .. } => Failure::Config(e),
        other => Failure::Runtime(other),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(Error::config("<file>", format!("{}: {e}", path.display()))))?;
    parse_config(&text).map_err(Failure::Config)
}

pub fn run(config: &Path, out: &Path, seed: Option<u64>) -> Result<String, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    run_config(&cfg, out)
}

pub fn run_config(cfg: &RunConfig, out: &Path) -> Result<String, Failure> {
    let exp = cfg.build().map_err(classify)?;
    fs::create_dir_all(out).map_err(|e| runtime(e.into()))?;
    fs::write(out.join(CONFIG_FILE), serialize_config(cfg)).map_err(|e| runtime(e.into()))?;
    let wall = cfg.output.wall_clock;

    let mut pipeline = Pipeline::new(&exp.spec, exp.pipeline.clone()).map_err(classify)?;
    let result = pipeline.run();
    // the checkpoint goes out whether or not the run finished
    write_iterations(&out.join(ITERATIONS_FILE), pipeline.records(), wall).map_err(runtime)?;
    write_archive(&out.join(ARCHIVE_FILE), pipeline.archive()).map_err(runtime)?;
    let output = result.map_err(runtime)?;

    write_samples(&out.join(SAMPLES_FILE), &output.samples, &output.log_targets).map_err(runtime)?;
    let stats = summarize_samples(&output.samples, cfg.kmax, cfg.seed).map_err(runtime)?;
    let summary = Summary {
        mean: stats.mean,
        mse: stats.mse,
        clusters: stats.clusters,
        forward_calls_total: exp.spec.forward_calls(),
        seed: cfg.seed,
    };
    write_json(&out.join(SUMMARY_FILE), &summary).map_err(runtime)?;
    let (lo, hi) = cfg.prior_bounds();
    write_marginals(&out.join(MARGINALS_FILE), &sample_marginals(&output.samples, &lo, &hi, cfg.output.marginal_bins))
        .map_err(runtime)?;

    let mut msg = String::new();
    let iters = pipeline.records().len();
    writeln!(
        msg,
        "{} after {iters} outer iterations, {} forward calls",
        if output.converged { "converged" } else { "stopped" },
        summary.forward_calls_total
    )
    .unwrap();
    writeln!(msg, "mean {:?}", summary.mean).unwrap();
    writeln!(msg, "mse  {:?}", summary.mse).unwrap();
    for c in &summary.clusters {
        writeln!(msg, "cluster {:?} weight {:.4}", c.center, c.weight).unwrap();
    }
    Ok(msg)
}

pub fn oracle(config: &Path, out: &Path, resolution: usize) -> Result<String, Failure> {
    let cfg = load_config(config)?;
    oracle_config(&cfg, out, resolution)
}

pub fn oracle_config(cfg: &RunConfig, out: &Path, resolution: usize) -> Result<String, Failure> {
    let exp = cfg.build().map_err(classify)?;
    let dim = exp.spec.dim_theta();
    let grid = grid_posterior(&exp.spec, &vec![resolution; dim], exp.mirror_axis).map_err(classify)?;
    let moments = grid_moments(&grid);
    let (lo, hi) = cfg.prior_bounds();
    let summary = OracleSummary::new(resolution, &lo, &hi, &moments);
    fs::create_dir_all(out).map_err(|e| runtime(e.into()))?;
    write_json(&out.join(ORACLE_SUMMARY_FILE), &summary).map_err(runtime)?;
    write_grid(&out.join(ORACLE_GRID_FILE), &grid).map_err(runtime)?;
    write_marginals(&out.join(MARGINALS_FILE), &grid_marginals(&grid, &lo, &hi)).map_err(runtime)?;

    let mut msg = String::new();
    writeln!(msg, "grid {resolution}^{dim}, {} forward calls", exp.spec.forward_calls()).unwrap();
    writeln!(msg, "mean {:?}", summary.mean).unwrap();
    writeln!(msg, "mse  {:?}", summary.mse).unwrap();
    for m in &summary.modes {
        writeln!(msg, "mode {:?} mass {:.4}", m.center, m.mass).unwrap();
    }
    Ok(msg)
}

pub fn stats(samples: &Path) -> Result<String, Failure> {
    let (rows, _) = read_samples(samples).map_err(runtime)?;
    let s = summarize_samples(&rows, STATS_K_MAX, 0).map_err(runtime)?;
    let mut text = serde_json::to_string_pretty(&s).expect("serializable");
    text.push('\n');
    Ok(text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatch {
    pub mode: OracleMode,
    /// Index into the sample clusters of the nearest center.
    pub nearest: Option<usize>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub mean_delta: Vec<f64>,
    /// `(sample − oracle) / oracle`, NaN when the oracle MSE is zero.
    pub mse_relative: Vec<f64>,
    pub clusters: Vec<ClusterSummary>,
    pub matches: Vec<ModeMatch>,
}

impl Comparison {
    pub fn matched(&self) -> usize {
        self.matches.iter().filter(|m| m.matched).count()
    }
}

pub fn compare_stats(stats: &SampleStats, oracle: &OracleSummary) -> Comparison {
    let widths: Vec<f64> = oracle.upper.iter().zip(&oracle.lower).map(|(u, l)| u - l).collect();
    let mut used = vec![false; stats.clusters.len()];
    let matches = oracle
        .modes
        .iter()
        .map(|m| {
            let scaled = |c: &ClusterSummary| {
                c.center
                    .iter()
                    .zip(&m.center)
                    .zip(&widths)
                    .map(|((a, b), w)| ((a - b) / w).abs())
                    .fold(0.0, f64::max)
            };
            // greedy: strongest mode first, each cluster used once
            let nearest = stats
                .clusters
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .min_by(|a, b| scaled(a.1).total_cmp(&scaled(b.1)))
                .map(|(i, _)| i);
            let matched = nearest.is_some_and(|i| scaled(&stats.clusters[i]) <= MODE_MATCH_TOLERANCE);
            if let (true, Some(i)) = (matched, nearest) {
                used[i] = true;
            }
            ModeMatch {
                mode: m.clone(),
                nearest,
                matched,
            }
        })
        .collect();
    Comparison {
        mean_delta: stats.mean.iter().zip(&oracle.mean).map(|(s, o)| s - o).collect(),
        mse_relative: stats.mse.iter().zip(&oracle.mse).map(|(s, o)| (s - o) / o).collect(),
        clusters: stats.clusters.clone(),
        matches,
    }
}

pub fn compare(samples: &Path, oracle_dir: &Path) -> Result<String, Failure> {
    let (rows, _) = read_samples(samples).map_err(runtime)?;
    let oracle: OracleSummary = read_json(&oracle_dir.join(ORACLE_SUMMARY_FILE)).map_err(runtime)?;
    if rows.first().map(Vec::len) != Some(oracle.mean.len()) {
        return Err(runtime(Error::Format("samples and oracle dimensions differ".into())));
    }
    let s = summarize_samples(&rows, STATS_K_MAX, 0).map_err(runtime)?;
    let c = compare_stats(&s, &oracle);
    let mut msg = String::from("coord  sample_mean  oracle_mean  delta  sample_mse  oracle_mse  rel_delta\n");
    for d in 0..oracle.mean.len() {
        writeln!(
            msg,
            "theta_{}  {:.6}  {:.6}  {:+.6}  {:.6e}  {:.6e}  {:+.4}",
            d + 1,
            s.mean[d],
            oracle.mean[d],
            c.mean_delta[d],
            s.mse[d],
            oracle.mse[d],
            c.mse_relative[d]
        )
        .unwrap();
    }
    writeln!(msg, "oracle modes {}, sample clusters {}", oracle.modes.len(), s.clusters.len()).unwrap();
    for m in &c.matches {
        let near = m
            .nearest
            .map(|i| format!("{:?} weight {:.4}", s.clusters[i].center, s.clusters[i].weight))
            .unwrap_or_else(|| "none".into());
        writeln!(
            msg,
            "mode {:?} mass {:.4} -> {} [{}]",
            m.mode.center,
            m.mode.mass,
            near,
            if m.matched { "match" } else { "no match" }
        )
        .unwrap();
    }
    writeln!(msg, "matched {}/{}", c.matched(), oracle.modes.len()).unwrap();
    Ok(msg)
}

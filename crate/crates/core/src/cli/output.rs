//! Writers and readers for the run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{elbow_select_k, kmeans, ELBOW_RESTARTS};
use crate::oracle::{GridMoments, GridPosterior};
use crate::pipeline::{EvaluationArchive, IterationRecord};
use crate::rng;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const ITERATIONS_FILE: &str = "iterations.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MARGINALS_FILE: &str = "marginals.csv";
pub const ARCHIVE_FILE: &str = "archive.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const ORACLE_SUMMARY_FILE: &str = "oracle.json";
pub const ORACLE_GRID_FILE: &str = "grid.csv";

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse `{s}` as a number")))
}

pub fn write_samples(path: &Path, samples: &[Vec<f64>], log_post: &[f64]) -> Result<()> {
    let dim = samples.first().map_or(0, Vec::len);
    let mut out = String::new();
    let header: Vec<String> = (1..=dim).map(|i| format!("theta_{i}")).collect();
    writeln!(out, "{},log_post", header.join(",")).unwrap();
    for (s, &lp) in samples.iter().zip(log_post) {
        for x in s {
            out.push_str(&fmt_f64(*x));
            out.push(',');
        }
        out.push_str(&fmt_f64(lp));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Returns the sample rows and the `log_post` column.
pub fn read_samples(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty samples file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let dim = cols.len().saturating_sub(1);
    let expected: Vec<String> = (1..=dim).map(|i| format!("theta_{i}")).collect();
    if dim == 0 || cols[..dim] != expected.iter().map(String::as_str).collect::<Vec<_>>()[..] || cols[dim] != "log_post"
    {
        return Err(Error::Format(format!("unexpected samples header `{header}`")));
    }
    let mut samples = Vec::new();
    let mut lp = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let vals = line.split(',').map(|v| parse_f64(v, i + 2)).collect::<Result<Vec<_>>>()?;
        if vals.len() != dim + 1 {
            return Err(Error::Format(format!("line {}: expected {} fields", i + 2, dim + 1)));
        }
        lp.push(vals[dim]);
        samples.push(vals[..dim].to_vec());
    }
    Ok((samples, lp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationLine {
    pub n: usize,
    pub kl: f64,
    pub accept_rate: f64,
    pub k_clusters: usize,
    pub forward_calls: u64,
    pub wall_ms: u64,
}

impl IterationLine {
    pub fn from_record(r: &IterationRecord<f64>, wall_clock: bool) -> Self {
        Self {
            n: r.n,
            kl: r.kl,
            accept_rate: r.accept_rate,
            k_clusters: r.k_clusters,
            forward_calls: r.forward_calls,
            wall_ms: if wall_clock { r.wall_ms } else { 0 },
        }
    }
}

pub fn write_iterations(path: &Path, records: &[IterationRecord<f64>], wall_clock: bool) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&IterationLine::from_record(r, wall_clock)).expect("serializable"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_iterations(path: &Path) -> Result<Vec<IterationLine>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSummary {
    pub center: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleStats {
    pub mean: Vec<f64>,
    pub mse: Vec<f64>,
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub mean: Vec<f64>,
    pub mse: Vec<f64>,
    pub clusters: Vec<ClusterSummary>,
    pub forward_calls_total: u64,
    pub seed: u64,
}

/// Mean, MSE `(1/N)Σ(θ−θ̄)²` per coordinate, and kmeans clusters with the
/// elbow `K`, heaviest first.
pub fn summarize_samples(samples: &[Vec<f64>], k_max: usize, seed: u64) -> Result<SampleStats> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::input("no samples to summarize"));
    }
    let dim = samples[0].len();
    let nf = n as f64;
    let mean: Vec<f64> = (0..dim).map(|d| samples.iter().map(|s| s[d]).sum::<f64>() / nf).collect();
    let mse: Vec<f64> = (0..dim)
        .map(|d| samples.iter().map(|s| (s[d] - mean[d]).powi(2)).sum::<f64>() / nf)
        .collect();
    let mut r = rng::stream(seed, "summary", 0);
    let k = elbow_select_k(samples, k_max.min(n), &mut r)?;
    let cl = kmeans(samples, k, &mut r, ELBOW_RESTARTS)?;
    let mut clusters: Vec<ClusterSummary> = cl
        .centroids
        .iter()
        .zip(cl.sizes())
        .map(|(c, size)| ClusterSummary {
            center: c.clone(),
            weight: size as f64 / nf,
        })
        .collect();
    clusters.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.center.partial_cmp(&b.center).unwrap()));
    Ok(SampleStats { mean, mse, clusters })
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// One histogram bin. `axis_b` and its edges are absent for 1D rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalBin {
    pub axis_a: usize,
    pub lo_a: f64,
    pub hi_a: f64,
    pub b: Option<(usize, f64, f64)>,
    pub mass: f64,
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((x - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

/// 1D histograms for every axis and 2D ones for every pair, over the box.
pub fn sample_marginals(samples: &[Vec<f64>], lower: &[f64], upper: &[f64], bins: usize) -> Vec<MarginalBin> {
    let dim = lower.len();
    let w = 1.0 / samples.len().max(1) as f64;
    let mut out = Vec::new();
    for a in 0..dim {
        let e = edges(lower[a], upper[a], bins);
        let mut m = vec![0.0; bins];
        for s in samples {
            m[bin_of(s[a], lower[a], upper[a], bins)] += w;
        }
        out.extend((0..bins).map(|i| MarginalBin {
            axis_a: a,
            lo_a: e[i],
            hi_a: e[i + 1],
            b: None,
            mass: m[i],
        }));
    }
    for a in 0..dim {
        for b in a + 1..dim {
            let (ea, eb) = (edges(lower[a], upper[a], bins), edges(lower[b], upper[b], bins));
            let mut m = vec![0.0; bins * bins];
            for s in samples {
                m[bin_of(s[a], lower[a], upper[a], bins) * bins + bin_of(s[b], lower[b], upper[b], bins)] += w;
            }
            for i in 0..bins {
                for j in 0..bins {
                    out.push(MarginalBin {
                        axis_a: a,
                        lo_a: ea[i],
                        hi_a: ea[i + 1],
                        b: Some((b, eb[j], eb[j + 1])),
                        mass: m[i * bins + j],
                    });
                }
            }
        }
    }
    out
}

/// Cell-mass marginals of a grid posterior; bins are the grid cells.
pub fn grid_marginals(grid: &GridPosterior<f64>, lower: &[f64], upper: &[f64]) -> Vec<MarginalBin> {
    let dim = grid.dim();
    let shape = grid.shape();
    let e: Vec<Vec<f64>> = (0..dim).map(|d| edges(lower[d], upper[d], shape[d])).collect();
    let mut out = Vec::new();
    for a in 0..dim {
        out.extend(grid.marginal_1d(a).into_iter().enumerate().map(|(i, mass)| MarginalBin {
            axis_a: a,
            lo_a: e[a][i],
            hi_a: e[a][i + 1],
            b: None,
            mass,
        }));
    }
    for a in 0..dim {
        for b in a + 1..dim {
            let m = grid.marginal_2d(a, b);
            for i in 0..shape[a] {
                for j in 0..shape[b] {
                    out.push(MarginalBin {
                        axis_a: a,
                        lo_a: e[a][i],
                        hi_a: e[a][i + 1],
                        b: Some((b, e[b][j], e[b][j + 1])),
                        mass: m[i * shape[b] + j],
                    });
                }
            }
        }
    }
    out
}

pub fn write_marginals(path: &Path, bins: &[MarginalBin]) -> Result<()> {
    let mut out = String::from("kind,axis_a,axis_b,lo_a,hi_a,lo_b,hi_b,mass\n");
    for m in bins {
        // axes are 1-based to match the theta_i columns
        match m.b {
            None => writeln!(
                out,
                "1d,{},,{},{},,,{}",
                m.axis_a + 1,
                fmt_f64(m.lo_a),
                fmt_f64(m.hi_a),
                fmt_f64(m.mass)
            ),
            Some((b, lo, hi)) => writeln!(
                out,
                "2d,{},{},{},{},{},{},{}",
                m.axis_a + 1,
                b + 1,
                fmt_f64(m.lo_a),
                fmt_f64(m.hi_a),
                fmt_f64(lo),
                fmt_f64(hi),
                fmt_f64(m.mass)
            ),
        }
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_marginals(path: &Path) -> Result<Vec<MarginalBin>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("kind,axis_a,axis_b,lo_a,hi_a,lo_b,hi_b,mass") {
        return Err(Error::Format("unexpected marginals header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!("line {line}: expected 8 fields")));
            }
            let axis = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .ok()
                    .filter(|&a| a >= 1)
                    .map(|a| a - 1)
                    .ok_or_else(|| Error::Format(format!("line {line}: bad axis `{s}`")))
            };
            let b = match f[0] {
                "1d" => None,
                "2d" => Some((axis(f[2])?, parse_f64(f[5], line)?, parse_f64(f[6], line)?)),
                k => return Err(Error::Format(format!("line {line}: unknown kind `{k}`"))),
            };
            Ok(MarginalBin {
                axis_a: axis(f[1])?,
                lo_a: parse_f64(f[3], line)?,
                hi_a: parse_f64(f[4], line)?,
                b,
                mass: parse_f64(f[7], line)?,
            })
        })
        .collect()
}

/// Every forward evaluation, for restarts and post-mortems.
pub fn write_archive(path: &Path, archive: &EvaluationArchive<f64>) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (1..=archive.dim()).map(|i| format!("theta_{i}")).collect();
    writeln!(out, "{},log_post,generation", header.join(",")).unwrap();
    for r in archive.rows() {
        for x in &r.theta {
            out.push_str(&fmt_f64(*x));
            out.push(',');
        }
        writeln!(out, "{},{}", fmt_f64(r.log_post), r.generation).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleMode {
    pub center: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSummary {
    pub resolution: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: Vec<f64>,
    pub mse: Vec<f64>,
    pub modes: Vec<OracleMode>,
}

impl OracleSummary {
    pub fn new(resolution: usize, lower: &[f64], upper: &[f64], m: &GridMoments<f64>) -> Self {
        Self {
            resolution,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            mean: m.mean.clone(),
            mse: m.mse.clone(),
            modes: m
                .modes
                .iter()
                .map(|md| OracleMode {
                    center: md.theta.clone(),
                    mass: md.mass,
                })
                .collect(),
        }
    }
}

/// Cell centers with `log π̃` and normalized mass.
pub fn write_grid(path: &Path, grid: &GridPosterior<f64>) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (1..=grid.dim()).map(|i| format!("theta_{i}")).collect();
    writeln!(out, "{},log_post,mass", header.join(",")).unwrap();
    for k in 0..grid.len() {
        for x in grid.cell_center(k) {
            out.push_str(&fmt_f64(x));
            out.push(',');
        }
        writeln!(out, "{},{}", fmt_f64(grid.log_post[k]), fmt_f64(grid.masses[k])).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

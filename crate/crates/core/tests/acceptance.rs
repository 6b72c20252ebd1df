//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2 10`.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ilues_agpr::cli::commands::{oracle_config, run_config};
use ilues_agpr::cli::config::{parse_config, RunConfig};
use ilues_agpr::cli::output::*;
use ilues_agpr::density::{kl_divergence_estimate, ks_two_sample, DensityEstimate};
use ilues_agpr::ensemble::{ilues_run, LocalUpdateConfig};
use ilues_agpr::forward::{BimodalToyModel, Heat2dModel, Poisson2dModel};
use ilues_agpr::gp::{log_marginal_likelihood, GpHyperparameters, GpOptions, GpSurrogate, PriorMean};
use ilues_agpr::linalg::{Cholesky, Matrix};
use ilues_agpr::mcmc::{mcmc_run, BoxedFn, McmcConfig};
use ilues_agpr::mixture::{lloyd, CovarianceRecursion, GaussianMixtureState};
use ilues_agpr::pipeline::convergence_check;
use ilues_agpr::problem::{BoxPrior, ForwardModel, ProblemSpec};
use ilues_agpr::rng::{self, standard_normal, uniform01};
use ilues_agpr::Result as CoreResult;

type Outcome = Result<String, String>;

/// Collects failed sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failed.push(what);
        }
    }

    fn outcome(self) -> Outcome {
        if self.failed.is_empty() {
            Ok(self.notes.join("; "))
        } else {
            Err(self.failed.join("; "))
        }
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn raw_gp() -> GpOptions<f64> {
    GpOptions {
        prior_mean: PriorMean::Fixed(0.0),
        standardize: false,
    }
}

fn gp_correctness() -> Outcome {
    let mut c = Checks::default();

    let mut r = rng::stream(1, "acceptance-gp", 0);
    let xs: Vec<Vec<f64>> = (0..5)
        .flat_map(|i| (0..5).map(move |j| (i, j)))
        .map(|(i, j)| {
            vec![
                (i as f64 + 0.2 + 0.6 * uniform01::<f64, _>(&mut r)) / 5.0,
                (j as f64 + 0.2 + 0.6 * uniform01::<f64, _>(&mut r)) / 5.0,
            ]
        })
        .collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin() + (2.0 * x[1]).cos()).collect();
    let hp = GpHyperparameters::new(1.0, 0.25, 0.0).map_err(err)?;
    let gp = GpSurrogate::fit(&xs, &ys, hp, GpOptions::default()).map_err(err)?;
    let worst = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (gp.mean(x) - y).abs())
        .fold(0.0, f64::max);
    c.check(worst <= 1e-6, format!("interpolation error {worst:.2e}"));

    let hp = GpHyperparameters::new(1.0, 1.0, 0.0).map_err(err)?;
    let one = GpSurrogate::fit(&[vec![0.0]], &[2.0], hp, raw_gp()).map_err(err)?;
    let (m, v) = one.predict(&[1.0]).map_err(err)?;
    let (m_ref, v_ref) = (2.0 * (-0.5f64).exp(), 1.0 - (-1f64).exp());
    c.check(
        (m - m_ref).abs() <= 1e-6 * m_ref && (v - v_ref).abs() <= 1e-6 * v_ref,
        format!("single-point mean {m:.6} var {v:.6}"),
    );

    let ys1: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
    let xs1: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.25]).collect();
    let mut worst_rel: f64 = 0.0;
    for (var, len) in [(0.7, 0.6), (1.8, 1.4), (0.3, 0.35)] {
        let at = |lv: f64, ll: f64| -> CoreResult<f64> {
            let hp = GpHyperparameters::new(lv.exp(), ll.exp(), 1e-6)?;
            Ok(log_marginal_likelihood(&xs1, &ys1, &hp, raw_gp())?.value)
        };
        let hp = GpHyperparameters::new(var, len, 1e-6).map_err(err)?;
        let g = log_marginal_likelihood(&xs1, &ys1, &hp, raw_gp()).map_err(err)?.gradient;
        let (lv, ll, h) = (f64::ln(var), f64::ln(len), 1e-5);
        let fd = [
            (at(lv + h, ll).map_err(err)? - at(lv - h, ll).map_err(err)?) / (2.0 * h),
            (at(lv, ll + h).map_err(err)? - at(lv, ll - h).map_err(err)?) / (2.0 * h),
        ];
        for k in 0..2 {
            worst_rel = worst_rel.max((g[k] - fd[k]).abs() / fd[k].abs().max(1e-8));
        }
    }
    c.check(worst_rel < 1e-4, format!("gradient vs finite differences {worst_rel:.1e}"));
    c.outcome()
}

fn forward_fidelity() -> Outcome {
    let mut c = Checks::default();
    let base = Heat2dModel::<f64>::reference();
    let mut sensors = base.sensors.clone();
    sensors.extend([[0.0, 0.0], [0.3, 0.0]]);
    let m = base.with_sensors(sensors.clone()).map_err(err)?;
    let vals = m.observe(&[0.0, 0.0]).map_err(err)?;
    let s2 = m.source_radius.powi(2) + 2.0 * m.diffusion * m.final_time;
    let mut worst: f64 = 0.0;
    for (v, p) in vals.iter().zip(&sensors) {
        let r2 = p[0] * p[0] + p[1] * p[1];
        let exact = m.mass / (2.0 * std::f64::consts::PI * s2) * (-r2 / (2.0 * s2)).exp();
        worst = worst.max((v - exact).abs() / exact);
    }
    c.check(worst < 0.02, format!("heat2d vs free-space Gaussian {:.3}%", 100.0 * worst));

    let p = Poisson2dModel::<f64>::reference();
    let (mut sym, mut hom): (f64, f64) = (0.0, 0.0);
    for (xi, s) in [([0.6, 0.6], 1.0), ([0.2, 0.9], 1.7), ([0.5, 0.1], 0.3)] {
        let a = p.observe_at(xi, s).map_err(err)?;
        let b = p.observe_at(xi, -s).map_err(err)?;
        let d = p.observe_at(xi, 2.0 * s).map_err(err)?;
        for ((x, y), z) in a.iter().zip(&b).zip(&d) {
            let scale = x.abs().max(1e-300);
            sym = sym.max((x - y).abs() / scale);
            hom = hom.max((2.0 * x - z).abs() / (2.0 * scale));
        }
    }
    c.check(sym <= 1e-10, format!("poisson2d sign symmetry {sym:.1e}"));
    c.check(hom <= 1e-10, format!("poisson2d doubling {hom:.1e}"));
    c.outcome()
}

struct Identity;

impl ForwardModel<f64> for Identity {
    fn dim_theta(&self) -> usize {
        1
    }
    fn dim_data(&self) -> usize {
        1
    }
    fn observe(&self, theta: &[f64]) -> CoreResult<Vec<f64>> {
        Ok(theta.to_vec())
    }
}

fn ensemble_consistency() -> Outcome {
    // U(-2, 4) prior: mean 1, variance 3
    let (noise, d_obs) = (0.5, 2.5);
    let spec = ProblemSpec::new(
        BoxPrior::new(vec![-2.0], vec![4.0]).map_err(err)?,
        Matrix::from_diagonal(&[noise]),
        Arc::new(Identity),
        vec![d_obs],
    )
    .map_err(err)?;
    let cfg = LocalUpdateConfig::new(1.0).map_err(err)?;
    let (e, _) = ilues_run(&spec, 2000, 1, &cfg, 11).map_err(err)?;
    let (m0, v0) = (1.0, 3.0);
    let kalman = (m0 * noise + d_obs * v0) / (v0 + noise);
    let mean = e.members.iter().map(|m| m[0]).sum::<f64>() / e.len() as f64;
    let rel = (mean - kalman).abs() / kalman.abs();
    let mut c = Checks::default();
    c.check(rel < 0.05, format!("ensemble mean {mean:.4} vs {kalman:.4} ({:.2}%)", 100.0 * rel));
    c.outcome()
}

fn sampler_validity() -> Outcome {
    let toy = BimodalToyModel::<f64>::symmetric(2, 2.0, 0.5).map_err(err)?;
    let prior = BoxPrior::new(vec![-10.0; 2], vec![10.0; 2]).map_err(err)?;
    let target = BoxedFn {
        prior: &prior,
        f: |t: &[f64]| toy.log_density(t),
    };
    let [a, b] = toy.centers();
    let gm = GaussianMixtureState::new(
        vec![a.to_vec(), b.to_vec()],
        vec![Matrix::identity(2).scale(0.4); 2],
        vec![50, 50],
        1e-6,
    )
    .map_err(err)?;
    let n = 50_000;
    let cfg = McmcConfig::new(n + n / 4, 0.2).map_err(err)?.frozen();
    let mut r = rng::stream(3, "acceptance-mcmc", 0);
    let out = mcmc_run(&target, gm, &cfg, &mut r, &[2.0, 0.0]).map_err(err)?;
    let direct: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = if i % 2 == 0 { -2.0 } else { 2.0 };
            vec![
                c + 0.5 * standard_normal::<f64, _>(&mut r),
                0.5 * standard_normal::<f64, _>(&mut r),
            ]
        })
        .collect();
    let mut c = Checks::default();
    c.check(out.samples.len() == n, format!("{} retained samples", out.samples.len()));
    for d in 0..2 {
        let xs: Vec<f64> = out.samples.iter().map(|s| s[d]).collect();
        let ys: Vec<f64> = direct.iter().map(|s| s[d]).collect();
        let ks = ks_two_sample(&xs, &ys).map_err(err)?;
        c.check(ks < 0.02, format!("KS theta_{} {ks:.4}", d + 1));
    }
    let right = out.samples.iter().filter(|s| s[0] > 0.0).count() as f64 / out.samples.len() as f64;
    c.check((right - 0.5).abs() <= 0.1, format!("mode masses {:.3}/{:.3}", 1.0 - right, right));
    c.outcome()
}

fn example_config(text: &str) -> std::result::Result<RunConfig, String> {
    let mut cfg = parse_config(text).map_err(err)?;
    cfg.output.wall_clock = false;
    Ok(cfg)
}

struct RunFiles {
    summary: Summary,
    iterations: Vec<IterationLine>,
    samples: Vec<u8>,
    iterations_raw: Vec<u8>,
}

fn run_example(cfg: &RunConfig, dir: &Path) -> std::result::Result<RunFiles, String> {
    run_config(cfg, dir).map_err(err)?;
    Ok(RunFiles {
        summary: read_json(&dir.join(SUMMARY_FILE)).map_err(err)?,
        iterations: read_iterations(&dir.join(ITERATIONS_FILE)).map_err(err)?,
        samples: std::fs::read(dir.join(SAMPLES_FILE)).map_err(err)?,
        iterations_raw: std::fs::read(dir.join(ITERATIONS_FILE)).map_err(err)?,
    })
}

fn run_oracle(cfg: &RunConfig, dir: &Path, resolution: usize) -> std::result::Result<OracleSummary, String> {
    oracle_config(cfg, dir, resolution).map_err(err)?;
    read_json(&dir.join(ORACLE_SUMMARY_FILE)).map_err(err)
}

struct ExampleOne {
    cfg: RunConfig,
    first: RunFiles,
    second: RunFiles,
    oracle: OracleSummary,
}

fn example_one() -> std::result::Result<ExampleOne, String> {
    let cfg = example_config(include_str!("../configs/example1.json"))?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let (a, b, o) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("oracle"));
    let (first, second, oracle) = std::thread::scope(|s| {
        let ha = s.spawn(|| run_example(&cfg, &a));
        let hb = s.spawn(|| run_example(&cfg, &b));
        let oracle = run_oracle(&cfg, &o, 41);
        (ha.join().expect("run thread"), hb.join().expect("run thread"), oracle)
    });
    Ok(ExampleOne {
        first: first?,
        second: second?,
        oracle: oracle?,
        cfg,
    })
}

fn example_one_end_to_end(ex: &ExampleOne) -> Outcome {
    let mut c = Checks::default();
    let (s, o) = (&ex.first.summary, &ex.oracle);
    c.check(o.modes.len() == 2, format!("oracle modes {}", o.modes.len()));
    c.check(s.clusters.len() == 2, format!("sample clusters {}", s.clusters.len()));
    for d in 0..o.mean.len() {
        let dm = s.mean[d] - o.mean[d];
        c.check(
            dm.abs() <= 0.05,
            format!("mean theta_{} {:.4} vs {:.4}", d + 1, s.mean[d], o.mean[d]),
        );
        let rel = (s.mse[d] - o.mse[d]) / o.mse[d];
        c.check(
            rel.abs() <= 0.3,
            format!("mse theta_{} {:.4e} vs {:.4e} ({:+.0}%)", d + 1, s.mse[d], o.mse[d], 100.0 * rel),
        );
    }
    c.outcome()
}

fn example_one_diagnostics(ex: &ExampleOne) -> Outcome {
    let mut c = Checks::default();
    let conv = &ex.cfg.convergence;
    c.check(
        conv.delta_kl == 0.05 && conv.n_kl_max == 2 && conv.n_max == 10,
        format!("delta {} streak {} max {}", conv.delta_kl, conv.n_kl_max, conv.n_max),
    );
    let it = &ex.first.iterations;
    let Some(last) = it.last() else {
        return Err("empty iteration log".into());
    };
    c.check(
        (0.30..=0.65).contains(&last.accept_rate),
        format!("final acceptance {:.3}", last.accept_rate),
    );
    let (first_kl, last_kl) = (it[0].kl, last.kl);
    c.check(
        last_kl * 10.0 <= first_kl,
        format!("KL {first_kl:.4} -> {last_kl:.4}"),
    );
    let kls: Vec<f64> = it.iter().map(|l| l.kl).collect();
    let (stop, _) = convergence_check(&kls, conv.delta_kl, conv.n_kl_max);
    c.check(stop && it.len() <= conv.n_max, format!("converged {stop} after {} iterations", it.len()));
    c.outcome()
}

fn budget(ex: &ExampleOne) -> Outcome {
    let mut c = Checks::default();
    let it = &ex.first.iterations;
    let n_e = ex.cfg.ilues.ensemble_size as u64;
    let t0 = ex.cfg.ilues.initial_iters as u64;
    let expect = n_e * (1 + t0 + it.len() as u64);
    let logged = it.last().map(|l| l.forward_calls).unwrap_or(0);
    c.check(logged == expect, format!("logged calls {logged}, expected {expect}"));
    c.check(
        ex.first.summary.forward_calls_total == expect,
        format!("summary calls {}", ex.first.summary.forward_calls_total),
    );
    c.check(
        it.windows(2).all(|w| w[0].forward_calls < w[1].forward_calls),
        "calls increase per iteration",
    );
    c.outcome()
}

fn determinism(ex: &ExampleOne) -> Outcome {
    let mut c = Checks::default();
    c.check(ex.first.samples == ex.second.samples, format!("samples.csv {} bytes", ex.first.samples.len()));
    c.check(
        ex.first.iterations_raw == ex.second.iterations_raw,
        format!("iterations.ndjson {} bytes", ex.first.iterations_raw.len()),
    );
    c.outcome()
}

fn example_two() -> Outcome {
    let cfg = example_config(include_str!("../configs/example2.json"))?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let (run_dir, oracle_dir) = (tmp.path().join("run"), tmp.path().join("oracle"));
    let (run, oracle) = std::thread::scope(|s| {
        let h = s.spawn(|| run_example(&cfg, &run_dir));
        let o = run_oracle(&cfg, &oracle_dir, 41);
        (h.join().expect("run thread"), o)
    });
    let (s, o) = (run?.summary, oracle?);
    let mut c = Checks::default();

    let near = |centers: &[Vec<f64>], target: f64| centers.iter().any(|m| (m[2] - target).abs() <= 0.2);
    let oracle_centers: Vec<Vec<f64>> = o.modes.iter().map(|m| m.center.clone()).collect();
    c.check(
        near(&oracle_centers, 1.0) && near(&oracle_centers, -1.0),
        format!("oracle s-modes {:?}", oracle_centers.iter().map(|m| m[2]).collect::<Vec<_>>()),
    );
    let centers: Vec<Vec<f64>> = s.clusters.iter().map(|k| k.center.clone()).collect();
    c.check(
        near(&centers, 1.0) && near(&centers, -1.0),
        format!(
            "sample s-clusters {:?}",
            s.clusters.iter().map(|k| (k.center[2], k.weight)).collect::<Vec<_>>()
        ),
    );
    c.check(s.mean[2].abs() < 0.15, format!("mean s {:.4}", s.mean[2]));
    for d in 0..2 {
        c.check(
            (s.mean[d] - o.mean[d]).abs() <= 0.05,
            format!("mean xi_{} {:.4} vs {:.4}", d + 1, s.mean[d], o.mean[d]),
        );
    }
    // one xi location: every cluster sits over the same xi
    let spread = centers
        .iter()
        .map(|m| (m[0] - s.mean[0]).abs().max((m[1] - s.mean[1]).abs()))
        .fold(0.0, f64::max);
    c.check(spread <= 0.1, format!("xi cluster spread {spread:.3}"));
    c.outcome()
}

fn invariant_suites() -> Outcome {
    let mut c = Checks::default();
    let mut r = rng::stream(10, "acceptance-invariants", 0);

    // mixture adaptation
    let (mut bad_sum, mut bad_pd, mut steps) = (0, 0, 0);
    for recursion in [CovarianceRecursion::Welford, CovarianceRecursion::AsPrinted] {
        for trial in 0..20 {
            let k = 1 + trial % 4;
            let means: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..3).map(|_| 4.0 * standard_normal::<f64, _>(&mut r)).collect())
                .collect();
            let covs = (0..k).map(|_| Matrix::identity(3).scale(0.5 + uniform01::<f64, _>(&mut r))).collect();
            let counts = (0..k).map(|i| 1 + (i as u64 * 7) % 5).collect();
            let mut gm = GaussianMixtureState::new(means, covs, counts, 1e-6)
                .map_err(err)?
                .with_recursion(recursion);
            for _ in 0..300 {
                let theta: Vec<f64> = (0..3).map(|_| 5.0 * standard_normal::<f64, _>(&mut r)).collect();
                gm.adapt(&theta).map_err(err)?;
                steps += 1;
                let total: u64 = gm.counts().iter().sum();
                let wsum: f64 = gm.weights().iter().sum();
                let ratios_ok = gm
                    .weights()
                    .iter()
                    .zip(gm.counts())
                    .all(|(w, &m)| (w - m as f64 / gm.total() as f64).abs() <= 1e-12);
                if total != gm.total() || (wsum - 1.0).abs() > 1e-12 || !ratios_ok {
                    bad_sum += 1;
                }
                if gm.covariances().iter().any(|s| Cholesky::new(s).is_err()) {
                    bad_pd += 1;
                }
            }
        }
    }
    c.check(bad_sum == 0, format!("weight/count invariant broken {bad_sum}/{steps}"));
    c.check(bad_pd == 0, format!("non-PD covariance {bad_pd}/{steps}"));

    // Lloyd iterations
    let mut rises = 0;
    for trial in 0..30 {
        let data: Vec<Vec<f64>> = (0..120)
            .map(|i| {
                let shift = (i % 3) as f64 * 3.0;
                vec![shift + standard_normal::<f64, _>(&mut r), standard_normal::<f64, _>(&mut r)]
            })
            .collect();
        let k = 2 + trial % 4;
        let (_, hist) = lloyd(&data, data[..k].to_vec()).map_err(err)?;
        rises += hist.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    }
    c.check(rises == 0, format!("WCSS increases {rises}"));

    // KDE normalization
    let normal = |n: usize, mu: f64, r: &mut rng::StreamRng| -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![mu + standard_normal::<f64, _>(r)]).collect()
    };
    let kde = DensityEstimate::fit(&normal(300, 0.5, &mut r), &[6.0]).map_err(err)?;
    let h = kde.bandwidth()[0];
    let (lo, hi, n) = (-3.0 - 5.0 * h, 3.0 + 5.0 * h, 4000);
    let dx = (hi - lo) / n as f64;
    let mut total1 = 0.0;
    for i in 0..n {
        total1 += kde.log_pdf(&[lo + (i as f64 + 0.5) * dx]).map_err(err)?.exp() * dx;
    }
    let s2: Vec<Vec<f64>> = (0..200)
        .map(|_| vec![0.3 * standard_normal::<f64, _>(&mut r), 0.5 * standard_normal::<f64, _>(&mut r)])
        .collect();
    let kde2 = DensityEstimate::fit(&s2, &[4.0, 4.0]).map_err(err)?;
    let (lo, hi, n) = (-3.0, 3.0, 300);
    let d = (hi - lo) / n as f64;
    let mut total2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = [lo + (i as f64 + 0.5) * d, lo + (j as f64 + 0.5) * d];
            total2 += kde2.log_pdf(&p).map_err(err)?.exp() * d * d;
        }
    }
    c.check(
        (total1 - 1.0).abs() < 0.01 && (total2 - 1.0).abs() < 0.01,
        format!("KDE mass {total1:.4} (1D) {total2:.4} (2D)"),
    );

    // KL estimator
    let samples = normal(500, 0.0, &mut r);
    let p = DensityEstimate::fit(&samples, &[10.0]).map_err(err)?;
    let q = DensityEstimate::fit(&samples, &[10.0]).map_err(err)?;
    let same = kl_divergence_estimate(&p, &q, None).map_err(err)?;
    c.check(same == 0.0, format!("KL(p,p) {same}"));
    let p = DensityEstimate::fit(&normal(10_000, 0.0, &mut r), &[10.0]).map_err(err)?;
    let q = DensityEstimate::fit(&normal(10_000, 1.0, &mut r), &[10.0]).map_err(err)?;
    let kl = kl_divergence_estimate(&p, &q, None).map_err(err)?;
    c.check((kl - 0.5).abs() <= 0.05, format!("Gaussian KL {kl:.4} vs 0.5"));
    c.outcome()
}

const NAMES: [&str; 10] = [
    "GP correctness",
    "forward-solver fidelity",
    "ES/ILUES consistency",
    "sampler validity",
    "Example 1 end to end",
    "Example 1 diagnostics",
    "Example 2 end to end",
    "budget accounting",
    "determinism",
    "unit invariant suites",
];

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| picked.is_empty() || picked.contains(&n);
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut record = |n: usize, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {tag} {} ({secs:.1}s): {detail}", NAMES[n - 1]);
        results.push((n, outcome, secs));
    };

    let cheap: [(usize, fn() -> Outcome); 5] = [
        (1, gp_correctness),
        (2, forward_fidelity),
        (3, ensemble_consistency),
        (4, sampler_validity),
        (10, invariant_suites),
    ];
    for (n, f) in cheap {
        if wanted(n) {
            let t = Instant::now();
            record(n, t, f());
        }
    }
    if [5, 6, 8, 9].iter().any(|&n| wanted(n)) {
        let t = Instant::now();
        match example_one() {
            Ok(ex) => {
                let checks: [(usize, fn(&ExampleOne) -> Outcome); 4] = [
                    (5, example_one_end_to_end),
                    (6, example_one_diagnostics),
                    (8, budget),
                    (9, determinism),
                ];
                for (n, f) in checks {
                    if wanted(n) {
                        record(n, t, f(&ex));
                    }
                }
            }
            Err(e) => {
                for n in [5, 6, 8, 9] {
                    if wanted(n) {
                        record(n, t, Err(format!("run failed: {e}")));
                    }
                }
            }
        }
    }
    if wanted(7) {
        let t = Instant::now();
        record(7, t, example_two());
    }

    let failed: Vec<usize> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

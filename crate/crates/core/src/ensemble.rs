//! Ensemble smoother and the iterative local updating ensemble smoother.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cross_covariance, Cholesky, Matrix};
use crate::pipeline::EvaluationArchive;
use crate::problem::ProblemSpec;
use crate::rng::{self, standard_normal};
use crate::scalar::Real;

const THETA_REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    pub members: Vec<Vec<T>>,
    pub predictions: Vec<Vec<T>>,
    pub log_posts: Vec<T>,
    pub iteration: usize,
}

impl<T: Real> Ensemble<T> {
    /// Runs the forward model on every member (in parallel).
    pub fn evaluate(spec: &ProblemSpec<T>, members: Vec<Vec<T>>, iteration: usize) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::input("an ensemble needs at least 2 members"));
        }
        let evals = members
            .par_iter()
            .map(|m| spec.evaluate(m))
            .collect::<Result<Vec<_>>>()?;
        let (predictions, log_posts) = evals.into_iter().map(|e| (e.prediction, e.log_post)).unzip();
        Ok(Self {
            members,
            predictions,
            log_posts,
            iteration,
        })
    }

    pub fn from_prior<R: Rng + ?Sized>(spec: &ProblemSpec<T>, size: usize, rng: &mut R) -> Result<Self> {
        let members = (0..size).map(|_| spec.prior().sample(rng)).collect();
        Self::evaluate(spec, members, 0)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalUpdateConfig<T> {
    /// Local fraction; the local ensemble has `⌈α N_e⌉` members.
    pub alpha: T,
}

impl<T: Real> LocalUpdateConfig<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::input("alpha must lie in (0, 1]"));
        }
        Ok(Self { alpha })
    }

    pub fn local_size(&self, n_e: usize) -> Result<usize> {
        let n_l = (self.alpha * T::from_usize_lossy(n_e)).ceil().to_usize().unwrap_or(0).min(n_e);
        if n_l < 2 {
            return Err(Error::input(format!("local ensemble size {n_l} < 2 (alpha too small for N_e = {n_e})")));
        }
        Ok(n_l)
    }
}

/// Kalman-type update `θ_j + Σ_ΘD (Σ_DD + Σ_η)⁻¹ (d̃_j − G_j)` with empirical
/// covariances over the given members.
pub fn kalman_update<T: Real>(
    members: &[Vec<T>],
    predictions: &[Vec<T>],
    perturbed: &[Vec<T>],
    noise_cov: &Matrix<T>,
) -> Result<Vec<Vec<T>>> {
    let n = members.len();
    if n < 2 {
        return Err(Error::input("ES update needs at least 2 members"));
    }
    check_dim(n, predictions.len())?;
    check_dim(n, perturbed.len())?;
    let d = noise_cov.rows();
    for (p, q) in predictions.iter().zip(perturbed) {
        check_dim(d, p.len())?;
        check_dim(d, q.len())?;
    }
    let c_td = cross_covariance(members, predictions);
    let c_dd = cross_covariance(predictions, predictions).add(noise_cov)?;
    let chol = Cholesky::new(&c_dd).map_err(|_| Error::Solver("Σ_DD + Σ_η is not positive definite".into()))?;
    members
        .iter()
        .zip(predictions.iter().zip(perturbed))
        .map(|(theta, (g, dt))| {
            let innov: Vec<T> = dt.iter().zip(g).map(|(&a, &b)| a - b).collect();
            let step = c_td.matvec(&chol.solve(&innov))?;
            Ok(theta.iter().zip(step).map(|(&x, s)| x + s).collect())
        })
        .collect()
}

/// `d̃ ~ N(d_obs, Σ_η)`.
pub fn perturb_observations<T: Real, R: Rng + ?Sized>(spec: &ProblemSpec<T>, count: usize, rng: &mut R) -> Vec<Vec<T>> {
    (0..count)
        .map(|_| {
            let z: Vec<T> = (0..spec.dim_data()).map(|_| standard_normal(rng)).collect();
            let e = spec.noise_chol().lower_mul(&z);
            spec.d_obs().iter().zip(e).map(|(&d, x)| d + x).collect()
        })
        .collect()
}

fn clip_all<T: Real>(spec: &ProblemSpec<T>, mut members: Vec<Vec<T>>) -> Vec<Vec<T>> {
    members.iter_mut().for_each(|m| spec.prior().clip(m));
    members
}

/// Global ES step; updated members are clipped to the prior box and evaluated.
pub fn es_update<T: Real, R: Rng + ?Sized>(e: &Ensemble<T>, spec: &ProblemSpec<T>, rng: &mut R) -> Result<Ensemble<T>> {
    let perturbed = perturb_observations(spec, e.len(), rng);
    let updated = kalman_update(&e.members, &e.predictions, &perturbed, spec.noise_cov())?;
    Ensemble::evaluate(spec, clip_all(spec, updated), e.iteration + 1)
}

/// Scores `J(θ_i) = J₁/J₁ᵐᵃˣ + J₂/J₂ᵐᵃˣ` of every member relative to member `j`.
pub struct JMetric<T: Real> {
    j1: Vec<T>,
    j1_max: T,
    theta_chol: Cholesky<T>,
}

impl<T: Real> JMetric<T> {
    pub fn new(e: &Ensemble<T>, spec: &ProblemSpec<T>) -> Result<Self> {
        if e.len() < 2 {
            return Err(Error::input("J scores need at least 2 members"));
        }
        let j1: Vec<T> = e.predictions.iter().map(|g| spec.misfit(g)).collect();
        let j1_max = j1.iter().copied().fold(T::zero(), T::max);
        let mut c = cross_covariance(&e.members, &e.members);
        let m = T::from_usize_lossy(c.rows());
        let mut reg = T::lit(THETA_REGULARIZATION) * c.trace() / m;
        if !(reg > T::zero()) {
            reg = T::lit(THETA_REGULARIZATION);
        }
        c.add_diagonal(reg);
        let theta_chol = Cholesky::new(&c).map_err(|_| Error::Solver("Σ_ΘΘ not positive definite".into()))?;
        Ok(Self { j1, j1_max, theta_chol })
    }

    pub fn scores(&self, e: &Ensemble<T>, j: usize) -> Result<Vec<T>> {
        if j >= e.len() {
            return Err(Error::input(format!("member index {j} out of range")));
        }
        let anchor = &e.members[j];
        let j2: Vec<T> = e
            .members
            .iter()
            .map(|m| {
                let r: Vec<T> = m.iter().zip(anchor).map(|(&a, &b)| a - b).collect();
                self.theta_chol.quadratic_form(&r)
            })
            .collect();
        let j2_max = j2.iter().copied().fold(T::zero(), T::max);
        let ratio = |v: T, max: T| if max > T::zero() { v / max } else { T::zero() };
        Ok(self
            .j1
            .iter()
            .zip(&j2)
            .map(|(&a, &b)| ratio(a, self.j1_max) + ratio(b, j2_max))
            .collect())
    }
}

pub fn j_scores<T: Real>(e: &Ensemble<T>, spec: &ProblemSpec<T>, j: usize) -> Result<Vec<T>> {
    JMetric::new(e, spec)?.scores(e, j)
}

/// Indices of the `n_l` smallest scores, ties by index.
pub fn smallest_indices<T: Real>(scores: &[T], n_l: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(n_l);
    idx
}

/// Updated local ensemble (unclipped), in the order of `indices`.
pub fn local_candidates<T: Real>(
    e: &Ensemble<T>,
    noise_cov: &Matrix<T>,
    indices: &[usize],
    perturbed: &[Vec<T>],
) -> Result<Vec<Vec<T>>> {
    let members: Vec<Vec<T>> = indices.iter().map(|&i| e.members[i].clone()).collect();
    let preds: Vec<Vec<T>> = indices.iter().map(|&i| e.predictions[i].clone()).collect();
    kalman_update(&members, &preds, perturbed, noise_cov)
}

/// One synchronous ILUES step. Member `j` draws from its own stream derived
/// from `step_seed`.
pub fn ilues_step<T: Real>(
    e: &Ensemble<T>,
    spec: &ProblemSpec<T>,
    cfg: &LocalUpdateConfig<T>,
    step_seed: u64,
) -> Result<Ensemble<T>> {
    let n_l = cfg.local_size(e.len())?;
    let metric = JMetric::new(e, spec)?;
    let next = (0..e.len())
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(step_seed, "ilues-member", j as u64);
            let local = smallest_indices(&metric.scores(e, j)?, n_l);
            let perturbed = perturb_observations(spec, n_l, &mut rng);
            let mut candidates = local_candidates(e, spec.noise_cov(), &local, &perturbed)?;
            let pick = rng.random_range(0..n_l);
            let mut chosen = candidates.swap_remove(pick);
            spec.prior().clip(&mut chosen);
            Ok(chosen)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::evaluate(spec, next, e.iteration + 1)
}

/// Prior draw plus `n_iter` ILUES steps; the archive holds every generation.
pub fn ilues_run<T: Real>(
    spec: &ProblemSpec<T>,
    n_e: usize,
    n_iter: usize,
    cfg: &LocalUpdateConfig<T>,
    seed: u64,
) -> Result<(Ensemble<T>, EvaluationArchive<T>)> {
    if n_iter == 0 {
        return Err(Error::input("ILUES needs at least one iteration"));
    }
    let mut archive = EvaluationArchive::new(spec.dim_theta());
    let mut e = Ensemble::from_prior(spec, n_e, &mut rng::stream(seed, "ilues-init", 0))?;
    archive.push_ensemble(&e)?;
    for t in 0..n_iter {
        e = ilues_step(&e, spec, cfg, rng::stream_seed(seed, "ilues", t as u64))?;
        archive.push_ensemble(&e)?;
    }
    Ok((e, archive))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::BimodalToyModel;
    use crate::mixture::kmeans;
    use crate::problem::{BoxPrior, ForwardModel};
    use std::sync::Arc;

    struct Identity(usize);

    impl ForwardModel<f64> for Identity {
        fn dim_theta(&self) -> usize {
            self.0
        }
        fn dim_data(&self) -> usize {
            self.0
        }
        fn observe(&self, theta: &[f64]) -> Result<Vec<f64>> {
            Ok(theta.to_vec())
        }
    }

    fn linear_spec(lo: f64, hi: f64, d_obs: f64, noise: f64) -> ProblemSpec<f64> {
        ProblemSpec::new(
            BoxPrior::new(vec![lo], vec![hi]).unwrap(),
            Matrix::from_diagonal(&[noise]),
            Arc::new(Identity(1)),
            vec![d_obs],
        )
        .unwrap()
    }

    fn ens(spec: &ProblemSpec<f64>, xs: &[f64]) -> Ensemble<f64> {
        Ensemble::evaluate(spec, xs.iter().map(|&x| vec![x]).collect(), 0).unwrap()
    }

    #[test]
    fn es_hand_case() {
        // Σ_ΘD = Σ_DD = 2, gain 2/3
        let members: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0]];
        let out = kalman_update(&members, &members, &[vec![1.0], vec![1.0]], &Matrix::identity(1)).unwrap();
        assert!((out[0][0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((out[1][0] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn es_limits() {
        let members: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0], vec![-1.0]];
        let d = vec![vec![5.0]; 3];
        let out = kalman_update(&members, &members, &d, &Matrix::from_diagonal(&[1e12])).unwrap();
        for (a, b) in out.iter().zip(&members) {
            assert!((a[0] - b[0]).abs() < 1e-6);
        }
        let same = vec![vec![0.7]; 3];
        let out = kalman_update(&same, &same, &[vec![3.0], vec![-2.0], vec![9.0]], &Matrix::identity(1)).unwrap();
        assert!(out.iter().all(|m| m[0] == 0.7));
    }

    #[test]
    fn es_update_counts_calls_and_clips() {
        let spec = linear_spec(-1.0, 1.0, 5.0, 0.01);
        let e = ens(&spec, &[-0.5, 0.0, 0.5, 0.9]);
        let before = spec.forward_calls();
        let next = es_update(&e, &spec, &mut rng::stream(1, "es", 0)).unwrap();
        assert_eq!(spec.forward_calls() - before, 4);
        assert_eq!(next.iteration, 1);
        assert!(next.members.iter().all(|m| m[0] <= 1.0 && m[0] >= -1.0));
        assert!(next.members.iter().any(|m| m[0] == 1.0));
    }

    #[test]
    fn j_score_hand_case() {
        let spec = linear_spec(-10.0, 10.0, 0.0, 1.0);
        let e = ens(&spec, &[0.0, 1.0, 2.0]);
        let s = j_scores(&e, &spec, 0).unwrap();
        let expect = [0.0, 0.5, 2.0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{s:?}");
        }
        // self score is the normalized misfit alone
        let s2 = j_scores(&e, &spec, 2).unwrap();
        assert!((s2[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn j_scores_invariant_to_noise_scale() {
        let spec = ProblemSpec::new(
            BoxPrior::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap(),
            Matrix::from_diagonal(&[0.3, 0.7]),
            Arc::new(Identity(2)),
            vec![0.4, -1.0],
        )
        .unwrap();
        let mut r = rng::stream(3, "j", 0);
        let e = Ensemble::from_prior(&spec, 12, &mut r).unwrap();
        let scaled = spec.with_noise_cov(Matrix::from_diagonal(&[3.0, 7.0])).unwrap();
        for j in [0, 5, 11] {
            let a = j_scores(&e, &spec, j).unwrap();
            let b = j_scores(&e, &scaled, j).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn j_zero_maximum_guard() {
        let spec = linear_spec(-10.0, 10.0, 1.0, 1.0);
        let e = Ensemble::evaluate(&spec, vec![vec![1.0]; 3], 0).unwrap();
        assert_eq!(j_scores(&e, &spec, 1).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn smallest_breaks_ties_by_index() {
        assert_eq!(smallest_indices(&[1.0, 0.5, 0.5, 0.2], 3), vec![3, 1, 2]);
    }

    #[test]
    fn full_local_ensemble_matches_es() {
        let spec = linear_spec(-10.0, 10.0, 0.3, 0.5);
        let e = ens(&spec, &[-1.0, 0.0, 0.4, 2.0, 3.0]);
        let cfg = LocalUpdateConfig::new(1.0).unwrap();
        let n_l = cfg.local_size(e.len()).unwrap();
        assert_eq!(n_l, 5);
        let d = perturb_observations(&spec, 5, &mut rng::stream(4, "d", 0));
        let scores = j_scores(&e, &spec, 2).unwrap();
        let local = smallest_indices(&scores, n_l);
        let cand = local_candidates(&e, spec.noise_cov(), &local, &d).unwrap();
        let ordered_members: Vec<Vec<f64>> = local.iter().map(|&i| e.members[i].clone()).collect();
        let es = kalman_update(&ordered_members, &ordered_members, &d, spec.noise_cov()).unwrap();
        assert_eq!(cand, es);
        // as sets, the local update over all members is the global ES update
        let global = kalman_update(&e.members, &e.predictions, &reorder_back(&d, &local), spec.noise_cov()).unwrap();
        let mut a: Vec<f64> = cand.iter().map(|v| v[0]).collect();
        let mut b: Vec<f64> = global.iter().map(|v| v[0]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn reorder_back(d: &[Vec<f64>], order: &[usize]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![]; d.len()];
        for (k, &i) in order.iter().enumerate() {
            out[i] = d[k].clone();
        }
        out
    }

    #[test]
    fn ilues_step_is_reproducible() {
        let spec = linear_spec(-3.0, 3.0, 0.5, 0.2);
        let e = ens(&spec, &[-1.0, 1.5]);
        let cfg = LocalUpdateConfig::new(1.0).unwrap();
        let a = ilues_step(&e, &spec, &cfg, 77).unwrap();
        let b = ilues_step(&e, &spec, &cfg, 77).unwrap();
        assert_eq!(a, b);
        assert!(LocalUpdateConfig::new(0.1).unwrap().local_size(10).is_err());
        assert!(LocalUpdateConfig::new(1.5).is_err());
    }

    #[test]
    fn ilues_run_archive_counts() {
        let spec = linear_spec(-3.0, 3.0, 0.5, 0.2);
        let cfg = LocalUpdateConfig::new(0.25).unwrap();
        let (e, archive) = ilues_run(&spec, 80, 1, &cfg, 5).unwrap();
        assert_eq!(e.len(), 80);
        assert_eq!(archive.len(), 160);
        assert_eq!(spec.forward_calls(), 160);
        assert!(archive.rows().iter().all(|r| r.log_post.is_finite()));
    }

    #[test]
    fn linear_gaussian_matches_kalman_posterior() {
        // prior U(-2, 4) has mean 1 and variance 3; the ES is exact for the
        // Gaussian with those moments
        let (noise, d_obs) = (0.5, 2.5);
        let spec = linear_spec(-2.0, 4.0, d_obs, noise);
        let cfg = LocalUpdateConfig::new(1.0).unwrap();
        let (e, _) = ilues_run(&spec, 2000, 1, &cfg, 11).unwrap();
        let (m0, v0) = (1.0, 3.0);
        let kalman = (m0 * noise + d_obs * v0) / (v0 + noise);
        let mean = e.members.iter().map(|m| m[0]).sum::<f64>() / e.len() as f64;
        assert!((mean - kalman).abs() < 0.05 * kalman.abs(), "{mean} vs {kalman}");
    }

    #[test]
    fn local_updates_keep_both_modes() {
        let toy = BimodalToyModel::<f64>::symmetric(2, 2.0, 0.4).unwrap();
        let spec = ProblemSpec::new(
            BoxPrior::new(vec![-4.0, -4.0], vec![4.0, 4.0]).unwrap(),
            toy.cov().clone(),
            Arc::new(toy.clone()),
            toy.d_obs(),
        )
        .unwrap();
        let mut r = rng::stream(8, "blobs", 0);
        let members: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let c = if i % 2 == 0 { -2.0 } else { 2.0 };
                vec![c + 0.4 * standard_normal::<f64, _>(&mut r), 0.4 * standard_normal::<f64, _>(&mut r)]
            })
            .collect();
        let e = Ensemble::evaluate(&spec, members, 0).unwrap();
        let initial = kmeans(&e.members, 2, &mut r, 3).unwrap();
        let d0 = (initial.centroids[0][0] - initial.centroids[1][0]).abs();
        let next = ilues_step(&e, &spec, &LocalUpdateConfig::new(0.2).unwrap(), 3).unwrap();
        let after = kmeans(&next.members, 2, &mut r, 3).unwrap();
        let d1 = (after.centroids[0][0] - after.centroids[1][0]).abs();
        assert!(d1 >= 0.5 * d0, "{d0} -> {d1}");
        let left = next.members.iter().filter(|m| toy.side(m) < 0.0).count();
        assert!(left >= 10 && left <= 50, "{left}");
    }
}

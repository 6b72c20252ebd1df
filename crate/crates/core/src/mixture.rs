//! K-means clustering with elbow selection of `K`, and the adaptive Gaussian
//! mixture used as the Metropolis proposal.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cross_covariance, Cholesky, Matrix};
use crate::rng::{standard_normal, uniform01};
use crate::scalar::{log_sum_exp, squared_distance, Real};

const MAX_LLOYD_ITERS: usize = 100;
/// Restarts used by [`elbow_select_k`] for each candidate `K`.
pub const ELBOW_RESTARTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult<T> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    pub wcss: T,
}

impl<T: Real> ClusteringResult<T> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

fn nearest<T: Real>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (k, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn wcss<T: Real>(points: &[Vec<T>], assignments: &[usize], centroids: &[Vec<T>]) -> T {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

/// k-means++ seeding.
fn seed_centroids<T: Real, R: Rng + ?Sized>(points: &[Vec<T>], k: usize, rng: &mut R) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<T> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: T = d2.iter().copied().sum();
        let next = if total > T::zero() {
            let target = uniform01::<T, _>(rng) * total;
            let mut acc = T::zero();
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc = acc + d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            let nd = squared_distance(p, &centroids[centroids.len() - 1]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn recompute_centroids<T: Real>(points: &[Vec<T>], assignments: &[usize], k: usize) -> (Vec<Vec<T>>, Vec<usize>) {
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p) {
            *s = *s + x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            let cf = T::from_usize_lossy(c);
            s.iter_mut().for_each(|v| *v = *v / cf);
        }
    }
    (sums, counts)
}

/// Lloyd iterations from given centroids. Returns the result and the WCSS
/// after every iteration.
pub fn lloyd<T: Real>(points: &[Vec<T>], init: Vec<Vec<T>>) -> Result<(ClusteringResult<T>, Vec<T>)> {
    let k = init.len();
    if k == 0 || points.len() < k {
        return Err(Error::input(format!(
            "k-means needs 1 <= K <= number of points (K = {k}, points = {})",
            points.len()
        )));
    }
    let dim = points[0].len();
    for p in points.iter().chain(&init) {
        check_dim(dim, p.len())?;
    }
    let mut centroids = init;
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    for iter in 0..MAX_LLOYD_ITERS {
        let (mut next, mut counts) = recompute_centroids(points, &assignments, k);
        // reseed empty clusters from the point farthest from its centroid
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = points
                .iter()
                .zip(&assignments)
                .enumerate()
                .filter(|(_, (_, &a))| counts[a] > 1)
                .map(|(i, (p, &a))| (i, squared_distance(p, &next[a])))
                .fold(None, |best: Option<(usize, T)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            let Some((idx, _)) = far else { break };
            assignments[idx] = empty;
            let recomputed = recompute_centroids(points, &assignments, k);
            next = recomputed.0;
            counts = recomputed.1;
        }
        centroids = next;
        let reassigned: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = reassigned != assignments;
        // keep a point in a cluster that would otherwise empty out
        let (_, counts_after) = recompute_centroids(points, &reassigned, k);
        if counts_after.iter().all(|&c| c > 0) {
            assignments = reassigned;
        }
        history.push(wcss(points, &assignments, &centroids));
        if !changed && iter > 0 {
            break;
        }
    }
    let (centroids, _) = recompute_centroids(points, &assignments, k);
    let total = wcss(points, &assignments, &centroids);
    if history.last().is_none_or(|&h| total < h) {
        history.push(total);
    }
    Ok((
        ClusteringResult {
            assignments,
            centroids,
            wcss: total,
        },
        history,
    ))
}

/// Best of `restarts` k-means++ seeded Lloyd runs.
pub fn kmeans<T: Real, R: Rng + ?Sized>(
    points: &[Vec<T>],
    k: usize,
    rng: &mut R,
    restarts: usize,
) -> Result<ClusteringResult<T>> {
    if k == 0 || k > points.len() {
        return Err(Error::input(format!(
            "k-means needs 1 <= K <= number of points (K = {k}, points = {})",
            points.len()
        )));
    }
    let mut best: Option<ClusteringResult<T>> = None;
    for _ in 0..restarts.max(1) {
        let (res, _) = lloyd(points, seed_centroids(points, k, rng))?;
        if best.as_ref().is_none_or(|b| res.wcss < b.wcss) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// WCSS for `K = 1..=k_max`.
pub fn wcss_curve<T: Real, R: Rng + ?Sized>(points: &[Vec<T>], k_max: usize, rng: &mut R) -> Result<Vec<T>> {
    (1..=k_max.min(points.len()))
        .map(|k| kmeans(points, k, rng, ELBOW_RESTARTS).map(|c| c.wcss))
        .collect()
}

/// `K` whose `(K, WCSS_K)` lies farthest from the chord between the curve's
/// endpoints, with both axes scaled to `[0, 1]`.
pub fn elbow_from_curve<T: Real>(curve: &[T], points: &[Vec<T>]) -> usize {
    let k_max = curve.len();
    if k_max <= 2 {
        return if k_max == 2 && curve[1] < curve[0] { 2 } else { 1 };
    }
    let w1 = curve[0];
    let n = T::from_usize_lossy(points.len().max(1));
    let scale = points.iter().map(|p| p.iter().map(|&x| x * x).sum::<T>()).sum::<T>() / n;
    if w1 <= T::lit(1e-10) * n * (T::one() + scale) {
        return 1;
    }
    let x = |k: usize| T::from_usize_lossy(k) / T::from_usize_lossy(k_max - 1);
    let (x1, y1) = (x(0), T::one());
    let (x2, y2) = (x(k_max - 1), curve[k_max - 1] / w1);
    let (dx, dy) = (x2 - x1, y2 - y1);
    let norm = (dx * dx + dy * dy).sqrt();
    let mut best = (0usize, T::neg_infinity());
    for (i, &w) in curve.iter().enumerate() {
        let (px, py) = (x(i), w / w1);
        let d = (dy * px - dx * py + x2 * y1 - y2 * x1).abs() / norm;
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0 + 1
}

pub fn elbow_select_k<T: Real, R: Rng + ?Sized>(points: &[Vec<T>], k_max: usize, rng: &mut R) -> Result<usize> {
    if k_max == 0 {
        return Err(Error::input("K_max must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::input("elbow selection needs points"));
    }
    let curve = wcss_curve(points, k_max, rng)?;
    Ok(elbow_from_curve(&curve, points))
}

/// How a component covariance absorbs a newly assigned sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceRecursion {
    /// `Σ ← (1/m)((θ−μ_new)(θ−μ_new)ᵀ/m + εI) + (m−2)/(m−1) Σ`.
    AsPrinted,
    /// Running sample covariance: `Σ ← (m−2)/(m−1) Σ + (1/m)((θ−μ_old)(θ−μ_old)ᵀ + εI)`.
    #[default]
    Welford,
}

#[derive(Debug, Clone)]
pub struct GaussianMixtureState<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    covs: Vec<Matrix<T>>,
    chols: Vec<Cholesky<T>>,
    log_norms: Vec<T>,
    counts: Vec<u64>,
    total: u64,
    epsilon: T,
    recursion: CovarianceRecursion,
    degraded: bool,
}

fn gaussian_log_norm<T: Real>(chol: &Cholesky<T>) -> T {
    let d = T::from_usize_lossy(chol.dim());
    -T::lit(0.5) * (d * T::lit((2.0 * std::f64::consts::PI).ln()) + chol.log_det())
}

impl<T: Real> GaussianMixtureState<T> {
    /// Weights are `counts / Σ counts`.
    pub fn new(
        means: Vec<Vec<T>>,
        covs: Vec<Matrix<T>>,
        counts: Vec<u64>,
        epsilon: T,
    ) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::input("mixture needs at least one component"));
        }
        check_dim(k, covs.len())?;
        check_dim(k, counts.len())?;
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::input("mixture component counts must be positive"));
        }
        if !(epsilon > T::zero()) {
            return Err(Error::input("mixture epsilon must be positive"));
        }
        let dim = means[0].len();
        let mut chols = Vec::with_capacity(k);
        for (m, c) in means.iter().zip(&covs) {
            check_dim(dim, m.len())?;
            check_dim(dim, c.rows())?;
            chols.push(Cholesky::new(c).map_err(|_| Error::input("mixture covariance not SPD"))?);
        }
        let total: u64 = counts.iter().sum();
        let tf = T::lit(total as f64);
        Ok(Self {
            weights: counts.iter().map(|&c| T::lit(c as f64) / tf).collect(),
            log_norms: chols.iter().map(gaussian_log_norm).collect(),
            means,
            covs,
            chols,
            counts,
            total,
            epsilon,
            recursion: CovarianceRecursion::default(),
            degraded: false,
        })
    }

    /// Explicit weights; counts stay at one per component.
    pub fn with_weights(means: Vec<Vec<T>>, covs: Vec<Matrix<T>>, weights: Vec<T>, epsilon: T) -> Result<Self> {
        check_dim(means.len(), weights.len())?;
        let sum: T = weights.iter().copied().sum();
        if weights.iter().any(|w| *w < T::zero()) || (sum - T::one()).abs() > T::lit(1e-12) {
            return Err(Error::input("mixture weights must be nonnegative and sum to 1"));
        }
        let k = means.len();
        let mut gm = Self::new(means, covs, vec![1; k], epsilon)?;
        gm.weights = weights;
        Ok(gm)
    }

    /// Initial proposal from a clustering: per-cluster sample covariance plus
    /// `εI`, counts equal to cluster sizes. `ε = eps_rel × mean diagonal` of
    /// the cluster covariances; singleton clusters get the global
    /// per-coordinate variance on the diagonal.
    pub fn from_clustering(points: &[Vec<T>], clustering: &ClusteringResult<T>, eps_rel: T) -> Result<Self> {
        check_dim(points.len(), clustering.assignments.len())?;
        let k = clustering.k();
        let dim = points.first().map_or(0, Vec::len);
        let mut groups: Vec<Vec<Vec<T>>> = vec![Vec::new(); k];
        for (p, &a) in points.iter().zip(&clustering.assignments) {
            groups[a].push(p.clone());
        }
        let global = cross_covariance(points, points);
        let global_var = (global.trace() / T::from_usize_lossy(dim.max(1))).max(T::lit(1e-300));
        let raw: Vec<Matrix<T>> = groups
            .iter()
            .map(|g| {
                if g.len() >= 2 {
                    cross_covariance(g, g)
                } else {
                    Matrix::identity(dim).scale(global_var)
                }
            })
            .collect();
        let mean_diag = raw.iter().map(Matrix::trace).sum::<T>() / T::from_usize_lossy(k * dim.max(1));
        let mut epsilon = eps_rel * mean_diag;
        if !(epsilon > T::zero()) {
            epsilon = eps_rel * global_var;
        }
        let covs = raw
            .into_iter()
            .map(|mut c| {
                c.add_diagonal(epsilon);
                c
            })
            .collect();
        let counts = groups.iter().map(|g| g.len().max(1) as u64).collect();
        Self::new(clustering.centroids.clone(), covs, counts, epsilon)
    }

    pub fn with_recursion(mut self, recursion: CovarianceRecursion) -> Self {
        self.recursion = recursion;
        self
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix<T>] {
        &self.covs
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn recursion(&self) -> CovarianceRecursion {
        self.recursion
    }

    /// Set once an update produced a non-SPD covariance that was discarded.
    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    /// `log w_k + log N(θ | μ_k, Σ_k)`.
    pub fn component_log_pdf(&self, k: usize, theta: &[T]) -> T {
        if self.weights[k] <= T::zero() {
            return T::neg_infinity();
        }
        let r: Vec<T> = theta.iter().zip(&self.means[k]).map(|(&x, &m)| x - m).collect();
        self.weights[k].ln() + self.log_norms[k] - T::lit(0.5) * self.chols[k].quadratic_form(&r)
    }

    pub fn log_pdf(&self, theta: &[T]) -> Result<T> {
        check_dim(self.dim(), theta.len())?;
        let terms: Vec<T> = (0..self.k()).map(|k| self.component_log_pdf(k, theta)).collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let u: T = uniform01(rng);
        let mut acc = T::zero();
        let mut k = self.k() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc = acc + w;
            if u < acc && w > T::zero() {
                k = i;
                break;
            }
        }
        while self.weights[k] <= T::zero() && k > 0 {
            k -= 1;
        }
        let z: Vec<T> = (0..self.dim()).map(|_| standard_normal(rng)).collect();
        let lz = self.chols[k].lower_mul(&z);
        self.means[k].iter().zip(lz).map(|(&m, d)| m + d).collect()
    }

    /// Component with the largest responsibility; ties go to the lower index.
    pub fn assign_mode(&self, theta: &[T]) -> Result<usize> {
        check_dim(self.dim(), theta.len())?;
        let mut best = (0, T::neg_infinity());
        for k in 0..self.k() {
            let v = self.component_log_pdf(k, theta);
            if v > best.1 {
                best = (k, v);
            }
        }
        Ok(best.0)
    }

    /// Assimilates one chain state into the component that owns it.
    pub fn adapt(&mut self, theta: &[T]) -> Result<usize> {
        let i = self.assign_mode(theta)?;
        self.counts[i] += 1;
        self.total += 1;
        let m = self.counts[i];
        let mf = T::lit(m as f64);
        let old_mean = self.means[i].clone();
        let new_mean: Vec<T> = theta
            .iter()
            .zip(&old_mean)
            .map(|(&x, &mu)| x / mf + (mf - T::one()) / mf * mu)
            .collect();
        let tf = T::lit(self.total as f64);
        for (w, &c) in self.weights.iter_mut().zip(&self.counts) {
            *w = T::lit(c as f64) / tf;
        }
        self.means[i] = new_mean.clone();
        if m >= 2 {
            let dim = self.dim();
            let shrink = (mf - T::lit(2.0)) / (mf - T::one());
            let (dev, outer_scale) = match self.recursion {
                CovarianceRecursion::AsPrinted => (
                    theta.iter().zip(&new_mean).map(|(&x, &mu)| x - mu).collect::<Vec<T>>(),
                    T::one() / (mf * mf),
                ),
                CovarianceRecursion::Welford => (
                    theta.iter().zip(&old_mean).map(|(&x, &mu)| x - mu).collect::<Vec<T>>(),
                    T::one() / mf,
                ),
            };
            let eps_term = self.epsilon / mf;
            let prev = &self.covs[i];
            let cov = Matrix::from_fn(dim, dim, |a, b| {
                let e = if a == b { eps_term } else { T::zero() };
                outer_scale * dev[a] * dev[b] + e + shrink * prev[(a, b)]
            });
            match Cholesky::new(&cov) {
                Ok(ch) => {
                    self.log_norms[i] = gaussian_log_norm(&ch);
                    self.chols[i] = ch;
                    self.covs[i] = cov;
                }
                Err(_) => self.degraded = true,
            }
        }
        Ok(i)
    }
}

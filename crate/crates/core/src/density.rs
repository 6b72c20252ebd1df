//! Gaussian product-kernel density estimates over sample sets and a
//! Monte-Carlo KL divergence between two estimates.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Log-densities are floored this many nats below the best support sample.
pub const LOG_DENSITY_FLOOR_DEPTH: f64 = 50.0;
/// Bandwidth for a coordinate without spread, relative to the prior width.
const DEGENERATE_BANDWIDTH: f64 = 1e-6;
pub const MIN_KL_SAMPLES: usize = 100;

#[derive(Debug, Clone)]
pub struct DensityEstimate<T> {
    samples: Vec<Vec<T>>,
    inv_bandwidth: Vec<T>,
    bandwidth: Vec<T>,
    log_norm: T,
    floor: T,
}

impl<T: Real> DensityEstimate<T> {
    /// Silverman bandwidths `h_d = σ_d (4 / ((d + 2) N))^{1/(d+4)}`.
    /// `box_widths` sets the fallback bandwidth of zero-variance coordinates.
    pub fn fit(samples: &[Vec<T>], box_widths: &[T]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::input("KDE needs at least 2 samples"));
        }
        let dim = samples[0].len();
        check_dim(dim, box_widths.len())?;
        for s in samples {
            check_dim(dim, s.len())?;
        }
        let nf = T::from_usize_lossy(n);
        let df = T::from_usize_lossy(dim);
        let factor = (T::lit(4.0) / ((df + T::lit(2.0)) * nf)).powf(T::one() / (df + T::lit(4.0)));
        let mut bandwidth = Vec::with_capacity(dim);
        let mut any_spread = false;
        for d in 0..dim {
            let mean = samples.iter().map(|s| s[d]).sum::<T>() / nf;
            let var = samples.iter().map(|s| (s[d] - mean) * (s[d] - mean)).sum::<T>()
                / T::from_usize_lossy(n - 1);
            let sd = var.sqrt();
            if sd > T::zero() {
                any_spread = true;
                bandwidth.push(sd * factor);
            } else {
                bandwidth.push(T::lit(DEGENERATE_BANDWIDTH) * box_widths[d]);
            }
        }
        if !any_spread {
            return Err(Error::input("KDE samples have zero variance in every coordinate"));
        }
        if bandwidth.iter().any(|h| !(*h > T::zero())) {
            return Err(Error::input("KDE bandwidths must be positive"));
        }
        let log_norm = -nf.ln()
            - bandwidth.iter().map(|h| h.ln()).sum::<T>()
            - df * T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let mut kde = Self {
            samples: samples.to_vec(),
            inv_bandwidth: bandwidth.iter().map(|&h| T::one() / h).collect(),
            bandwidth,
            log_norm,
            floor: T::neg_infinity(),
        };
        let max = kde
            .samples
            .par_iter()
            .map(|s| kde.raw_log_pdf(s))
            .reduce(|| T::neg_infinity(), |a, b| if b > a { b } else { a });
        kde.floor = max - T::lit(LOG_DENSITY_FLOOR_DEPTH);
        Ok(kde)
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<T>] {
        &self.samples
    }

    pub fn bandwidth(&self) -> &[T] {
        &self.bandwidth
    }

    pub fn floor(&self) -> T {
        self.floor
    }

    /// Unfloored log-density, via a streaming log-sum-exp.
    pub fn raw_log_pdf(&self, theta: &[T]) -> T {
        let half = T::lit(0.5);
        let (mut m, mut s) = (T::neg_infinity(), T::zero());
        for x in &self.samples {
            let mut q = T::zero();
            for ((&a, &b), &ih) in theta.iter().zip(x).zip(&self.inv_bandwidth) {
                let z = (a - b) * ih;
                q = q + z * z;
            }
            let v = -half * q;
            if v > m {
                s = s * (m - v).exp() + T::one();
                m = v;
            } else {
                s = s + (v - m).exp();
            }
        }
        self.log_norm + m + s.ln()
    }

    /// Log-density floored at `max_support − 50`.
    pub fn log_pdf(&self, theta: &[T]) -> Result<T> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.log_pdf_unchecked(theta))
    }

    pub(crate) fn log_pdf_unchecked(&self, theta: &[T]) -> T {
        let v = self.raw_log_pdf(theta);
        if v > self.floor {
            v
        } else {
            self.floor
        }
    }
}

/// `max(0, mean[log p(θ) − log q(θ)])` over `eval_samples`, which default to
/// the support of `p`.
pub fn kl_divergence_estimate<T: Real>(
    p: &DensityEstimate<T>,
    q: &DensityEstimate<T>,
    eval_samples: Option<&[Vec<T>]>,
) -> Result<T> {
    check_dim(p.dim(), q.dim())?;
    let eval = eval_samples.unwrap_or(p.samples());
    if eval.len() < MIN_KL_SAMPLES {
        return Err(Error::input(format!(
            "KL estimate needs at least {MIN_KL_SAMPLES} evaluation samples, got {}",
            eval.len()
        )));
    }
    for s in eval {
        check_dim(p.dim(), s.len())?;
    }
    if std::ptr::eq(p, q) {
        return Ok(T::zero());
    }
    let terms: Vec<T> = eval
        .par_iter()
        .map(|s| p.log_pdf_unchecked(s) - q.log_pdf_unchecked(s))
        .collect();
    let mean = terms.iter().copied().sum::<T>() / T::from_usize_lossy(terms.len());
    Ok(mean.max(T::zero()))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("KS statistic needs nonempty samples"));
    }
    let sorted = |v: &[T]| {
        let mut v = v.to_vec();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (T::from_usize_lossy(a.len()), T::from_usize_lossy(b.len()));
    let (mut i, mut j) = (0, 0);
    let mut d = T::zero();
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((T::from_usize_lossy(i) / na - T::from_usize_lossy(j) / nb).abs());
    }
    Ok(d)
}

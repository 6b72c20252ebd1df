//! Reference posterior by quadrature over a tensor grid of the prior box.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::problem::ProblemSpec;
use crate::scalar::{log_sum_exp, Real};

pub const MIN_RESOLUTION: usize = 11;
pub const MAX_DIM: usize = 3;
/// Modes below this fraction of the largest cell mass are ignored.
pub const MODE_THRESHOLD: f64 = 0.01;
/// Minimum Chebyshev distance, in cells, between reported modes.
pub const MODE_SEPARATION: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior<T> {
    /// Cell centers per axis.
    pub axes: Vec<Vec<T>>,
    /// `log π̃` at every cell center, first axis slowest.
    pub log_post: Vec<T>,
    /// Normalized cell masses.
    pub masses: Vec<T>,
    pub cell_volume: T,
}

impl<T: Real> GridPosterior<T> {
    /// Normalizes raw `log π̃` values on the given axes.
    pub fn from_log_values(axes: Vec<Vec<T>>, log_post: Vec<T>, cell_volume: T) -> Result<Self> {
        let cells: usize = axes.iter().map(Vec::len).product();
        check_dim(cells, log_post.len())?;
        let z = log_sum_exp(&log_post);
        if !z.is_finite() {
            return Err(Error::input("grid posterior has no finite mass"));
        }
        let masses = log_post.iter().map(|&v| (v - z).exp()).collect();
        Ok(Self {
            axes,
            log_post,
            masses,
            cell_volume,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for d in (0..shape.len()).rev() {
            idx[d] = flat % shape[d];
            flat /= shape[d];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.shape()).fold(0, |acc, (&i, n)| acc * n + i)
    }

    pub fn cell_center(&self, flat: usize) -> Vec<T> {
        self.unravel(flat).iter().zip(&self.axes).map(|(&i, a)| a[i]).collect()
    }

    /// Log posterior density (normalized) at each cell.
    pub fn log_density(&self, flat: usize) -> T {
        self.masses[flat].ln() - self.cell_volume.ln()
    }

    /// Mass per cell along one axis.
    pub fn marginal_1d(&self, axis: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.axes[axis].len()];
        for (k, &m) in self.masses.iter().enumerate() {
            out[self.unravel(k)[axis]] = out[self.unravel(k)[axis]] + m;
        }
        out
    }

    /// Mass per cell pair, `a` slowest.
    pub fn marginal_2d(&self, a: usize, b: usize) -> Vec<T> {
        let nb = self.axes[b].len();
        let mut out = vec![T::zero(); self.axes[a].len() * nb];
        for (k, &m) in self.masses.iter().enumerate() {
            let idx = self.unravel(k);
            out[idx[a] * nb + idx[b]] = out[idx[a] * nb + idx[b]] + m;
        }
        out
    }
}

fn axis_centers<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    let w = (hi - lo) / T::from_usize_lossy(n);
    (0..n).map(|i| lo + (T::from_usize_lossy(i) + T::lit(0.5)) * w).collect()
}

/// Evaluates `log π̃` at every cell center of a `resolution[d]`-per-axis grid.
///
/// With `mirror_axis = Some(a)` the posterior is taken to be even in
/// coordinate `a` (whose box must be symmetric about zero); only the cells
/// with nonnegative center on that axis are evaluated.
pub fn grid_posterior<T: Real>(
    spec: &ProblemSpec<T>,
    resolution: &[usize],
    mirror_axis: Option<usize>,
) -> Result<GridPosterior<T>> {
    let dim = spec.dim_theta();
    if dim > MAX_DIM {
        return Err(Error::input(format!("grid oracle supports at most {MAX_DIM} parameters")));
    }
    check_dim(dim, resolution.len())?;
    if let Some(&r) = resolution.iter().find(|&&r| r < MIN_RESOLUTION) {
        return Err(Error::input(format!("grid resolution {r} below {MIN_RESOLUTION}")));
    }
    let prior = spec.prior();
    let axes: Vec<Vec<T>> = (0..dim)
        .map(|d| axis_centers(prior.lower()[d], prior.upper()[d], resolution[d]))
        .collect();
    let cell_volume = prior
        .widths()
        .iter()
        .zip(resolution)
        .fold(T::one(), |acc, (&w, &r)| acc * w / T::from_usize_lossy(r));
    if let Some(a) = mirror_axis {
        if a >= dim {
            return Err(Error::input(format!("mirror axis {a} out of range")));
        }
        let (lo, hi) = (prior.lower()[a], prior.upper()[a]);
        if (lo + hi).abs() > T::lit(1e-12) * (hi - lo) {
            return Err(Error::input("mirror axis box is not symmetric about zero"));
        }
    }
    let shell = GridPosterior {
        axes: axes.clone(),
        log_post: Vec::new(),
        masses: Vec::new(),
        cell_volume,
    };
    let cells: usize = resolution.iter().product();
    let mirror_of = |flat: usize| -> Option<usize> {
        let a = mirror_axis?;
        let mut idx = shell.unravel(flat);
        if axes[a][idx[a]] >= T::zero() {
            return None;
        }
        idx[a] = resolution[a] - 1 - idx[a];
        Some(shell.ravel(&idx))
    };
    let direct: Vec<Option<T>> = (0..cells)
        .into_par_iter()
        .map(|k| match mirror_of(k) {
            Some(_) => Ok(None),
            None => spec.log_unnormalized_posterior(&shell.cell_center(k)).map(Some),
        })
        .collect::<Result<_>>()?;
    let log_post = (0..cells)
        .map(|k| direct[k].unwrap_or_else(|| direct[mirror_of(k).expect("mirrored cell")].expect("evaluated cell")))
        .collect();
    GridPosterior::from_log_values(axes, log_post, cell_volume)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMode<T> {
    pub index: Vec<usize>,
    pub theta: Vec<T>,
    pub mass: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMoments<T> {
    pub mean: Vec<T>,
    /// Posterior variance per coordinate.
    pub mse: Vec<T>,
    /// Strongest first.
    pub modes: Vec<GridMode<T>>,
}

fn neighbors(idx: &[usize], shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for (&i, &n) in idx.iter().zip(shape) {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        out = out
            .into_iter()
            .flat_map(|p| {
                (lo..=hi).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out.retain(|q| q != idx);
    out
}

/// Local maxima of cell mass above [`MODE_THRESHOLD`] of the global maximum,
/// greedily kept strongest first at least [`MODE_SEPARATION`] cells apart.
pub fn find_modes<T: Real>(grid: &GridPosterior<T>) -> Vec<GridMode<T>> {
    let shape = grid.shape();
    let global = grid.masses.iter().copied().fold(T::zero(), T::max);
    let threshold = T::lit(MODE_THRESHOLD) * global;
    let mut candidates: Vec<usize> = (0..grid.len())
        .filter(|&k| {
            let m = grid.masses[k];
            if m <= threshold {
                return false;
            }
            let idx = grid.unravel(k);
            neighbors(&idx, &shape).iter().all(|q| {
                let j = grid.ravel(q);
                // plateaus: the first cell in storage order wins
                if j < k { grid.masses[j] < m } else { grid.masses[j] <= m }
            })
        })
        .collect();
    candidates.sort_by(|&a, &b| {
        grid.masses[b]
            .partial_cmp(&grid.masses[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut modes: Vec<GridMode<T>> = Vec::new();
    for k in candidates {
        let idx = grid.unravel(k);
        let far = modes.iter().all(|m| {
            m.index
                .iter()
                .zip(&idx)
                .map(|(&a, &b)| a.abs_diff(b))
                .max()
                .unwrap_or(0)
                >= MODE_SEPARATION
        });
        if far {
            modes.push(GridMode {
                theta: grid.cell_center(k),
                index: idx,
                mass: grid.masses[k],
            });
        }
    }
    modes
}

pub fn grid_moments<T: Real>(grid: &GridPosterior<T>) -> GridMoments<T> {
    let dim = grid.dim();
    let mut mean = vec![T::zero(); dim];
    for (k, &m) in grid.masses.iter().enumerate() {
        for (acc, x) in mean.iter_mut().zip(grid.cell_center(k)) {
            *acc = *acc + m * x;
        }
    }
    let mut mse = vec![T::zero(); dim];
    for (k, &m) in grid.masses.iter().enumerate() {
        for ((acc, x), &mu) in mse.iter_mut().zip(grid.cell_center(k)).zip(&mean) {
            *acc = *acc + m * (x - mu) * (x - mu);
        }
    }
    GridMoments {
        mean,
        mse,
        modes: find_modes(grid),
    }
}

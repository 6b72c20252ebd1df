//! Forward models: a 2D diffusion source problem, a 2D Poisson source problem
//! and an analytic bimodal toy.

mod heat2d;
mod poisson2d;
mod toy;

pub use heat2d::{Heat2dModel, HeatField};
pub use poisson2d::Poisson2dModel;
pub use toy::BimodalToyModel;

use crate::scalar::Real;

/// Bilinear interpolation on a uniform node grid with origin `origin`, spacing
/// `h` and `n` nodes per axis. `values` is row-major with `y` as the slow index.
pub(crate) fn bilinear<T: Real>(
    values: &[T],
    nx: usize,
    ny: usize,
    origin: [T; 2],
    h: T,
    p: [T; 2],
) -> T {
    let fx = ((p[0] - origin[0]) / h).max(T::zero());
    let fy = ((p[1] - origin[1]) / h).max(T::zero());
    let ix = fx.floor().to_usize().unwrap_or(0).min(nx - 2);
    let iy = fy.floor().to_usize().unwrap_or(0).min(ny - 2);
    let tx = (fx - T::from_usize_lossy(ix)).min(T::one());
    let ty = (fy - T::from_usize_lossy(iy)).min(T::one());
    let at = |i: usize, j: usize| values[j * nx + i];
    let one = T::one();
    (one - tx) * (one - ty) * at(ix, iy)
        + tx * (one - ty) * at(ix + 1, iy)
        + (one - tx) * ty * at(ix, iy + 1)
        + tx * ty * at(ix + 1, iy + 1)
}

use crate::error::{check_dim, Error, Result};
use crate::problem::ForwardModel;
use crate::scalar::Real;

use super::bilinear;

/// Diffusion of an instantaneous Gaussian release on `[-1,1]²` with zero
/// Dirichlet boundaries, solved by explicit finite differences.
#[derive(Debug, Clone)]
pub struct Heat2dModel<T> {
    pub diffusion: T,
    pub mass: T,
    pub source_radius: T,
    pub dx: T,
    pub dt: T,
    pub final_time: T,
    pub sensors: Vec<[T; 2]>,
    n: usize,
    steps: usize,
}

/// Concentration on the node grid at the final time.
#[derive(Debug, Clone)]
pub struct HeatField<T> {
    pub nodes_per_axis: usize,
    pub dx: T,
    pub values: Vec<T>,
}

impl<T: Real> HeatField<T> {
    /// `Σ u Δx²`.
    pub fn total_mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.dx * self.dx
    }

    pub fn at(&self, p: [T; 2]) -> T {
        let n = self.nodes_per_axis;
        bilinear(&self.values, n, n, [-T::one(), -T::one()], self.dx, p)
    }
}

impl<T: Real> Heat2dModel<T> {
    pub fn new(
        diffusion: T,
        mass: T,
        source_radius: T,
        dx: T,
        dt: T,
        final_time: T,
        sensors: Vec<[T; 2]>,
    ) -> Result<Self> {
        if !(diffusion > T::zero() && source_radius > T::zero() && dx > T::zero() && dt > T::zero())
        {
            return Err(Error::input("heat2d parameters must be positive"));
        }
        if final_time < T::zero() {
            return Err(Error::input("heat2d final time must be nonnegative"));
        }
        let cells = (T::lit(2.0) / dx).round();
        if ((cells * dx) - T::lit(2.0)).abs() > T::lit(1e-9) {
            return Err(Error::input("heat2d dx must divide the domain width 2"));
        }
        if diffusion * dt > dx * dx / T::lit(4.0) * (T::one() + T::lit(1e-12)) {
            return Err(Error::input(format!(
                "explicit scheme unstable: D dt / dx^2 = {} > 0.25",
                diffusion * dt / (dx * dx)
            )));
        }
        for s in &sensors {
            if !(s[0].abs() < T::one() && s[1].abs() < T::one()) {
                return Err(Error::input("heat2d sensors must lie strictly inside the domain"));
            }
        }
        let n = cells.to_usize().unwrap_or(0) + 1;
        let steps = (final_time / dt).round().to_usize().unwrap_or(0);
        Ok(Self {
            diffusion,
            mass,
            source_radius,
            dx,
            dt,
            final_time,
            sensors,
            n,
            steps,
        })
    }

    /// The reference configuration: `D = 1`, `M = 15`, `h = 0.1`,
    /// `Δx = 0.025`, `Δt = 1.25e-4`, `T = 0.04`, sensors at
    /// `(-0.4,-0.4)` and `(0,0.4)`.
    pub fn reference() -> Self {
        Self::new(
            T::one(),
            T::lit(15.0),
            T::lit(0.1),
            T::lit(0.025),
            T::lit(1.25e-4),
            T::lit(0.04),
            vec![[T::lit(-0.4), T::lit(-0.4)], [T::zero(), T::lit(0.4)]],
        )
        .expect("reference heat2d parameters are valid")
    }

    /// Same physics on a different grid.
    pub fn with_grid(&self, dx: T, dt: T) -> Result<Self> {
        Self::new(
            self.diffusion,
            self.mass,
            self.source_radius,
            dx,
            dt,
            self.final_time,
            self.sensors.clone(),
        )
    }

    pub fn with_sensors(&self, sensors: Vec<[T; 2]>) -> Result<Self> {
        Self::new(
            self.diffusion,
            self.mass,
            self.source_radius,
            self.dx,
            self.dt,
            self.final_time,
            sensors,
        )
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    pub fn solve_field(&self, xi: [T; 2]) -> Result<HeatField<T>> {
        if !(xi[0].abs() <= T::one() && xi[1].abs() <= T::one()) {
            return Err(Error::input(format!(
                "source location ({}, {}) outside [-1,1]^2",
                xi[0], xi[1]
            )));
        }
        let n = self.n;
        let h2 = self.source_radius * self.source_radius;
        let amp = self.mass / (T::lit(2.0 * std::f64::consts::PI) * h2);
        let coord = |i: usize| -T::one() + T::from_usize_lossy(i) * self.dx;
        let mut u = vec![T::zero(); n * n];
        for j in 1..n - 1 {
            let dy = coord(j) - xi[1];
            for i in 1..n - 1 {
                let dxv = coord(i) - xi[0];
                u[j * n + i] = amp * (-(dxv * dxv + dy * dy) / (T::lit(2.0) * h2)).exp();
            }
        }
        let r = self.diffusion * self.dt / (self.dx * self.dx);
        let four = T::lit(4.0);
        let mut next = u.clone();
        for _ in 0..self.steps {
            for j in 1..n - 1 {
                let row = j * n;
                for i in 1..n - 1 {
                    let k = row + i;
                    let lap = u[k - 1] + u[k + 1] + u[k - n] + u[k + n] - four * u[k];
                    next[k] = u[k] + r * lap;
                }
            }
            std::mem::swap(&mut u, &mut next);
        }
        Ok(HeatField {
            nodes_per_axis: n,
            dx: self.dx,
            values: u,
        })
    }

    pub fn observe_at(&self, xi: [T; 2]) -> Result<Vec<T>> {
        let field = self.solve_field(xi)?;
        Ok(self.sensors.iter().map(|&s| field.at(s)).collect())
    }
}

impl<T: Real> ForwardModel<T> for Heat2dModel<T> {
    fn dim_theta(&self) -> usize {
        2
    }

    fn dim_data(&self) -> usize {
        self.sensors.len()
    }

    fn observe(&self, theta: &[T]) -> Result<Vec<T>> {
        check_dim(2, theta.len())?;
        self.observe_at([theta[0], theta[1]])
    }
}

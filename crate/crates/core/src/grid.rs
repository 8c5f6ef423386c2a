use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform partition of `[0, T]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    steps: usize,
    dt: T,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Grid("step count must be positive".into()));
        }
        if !(horizon > T::zero()) || !horizon.finite() {
            return Err(Error::Grid(format!("horizon must be positive and finite, got {horizon}")));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / T::from_usize_lossy(steps),
        })
    }

    /// Grid with step size as close as possible to `dt` (rounded to an integer step count).
    pub fn with_step(horizon: T, dt: T) -> Result<Self> {
        let n = (horizon / dt).round().as_f64();
        if !n.is_finite() || n < 1.0 {
            return Err(Error::Grid(format!("step {dt} incompatible with horizon {horizon}")));
        }
        Self::new(horizon, n as usize)
    }

    #[inline]
    pub fn horizon(&self) -> T {
        self.horizon
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of nodes, `steps + 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of node `i`; the last node is the horizon exactly.
    #[inline]
    pub fn time(&self, i: usize) -> T {
        if i >= self.steps {
            self.horizon
        } else {
            self.dt * T::from_usize_lossy(i)
        }
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        (0..=self.steps).map(move |i| self.time(i))
    }

    /// Same horizon with the step count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self::new(self.horizon, self.steps * factor.max(1)).expect("refinement of a valid grid")
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            horizon: self.horizon.as_f64(),
            steps: self.steps,
            dt: self.dt.as_f64(),
        }
    }
}

/// Plain-`f64` description of a grid, for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSummary {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
}

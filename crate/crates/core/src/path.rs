//! Deterministic time-indexed functions sampled on a [`TimeGrid`].
//!
//! Values between nodes are obtained by linear interpolation; at a node the
//! stored sample is returned unchanged.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::Real;

/// Values that can be linearly interpolated and checked for finiteness.
pub trait Sample<T: Real>: Clone {
    fn lerp(&self, other: &Self, w: T) -> Self;
    fn all_finite(&self) -> bool;
    /// `Σ c_k·v_k`; `terms` is nonempty.
    fn scaled_sum(terms: &[(T, &Self)]) -> Self;
}

impl<T: Real> Sample<T> for T {
    fn lerp(&self, other: &Self, w: T) -> Self {
        *self + (*other - *self) * w
    }
    fn all_finite(&self) -> bool {
        self.finite()
    }
    fn scaled_sum(terms: &[(T, &Self)]) -> Self {
        terms.iter().fold(T::zero(), |acc, (c, v)| acc + *c * **v)
    }
}

impl<T: Real> Sample<T> for DMatrix<T> {
    fn lerp(&self, other: &Self, w: T) -> Self {
        self + (other - self) * w
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|x| x.finite())
    }
    fn scaled_sum(terms: &[(T, &Self)]) -> Self {
        let mut out = terms[0].1 * terms[0].0;
        for (c, v) in &terms[1..] {
            out += *v * *c;
        }
        out
    }
}

impl<T: Real> Sample<T> for DVector<T> {
    fn lerp(&self, other: &Self, w: T) -> Self {
        self + (other - self) * w
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|x| x.finite())
    }
    fn scaled_sum(terms: &[(T, &Self)]) -> Self {
        let mut out = terms[0].1 * terms[0].0;
        for (c, v) in &terms[1..] {
            out += *v * *c;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path<T: Real, V> {
    grid: TimeGrid<T>,
    values: Vec<V>,
}

pub type MatrixPath<T> = Path<T, DMatrix<T>>;
pub type VectorPath<T> = Path<T, DVector<T>>;
pub type ScalarPath<T> = Path<T, T>;

impl<T: Real, V: Sample<T>> Path<T, V> {
    pub fn from_samples(grid: TimeGrid<T>, values: Vec<V>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                what: "path samples",
                expected: format!("{}", grid.len()),
                found: format!("{}", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.all_finite()) {
            return Err(Error::Precondition(format!("non-finite path sample at index {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Constant path (the value broadcast to every node).
    pub fn constant(grid: TimeGrid<T>, value: V) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: TimeGrid<T>, mut f: impl FnMut(T) -> V) -> Self {
        Self {
            values: grid.times().map(&mut f).collect(),
            grid,
        }
    }

    /// Builds a path without the finiteness check; used for partial solver output.
    pub(crate) fn from_raw(grid: TimeGrid<T>, values: Vec<V>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[V] {
        &self.values
    }

    #[inline]
    pub fn at(&self, i: usize) -> &V {
        &self.values[i]
    }

    pub fn first(&self) -> &V {
        &self.values[0]
    }

    pub fn last(&self) -> &V {
        &self.values[self.values.len() - 1]
    }

    /// Value at time `t`, clamped to `[0, T]`.
    pub fn eval(&self, t: T) -> V {
        let n = self.grid.steps();
        if t <= T::zero() {
            return self.values[0].clone();
        }
        if t >= self.grid.horizon() {
            return self.values[n].clone();
        }
        let pos = t / self.grid.dt();
        let nearest = pos.round().as_f64() as usize;
        if nearest <= n && self.grid.time(nearest) == t {
            return self.values[nearest].clone();
        }
        let i = (pos.floor().as_f64() as usize).min(n - 1);
        let w = (t - self.grid.time(i)) / self.grid.dt();
        self.values[i].lerp(&self.values[i + 1], w)
    }

    pub fn map<W: Sample<T>>(&self, f: impl FnMut(&V) -> W) -> Path<T, W> {
        Path {
            grid: self.grid,
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn into_values(self) -> Vec<V> {
        self.values
    }

    /// Time derivative at every node by fourth-order finite differences
    /// (central in the interior, one-sided near the ends). Needs `N >= 4`.
    pub fn derivative(&self) -> Result<Self> {
        let n = self.grid.steps();
        if n < 4 {
            return Err(Error::Grid(format!("derivative needs at least 4 steps, got {n}")));
        }
        let f = &self.values;
        let c = T::one() / (T::lit(12.0) * self.grid.dt());
        let k = |x: f64| T::lit(x) * c;
        let out = (0..=n)
            .map(|i| match i {
                0 => V::scaled_sum(&[(k(-25.0), &f[0]), (k(48.0), &f[1]), (k(-36.0), &f[2]), (k(16.0), &f[3]), (k(-3.0), &f[4])]),
                1 => V::scaled_sum(&[(k(-3.0), &f[0]), (k(-10.0), &f[1]), (k(18.0), &f[2]), (k(-6.0), &f[3]), (k(1.0), &f[4])]),
                i if i == n - 1 => V::scaled_sum(&[(k(3.0), &f[n]), (k(10.0), &f[n - 1]), (k(-18.0), &f[n - 2]), (k(6.0), &f[n - 3]), (k(-1.0), &f[n - 4])]),
                i if i == n => V::scaled_sum(&[(k(25.0), &f[n]), (k(-48.0), &f[n - 1]), (k(36.0), &f[n - 2]), (k(-16.0), &f[n - 3]), (k(3.0), &f[n - 4])]),
                i => V::scaled_sum(&[(k(1.0), &f[i - 2]), (k(-8.0), &f[i - 1]), (k(8.0), &f[i + 1]), (k(-1.0), &f[i + 2])]),
            })
            .collect();
        Ok(Self { grid: self.grid, values: out })
    }
}

impl<T: Real> ScalarPath<T> {
    /// `∫_{t_i}^T f` for every node (see [`tail_integrals`]).
    pub fn tail_integrals(&self) -> Vec<T> {
        tail_integrals(&self.values, self.grid.dt())
    }

    /// `∫_0^T f`.
    pub fn integral(&self) -> T {
        self.tail_integrals()[0]
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(b))
    }
}

/// Cumulative integrals `∫_{t_i}^{t_N} f` of uniformly sampled values.
///
/// Composite Simpson from the right end. When `N - i` is odd, the first
/// three intervals use Simpson's 3/8 rule; the single last interval uses the
/// four-point cubic rule. Every entry is exact for cubics once `N >= 3`.
pub fn tail_integrals<T: Real>(f: &[T], h: T) -> Vec<T> {
    let n = f.len() - 1;
    let mut tail = vec![T::zero(); n + 1];
    if n == 0 {
        return tail;
    }
    let third = h / T::lit(3.0);
    let three_eighths = h * T::lit(3.0 / 8.0);
    for i in (0..n).rev() {
        let rem = n - i;
        tail[i] = if rem.is_multiple_of(2) {
            tail[i + 2] + third * (f[i] + T::lit(4.0) * f[i + 1] + f[i + 2])
        } else if rem >= 3 {
            tail[i + 3]
                + three_eighths * (f[i] + T::lit(3.0) * (f[i + 1] + f[i + 2]) + f[i + 3])
        } else if n >= 3 {
            // rem == 1: cubic through the last four nodes, integrated over the last interval
            h / T::lit(24.0)
                * (f[n - 3] - T::lit(5.0) * f[n - 2] + T::lit(19.0) * f[n - 1] + T::lit(9.0) * f[n])
        } else if n == 2 {
            h / T::lit(12.0) * (-f[0] + T::lit(8.0) * f[1] + T::lit(5.0) * f[2])
        } else {
            h * (f[0] + f[1]) / T::lit(2.0)
        };
    }
    tail
}

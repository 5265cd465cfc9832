//! Periodic grid vectors on the uniform σ-grid of `[0, 2π)`.
//!
//! A [`PeriodicField`] holds `J` samples `V_0 .. V_{J-1}` with the
//! identification `V_{i+J} = V_i`. Discrete norms and the inner product are
//! weighted by the grid spacing `h = 2π / J`.

use std::f64::consts::PI;
use std::ops::{Add, Index, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::operators::laplacian_h;

/// Smallest admissible number of grid points.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid size J = {0} is invalid (must be even and at least {MIN_POINTS})")]
    InvalidSize(usize),
    #[error("dimension mismatch: J = {left} vs J = {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

/// Uniform periodic grid with `J` points and spacing `h = 2π / J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    j: usize,
    h: f64,
}

impl GridSpec {
    pub fn new(j: usize) -> Result<Self, FieldError> {
        if j < MIN_POINTS || !j.is_multiple_of(2) {
            return Err(FieldError::InvalidSize(j));
        }
        Ok(Self {
            j,
            h: 2.0 * PI / j as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.j
    }

    pub fn is_empty(&self) -> bool {
        self.j == 0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Node position `σ_i = i h`.
    pub fn sigma(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.j).map(move |i| self.sigma(i))
    }
}

/// `J` real samples on a [`GridSpec`] with wraparound indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    grid: GridSpec,
    values: Arc<[f64]>,
}

impl PeriodicField {
    pub fn new(values: Vec<f64>) -> Result<Self, FieldError> {
        let grid = GridSpec::new(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        Ok(Self {
            grid,
            values: values.into(),
        })
    }

    /// Builds a field from values already known to match `grid`.
    pub(crate) fn from_parts(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self {
            grid,
            values: values.into(),
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_parts(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self::from_parts(grid, vec![c; grid.len()])
    }

    /// Samples `f(σ_i)` at every node.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(grid, grid.nodes().map(f).collect())
    }

    /// Builds a field node-by-node from its index.
    pub fn from_index_fn(grid: GridSpec, f: impl FnMut(usize) -> f64) -> Self {
        Self::from_parts(grid, (0..grid.len()).map(f).collect())
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.j
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Periodic access: `at(i) == values[i mod J]` for any integer `i`.
    #[inline]
    pub fn at(&self, i: isize) -> f64 {
        self.values[i.rem_euclid(self.grid.j as isize) as usize]
    }

    pub fn ensure_same_grid(&self, other: &Self) -> Result<(), FieldError> {
        if self.len() != other.len() {
            return Err(FieldError::DimensionMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    /// Cyclic shift: `result[i] = self[i + offset]`.
    pub fn shifted(&self, offset: isize) -> Self {
        Self::from_index_fn(self.grid, |i| self.at(i as isize + offset))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "field dimension mismatch");
        Self::from_parts(
            self.grid,
            self.values
                .iter()
                .zip(other.values.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete mass `S = h Σ V_i`.
    pub fn sum_h(&self) -> f64 {
        self.h() * compensated_sum(self.values.iter().copied())
    }

    /// Arithmetic mean `(1/J) Σ V_i`.
    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) / self.len() as f64
    }
}

impl Index<usize> for PeriodicField {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i % self.grid.j]
    }
}

impl Add for &PeriodicField {
    type Output = PeriodicField;

    fn add(self, rhs: Self) -> PeriodicField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &PeriodicField {
    type Output = PeriodicField;

    fn sub(self, rhs: Self) -> PeriodicField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&PeriodicField> for f64 {
    type Output = PeriodicField;

    fn mul(self, rhs: &PeriodicField) -> PeriodicField {
        rhs.scale(self)
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `‖V‖_h = (h Σ V_i²)^{1/2}`.
pub fn norm_h(v: &PeriodicField) -> f64 {
    (v.h() * compensated_sum(v.values().iter().map(|x| x * x))).sqrt()
}

/// `(V, W)_h = h Σ V_i W_i`.
pub fn inner_h(v: &PeriodicField, w: &PeriodicField) -> Result<f64, FieldError> {
    v.ensure_same_grid(w)?;
    Ok(v.h()
        * compensated_sum(
            v.values()
                .iter()
                .zip(w.values().iter())
                .map(|(a, b)| a * b),
        ))
}

/// Discrete H¹ seminorm from backward differences, with wraparound.
pub fn seminorm_1h(v: &PeriodicField) -> f64 {
    let h = v.h();
    let s = compensated_sum((0..v.len() as isize).map(|i| {
        let d = (v.at(i) - v.at(i - 1)) / h;
        d * d
    }));
    (h * s).sqrt()
}

/// Discrete H² seminorm `[h Σ (Δ_h V_i)²]^{1/2}`.
pub fn seminorm_2h(v: &PeriodicField) -> f64 {
    norm_h(&laplacian_h(v))
}

/// Shared FFT planner output for repeated transforms of one length.
#[derive(Clone)]
pub struct Spectrum {
    forward: Arc<dyn rustfft::Fft<f64>>,
    inverse: Arc<dyn rustfft::Fft<f64>>,
    len: usize,
}

impl std::fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectrum").field("len", &self.len).finish()
    }
}

impl Spectrum {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward DFT: `Σ V_i e^{-i m σ_i}`.
    pub fn forward(&self, v: &PeriodicField) -> Vec<Complex64> {
        assert_eq!(v.len(), self.len);
        let mut buf: Vec<Complex64> = v.values().iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse of [`Spectrum::forward`], returning the real part.
    pub fn inverse(&self, grid: GridSpec, mut coeffs: Vec<Complex64>) -> PeriodicField {
        assert_eq!(coeffs.len(), self.len);
        self.inverse.process(&mut coeffs);
        let scale = 1.0 / self.len as f64;
        PeriodicField::from_parts(grid, coeffs.iter().map(|c| c.re * scale).collect())
    }
}

/// Normalized DFT coefficients `û_m = (1/J) Σ V_i e^{-i m σ_i}` for `m = 0..J/2`.
pub fn fourier_coefficients(v: &PeriodicField) -> Vec<Complex64> {
    let spectrum = Spectrum::new(v.len());
    let scale = 1.0 / v.len() as f64;
    spectrum
        .forward(v)
        .into_iter()
        .take(v.len() / 2 + 1)
        .map(|c| c * scale)
        .collect()
}

/// `|û_m|` for `m = 0..=J/2`.
pub fn mode_amplitudes(v: &PeriodicField) -> Vec<f64> {
    fourier_coefficients(v).into_iter().map(|c| c.norm()).collect()
}

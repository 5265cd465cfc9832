//! Recovery of the height `u` from the gradient `v = u_σ`.
//!
//! The numerical gradient is extended to a continuous function `Ṽ(σ, t)` by
//! bilinear interpolation of the nodal values. Height samples are then
//!
//! ```text
//! Uⁿ_i = Ĩ(tⁿ) − (1/2π) ∫₀^{2π} ∫₀^σ Ṽ(ξ, tⁿ) dξ dσ + ∫₀^{σ_i} Ṽ(ξ, tⁿ) dξ
//! ```
//!
//! where the mean `Ĩ` solves `İ = −((α − 1)/R²) I + (v_c/(4πR²)) ∫ Ṽ² dσ`.
//! All σ-integrals are evaluated in closed form for the piecewise-linear
//! interpolant; the only quadrature is the trapezoid rule in time for `Ĩ`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::field::{compensated_sum, PeriodicField};
use crate::radius::{RadiusError, RadiusPath};
use crate::solver::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("step {0} is not retained in the trajectory")]
    MissingSnapshot(usize),
    #[error("node index {index} outside 0..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Radius(#[from] RadiusError),
}

/// `∫₀^{2π} Ṽ² dσ` for the piecewise-linear interpolant of `v`.
pub fn piecewise_linear_square_integral(v: &PeriodicField) -> f64 {
    let h = v.h();
    let vals = v.values();
    let j = vals.len();
    h / 3.0
        * compensated_sum((0..j).map(|i| {
            let a = vals[i];
            let b = vals[(i + 1) % j];
            a * a + a * b + b * b
        }))
}

/// Cumulative trapezoid sums `C_i = ∫₀^{σ_i} Ṽ`, `i = 0..=J`.
pub fn cumulative_integrals(v: &PeriodicField) -> Vec<f64> {
    let h = v.h();
    let vals = v.values();
    let j = vals.len();
    let mut out = Vec::with_capacity(j + 1);
    let mut sum = 0.0;
    let mut comp = 0.0;
    out.push(0.0);
    for i in 0..j {
        let x = 0.5 * h * (vals[i] + vals[(i + 1) % j]);
        // Neumaier running sum.
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        out.push(sum + comp);
    }
    out
}

/// `(1/2π) ∫₀^{2π} C(σ) dσ` where `C(σ) = ∫₀^σ Ṽ`, piecewise quadratic.
///
/// Each cell contributes `h C_i + h² (2V_i + V_{i+1}) / 6` exactly.
pub fn mean_of_cumulative(v: &PeriodicField, cumulative: &[f64]) -> f64 {
    let h = v.h();
    let vals = v.values();
    let j = vals.len();
    let total = compensated_sum((0..j).map(|i| {
        h * cumulative[i] + h * h * (2.0 * vals[i] + vals[(i + 1) % j]) / 6.0
    }));
    total / (2.0 * PI)
}

/// Height samples from one gradient field and its mean value.
pub fn reconstruct_from_field(v: &PeriodicField, mean: f64) -> PeriodicField {
    let cumulative = cumulative_integrals(v);
    let offset = mean - mean_of_cumulative(v, &cumulative);
    PeriodicField::from_index_fn(v.grid(), |i| offset + cumulative[i])
}

/// Bilinear interpolant `Ṽ(σ, t)` of a trajectory; `σ` is taken modulo 2π.
pub fn interp_v(traj: &Trajectory, sigma: f64, t: f64) -> Result<f64, ReconstructError> {
    let time = traj.time();
    let horizon = time.horizon();
    if !(0.0..=horizon).contains(&t) {
        return Err(ReconstructError::TimeOutOfRange { t, horizon });
    }
    let k = time.k();
    let mut n = (t / k).floor() as usize;
    if n >= time.steps() {
        n = time.steps() - 1;
    }
    let eta = ((t - n as f64 * k) / k).clamp(0.0, 1.0);

    let grid = traj.grid();
    let h = grid.h();
    let s = sigma.rem_euclid(2.0 * PI);
    let mut i = (s / h).floor() as usize;
    if i >= grid.len() {
        i = grid.len() - 1;
    }
    let theta = ((s - i as f64 * h) / h).clamp(0.0, 1.0);

    let lo = traj.snapshot(n).ok_or(ReconstructError::MissingSnapshot(n))?;
    let hi = if eta == 0.0 {
        lo
    } else {
        traj.snapshot(n + 1)
            .ok_or(ReconstructError::MissingSnapshot(n + 1))?
    };
    let at = |f: &PeriodicField, idx: usize| f[idx];
    let left = (1.0 - eta) * at(lo, i) + eta * at(hi, i);
    let right = (1.0 - eta) * at(lo, i + 1) + eta * at(hi, i + 1);
    Ok((1.0 - theta) * left + theta * right)
}

/// `∫₀^{σ_i} Ṽ(ξ, tⁿ) dξ`.
pub fn cumulative_v(traj: &Trajectory, i: usize, n: usize) -> Result<f64, ReconstructError> {
    let v = traj.snapshot(n).ok_or(ReconstructError::MissingSnapshot(n))?;
    if i > v.len() {
        return Err(ReconstructError::IndexOutOfRange {
            index: i,
            len: v.len(),
        });
    }
    Ok(cumulative_integrals(v)[i])
}

/// `∫₀^{2π} Ṽ(σ, tⁿ)² dσ`; available at every step, retained or not.
pub fn v_squared_integral(traj: &Trajectory, n: usize) -> Result<f64, ReconstructError> {
    traj.v_squared
        .get(n)
        .copied()
        .ok_or(ReconstructError::MissingSnapshot(n))
}

/// Mean heights `Ĩ(tⁿ)` for `n = 0..=N`.
///
/// With `E(t) = Ṙ(t)/Ṙ(0)` (the integrating factor of the mean equation),
/// `Ĩ(t) = E(t) [I(0) + (v_c/4π) ∫₀ᵗ Q(τ) / (E(τ) R(τ)²) dτ]`, `Q = ∫ Ṽ²`,
/// with the time integral taken by the trapezoid rule on step boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPath {
    pub initial: f64,
    pub values: Vec<f64>,
}

impl MeanPath {
    pub fn new(traj: &Trajectory, path: &RadiusPath, initial: f64) -> Result<Self, ReconstructError> {
        let time = traj.time();
        let v_c = path.params().v_c;
        let mut factors = Vec::with_capacity(time.steps() + 1);
        for n in 0..=time.steps() {
            factors.push(path.decay_factor(time.time(n))?);
        }
        let integrand: Vec<f64> = (0..=time.steps())
            .map(|n| {
                let r = traj.radius[n];
                traj.v_squared[n] / (factors[n] * r * r)
            })
            .collect();
        let k = time.k();
        let mut values = Vec::with_capacity(time.steps() + 1);
        let mut acc = 0.0;
        values.push(initial);
        for n in 1..=time.steps() {
            acc += 0.5 * k * (integrand[n - 1] + integrand[n]);
            values.push(factors[n] * (initial + v_c / (4.0 * PI) * acc));
        }
        Ok(Self { initial, values })
    }

    pub fn at(&self, n: usize) -> f64 {
        self.values[n]
    }
}

/// `Ĩ(tⁿ)` for a single step.
pub fn mean_i(
    traj: &Trajectory,
    path: &RadiusPath,
    initial: f64,
    n: usize,
) -> Result<f64, ReconstructError> {
    if n > traj.steps() {
        return Err(ReconstructError::MissingSnapshot(n));
    }
    Ok(MeanPath::new(traj, path, initial)?.at(n))
}

/// Height samples `Uⁿ` at a retained step.
pub fn reconstruct_u(
    traj: &Trajectory,
    means: &MeanPath,
    n: usize,
) -> Result<PeriodicField, ReconstructError> {
    let v = traj.snapshot(n).ok_or(ReconstructError::MissingSnapshot(n))?;
    Ok(reconstruct_from_field(v, means.at(n)))
}

/// Interface points `(R + U_i)(cos σ_i, sin σ_i)`, closed by repeating the
/// first point.
pub fn curve_points(u: &PeriodicField, radius: f64) -> Vec<(f64, f64)> {
    let grid = u.grid();
    let mut pts: Vec<(f64, f64)> = (0..u.len())
        .map(|i| {
            let s = grid.sigma(i);
            let r = radius + u.values()[i];
            (r * s.cos(), r * s.sin())
        })
        .collect();
    pts.push(pts[0]);
    pts
}

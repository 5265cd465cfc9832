//! Discrete spatial operators: the periodic second difference `Δ_h`, its
//! square `Δ_h²`, the fourth-order linear operator `L_h`, and the quadratic
//! stencils `φ` (approximating `6h·v v_σ`) and `ψ` (its linearization).
//!
//! `Δ_h` is the standard `(V_{i-1} − 2V_i + V_{i+1}) / h²`. The identity
//! `−(Δ_h V, V)_h = |V|²_{1,h}` only holds with the minus sign on the centre
//! coefficient.

use crate::field::{FieldError, PeriodicField};
use crate::model::ModelParams;

/// Coefficients of `L_h = c4 Δ_h² + c2 Δ_h + c0` at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOperatorCoefficients {
    pub c4: f64,
    pub c2: f64,
    pub c0: f64,
}

impl LinearOperatorCoefficients {
    pub fn new(params: &ModelParams, radius: f64) -> Self {
        let r2 = radius * radius;
        Self {
            c4: params.delta / (r2 * r2),
            c2: (params.excess() + params.delta / r2) / r2,
            c0: params.excess() / r2,
        }
    }

    /// Eigenvalue of `L_h` on a mode whose `−Δ_h` symbol is `s`.
    pub fn symbol(&self, s: f64) -> f64 {
        self.c4 * s * s - self.c2 * s + self.c0
    }
}

/// Eigenvalue of `−Δ_h` on `cos(mσ)`: `(4/h²) sin²(mh/2)`.
pub fn laplacian_symbol(m: usize, h: f64) -> f64 {
    let s = (0.5 * m as f64 * h).sin();
    4.0 * s * s / (h * h)
}

pub fn laplacian_h(v: &PeriodicField) -> PeriodicField {
    let inv_h2 = 1.0 / (v.h() * v.h());
    PeriodicField::from_index_fn(v.grid(), |i| {
        let i = i as isize;
        (v.at(i - 1) - 2.0 * v.at(i) + v.at(i + 1)) * inv_h2
    })
}

pub fn bilaplacian_h(v: &PeriodicField) -> PeriodicField {
    laplacian_h(&laplacian_h(v))
}

/// `φ(V, W)_i = (V_{i−1} + V_i + V_{i+1})(W_{i+1} − W_{i−1})`.
pub fn phi(v: &PeriodicField, w: &PeriodicField) -> Result<PeriodicField, FieldError> {
    v.ensure_same_grid(w)?;
    Ok(PeriodicField::from_index_fn(v.grid(), |i| {
        let i = i as isize;
        (v.at(i - 1) + v.at(i) + v.at(i + 1)) * (w.at(i + 1) - w.at(i - 1))
    }))
}

/// `ψ(V, W)_i = −(2V_{i−1} + V_i)W_{i−1} + (V_{i+1} − V_{i−1})W_i + (2V_{i+1} + V_i)W_{i+1}`.
pub fn psi(v: &PeriodicField, w: &PeriodicField) -> Result<PeriodicField, FieldError> {
    v.ensure_same_grid(w)?;
    Ok(PeriodicField::from_index_fn(v.grid(), |i| {
        let i = i as isize;
        let (vm, v0, vp) = (v.at(i - 1), v.at(i), v.at(i + 1));
        -(2.0 * vm + v0) * w.at(i - 1) + (vp - vm) * w.at(i) + (2.0 * vp + v0) * w.at(i + 1)
    }))
}

/// `L_h V` evaluated with a single five-point stencil pass.
pub fn apply_l(coeffs: &LinearOperatorCoefficients, v: &PeriodicField) -> PeriodicField {
    let h2 = v.h() * v.h();
    let a4 = coeffs.c4 / (h2 * h2);
    let a2 = coeffs.c2 / h2;
    PeriodicField::from_index_fn(v.grid(), |i| {
        let i = i as isize;
        let (vm2, vm1, v0, vp1, vp2) = (v.at(i - 2), v.at(i - 1), v.at(i), v.at(i + 1), v.at(i + 2));
        let d4 = (vm2 + vp2) - 4.0 * (vm1 + vp1) + 6.0 * v0;
        let d2 = (vm1 + vp1) - 2.0 * v0;
        a4 * d4 + a2 * d2 + coeffs.c0 * v0
    })
}

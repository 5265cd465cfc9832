//! Linear stability of the circle solution and the truncated modal system.
//!
//! Writing `u = Σ u_m(t) e^{imσ}` turns the height equation into
//!
//! ```text
//! u̇_m = λ_m u_m − (v_c / 2R²) Σ_{m₁+m₂=m, m₁m₂≠0} m₁ m₂ u_{m₁} u_{m₂}
//! ```
//!
//! with `λ_{±1} = 0` and, for `|m| ≥ 2`,
//! `λ_m = −δm⁴/R⁴ + (m²/R²)(α − 1 + δ/R²) − (α − 1)/R²`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::field::{mode_amplitudes, PeriodicField};
use crate::model::ModelParams;
use crate::radius::{RadiusError, RadiusPath};

/// Two growth rates closer than this are treated as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("mode {0} is outside the admissible range")]
    InvalidMode(i64),
    #[error("radius {0} must be positive")]
    InvalidRadius(f64),
    #[error("modal state violates u_(-m) = conj(u_m) at m = {mode} (defect {defect:e})")]
    RealityViolation { mode: usize, defect: f64 },
    #[error("modal state sizes differ ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error(transparent)]
    Radius(#[from] RadiusError),
}

/// The `|m| ≥ 2` growth-rate expression, valid for any integer `m`.
fn rate_formula(m: i64, radius: f64, params: &ModelParams) -> f64 {
    let m2 = (m * m) as f64;
    let r2 = radius * radius;
    let a = params.excess();
    (-params.delta * m2 * m2 / r2 + m2 * (a + params.delta / r2) - a) / r2
}

/// Growth rate of mode `m` for every integer, with `λ_{±1} = 0` exactly.
pub fn modal_rate(m: i64, radius: f64, params: &ModelParams) -> f64 {
    if m.abs() == 1 {
        0.0
    } else {
        rate_formula(m, radius, params)
    }
}

/// `λ_m` for `m ≥ 1`.
pub fn lambda_m(m: i64, radius: f64, params: &ModelParams) -> Result<f64, StabilityError> {
    if m <= 0 {
        return Err(StabilityError::InvalidMode(m));
    }
    if !(radius > 0.0) {
        return Err(StabilityError::InvalidRadius(radius));
    }
    Ok(modal_rate(m, radius, params))
}

/// `δ = (α − 1) R² / m²`, the neutral curve of mode `m`.
pub fn neutral_delta(m: i64, radius: f64, alpha: f64) -> Result<f64, StabilityError> {
    if m < 2 {
        return Err(StabilityError::InvalidMode(m));
    }
    if !(radius > 0.0) {
        return Err(StabilityError::InvalidRadius(radius));
    }
    Ok((alpha - 1.0) * radius * radius / (m * m) as f64)
}

/// `R_* = 2 √(δ / (α − 1))`.
pub fn critical_radius(params: &ModelParams) -> f64 {
    2.0 * (params.delta / params.excess()).sqrt()
}

/// Index of the largest value, preferring the smaller index on ties.
fn argmax_with_ties(items: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (m, v) in items {
        match best {
            Some((_, bv)) if v <= bv + TIE_TOLERANCE => {}
            _ => best = Some((m, v)),
        }
    }
    best.map(|(m, _)| m)
}

/// Dominant Fourier mode `m ≥ 1` of a field by amplitude.
pub fn dominant_mode(field: &PeriodicField) -> Option<usize> {
    let amps = mode_amplitudes(field);
    let scale = amps.iter().skip(1).fold(0.0_f64, |a, b| a.max(*b));
    if scale == 0.0 {
        return None;
    }
    // Amplitude ties are judged relative to the field's own scale.
    let mut best: Option<(usize, f64)> = None;
    for (m, a) in amps.iter().enumerate().skip(1) {
        match best {
            Some((_, b)) if *a <= b + TIE_TOLERANCE * scale => {}
            _ => best = Some((m, *a)),
        }
    }
    best.map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Radius at which the (frozen) linearization is evaluated.
    pub radius: f64,
    /// `(m, λ_m)` for `m = 1..=m_max`.
    pub lambda: Vec<(usize, f64)>,
    pub unstable_modes: Vec<usize>,
    pub predicted_dominant: Option<usize>,
    pub measured_dominant: Option<usize>,
    pub r_star: f64,
    pub classification: &'static str,
}

impl SpectralReport {
    pub fn lambda_at(&self, m: usize) -> Option<f64> {
        self.lambda.iter().find(|(k, _)| *k == m).map(|(_, l)| *l)
    }
}

pub fn spectral_report(
    radius: f64,
    params: &ModelParams,
    m_max: usize,
    probe: Option<&PeriodicField>,
) -> Result<SpectralReport, StabilityError> {
    if m_max < 2 {
        return Err(StabilityError::InvalidMode(m_max as i64));
    }
    let lambda = (1..=m_max)
        .map(|m| Ok((m, lambda_m(m as i64, radius, params)?)))
        .collect::<Result<Vec<_>, StabilityError>>()?;
    let unstable_modes: Vec<usize> = lambda
        .iter()
        .filter(|(m, l)| *m >= 2 && *l > 0.0)
        .map(|(m, _)| *m)
        .collect();
    let predicted_dominant = argmax_with_ties(
        lambda
            .iter()
            .filter(|(m, _)| unstable_modes.contains(m))
            .copied(),
    );
    Ok(SpectralReport {
        radius,
        lambda,
        classification: if unstable_modes.is_empty() {
            "neutrally stable"
        } else {
            "unstable"
        },
        unstable_modes,
        predicted_dominant,
        measured_dominant: probe.and_then(dominant_mode),
        r_star: critical_radius(params),
    })
}

/// Complex amplitudes `u_m`, `−m_max ≤ m ≤ m_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    m_max: usize,
    coeffs: Vec<Complex64>,
}

impl ModalState {
    pub fn zeros(m_max: usize) -> Self {
        Self {
            m_max,
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * m_max + 1],
        }
    }

    /// Builds a real-field state from `u_m`, `m = 0..=m_max`.
    pub fn from_nonnegative(modes: &[Complex64]) -> Self {
        let m_max = modes.len() - 1;
        let mut s = Self::zeros(m_max);
        s.coeffs[m_max] = Complex64::new(modes[0].re, 0.0);
        for (m, c) in modes.iter().enumerate().skip(1) {
            s.set(m as i64, *c);
            s.set(-(m as i64), c.conj());
        }
        s
    }

    /// State of `u(σ) = Σ p cos(mσ)`.
    pub fn from_cosines(m_max: usize, terms: &[(f64, usize)]) -> Self {
        let mut s = Self::zeros(m_max);
        for &(p, m) in terms {
            if m == 0 {
                s.coeffs[m_max] += p;
            } else if m <= m_max {
                let half = Complex64::new(0.5 * p, 0.0);
                let i = m as i64;
                s.set(i, s.get(i) + half);
                s.set(-i, s.get(-i) + half);
            }
        }
        s
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn get(&self, m: i64) -> Complex64 {
        self.coeffs[(m + self.m_max as i64) as usize]
    }

    pub fn set(&mut self, m: i64, value: Complex64) {
        let idx = (m + self.m_max as i64) as usize;
        self.coeffs[idx] = value;
    }

    pub fn amplitude(&self, m: i64) -> f64 {
        self.get(m).norm()
    }

    pub fn check_reality(&self) -> Result<(), StabilityError> {
        let scale = self.coeffs.iter().fold(1.0_f64, |a, c| a.max(c.norm()));
        for m in 0..=self.m_max {
            let defect = (self.get(-(m as i64)) - self.get(m as i64).conj()).norm();
            if defect > 1e-12 * scale {
                return Err(StabilityError::RealityViolation { mode: m, defect });
            }
        }
        Ok(())
    }

    fn axpy(&self, c: f64, other: &Self) -> Self {
        Self {
            m_max: self.m_max,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b * c)
                .collect(),
        }
    }
}

/// Right-hand side of the truncated modal system at a frozen radius.
pub fn galerkin_rhs(
    state: &ModalState,
    radius: f64,
    params: &ModelParams,
) -> Result<ModalState, StabilityError> {
    if !(radius > 0.0) {
        return Err(StabilityError::InvalidRadius(radius));
    }
    state.check_reality()?;
    let mm = state.m_max as i64;
    let weight = params.v_c / (2.0 * radius * radius);
    let mut out = ModalState::zeros(state.m_max);
    for m in -mm..=mm {
        let mut conv = Complex64::new(0.0, 0.0);
        let lo = (m - mm).max(-mm);
        let hi = (m + mm).min(mm);
        for m1 in lo..=hi {
            let m2 = m - m1;
            if m1 == 0 || m2 == 0 {
                continue;
            }
            conv += (m1 * m2) as f64 * state.get(m1) * state.get(m2);
        }
        out.set(m, modal_rate(m, radius, params) * state.get(m) - weight * conv);
    }
    Ok(out)
}

/// Classical fourth-order Runge-Kutta integration of the modal system from
/// `t0` to `t0 + steps·dt`, with the radius taken from `path`.
pub fn integrate_galerkin(
    initial: &ModalState,
    path: &RadiusPath,
    t0: f64,
    dt: f64,
    steps: usize,
) -> Result<ModalState, StabilityError> {
    let params = *path.params();
    let mut u = initial.clone();
    for n in 0..steps {
        let t = t0 + n as f64 * dt;
        let r0 = path.radius(t)?;
        let rh = path.radius(t + 0.5 * dt)?;
        let r1 = path.radius(t + dt)?;
        let k1 = galerkin_rhs(&u, r0, &params)?;
        let k2 = galerkin_rhs(&u.axpy(0.5 * dt, &k1), rh, &params)?;
        let k3 = galerkin_rhs(&u.axpy(0.5 * dt, &k2), rh, &params)?;
        let k4 = galerkin_rhs(&u.axpy(dt, &k3), r1, &params)?;
        u = u
            .axpy(dt / 6.0, &k1)
            .axpy(dt / 3.0, &k2)
            .axpy(dt / 3.0, &k3)
            .axpy(dt / 6.0, &k4);
    }
    Ok(u)
}

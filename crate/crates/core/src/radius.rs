//! Radius of the expanding circle.
//!
//! `R(t)` solves `dR/dt = v_c + (α − 1)/R` with `R(0) = R₀`. Integrating
//! gives the implicit relation
//!
//! ```text
//! (1/v_c) { R − R₀ − ((α − 1)/v_c) log[(v_c R + α − 1)/(v_c R₀ + α − 1)] } = t
//! ```
//!
//! whose left side is strictly increasing in `R`, so `R(t)` is recovered by
//! bracketed, safeguarded Newton iteration.

use thiserror::Error;

use crate::model::{ModelParams, ParamError, TimeGrid};

const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiusError {
    #[error("radius {0} must be positive")]
    NonPositiveRadius(f64),
    #[error("time {0} must be finite and non-negative")]
    InvalidTime(f64),
    #[error("radius root-finding did not converge at t = {time} (residual {residual:e})")]
    NoConvergence { time: f64, residual: f64 },
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// `dR/dt = v_c + (α − 1)/R`.
pub fn radius_rate(radius: f64, params: &ModelParams) -> Result<f64, RadiusError> {
    if !(radius > 0.0) {
        return Err(RadiusError::NonPositiveRadius(radius));
    }
    Ok(params.v_c + params.excess() / radius)
}

/// The expanding-circle radius law for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusLaw {
    params: ModelParams,
}

impl RadiusLaw {
    pub fn new(params: ModelParams) -> Result<Self, RadiusError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn initial_rate(&self) -> f64 {
        self.params.v_c + self.params.excess() / self.params.r0
    }

    /// Time at which the circle reaches `radius`, from the implicit relation.
    pub fn time_to_reach(&self, radius: f64) -> f64 {
        let ModelParams { v_c, r0, .. } = self.params;
        let a = self.params.excess();
        let dr = radius - r0;
        let log_term = (v_c * dr / (v_c * r0 + a)).ln_1p();
        (dr - a / v_c * log_term) / v_c
    }

    pub fn radius_at(&self, t: f64) -> Result<f64, RadiusError> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(RadiusError::InvalidTime(t));
        }
        let r0 = self.params.r0;
        if t == 0.0 {
            return Ok(r0);
        }
        let tol = 1e-12 * t.max(1.0);
        let mut lo = r0;
        let mut hi = r0 + self.initial_rate() * t + 1.0;
        while self.time_to_reach(hi) < t {
            hi = r0 + 2.0 * (hi - r0);
        }
        // Secant-free start: explicit Euler guess clipped to the bracket.
        let mut r = (r0 + self.initial_rate() * t).clamp(lo, hi);
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ITERATIONS {
            residual = self.time_to_reach(r) - t;
            if residual.abs() <= tol {
                return Ok(r);
            }
            if residual > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            // d(time)/dR = 1/rate(R).
            let rate = self.params.v_c + self.params.excess() / r;
            let newton = r - residual * rate;
            r = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                return Ok(r);
            }
        }
        Err(RadiusError::NoConvergence { time: t, residual })
    }

    pub fn rate_at(&self, t: f64) -> Result<f64, RadiusError> {
        radius_rate(self.radius_at(t)?, &self.params)
    }

    /// `R_{n+1/2} = R((n + 1/2) k)`.
    pub fn radius_at_half_step(&self, n: usize, grid: &TimeGrid) -> Result<f64, RadiusError> {
        self.radius_at(grid.half_time(n))
    }
}

/// Radius history used by the time stepper: the expanding law, or a radius
/// frozen at a constant value (used for modal cross-checks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusPath {
    Expanding(RadiusLaw),
    Frozen { radius: f64, params: ModelParams },
}

impl RadiusPath {
    pub fn expanding(params: ModelParams) -> Result<Self, RadiusError> {
        Ok(Self::Expanding(RadiusLaw::new(params)?))
    }

    pub fn frozen(params: ModelParams) -> Result<Self, RadiusError> {
        params.validate()?;
        Ok(Self::Frozen {
            radius: params.r0,
            params,
        })
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            Self::Expanding(law) => law.params(),
            Self::Frozen { params, .. } => params,
        }
    }

    pub fn radius(&self, t: f64) -> Result<f64, RadiusError> {
        match self {
            Self::Expanding(law) => law.radius_at(t),
            Self::Frozen { radius, .. } => {
                if !(t >= 0.0) {
                    return Err(RadiusError::InvalidTime(t));
                }
                Ok(*radius)
            }
        }
    }

    pub fn rate(&self, t: f64) -> Result<f64, RadiusError> {
        match self {
            Self::Expanding(law) => law.rate_at(t),
            Self::Frozen { .. } => Ok(0.0),
        }
    }

    /// `E(t) = exp(−∫₀ᵗ (α − 1)/R(τ)² dτ)`, the integrating factor of the
    /// mean-height equation. On the expanding law this is `Ṙ(t)/Ṙ(0)`.
    pub fn decay_factor(&self, t: f64) -> Result<f64, RadiusError> {
        match self {
            Self::Expanding(law) => Ok(law.rate_at(t)? / law.initial_rate()),
            Self::Frozen { radius, params } => {
                Ok((-params.excess() * t / (radius * radius)).exp())
            }
        }
    }
}

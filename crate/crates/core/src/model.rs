//! Model constants and the time grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{name} = {value} is invalid: {reason}")]
    Invalid {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), ParamError> {
    if value.is_finite() && ok {
        Ok(())
    } else {
        Err(ParamError::Invalid {
            name,
            value,
            reason,
        })
    }
}

/// Physical constants of the height equation plus the initial radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Fourth-order stiffness `δ`.
    pub delta: f64,
    /// Scaled Lewis number `α`.
    pub alpha: f64,
    /// Front speed `v_c`.
    pub v_c: f64,
    /// Initial radius `R₀`.
    pub r0: f64,
}

impl ModelParams {
    pub fn new(delta: f64, alpha: f64, v_c: f64, r0: f64) -> Result<Self, ParamError> {
        let p = Self {
            delta,
            alpha,
            v_c,
            r0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check("delta", self.delta, self.delta > 0.0, "must be positive")?;
        check("alpha", self.alpha, self.alpha > 1.0, "must exceed 1")?;
        check("v_c", self.v_c, self.v_c > 0.0, "must be positive")?;
        check("R0", self.r0, self.r0 > 0.0, "must be positive")?;
        Ok(())
    }

    /// `α − 1`.
    pub fn excess(&self) -> f64 {
        self.alpha - 1.0
    }

    pub fn with_r0(mut self, r0: f64) -> Self {
        self.r0 = r0;
        self
    }
}

/// Uniform time grid `tⁿ = n k`, `n = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    k: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(k: f64, steps: usize) -> Result<Self, ParamError> {
        check("k", k, k > 0.0, "must be positive")?;
        if steps == 0 {
            return Err(ParamError::Invalid {
                name: "N",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(Self { k, steps })
    }

    /// Grid with `N = round(T / k)`, rejecting horizons that are not a whole
    /// number of steps to 1e-9 relative.
    pub fn from_horizon(k: f64, horizon: f64) -> Result<Self, ParamError> {
        check("T", horizon, horizon > 0.0, "must be positive")?;
        check("k", k, k > 0.0, "must be positive")?;
        let n = (horizon / k).round();
        if n < 1.0 || ((n * k - horizon) / horizon).abs() > 1e-9 {
            return Err(ParamError::Invalid {
                name: "T",
                value: horizon,
                reason: "must be a positive integer multiple of k",
            });
        }
        Self::new(k, n as usize)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.k * self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.k * n as f64
    }

    pub fn half_time(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.k
    }
}

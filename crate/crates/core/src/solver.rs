//! Time integration of the gradient equation
//!
//! ```text
//! v_t + (δ/R⁴) v_σσσσ + (1/R²)(α − 1 + δ/R²) v_σσ + ((α − 1)/R²) v − (v_c/R²) v v_σ = 0
//! ```
//!
//! on the periodic σ-grid.
//!
//! Two integrators are provided. The Crank-Nicolson reference
//! ([`cn_step`], [`run_reference`]) solves the midpoint scheme
//!
//! ```text
//! (Vⁿ⁺¹ − Vⁿ)/k + L_h^{n+1/2} V^{n+1/2} = v_c/(6h R²_{n+1/2}) · φ(V^{n+1/2}, V^{n+1/2})
//! ```
//!
//! to a residual tolerance. The linearized scheme ([`run`]) takes one
//! linear solve for the first step ([`newton_first_step`]), then for every
//! later step extrapolates a predictor `V̂ⁿ⁺¹ = 2Vⁿ − Vⁿ⁻¹` and performs `j_n`
//! iterations of
//!
//! ```text
//! (W^{j+1} − Vⁿ)/k + ½ L_h^{n+1/2}(W^{j+1} + Vⁿ)
//!     = v_c/(24h R²_{n+1/2}) · [ψ(Vⁿ + V̂, Wʲ − V̂) + φ(Vⁿ + V̂, Vⁿ + V̂)]
//! ```
//!
//! Every linear system has the matrix `(1/k) I + ½ L_h^{n+1/2}`, which is
//! symmetric circulant and is inverted mode by mode in the Fourier basis.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::field::{norm_h, FieldError, GridSpec, PeriodicField, Spectrum};
use crate::model::{ModelParams, TimeGrid};
use crate::operators::{apply_l, laplacian_symbol, phi, psi, LinearOperatorCoefficients};
use crate::radius::{RadiusError, RadiusPath};
use crate::reconstruct::piecewise_linear_square_integral;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Radius(#[from] RadiusError),
    #[error("step {step}: modal denominator of mode {mode} is {value:e} (system not positive definite)")]
    SingularMode { step: usize, mode: usize, value: f64 },
    #[error("step {step}: linear solve residual {residual:e} exceeds tolerance")]
    LinearResidual { step: usize, residual: f64 },
    #[error("step {step}: no convergence after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("step index {step} outside 0..{steps}")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// How many linearized iterations `j_n` each step performs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NewtonPolicy {
    Fixed(usize),
    /// Iterate until the relative Crank-Nicolson residual drops below `tol`.
    Residual { tol: f64, max_iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub newton: NewtonPolicy,
    /// Relative residual tolerance accepted from each circulant solve.
    pub linear_tol: f64,
    /// Relative residual tolerance of the Crank-Nicolson reference solver.
    pub reference_tol: f64,
    pub reference_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton: NewtonPolicy::Fixed(3),
            linear_tol: 1e-10,
            reference_tol: 1e-12,
            reference_max_iterations: 50,
        }
    }
}

impl SolverConfig {
    pub fn with_fixed_iterations(mut self, jn: usize) -> Self {
        self.newton = NewtonPolicy::Fixed(jn);
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        match self.newton {
            NewtonPolicy::Fixed(0) => return Err(SolverError::Config("j_n must be at least 1".into())),
            NewtonPolicy::Residual { tol, max_iterations } if !(tol > 0.0) || max_iterations == 0 => {
                return Err(SolverError::Config("residual policy needs tol > 0 and max_iterations ≥ 1".into()))
            }
            _ => {}
        }
        if !(self.linear_tol > 0.0) || !(self.reference_tol > 0.0) {
            return Err(SolverError::Config("tolerances must be positive".into()));
        }
        if self.reference_max_iterations == 0 {
            return Err(SolverError::Config("reference_max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Existence conditions for the discrete scheme, with the computed bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    /// `√(δ/(α − 1))`; the initial radius must exceed it.
    pub r0_bound: f64,
    pub r0_ok: bool,
    /// Radius at the horizon.
    pub r_final: f64,
    /// `8δ/(α − 1 − δ/R(T)²)²`; the time step must be below it.
    pub k_bound: f64,
    pub k_ok: bool,
    /// `k / h^{1/4}` and `k / h^{1/5}`, recorded for the mesh-ratio regimes.
    pub k_over_h_quarter: f64,
    pub k_over_h_fifth: f64,
}

impl Admissibility {
    pub fn passes(&self) -> bool {
        self.r0_ok && self.k_ok
    }
}

impl fmt::Display for Admissibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "R0 > {:.6} [{}], k < {:.6e} [{}] (R(T) = {:.6})",
            self.r0_bound,
            if self.r0_ok { "ok" } else { "FAIL" },
            self.k_bound,
            if self.k_ok { "ok" } else { "FAIL" },
            self.r_final
        )
    }
}

pub fn check_admissibility(
    params: &ModelParams,
    time: &TimeGrid,
    grid: &GridSpec,
    path: &RadiusPath,
) -> Result<Admissibility, RadiusError> {
    let r0_bound = (params.delta / params.excess()).sqrt();
    let r_final = path.radius(time.horizon())?;
    let gap = params.excess() - params.delta / (r_final * r_final);
    let k_bound = if gap == 0.0 {
        f64::INFINITY
    } else {
        8.0 * params.delta / (gap * gap)
    };
    let k = time.k();
    Ok(Admissibility {
        r0_bound,
        r0_ok: params.r0 > r0_bound,
        r_final,
        k_bound,
        k_ok: k < k_bound,
        k_over_h_quarter: k / grid.h().powf(0.25),
        k_over_h_fifth: k / grid.h().powf(0.2),
    })
}

/// Everything a step needs: grid, time grid, radius history and FFT plans.
#[derive(Debug, Clone)]
pub struct StepContext {
    grid: GridSpec,
    time: TimeGrid,
    path: RadiusPath,
    spectrum: Spectrum,
    /// `−Δ_h` symbol of every FFT bin.
    symbols: Vec<f64>,
    /// `R(tⁿ)` for `n = 0..=N`.
    node_radii: Vec<f64>,
    /// `R((n + ½)k)` for `n = 0..N`.
    half_radii: Vec<f64>,
}

impl StepContext {
    pub fn new(grid: GridSpec, time: TimeGrid, path: RadiusPath) -> Result<Self, SolverError> {
        let node_radii = (0..=time.steps())
            .map(|n| path.radius(time.time(n)))
            .collect::<Result<Vec<_>, _>>()?;
        let half_radii = (0..time.steps())
            .map(|n| path.radius(time.half_time(n)))
            .collect::<Result<Vec<_>, _>>()?;
        let symbols = (0..grid.len()).map(|m| laplacian_symbol(m, grid.h())).collect();
        Ok(Self {
            grid,
            time,
            path,
            spectrum: Spectrum::new(grid.len()),
            symbols,
            node_radii,
            half_radii,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn path(&self) -> &RadiusPath {
        &self.path
    }

    pub fn params(&self) -> &ModelParams {
        self.path.params()
    }

    pub fn admissibility(&self) -> Result<Admissibility, RadiusError> {
        check_admissibility(self.params(), &self.time, &self.grid, &self.path)
    }

    pub fn node_radius(&self, n: usize) -> f64 {
        self.node_radii[n]
    }

    pub fn node_radii(&self) -> &[f64] {
        &self.node_radii
    }

    pub fn half_radius(&self, n: usize) -> Result<f64, SolverError> {
        self.half_radii
            .get(n)
            .copied()
            .ok_or(SolverError::StepOutOfRange {
                step: n,
                steps: self.time.steps(),
            })
    }

    pub fn coefficients(&self, n: usize) -> Result<LinearOperatorCoefficients, SolverError> {
        Ok(LinearOperatorCoefficients::new(self.params(), self.half_radius(n)?))
    }

    /// `v_c / (6 h R²_{n+1/2})`, the weight of `φ` in the midpoint scheme.
    pub fn nonlinear_weight(&self, n: usize) -> Result<f64, SolverError> {
        let r = self.half_radius(n)?;
        Ok(self.params().v_c / (6.0 * self.grid.h() * r * r))
    }

    /// Upper bound on `‖L_h‖` in the discrete L² norm.
    fn operator_norm_bound(&self, coeffs: &LinearOperatorCoefficients) -> f64 {
        let smax = 4.0 / (self.grid.h() * self.grid.h());
        coeffs.c4 * smax * smax + coeffs.c2 * smax + coeffs.c0.abs()
    }

    /// Modal denominators `1/k + ½ μ_m` of the step matrix.
    pub fn modal_denominators(&self, n: usize) -> Result<Vec<f64>, SolverError> {
        let coeffs = self.coefficients(n)?;
        let inv_k = 1.0 / self.time.k();
        Ok(self
            .symbols
            .iter()
            .map(|&s| inv_k + 0.5 * coeffs.symbol(s))
            .collect())
    }
}

/// Crank-Nicolson residual of the pair `(Vⁿ, Vⁿ⁺¹)` at step `n`.
pub fn cn_residual(
    ctx: &StepContext,
    vn: &PeriodicField,
    vnp1: &PeriodicField,
    n: usize,
) -> Result<PeriodicField, SolverError> {
    vn.ensure_same_grid(vnp1)?;
    let k = ctx.time.k();
    let coeffs = ctx.coefficients(n)?;
    let mid = (vn + vnp1).scale(0.5);
    let dt = (vnp1 - vn).scale(1.0 / k);
    let nonlinear = phi(&mid, &mid)?.scale(ctx.nonlinear_weight(n)?);
    Ok(&(&dt + &apply_l(&coeffs, &mid)) - &nonlinear)
}

/// `‖cn_residual‖_h` divided by the magnitude of the terms it balances.
pub fn relative_cn_residual(
    ctx: &StepContext,
    vn: &PeriodicField,
    vnp1: &PeriodicField,
    n: usize,
) -> Result<f64, SolverError> {
    let r = norm_h(&cn_residual(ctx, vn, vnp1, n)?);
    let coeffs = ctx.coefficients(n)?;
    let mid = (vn + vnp1).scale(0.5);
    let scale = (norm_h(vn) + norm_h(vnp1)) / ctx.time.k()
        + ctx.operator_norm_bound(&coeffs) * norm_h(&mid)
        + norm_h(&phi(&mid, &mid)?) * ctx.nonlinear_weight(n)?;
    Ok(if scale > 0.0 { r / scale } else { r })
}

/// Solves `((1/k) I + ½ L_h^{n+1/2}) X = rhs` by Fourier diagonalization.
pub fn solve_linear_cn(
    ctx: &StepContext,
    rhs: &PeriodicField,
    n: usize,
    linear_tol: f64,
) -> Result<PeriodicField, SolverError> {
    let denominators = ctx.modal_denominators(n)?;
    let inv_k = 1.0 / ctx.time.k();
    if let Some((mode, &value)) = denominators
        .iter()
        .enumerate()
        .find(|(_, d)| d.abs() <= 1e-12 * inv_k)
    {
        return Err(SolverError::SingularMode { step: n, mode, value });
    }
    let coeffs: Vec<Complex64> = ctx
        .spectrum
        .forward(rhs)
        .into_iter()
        .zip(&denominators)
        .map(|(c, d)| c / d)
        .collect();
    let x = ctx.spectrum.inverse(ctx.grid, coeffs);

    let lin = ctx.coefficients(n)?;
    let applied = x.scale(inv_k).axpy(0.5, &apply_l(&lin, &x));
    let residual = norm_h(&(&applied - rhs));
    let scale = norm_h(rhs) + (inv_k + 0.5 * ctx.operator_norm_bound(&lin)) * norm_h(&x);
    if residual > linear_tol * scale.max(f64::MIN_POSITIVE) {
        return Err(SolverError::LinearResidual {
            step: n,
            residual: residual / scale,
        });
    }
    Ok(x)
}

/// `Vⁿ/k − ½ L_h^{n+1/2} Vⁿ`, the explicit half of every step's right side.
fn explicit_part(ctx: &StepContext, vn: &PeriodicField, n: usize) -> Result<PeriodicField, SolverError> {
    let coeffs = ctx.coefficients(n)?;
    Ok(vn.scale(1.0 / ctx.time.k()).axpy(-0.5, &apply_l(&coeffs, vn)))
}

/// First step: `(Ŵ¹ − v⁰)/k + ½ L_h^{1/2}(v⁰ + Ŵ¹) = v_c/(6h R²_{1/2}) φ(v⁰, v⁰)`.
pub fn newton_first_step(
    ctx: &StepContext,
    v0: &PeriodicField,
    linear_tol: f64,
) -> Result<PeriodicField, SolverError> {
    let rhs = explicit_part(ctx, v0, 0)?.axpy(ctx.nonlinear_weight(0)?, &phi(v0, v0)?);
    solve_linear_cn(ctx, &rhs, 0, linear_tol)
}

/// Linear predictor `2Vⁿ − Vⁿ⁻¹`.
pub fn extrapolate(vn: &PeriodicField, vnm1: &PeriodicField) -> Result<PeriodicField, SolverError> {
    vn.ensure_same_grid(vnm1)?;
    Ok(vn.scale(2.0).axpy(-1.0, vnm1))
}

/// One linearized iteration for step `n → n+1`; `vhat` is the predictor and
/// `wj` the current iterate.
pub fn newton_iterate(
    ctx: &StepContext,
    vn: &PeriodicField,
    vhat: &PeriodicField,
    wj: &PeriodicField,
    n: usize,
    linear_tol: f64,
) -> Result<PeriodicField, SolverError> {
    vn.ensure_same_grid(vhat)?;
    vn.ensure_same_grid(wj)?;
    let anchor = vn + vhat;
    let correction = wj - vhat;
    let forcing = &psi(&anchor, &correction)? + &phi(&anchor, &anchor)?;
    // v_c/(24 h R²) = ¼ of the midpoint weight.
    let weight = 0.25 * ctx.nonlinear_weight(n)?;
    let rhs = explicit_part(ctx, vn, n)?.axpy(weight, &forcing);
    solve_linear_cn(ctx, &rhs, n, linear_tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Crank-Nicolson reference step: repeats the linearized iteration with the
/// predictor refreshed to the latest iterate until the relative residual is
/// at most `tol`. The fixed point solves the midpoint scheme exactly.
pub fn cn_step(
    ctx: &StepContext,
    vn: &PeriodicField,
    n: usize,
    initial_guess: Option<&PeriodicField>,
    config: &SolverConfig,
) -> Result<(PeriodicField, StepStats), SolverError> {
    let mut w = initial_guess.cloned().unwrap_or_else(|| vn.clone());
    let mut residual = relative_cn_residual(ctx, vn, &w, n)?;
    if residual <= config.reference_tol {
        return Ok((
            w,
            StepStats {
                iterations: 0,
                relative_residual: residual,
            },
        ));
    }
    for it in 1..=config.reference_max_iterations {
        w = newton_iterate(ctx, vn, &w, &w, n, config.linear_tol)?;
        residual = relative_cn_residual(ctx, vn, &w, n)?;
        if residual <= config.reference_tol {
            return Ok((
                w,
                StepStats {
                    iterations: it,
                    relative_residual: residual,
                },
            ));
        }
    }
    Err(SolverError::NoConvergence {
        step: n,
        iterations: config.reference_max_iterations,
        residual,
    })
}

/// Time history produced by [`run`] or [`run_reference`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: GridSpec,
    time: TimeGrid,
    stride: usize,
    snapshots: BTreeMap<usize, PeriodicField>,
    /// `R(tⁿ)`, `n = 0..=N`.
    pub radius: Vec<f64>,
    /// `Sⁿ = h Σ Vⁿ_i`, `n = 0..=N`.
    pub means: Vec<f64>,
    /// `∫₀^{2π} Ṽ(σ, tⁿ)² dσ`, `n = 0..=N`.
    pub v_squared: Vec<f64>,
    /// Per-step diagnostics for `n → n+1`.
    pub steps: Vec<StepStats>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    fn start(ctx: &StepContext, v0: &PeriodicField, stride: usize) -> Self {
        let mut traj = Self {
            grid: ctx.grid,
            time: ctx.time,
            stride: stride.max(1),
            snapshots: BTreeMap::new(),
            radius: ctx.node_radii.clone(),
            means: Vec::with_capacity(ctx.time.steps() + 1),
            v_squared: Vec::with_capacity(ctx.time.steps() + 1),
            steps: Vec::with_capacity(ctx.time.steps()),
            warnings: Vec::new(),
        };
        let mass = v0.sum_h();
        if mass.abs() > 1e-12 * (1.0 + norm_h(v0)) {
            traj.warnings.push(format!(
                "initial gradient has non-zero mean (h·ΣV = {mass:e}); it decays geometrically"
            ));
        }
        traj.record(0, v0);
        traj
    }

    fn record(&mut self, n: usize, v: &PeriodicField) {
        self.means.push(v.sum_h());
        self.v_squared.push(piecewise_linear_square_integral(v));
        if n.is_multiple_of(self.stride) || n == self.time.steps() {
            self.snapshots.insert(n, v.clone());
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn steps(&self) -> usize {
        self.time.steps()
    }

    pub fn snapshot(&self, n: usize) -> Option<&PeriodicField> {
        self.snapshots.get(&n)
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (usize, &PeriodicField)> {
        self.snapshots.iter().map(|(n, v)| (*n, v))
    }

    pub fn last(&self) -> &PeriodicField {
        &self.snapshots[&self.time.steps()]
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.means.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// Linearized scheme: first step by [`newton_first_step`], then predictor
/// plus `j_n` iterations of [`newton_iterate`]. Snapshots are retained every
/// `stride` steps (and at the final step).
pub fn run(
    ctx: &StepContext,
    config: &SolverConfig,
    v0: &PeriodicField,
    stride: usize,
) -> Result<Trajectory, SolverError> {
    config.validate()?;
    if v0.len() != ctx.grid.len() {
        return Err(FieldError::DimensionMismatch {
            left: v0.len(),
            right: ctx.grid.len(),
        }
        .into());
    }
    let mut traj = Trajectory::start(ctx, v0, stride);
    let steps = ctx.time.steps();

    let mut prev = v0.clone();
    let mut current = newton_first_step(ctx, v0, config.linear_tol)?;
    traj.steps.push(StepStats {
        iterations: 1,
        relative_residual: relative_cn_residual(ctx, &prev, &current, 0)?,
    });
    traj.record(1, &current);

    for n in 1..steps {
        let vhat = extrapolate(&current, &prev)?;
        let mut w = vhat.clone();
        let stats = match config.newton {
            NewtonPolicy::Fixed(jn) => {
                for _ in 0..jn {
                    w = newton_iterate(ctx, &current, &vhat, &w, n, config.linear_tol)?;
                }
                StepStats {
                    iterations: jn,
                    relative_residual: relative_cn_residual(ctx, &current, &w, n)?,
                }
            }
            NewtonPolicy::Residual { tol, max_iterations } => {
                let mut it = 0;
                let mut res = f64::INFINITY;
                while it < max_iterations {
                    w = newton_iterate(ctx, &current, &vhat, &w, n, config.linear_tol)?;
                    it += 1;
                    res = relative_cn_residual(ctx, &current, &w, n)?;
                    if res <= tol {
                        break;
                    }
                }
                if res > tol {
                    return Err(SolverError::NoConvergence {
                        step: n,
                        iterations: it,
                        residual: res,
                    });
                }
                StepStats {
                    iterations: it,
                    relative_residual: res,
                }
            }
        };
        traj.steps.push(stats);
        traj.record(n + 1, &w);
        prev = std::mem::replace(&mut current, w);
    }
    Ok(traj)
}

/// Crank-Nicolson reference trajectory, each step solved by [`cn_step`].
pub fn run_reference(
    ctx: &StepContext,
    config: &SolverConfig,
    v0: &PeriodicField,
    stride: usize,
) -> Result<Trajectory, SolverError> {
    config.validate()?;
    if v0.len() != ctx.grid.len() {
        return Err(FieldError::DimensionMismatch {
            left: v0.len(),
            right: ctx.grid.len(),
        }
        .into());
    }
    let mut traj = Trajectory::start(ctx, v0, stride);
    let mut prev: Option<PeriodicField> = None;
    let mut current = v0.clone();
    for n in 0..ctx.time.steps() {
        let guess = match &prev {
            Some(p) => Some(extrapolate(&current, p)?),
            None => None,
        };
        let (next, stats) = cn_step(ctx, &current, n, guess.as_ref(), config)?;
        traj.steps.push(stats);
        traj.record(n + 1, &next);
        prev = Some(std::mem::replace(&mut current, next));
    }
    Ok(traj)
}

/// Mean after one step of either scheme: the nonlinear terms have zero mass,
/// so `Sⁿ⁺¹ = (2R² − k(α − 1)) / (2R² + k(α − 1)) · Sⁿ` with `R = R_{n+1/2}`.
pub fn mean_ratio(params: &ModelParams, half_radius: f64, k: f64) -> f64 {
    let r2 = 2.0 * half_radius * half_radius;
    let a = k * params.excess();
    (r2 - a) / (r2 + a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_params() -> ModelParams {
        ModelParams::new(4.0, 1.5, 0.001, 6.0).unwrap()
    }

    fn context(params: ModelParams, j: usize, k: f64, steps: usize) -> StepContext {
        StepContext::new(
            GridSpec::new(j).unwrap(),
            TimeGrid::new(k, steps).unwrap(),
            RadiusPath::expanding(params).unwrap(),
        )
        .unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, j: usize, amp: f64) -> PeriodicField {
        PeriodicField::new((0..j).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
    }

    /// Dense step matrix `(1/k) I + ½ L_h` assembled entry by entry.
    fn dense_step_matrix(ctx: &StepContext, n: usize) -> nalgebra::DMatrix<f64> {
        let j = ctx.grid().len();
        let c = ctx.coefficients(n).unwrap();
        let h2 = ctx.grid().h().powi(2);
        let mut m = nalgebra::DMatrix::<f64>::zeros(j, j);
        let idx = |i: usize, d: isize| ((i as isize + d).rem_euclid(j as isize)) as usize;
        for i in 0..j {
            m[(i, i)] += 1.0 / ctx.time().k();
            for (d, w4) in [(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)] {
                m[(i, idx(i, d))] += 0.5 * c.c4 * w4 / (h2 * h2);
            }
            for (d, w2) in [(-1, 1.0), (0, -2.0), (1, 1.0)] {
                m[(i, idx(i, d))] += 0.5 * c.c2 * w2 / h2;
            }
            m[(i, i)] += 0.5 * c.c0;
        }
        m
    }

    fn dense_solve(ctx: &StepContext, n: usize, rhs: &PeriodicField) -> Vec<f64> {
        let m = dense_step_matrix(ctx, n);
        let b = nalgebra::DVector::from_column_slice(rhs.values());
        m.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn admissibility_examples() {
        let p = small_params();
        let ctx = context(p, 64, 0.01, 100);
        let adm = ctx.admissibility().unwrap();
        assert!((adm.r0_bound - 8f64.sqrt()).abs() < 1e-14);
        assert!(adm.passes());
        assert!(adm.k_bound > 100.0);
        let bad = ModelParams::new(4.0, 1.5, 0.001, 2.0).unwrap();
        let adm = context(bad, 64, 0.01, 10).admissibility().unwrap();
        assert!(!adm.r0_ok);
    }

    #[test]
    fn admissible_denominators_are_positive() {
        // Minimum of the modal symbol over s ∈ [0, 4/h²] stays above −2/k.
        let p = small_params();
        let ctx = context(p, 256, 0.01, 10000);
        assert!(ctx.admissibility().unwrap().passes());
        for n in [0, 5000, 9999] {
            let c = ctx.coefficients(n).unwrap();
            let smax = 4.0 / ctx.grid().h().powi(2);
            let min_symbol = (0..=10_000)
                .map(|i| c.symbol(smax * i as f64 / 10_000.0))
                .fold(f64::INFINITY, f64::min);
            assert!(1.0 / ctx.time().k() + 0.5 * min_symbol > 0.0);
            assert!(ctx.modal_denominators(n).unwrap().iter().all(|d| *d > 0.0));
        }
    }

    #[test]
    fn linear_solve_zero_and_cosine() {
        let ctx = context(small_params(), 64, 0.01, 10);
        let g = ctx.grid();
        let x = solve_linear_cn(&ctx, &PeriodicField::zeros(g), 0, 1e-10).unwrap();
        assert_eq!(x.max_abs(), 0.0);
        for m in [0usize, 2, 7, 31] {
            let rhs = PeriodicField::from_fn(g, |s| (m as f64 * s).cos());
            let d = ctx.modal_denominators(0).unwrap()[m];
            let x = solve_linear_cn(&ctx, &rhs, 0, 1e-10).unwrap();
            for i in 0..64 {
                assert!((x.values()[i] - rhs.values()[i] / d).abs() <= 1e-12 * (1.0 / d).max(1.0));
            }
        }
    }

    #[test]
    fn linear_solve_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ctx = context(small_params(), 16, 0.05, 4);
        let rhs = random_field(&mut rng, 16, 1.0);
        let x = solve_linear_cn(&ctx, &rhs, 2, 1e-10).unwrap();
        let oracle = dense_solve(&ctx, 2, &rhs);
        for i in 0..16 {
            assert!((x.values()[i] - oracle[i]).abs() <= 1e-10 * oracle[i].abs().max(1.0));
        }
    }

    #[test]
    fn first_step_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ctx = context(small_params(), 8, 0.01, 4);
        let v0 = random_field(&mut rng, 8, 0.5);
        let w1 = newton_first_step(&ctx, &v0, 1e-10).unwrap();
        // Dense: M Ŵ = v0/k − ½ L v0 + c φ(v0, v0).
        let c = ctx.coefficients(0).unwrap();
        let lv0 = apply_l(&c, &v0);
        let f = phi(&v0, &v0).unwrap();
        let w = ctx.nonlinear_weight(0).unwrap();
        let rhs = PeriodicField::from_index_fn(v0.grid(), |i| {
            v0.values()[i] / 0.01 - 0.5 * lv0.values()[i] + w * f.values()[i]
        });
        let oracle = dense_solve(&ctx, 0, &rhs);
        for i in 0..8 {
            assert!((w1.values()[i] - oracle[i]).abs() <= 1e-10 * oracle[i].abs().max(1.0));
        }
        let zero = PeriodicField::zeros(v0.grid());
        assert_eq!(newton_first_step(&ctx, &zero, 1e-10).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn newton_iterate_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ctx = context(ModelParams::new(4.0, 1.28, 0.1, 60.0).unwrap(), 8, 0.02, 6);
        let vn = random_field(&mut rng, 8, 0.5);
        let vhat = random_field(&mut rng, 8, 0.5);
        let wj = random_field(&mut rng, 8, 0.5);
        let n = 3;
        let got = newton_iterate(&ctx, &vn, &vhat, &wj, n, 1e-10).unwrap();
        let c = ctx.coefficients(n).unwrap();
        let lvn = apply_l(&c, &vn);
        let a = &vn + &vhat;
        let forcing = &psi(&a, &(&wj - &vhat)).unwrap() + &phi(&a, &a).unwrap();
        let r = ctx.half_radius(n).unwrap();
        let weight = 0.1 / (24.0 * ctx.grid().h() * r * r);
        let rhs = PeriodicField::from_index_fn(vn.grid(), |i| {
            vn.values()[i] / 0.02 - 0.5 * lvn.values()[i] + weight * forcing.values()[i]
        });
        let oracle = dense_solve(&ctx, n, &rhs);
        for i in 0..8 {
            assert!((got.values()[i] - oracle[i]).abs() <= 1e-10 * oracle[i].abs().max(1.0));
        }
        let z = PeriodicField::zeros(vn.grid());
        assert_eq!(newton_iterate(&ctx, &z, &z, &z, n, 1e-10).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn extrapolation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_field(&mut rng, 8, 1.0);
        assert_eq!(extrapolate(&v, &v).unwrap(), v);
        let z = PeriodicField::zeros(v.grid());
        assert_eq!(extrapolate(&v, &z).unwrap(), v.scale(2.0));
        // Linear-in-time data: Vⁿ = a + n b is predicted exactly.
        let b = random_field(&mut rng, 8, 1.0);
        let at = |n: f64| v.axpy(n, &b);
        let pred = extrapolate(&at(4.0), &at(3.0)).unwrap();
        let exact = at(5.0);
        for i in 0..8 {
            assert!((pred.values()[i] - exact.values()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn cn_residual_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ctx = context(small_params(), 8, 0.01, 4);
        let vn = random_field(&mut rng, 8, 1.0);
        let vp = random_field(&mut rng, 8, 1.0);
        let got = cn_residual(&ctx, &vn, &vp, 1).unwrap();
        let h = ctx.grid().h();
        let r = ctx.half_radius(1).unwrap();
        let p = small_params();
        let (c4, c2, c0) = (p.delta / r.powi(4), (0.5 + p.delta / (r * r)) / (r * r), 0.5 / (r * r));
        let idx = |i: usize, d: isize| ((i as isize + d).rem_euclid(8)) as usize;
        let mid: Vec<f64> = (0..8).map(|i| 0.5 * (vn.values()[i] + vp.values()[i])).collect();
        let lap = |f: &dyn Fn(usize) -> f64, i: usize| (f(idx(i, -1)) - 2.0 * f(i) + f(idx(i, 1))) / (h * h);
        let m = |i: usize| mid[i];
        let lapm: Vec<f64> = (0..8).map(|i| lap(&m, i)).collect();
        let lm = |i: usize| lapm[i];
        for i in 0..8 {
            let dt = (vp.values()[i] - vn.values()[i]) / 0.01;
            let l = c4 * lap(&lm, i) + c2 * lapm[i] + c0 * mid[i];
            let nl = 0.001 / (6.0 * h * r * r)
                * (mid[idx(i, -1)] + mid[i] + mid[idx(i, 1)])
                * (mid[idx(i, 1)] - mid[idx(i, -1)]);
            let oracle = dt + l - nl;
            assert!((got.values()[i] - oracle).abs() <= 1e-13 * oracle.abs().max(1.0) * 10.0);
        }
        let z = PeriodicField::zeros(vn.grid());
        assert_eq!(cn_residual(&ctx, &z, &z, 0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn cn_step_zero_is_fixed_point() {
        let ctx = context(small_params(), 16, 0.01, 3);
        let z = PeriodicField::zeros(ctx.grid());
        let (next, stats) = cn_step(&ctx, &z, 0, None, &SolverConfig::default()).unwrap();
        assert_eq!(next.max_abs(), 0.0);
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn cn_step_converges_to_tolerance() {
        let ctx = context(ModelParams::new(4.0, 1.28, 0.1, 60.0).unwrap(), 64, 0.05, 3);
        let v0 = PeriodicField::from_fn(ctx.grid(), |s| -(2.0 * s).sin() + 0.3 * (5.0 * s).cos());
        let cfg = SolverConfig::default();
        let (next, stats) = cn_step(&ctx, &v0, 0, None, &cfg).unwrap();
        assert!(stats.relative_residual <= cfg.reference_tol);
        assert!(relative_cn_residual(&ctx, &v0, &next, 0).unwrap() <= cfg.reference_tol);
        // One more linearized iterate at the exact solution reproduces it.
        let again = newton_iterate(&ctx, &v0, &next, &next, 0, cfg.linear_tol).unwrap();
        let diff = norm_h(&(&again - &next));
        assert!(diff <= 1e-12 * norm_h(&next));
    }

    #[test]
    fn single_mode_linear_growth() {
        // Infinitesimal data: one step multiplies mode m by (1 − kμ/2)/(1 + kμ/2).
        let p = small_params();
        let ctx = context(p, 64, 0.01, 2);
        let eps = 1e-6;
        let v0 = PeriodicField::from_fn(ctx.grid(), |s| eps * -2.0 * (2.0 * s).sin());
        let (v1, _) = cn_step(&ctx, &v0, 0, None, &SolverConfig::default()).unwrap();
        let mu = ctx.coefficients(0).unwrap().symbol(laplacian_symbol(2, ctx.grid().h()));
        let k = 0.01;
        let expected = (1.0 - 0.5 * k * mu) / (1.0 + 0.5 * k * mu);
        let ratio = crate::field::mode_amplitudes(&v1)[2] / crate::field::mode_amplitudes(&v0)[2];
        assert!(((ratio - expected) / expected).abs() < 1e-3);

        let eps = 1e-8;
        let v0 = PeriodicField::from_fn(ctx.grid(), |s| eps * (5.0 * s).cos());
        let (v1, _) = cn_step(&ctx, &v0, 0, None, &SolverConfig::default()).unwrap();
        let mu = ctx.coefficients(0).unwrap().symbol(laplacian_symbol(5, ctx.grid().h()));
        let expected = (1.0 - 0.5 * k * mu) / (1.0 + 0.5 * k * mu);
        let ratio = crate::field::mode_amplitudes(&v1)[5] / crate::field::mode_amplitudes(&v0)[5];
        assert!(((ratio - expected) / expected).abs() < 1e-4);
    }

    #[test]
    fn mean_recursion_both_schemes() {
        let p = small_params();
        let ctx = context(p, 64, 0.01, 200);
        let v0 = PeriodicField::from_fn(ctx.grid(), |s| {
            -0.2 * (2.0 * s).sin() - 0.3 * (3.0 * s).sin() + 1.0 / (2.0 * std::f64::consts::PI)
        });
        let cfg = SolverConfig::default();
        for traj in [run(&ctx, &cfg, &v0, 50).unwrap(), run_reference(&ctx, &cfg, &v0, 50).unwrap()] {
            assert!(!traj.warnings.is_empty());
            let mut s = traj.means[0];
            for n in 0..200 {
                s *= mean_ratio(&p, ctx.half_radius(n).unwrap(), 0.01);
                assert!(((traj.means[n + 1] - s) / s).abs() <= 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn mean_ratio_unit_step_form() {
        // With k = 1 the ratio is (2R² − α + 1)/(2R² + α − 1).
        let p = small_params();
        let r: f64 = 7.3;
        let expected = (2.0 * r * r - p.alpha + 1.0) / (2.0 * r * r + p.alpha - 1.0);
        assert!((mean_ratio(&p, r, 1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_trajectory() {
        let ctx = context(small_params(), 32, 0.01, 20);
        let z = PeriodicField::zeros(ctx.grid());
        let traj = run(&ctx, &SolverConfig::default(), &z, 1).unwrap();
        assert!(traj.means.iter().all(|s| *s == 0.0));
        assert!(traj.snapshots().all(|(_, v)| v.max_abs() == 0.0));
        assert!(traj.warnings.is_empty());
    }

    #[test]
    fn deterministic_runs() {
        let ctx = context(small_params(), 64, 0.01, 50);
        let v0 = PeriodicField::from_fn(ctx.grid(), |s| -0.2 * (2.0 * s).sin() - 0.3 * (3.0 * s).sin());
        let a = run(&ctx, &SolverConfig::default(), &v0, 1).unwrap();
        let b = run(&ctx, &SolverConfig::default(), &v0, 1).unwrap();
        for ((_, x), (_, y)) in a.snapshots().zip(b.snapshots()) {
            assert!(x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn residual_policy_converges() {
        let ctx = context(ModelParams::new(4.0, 1.28, 0.1, 60.0).unwrap(), 64, 0.02, 50);
        let v0 = PeriodicField::from_fn(ctx.grid(), |s| -(2.0 * s).sin());
        let cfg = SolverConfig {
            newton: NewtonPolicy::Residual {
                tol: 1e-12,
                max_iterations: 20,
            },
            ..SolverConfig::default()
        };
        let traj = run(&ctx, &cfg, &v0, 10).unwrap();
        assert!(traj.steps[1..].iter().all(|s| s.relative_residual <= 1e-12));
        assert!(SolverConfig::default().with_fixed_iterations(0).validate().is_err());
    }

    #[test]
    fn singular_mode_reported() {
        // Far outside the admissible regime the step matrix loses definiteness.
        let p = ModelParams::new(0.01, 3.0, 0.1, 1.0).unwrap();
        let ctx = context(p, 64, 50.0, 2);
        let dens = ctx.modal_denominators(0).unwrap();
        assert!(dens.iter().any(|d| *d < 0.0));
    }
}

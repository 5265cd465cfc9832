//! End-to-end experiments: single runs, the self-convergence ladder, the
//! wavenumber-selection suite, the modal cross-check and stability maps.

use serde::Serialize;
use thiserror::Error;

use crate::exec::{map_collect, Execution};
use crate::field::{mode_amplitudes, norm_h, FieldError, GridSpec, PeriodicField};
use crate::model::{ModelParams, ParamError, TimeGrid};
use crate::radius::{RadiusError, RadiusPath};
use crate::reconstruct::{reconstruct_u, MeanPath, ReconstructError};
use crate::solver::{run, run_reference, Admissibility, SolverConfig, SolverError, StepContext, Trajectory};
use crate::stability::{
    critical_radius, dominant_mode, integrate_galerkin, neutral_delta, spectral_report, ModalState,
    SpectralReport, StabilityError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Radius(#[from] RadiusError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("scheme is not admissible: {0}")]
    NotAdmissible(Admissibility),
    #[error("invalid setup: {0}")]
    Setup(String),
}

/// How the initial gradient is obtained from `u₀ = Σ p cos(mσ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum V0Method {
    #[default]
    Analytic,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Predictor plus a fixed (or residual-controlled) number of linearized
    /// iterations per step.
    #[default]
    Newton,
    /// Midpoint scheme solved to the reference tolerance every step.
    Reference,
}

pub fn initial_u(grid: GridSpec, terms: &[(f64, usize)]) -> PeriodicField {
    PeriodicField::from_fn(grid, |s| {
        terms.iter().map(|&(p, m)| p * (m as f64 * s).cos()).sum()
    })
}

pub fn initial_v(grid: GridSpec, terms: &[(f64, usize)], method: V0Method) -> PeriodicField {
    match method {
        V0Method::Analytic => PeriodicField::from_fn(grid, |s| {
            terms
                .iter()
                .map(|&(p, m)| -p * m as f64 * (m as f64 * s).sin())
                .sum()
        }),
        V0Method::Centered => {
            let u = initial_u(grid, terms);
            let inv = 0.5 / grid.h();
            PeriodicField::from_index_fn(grid, |i| {
                let i = i as isize;
                (u.at(i + 1) - u.at(i - 1)) * inv
            })
        }
    }
}

/// Mean of `u₀`: only `m = 0` terms contribute.
pub fn initial_mean(terms: &[(f64, usize)]) -> f64 {
    terms.iter().filter(|(_, m)| *m == 0).map(|(p, _)| p).sum()
}

#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub params: ModelParams,
    pub j: usize,
    pub time: TimeGrid,
    pub terms: Vec<(f64, usize)>,
    pub v0_method: V0Method,
    /// Overrides the mean of `u₀`.
    pub initial_mean: Option<f64>,
    pub solver: SolverConfig,
    pub scheme: Scheme,
    pub frozen_radius: bool,
    pub stride: usize,
    /// Run even when the admissibility check fails.
    pub force: bool,
}

impl SimulationSetup {
    pub fn new(params: ModelParams, j: usize, time: TimeGrid, terms: Vec<(f64, usize)>) -> Self {
        Self {
            params,
            j,
            time,
            terms,
            v0_method: V0Method::Analytic,
            initial_mean: None,
            solver: SolverConfig::default(),
            scheme: Scheme::Newton,
            frozen_radius: false,
            stride: 1,
            force: false,
        }
    }

    pub fn path(&self) -> Result<RadiusPath, RadiusError> {
        if self.frozen_radius {
            RadiusPath::frozen(self.params)
        } else {
            RadiusPath::expanding(self.params)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub path: RadiusPath,
    pub means: MeanPath,
    pub admissibility: Admissibility,
    pub warnings: Vec<String>,
}

impl Simulation {
    pub fn u_at(&self, n: usize) -> Result<PeriodicField, ReconstructError> {
        reconstruct_u(&self.trajectory, &self.means, n)
    }

    pub fn final_u(&self) -> Result<PeriodicField, ReconstructError> {
        self.u_at(self.trajectory.steps())
    }

    /// `(Ĩ(tⁿ⁺¹) − Ĩ(tⁿ⁻¹)) / 2k` against the mean-height equation
    /// `dI/dt = −(α − 1) I / R² + v_c Q / (4π R²)`, at interior nodes.
    /// Returns `(max residual, max magnitude of the right side terms)`.
    pub fn mean_ode_residual(&self) -> (f64, f64) {
        let traj = &self.trajectory;
        let params = self.path.params();
        let k = traj.time().k();
        let rhs = |n: usize| {
            let r2 = traj.radius[n] * traj.radius[n];
            let decay = -params.excess() * self.means.at(n) / r2;
            let source = params.v_c * traj.v_squared[n] / (4.0 * std::f64::consts::PI * r2);
            (decay + source, decay.abs().max(source.abs()))
        };
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for n in 1..traj.steps() {
            let d = (self.means.at(n + 1) - self.means.at(n - 1)) / (2.0 * k);
            let (f, s) = rhs(n);
            worst = worst.max((d - f).abs());
            scale = scale.max(s);
        }
        (worst, scale)
    }
}

pub fn simulate(setup: &SimulationSetup) -> Result<Simulation, ExperimentError> {
    setup.params.validate()?;
    let grid = GridSpec::new(setup.j)?;
    let path = setup.path()?;
    let ctx = StepContext::new(grid, setup.time, path)?;
    let admissibility = ctx.admissibility()?;
    let mut warnings = Vec::new();
    if !admissibility.passes() {
        if !setup.force {
            return Err(ExperimentError::NotAdmissible(admissibility));
        }
        warnings.push(format!("admissibility check failed: {admissibility}"));
    }
    let v0 = initial_v(grid, &setup.terms, setup.v0_method);
    let trajectory = match setup.scheme {
        Scheme::Newton => run(&ctx, &setup.solver, &v0, setup.stride)?,
        Scheme::Reference => run_reference(&ctx, &setup.solver, &v0, setup.stride)?,
    };
    warnings.extend(trajectory.warnings.iter().cloned());
    let mean0 = setup.initial_mean.unwrap_or_else(|| initial_mean(&setup.terms));
    let means = MeanPath::new(&trajectory, &path, mean0)?;
    Ok(Simulation {
        trajectory,
        path,
        means,
        admissibility,
        warnings,
    })
}

/// Copies `fine` onto the coarse grid by taking every `ratio`-th node.
fn restrict(fine: &PeriodicField, coarse: GridSpec, ratio: usize) -> PeriodicField {
    PeriodicField::from_index_fn(coarse, |i| fine.values()[i * ratio])
}

#[derive(Debug, Clone)]
pub struct EocSetup {
    pub params: ModelParams,
    pub terms: Vec<(f64, usize)>,
    pub horizon: f64,
    pub base_j: usize,
    pub levels: usize,
    /// Reference resolution relative to the finest level.
    pub reference_factor: usize,
    pub solver: SolverConfig,
    pub v0_method: V0Method,
}

impl EocSetup {
    /// Smooth single-mode data on the large circle, `T = 1`, `J = 64, 128, 256`.
    pub fn standard() -> Self {
        Self {
            params: ModelParams::new(4.0, 1.28, 0.1, 60.0).expect("valid constants"),
            terms: vec![(0.5, 2)],
            horizon: 1.0,
            base_j: 64,
            levels: 3,
            reference_factor: 8,
            solver: SolverConfig::default(),
            v0_method: V0Method::Analytic,
        }
    }

    fn time_for(&self, j: usize) -> Result<TimeGrid, ParamError> {
        TimeGrid::from_horizon(self.horizon / j as f64, self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EocLevel {
    pub j: usize,
    pub h: f64,
    pub k: f64,
    /// `max_n ‖Vⁿ − V_refⁿ‖_h` for the midpoint solve at this level.
    pub error_v: f64,
    /// Same for the reconstructed heights.
    pub error_u: f64,
    /// Errors of the linearized scheme against the reference.
    pub newton_error_v: f64,
    pub newton_error_u: f64,
    /// `max_n ‖Vⁿ_Newton − Vⁿ_CN‖_h` at this level.
    pub newton_vs_cn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EocReport {
    pub reference_j: usize,
    pub levels: Vec<EocLevel>,
    pub eoc_v: Vec<f64>,
    pub eoc_u: Vec<f64>,
    pub eoc_newton_v: Vec<f64>,
    pub eoc_newton_u: Vec<f64>,
    /// Least-squares slope of `log₂ e` against `−log₂ h` over all levels.
    pub overall_v: f64,
    pub overall_u: f64,
}

impl EocReport {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        [&self.eoc_v, &self.eoc_u, &self.eoc_newton_v, &self.eoc_newton_u]
            .iter()
            .all(|e| e.iter().all(|x| (lo..=hi).contains(x)))
    }

    pub fn newton_within_self_error(&self) -> bool {
        self.levels.iter().all(|l| l.newton_vs_cn <= l.error_v)
    }
}

fn pair_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn fitted_order(hs: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.log2()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Per-level maximum errors of `sim` against `reference` at the level's nodes.
fn level_errors(
    sim: &Simulation,
    reference: &Simulation,
    ratio: usize,
) -> Result<(f64, f64), ExperimentError> {
    let grid = sim.trajectory.grid();
    let mut ev = 0.0_f64;
    let mut eu = 0.0_f64;
    for n in 0..=sim.trajectory.steps() {
        let v = sim
            .trajectory
            .snapshot(n)
            .ok_or(ReconstructError::MissingSnapshot(n))?;
        let fine_n = n * ratio;
        let vr = reference
            .trajectory
            .snapshot(fine_n)
            .ok_or(ReconstructError::MissingSnapshot(fine_n))?;
        ev = ev.max(norm_h(&(v - &restrict(vr, grid, ratio))));
        let u = sim.u_at(n)?;
        let ur = reference.u_at(fine_n)?;
        eu = eu.max(norm_h(&(&u - &restrict(&ur, grid, ratio))));
    }
    Ok((ev, eu))
}

fn max_difference(a: &Trajectory, b: &Trajectory) -> f64 {
    a.snapshots()
        .filter_map(|(n, v)| b.snapshot(n).map(|w| norm_h(&(v - w))))
        .fold(0.0, f64::max)
}

pub fn run_eoc(setup: &EocSetup, exec: Execution) -> Result<EocReport, ExperimentError> {
    if setup.levels < 3 {
        return Err(ExperimentError::Setup(format!(
            "the ladder needs at least 3 levels, got {}",
            setup.levels
        )));
    }
    if setup.reference_factor < 2 || !setup.reference_factor.is_power_of_two() {
        return Err(ExperimentError::Setup("reference factor must be a power of two".into()));
    }
    let finest_j = setup.base_j << (setup.levels - 1);
    let reference_j = finest_j * setup.reference_factor;

    // Abort before any run if the finest level is not admissible.
    let path = RadiusPath::expanding(setup.params)?;
    let finest_time = setup.time_for(finest_j)?;
    let adm = crate::solver::check_admissibility(
        &setup.params,
        &finest_time,
        &GridSpec::new(finest_j)?,
        &path,
    )?;
    if !adm.passes() {
        return Err(ExperimentError::NotAdmissible(adm));
    }

    let make = |j: usize, scheme: Scheme, stride: usize| -> Result<SimulationSetup, ExperimentError> {
        let mut s = SimulationSetup::new(setup.params, j, setup.time_for(j)?, setup.terms.clone());
        s.scheme = scheme;
        s.solver = setup.solver;
        s.v0_method = setup.v0_method;
        s.stride = stride;
        Ok(s)
    };

    // Job 0 is the reference; then (CN, Newton) per level.
    let mut jobs = vec![make(reference_j, Scheme::Reference, reference_j / finest_j)?];
    for l in 0..setup.levels {
        let j = setup.base_j << l;
        jobs.push(make(j, Scheme::Reference, 1)?);
        jobs.push(make(j, Scheme::Newton, 1)?);
    }
    let mut results = map_collect(exec, jobs, |s| simulate(&s)).into_iter();
    let reference = results.next().expect("reference job")?;

    let mut levels = Vec::with_capacity(setup.levels);
    for l in 0..setup.levels {
        let j = setup.base_j << l;
        let cn = results.next().expect("level job")?;
        let newton = results.next().expect("level job")?;
        let ratio = reference_j / j;
        let (error_v, error_u) = level_errors(&cn, &reference, ratio)?;
        let (newton_error_v, newton_error_u) = level_errors(&newton, &reference, ratio)?;
        levels.push(EocLevel {
            j,
            h: cn.trajectory.grid().h(),
            k: cn.trajectory.time().k(),
            error_v,
            error_u,
            newton_error_v,
            newton_error_u,
            newton_vs_cn: max_difference(&newton.trajectory, &cn.trajectory),
        });
    }
    let col = |f: fn(&EocLevel) -> f64| levels.iter().map(f).collect::<Vec<_>>();
    let hs = col(|l| l.h);
    Ok(EocReport {
        reference_j,
        eoc_v: pair_orders(&col(|l| l.error_v)),
        eoc_u: pair_orders(&col(|l| l.error_u)),
        eoc_newton_v: pair_orders(&col(|l| l.newton_error_v)),
        eoc_newton_u: pair_orders(&col(|l| l.newton_error_u)),
        overall_v: fitted_order(&hs, &col(|l| l.error_v)),
        overall_u: fitted_order(&hs, &col(|l| l.error_u)),
        levels,
    })
}

/// Cosine data `Σ p cos(mσ)` over four consecutive modes starting at `R₀/3`.
pub fn suite_terms(r0: f64, amplitude: f64) -> Vec<(f64, usize)> {
    let first = (r0 / 3.0).round() as usize;
    (first..first + 4).map(|m| (amplitude, m)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSettings {
    pub j: usize,
    pub k: f64,
    pub horizon: f64,
    pub amplitude: f64,
    pub m_max: usize,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            j: 256,
            k: 0.01,
            horizon: 100.0,
            amplitude: 0.1,
            m_max: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteRow {
    pub r0: f64,
    pub initial_modes: Vec<usize>,
    pub unstable_modes: Vec<usize>,
    pub predicted_dominant: Option<usize>,
    pub measured_dominant: Option<usize>,
    /// Whether the fastest mode at `R₀` is present in the initial data.
    pub predicted_seeded: bool,
    pub pass: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub simulation: Option<Box<Simulation>>,
}

pub const SUITE_RADII: [f64; 5] = [6.0, 9.0, 12.0, 15.0, 18.0];

/// Membership rule: the measured mode must be unstable at `R₀`, and must be
/// the fastest one whenever that mode was seeded.
pub fn suite_pass(report: &SpectralReport, seeded: bool) -> bool {
    match report.measured_dominant {
        Some(m) if report.unstable_modes.contains(&m) => {
            !seeded || report.predicted_dominant == Some(m)
        }
        _ => false,
    }
}

fn suite_row(r0: f64, base: &ModelParams, s: &SuiteSettings, keep: bool) -> SuiteRow {
    let terms = suite_terms(r0, s.amplitude);
    let initial_modes: Vec<usize> = terms.iter().map(|t| t.1).collect();
    let params = base.with_r0(r0);
    let outcome = (|| -> Result<(SpectralReport, Simulation), ExperimentError> {
        let time = TimeGrid::from_horizon(s.k, s.horizon)?;
        let mut setup = SimulationSetup::new(params, s.j, time, terms.clone());
        setup.stride = time.steps();
        let sim = simulate(&setup)?;
        let u = sim.final_u()?;
        Ok((spectral_report(r0, &params, s.m_max, Some(&u))?, sim))
    })();
    match outcome {
        Ok((report, sim)) => {
            let seeded = report
                .predicted_dominant
                .is_some_and(|m| initial_modes.contains(&m));
            SuiteRow {
                r0,
                pass: suite_pass(&report, seeded),
                initial_modes,
                unstable_modes: report.unstable_modes,
                predicted_dominant: report.predicted_dominant,
                measured_dominant: report.measured_dominant,
                predicted_seeded: seeded,
                error: None,
                simulation: keep.then(|| Box::new(sim)),
            }
        }
        Err(e) => SuiteRow {
            r0,
            initial_modes,
            unstable_modes: Vec::new(),
            predicted_dominant: None,
            measured_dominant: None,
            predicted_seeded: false,
            pass: false,
            error: Some(e.to_string()),
            simulation: None,
        },
    }
}

/// Runs the five wavenumber-selection configurations. With `keep` the
/// simulations are retained in the rows.
pub fn wavenumber_suite(
    base: &ModelParams,
    settings: &SuiteSettings,
    exec: Execution,
    keep: bool,
) -> Vec<SuiteRow> {
    map_collect(exec, SUITE_RADII.to_vec(), |r0| suite_row(r0, base, settings, keep))
}

/// Small-circle selection constants: `δ = 4`, `α = 1.5`, `v_c = 0.001`, `R₀ = 6`.
pub fn selection_params() -> ModelParams {
    ModelParams::new(4.0, 1.5, 0.001, 6.0).expect("valid constants")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GalerkinComparison {
    pub m_max: usize,
    pub horizon: f64,
    pub frozen_radius: bool,
    /// `(m, |u_m| finite differences, |u_m| modal system)` for `m = 0..=m_max`.
    pub modes: Vec<(usize, f64, f64)>,
    pub max_amplitude: f64,
}

impl GalerkinComparison {
    pub fn relative_error(&self, m: usize) -> f64 {
        let (_, fd, gk) = self.modes[m];
        (fd - gk).abs() / gk.abs().max(f64::MIN_POSITIVE)
    }

    /// Largest relative mismatch over modes whose modal amplitude is at least
    /// `floor`.
    pub fn worst_relative(&self, floor: f64) -> f64 {
        self.modes
            .iter()
            .filter(|(_, _, g)| *g >= floor)
            .map(|(m, _, _)| self.relative_error(*m))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinSettings {
    pub j: usize,
    pub k: f64,
    pub horizon: f64,
    pub m_max: usize,
    pub frozen_radius: bool,
}

impl Default for GalerkinSettings {
    fn default() -> Self {
        Self {
            j: 256,
            k: 0.01,
            horizon: 5.0,
            m_max: 16,
            frozen_radius: true,
        }
    }
}

/// Integrates the modal system and the finite-difference scheme from the same
/// cosine data and compares `|u_m|` at the horizon.
pub fn galerkin_cross_check(
    params: &ModelParams,
    terms: &[(f64, usize)],
    s: &GalerkinSettings,
) -> Result<GalerkinComparison, ExperimentError> {
    let time = TimeGrid::from_horizon(s.k, s.horizon)?;
    let mut setup = SimulationSetup::new(*params, s.j, time, terms.to_vec());
    setup.frozen_radius = s.frozen_radius;
    setup.stride = time.steps();
    let sim = simulate(&setup)?;
    let fd = mode_amplitudes(&sim.final_u()?);

    let initial = ModalState::from_cosines(s.m_max, terms);
    let modal = integrate_galerkin(&initial, &sim.path, 0.0, s.k, time.steps())?;
    let modes: Vec<(usize, f64, f64)> = (0..=s.m_max)
        .map(|m| (m, fd[m], modal.amplitude(m as i64)))
        .collect();
    let max_amplitude = modes.iter().fold(0.0_f64, |a, (_, f, g)| a.max(*f).max(*g));
    Ok(GalerkinComparison {
        m_max: s.m_max,
        horizon: s.horizon,
        frozen_radius: s.frozen_radius,
        modes,
        max_amplitude,
    })
}

/// Radius drift `R(T)/R₀ − 1` along the expanding law.
pub fn radius_drift(params: &ModelParams, horizon: f64) -> Result<f64, RadiusError> {
    Ok(RadiusPath::expanding(*params)?.radius(horizon)? / params.r0 - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySample {
    pub radius: f64,
    /// `δ` on the neutral curve of `m = 2..=m_max`.
    pub neutral_delta: Vec<f64>,
    pub unstable_modes: Vec<usize>,
    pub predicted_dominant: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityMap {
    pub params: ModelParams,
    pub m_max: usize,
    pub r_star: f64,
    pub samples: Vec<StabilitySample>,
}

/// Neutral curves and unstable sets at `count` radii spread evenly over
/// `[r_min, r_max]`. A radius of zero is allowed for the curves; the
/// spectral columns are left empty there.
pub fn stability_map(
    params: &ModelParams,
    r_min: f64,
    r_max: f64,
    count: usize,
    m_max: usize,
    exec: Execution,
) -> Result<StabilityMap, ExperimentError> {
    if !(r_min >= 0.0 && r_max > r_min && r_max.is_finite()) || count < 2 {
        return Err(ExperimentError::Setup(format!(
            "radius range [{r_min}, {r_max}] with {count} samples is invalid"
        )));
    }
    if m_max < 2 {
        return Err(ExperimentError::Setup("m_max must be at least 2".into()));
    }
    let radii: Vec<f64> = (0..count)
        .map(|i| r_min + (r_max - r_min) * i as f64 / (count - 1) as f64)
        .collect();
    let samples = map_collect(exec, radii, |r| -> Result<StabilitySample, ExperimentError> {
        let neutral = (2..=m_max)
            .map(|m| {
                if r == 0.0 {
                    Ok(0.0)
                } else {
                    neutral_delta(m as i64, r, params.alpha)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (unstable, predicted) = if r > 0.0 {
            let rep = spectral_report(r, params, m_max, None)?;
            (rep.unstable_modes, rep.predicted_dominant)
        } else {
            (Vec::new(), None)
        };
        Ok(StabilitySample {
            radius: r,
            neutral_delta: neutral,
            unstable_modes: unstable,
            predicted_dominant: predicted,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(StabilityMap {
        params: *params,
        m_max,
        r_star: critical_radius(params),
        samples,
    })
}

/// Largest per-step growth constant `c` with `‖Eⁿ⁺¹‖ ≤ (1 + ck)‖Eⁿ‖` between
/// two trajectories.
pub fn fitted_growth_constant(a: &Trajectory, b: &Trajectory) -> f64 {
    let k = a.time().k();
    let norms: Vec<f64> = a
        .snapshots()
        .filter_map(|(n, v)| b.snapshot(n).map(|w| norm_h(&(v - w))))
        .collect();
    norms
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| (w[1] / w[0] - 1.0) / k)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Dominant `u`-mode at the final step of a simulation.
pub fn final_dominant(sim: &Simulation) -> Result<Option<usize>, ExperimentError> {
    Ok(dominant_mode(&sim.final_u()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_data_forms_agree() {
        let g = GridSpec::new(256).unwrap();
        let terms = [(0.1, 2), (0.1, 5)];
        let a = initial_v(g, &terms, V0Method::Analytic);
        let c = initial_v(g, &terms, V0Method::Centered);
        // Centered difference error is p m³ h²/6 per term.
        let bound = 0.1 * 125.0 * g.h() * g.h() / 6.0 + 0.1 * 8.0 * g.h() * g.h() / 6.0;
        assert!((&a - &c).max_abs() <= bound * 1.01);
        assert!(c.sum_h().abs() < 1e-14);
        assert_eq!(initial_mean(&terms), 0.0);
        assert_eq!(initial_mean(&[(0.3, 0), (1.0, 2)]), 0.3);
    }

    #[test]
    fn suite_terms_follow_radius() {
        assert_eq!(suite_terms(6.0, 0.1).iter().map(|t| t.1).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        assert_eq!(suite_terms(18.0, 0.1).iter().map(|t| t.1).collect::<Vec<_>>(), vec![6, 7, 8, 9]);
    }

    #[test]
    fn zero_data_stays_on_the_circle() {
        let params = selection_params();
        let time = TimeGrid::new(0.01, 50).unwrap();
        let setup = SimulationSetup::new(params, 32, time, vec![(0.0, 2), (0.0, 3)]);
        let sim = simulate(&setup).unwrap();
        assert_eq!(sim.trajectory.max_abs_mean(), 0.0);
        for n in [0, 10, 50] {
            assert_eq!(sim.u_at(n).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn inadmissible_setup_needs_force() {
        let params = ModelParams::new(4.0, 1.5, 0.001, 2.0).unwrap();
        let time = TimeGrid::new(0.01, 5).unwrap();
        let mut setup = SimulationSetup::new(params, 16, time, vec![(0.01, 2)]);
        assert!(matches!(simulate(&setup), Err(ExperimentError::NotAdmissible(_))));
        setup.force = true;
        let sim = simulate(&setup).unwrap();
        assert!(!sim.warnings.is_empty());
    }

    #[test]
    fn orders_from_errors() {
        let e = [4.0, 1.0, 0.25];
        assert_eq!(pair_orders(&e), vec![2.0, 2.0]);
        let hs = [0.4, 0.2, 0.1];
        assert!((fitted_order(&hs, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stability_map_curves() {
        let p = ModelParams::new(4.0, 1.2, 0.001, 6.0).unwrap();
        let map = stability_map(&p, 0.0, 30.0, 31, 5, Execution::Sequential).unwrap();
        for s in &map.samples {
            for (i, d) in s.neutral_delta.iter().enumerate() {
                let m = (i + 2) as f64;
                assert!((d - 0.2 * s.radius * s.radius / (m * m)).abs() < 1e-12);
            }
        }
        let par = stability_map(&p, 0.0, 30.0, 31, 5, Execution::Parallel).unwrap();
        assert_eq!(map, par);
        assert!(stability_map(&p, 5.0, 1.0, 10, 5, Execution::Sequential).is_err());
    }

    #[test]
    fn growth_constant_of_identical_runs() {
        let params = selection_params();
        let time = TimeGrid::new(0.01, 20).unwrap();
        let a = simulate(&SimulationSetup::new(params, 32, time, vec![(0.1, 2)])).unwrap();
        let b = simulate(&SimulationSetup::new(params, 32, time, vec![(0.1001, 2)])).unwrap();
        let c = fitted_growth_constant(&a.trajectory, &b.trajectory);
        assert!(c.is_finite() && c < 1.0);
    }
}

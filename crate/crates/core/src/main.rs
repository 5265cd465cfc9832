use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ksring::config::{load_config, ConfigError, RunConfig};
use ksring::exec::Execution;
use ksring::experiments::{
    run_eoc, selection_params, simulate, stability_map, wavenumber_suite, EocSetup, ExperimentError,
    SuiteSettings,
};
use ksring::output::{self, OutputError, RunReport};
use ksring::solver::NewtonPolicy;
use ksring::stability::spectral_report;

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_PARSE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ksring", version, about = "Kuramoto-Sivashinsky dynamics on an expanding circle")]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides KSRING_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run even if the admissibility check fails.
    #[arg(long, global = true)]
    force: bool,
    /// Newton iterations per step.
    #[arg(long, global = true)]
    jn: Option<usize>,
    /// Reserved; every experiment is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run sweeps on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one configuration and write snapshots, curves, means and a report.
    Run,
    /// Self-convergence ladder for the gradient and the reconstructed height.
    Eoc {
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Reference resolution relative to the finest level.
        #[arg(long, default_value_t = 8)]
        reference_factor: usize,
    },
    /// Neutral curves, critical radius and unstable sets over a radius range.
    StabilityMap {
        #[arg(long)]
        r_min: Option<f64>,
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        m_max: Option<usize>,
    },
    /// The five wavenumber-selection runs, R0 = 6, 9, 12, 15, 18.
    WavenumberSuite {
        #[arg(long = "points", default_value_t = 256)]
        j: usize,
        #[arg(long, default_value_t = 0.01)]
        k: f64,
        #[arg(long = "horizon", default_value_t = 100.0)]
        horizon: f64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            ConfigError::Parse(_) => EXIT_PARSE,
            ConfigError::Invalid(_) => EXIT_VALIDATION,
        };
        Self::new(code, e)
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match e {
            ExperimentError::NotAdmissible(_) | ExperimentError::Setup(_) | ExperimentError::Params(_) => {
                EXIT_VALIDATION
            }
            _ => EXIT_SOLVER,
        };
        Self::new(code, e)
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Self::new(EXIT_IO, e)
    }
}

fn output_dir(cli: &Cli, cfg: Option<&RunConfig>, fallback: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("KSRING_OUT").map(PathBuf::from))
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn execution(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn maybe_config(cli: &Cli) -> Result<Option<RunConfig>, Failure> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let mut cfg = load_config(path)?;
    if let Some(jn) = cli.jn {
        if jn == 0 {
            return Err(Failure::new(EXIT_VALIDATION, "--jn must be at least 1"));
        }
        cfg.solver.jn = jn;
    }
    Ok(Some(cfg))
}

fn cmd_run(cli: &Cli) -> Result<(), Failure> {
    let cfg = maybe_config(cli)?
        .ok_or_else(|| Failure::new(EXIT_VALIDATION, "run needs --config <path>"))?;
    let dir = output_dir(cli, Some(&cfg), "ksring-out");
    let started = Instant::now();
    let setup = cfg
        .simulation_setup(cli.force)
        .map_err(|e| Failure::new(EXIT_VALIDATION, e))?;
    let sim = simulate(&setup)?;
    for w in &sim.warnings {
        eprintln!("warning: {w}");
    }
    let emitted = output::write_run_artifacts(&dir, &cfg, &sim)?;
    let traj = &sim.trajectory;
    let final_u = sim.final_u().map_err(|e| Failure::new(EXIT_SOLVER, e))?;
    let spectral = spectral_report(cfg.model.r0, &cfg.model, cfg.stability.m_max, Some(&final_u))
        .map_err(|e| Failure::new(EXIT_SOLVER, e))?;
    let report = RunReport {
        params: cfg.model,
        grid: output::GridSummary {
            j: cfg.grid.j,
            h: traj.grid().h(),
            k: traj.time().k(),
            steps: traj.steps(),
            horizon: traj.time().horizon(),
        },
        admissibility: output::AdmissibilitySummary {
            bounds: sim.admissibility,
            pass: sim.admissibility.passes(),
            forced: cli.force && !sim.admissibility.passes(),
        },
        max_abs_mean: traj.max_abs_mean(),
        final_radius: traj.radius[traj.steps()],
        final_i_tilde: sim.means.at(traj.steps()),
        max_relative_residual: traj.steps.iter().map(|s| s.relative_residual).fold(0.0, f64::max),
        spectral,
        warnings: sim.warnings.clone(),
        emitted_steps: emitted,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        config_hash: cfg.hash(),
    };
    output::write_json(&dir.join("report.json"), &report)?;
    println!(
        "{} steps, max|S_n| = {:.3e}, measured dominant mode {}, output in {}",
        traj.steps(),
        report.max_abs_mean,
        report
            .spectral
            .measured_dominant
            .map_or("-".into(), |m| m.to_string()),
        dir.display()
    );
    Ok(())
}

fn cmd_eoc(cli: &Cli, levels: usize, reference_factor: usize) -> Result<(), Failure> {
    let cfg = maybe_config(cli)?;
    let mut setup = EocSetup::standard();
    if let Some(c) = &cfg {
        setup.params = c.model;
        setup.terms = c.initial.modes.clone();
        setup.horizon = c.grid.horizon;
        setup.base_j = c.grid.j;
        setup.solver = c.solver.solver_config();
        setup.v0_method = c.solver.v0;
    } else if let Some(jn) = cli.jn {
        setup.solver.newton = NewtonPolicy::Fixed(jn.max(1));
    }
    setup.levels = levels;
    setup.reference_factor = reference_factor;
    let dir = output_dir(cli, cfg.as_ref(), "ksring-eoc");
    let started = Instant::now();
    let report = run_eoc(&setup, execution(cli))?;
    output::ensure_dir(&dir)?;
    output::write_eoc_table(&dir.join("eoc.csv"), &report)?;
    output::write_json(
        &dir.join("eoc.json"),
        &output::EocFile {
            params: setup.params,
            terms: &setup.terms,
            horizon: setup.horizon,
            eoc: &report,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            config_hash: cfg.as_ref().map(RunConfig::hash),
        },
    )?;
    println!("{:>6} {:>14} {:>14} {:>14}", "J", "error_v", "error_u", "newton-cn");
    for l in &report.levels {
        println!(
            "{:>6} {:>14.6e} {:>14.6e} {:>14.6e}",
            l.j, l.error_v, l.error_u, l.newton_vs_cn
        );
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    println!("EOC v: {}   u: {}", fmt(&report.eoc_v), fmt(&report.eoc_u));
    println!(
        "EOC (Newton) v: {}   u: {}",
        fmt(&report.eoc_newton_v),
        fmt(&report.eoc_newton_u)
    );
    Ok(())
}

fn cmd_stability_map(
    cli: &Cli,
    r_min: Option<f64>,
    r_max: Option<f64>,
    samples: Option<usize>,
    m_max: Option<usize>,
) -> Result<(), Failure> {
    let cfg = maybe_config(cli)?;
    let (params, st) = match &cfg {
        Some(c) => (c.model, c.stability.clone()),
        None => (selection_params(), Default::default()),
    };
    let map = stability_map(
        &params,
        r_min.unwrap_or(st.r_min),
        r_max.unwrap_or(st.r_max),
        samples.unwrap_or(st.samples),
        m_max.unwrap_or(st.m_max),
        execution(cli),
    )?;
    let dir = output_dir(cli, cfg.as_ref(), "ksring-stability");
    output::ensure_dir(&dir)?;
    output::write_stability_map(&dir.join("stability_map.csv"), &dir.join("stability_map.json"), &map)?;
    println!("R* = {:.10}, {} samples, output in {}", map.r_star, map.samples.len(), dir.display());
    Ok(())
}

fn cmd_suite(cli: &Cli, j: usize, k: f64, horizon: f64) -> Result<(), Failure> {
    let cfg = maybe_config(cli)?;
    let params = cfg.as_ref().map_or_else(selection_params, |c| c.model);
    let settings = SuiteSettings {
        j,
        k,
        horizon,
        ..Default::default()
    };
    let rows = wavenumber_suite(&params, &settings, execution(cli), false);
    let dir = output_dir(cli, cfg.as_ref(), "ksring-suite");
    output::ensure_dir(&dir)?;
    output::write_suite(&dir.join("suite.csv"), &dir.join("suite.json"), &rows)?;
    print!("{}", output::suite_table(&rows));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run => cmd_run(cli),
        Command::Eoc {
            levels,
            reference_factor,
        } => cmd_eoc(cli, *levels, *reference_factor),
        Command::StabilityMap {
            r_min,
            r_max,
            samples,
            m_max,
        } => cmd_stability_map(cli, *r_min, *r_max, *samples, *m_max),
        Command::WavenumberSuite { j, k, horizon } => cmd_suite(cli, *j, *k, *horizon),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

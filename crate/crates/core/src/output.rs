//! CSV and JSON emitters. Reals are written with 17 significant digits so
//! every file reads back to the identical `f64`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{Artifact, RunConfig};
use crate::experiments::{EocReport, Simulation, StabilityMap, SuiteRow};
use crate::field::{mode_amplitudes, PeriodicField};
use crate::model::ModelParams;
use crate::reconstruct::{curve_points, ReconstructError};
use crate::solver::Admissibility;
use crate::stability::SpectralReport;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: malformed value {value:?}")]
    Malformed { path: PathBuf, value: String },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
}

/// `{:.16e}`: one leading digit plus sixteen decimals.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes a header plus rows of already formatted cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_real_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<(), OutputError> {
    let len = columns.first().map_or(0, |c| c.len());
    let rows: Vec<Vec<String>> = (0..len)
        .map(|i| columns.iter().map(|c| format_real(c[i])).collect())
        .collect();
    write_table(path, header, &rows)
}

/// Reads a numeric CSV back into its header and columns.
pub fn read_real_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), OutputError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for record in r.records() {
        let record = record.map_err(csv_err(path))?;
        for (c, cell) in columns.iter_mut().zip(record.iter()) {
            c.push(cell.parse::<f64>().map_err(|_| OutputError::Malformed {
                path: path.to_path_buf(),
                value: cell.to_string(),
            })?);
        }
    }
    Ok((header, columns))
}

pub fn write_snapshot(path: &Path, v: &PeriodicField, u: Option<&PeriodicField>) -> Result<(), OutputError> {
    let sigma: Vec<f64> = v.grid().nodes().collect();
    match u {
        Some(u) => write_real_columns(path, &["sigma", "v", "u"], &[&sigma, v.values(), u.values()]),
        None => write_real_columns(path, &["sigma", "v"], &[&sigma, v.values()]),
    }
}

pub fn write_curve(path: &Path, points: &[(f64, f64)]) -> Result<(), OutputError> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    write_real_columns(path, &["x", "y"], &[&xs, &ys])
}

pub fn write_means(path: &Path, sim: &Simulation) -> Result<(), OutputError> {
    let traj = &sim.trajectory;
    let rows: Vec<Vec<String>> = (0..=traj.steps())
        .map(|n| {
            vec![
                n.to_string(),
                format_real(traj.time().time(n)),
                format_real(traj.means[n]),
                format_real(sim.means.at(n)),
            ]
        })
        .collect();
    write_table(path, &["n", "t", "S_n", "I_tilde"], &rows)
}

pub fn write_spectrum(path: &Path, v: &PeriodicField, u: Option<&PeriodicField>) -> Result<(), OutputError> {
    let av = mode_amplitudes(v);
    let ms: Vec<f64> = (0..av.len()).map(|m| m as f64).collect();
    match u {
        Some(u) => {
            let au = mode_amplitudes(u);
            write_real_columns(path, &["m", "v_amplitude", "u_amplitude"], &[&ms, &av, &au])
        }
        None => write_real_columns(path, &["m", "v_amplitude"], &[&ms, &av]),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub j: usize,
    pub h: f64,
    pub k: f64,
    pub steps: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilitySummary {
    pub bounds: Admissibility,
    pub pass: bool,
    pub forced: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub params: ModelParams,
    pub grid: GridSummary,
    pub admissibility: AdmissibilitySummary,
    pub max_abs_mean: f64,
    pub final_radius: f64,
    pub final_i_tilde: f64,
    pub max_relative_residual: f64,
    pub spectral: SpectralReport,
    pub warnings: Vec<String>,
    pub emitted_steps: Vec<usize>,
    pub wall_time_seconds: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EocFile<'a> {
    pub params: ModelParams,
    pub terms: &'a [(f64, usize)],
    pub horizon: f64,
    pub eoc: &'a EocReport,
    pub wall_time_seconds: f64,
    pub config_hash: Option<String>,
}

/// Emits the per-step artifacts selected in the configuration and returns
/// the steps written.
pub fn write_run_artifacts(dir: &Path, cfg: &RunConfig, sim: &Simulation) -> Result<Vec<usize>, OutputError> {
    ensure_dir(dir)?;
    let steps = sim.trajectory.steps();
    let width = steps.to_string().len().max(6);
    let mut emitted = Vec::new();
    for (n, v) in sim.trajectory.snapshots() {
        let u = sim.u_at(n)?;
        let want_u = cfg.output.wants(Artifact::U);
        if cfg.output.wants(Artifact::V) || want_u {
            let file = dir.join(format!("snapshot_{n:0width$}.csv"));
            write_snapshot(&file, v, want_u.then_some(&u))?;
        }
        if cfg.output.wants(Artifact::Curve) {
            let file = dir.join(format!("curve_{n:0width$}.csv"));
            write_curve(&file, &curve_points(&u, sim.trajectory.radius[n]))?;
        }
        if cfg.output.wants(Artifact::Spectrum) {
            let file = dir.join(format!("spectrum_{n:0width$}.csv"));
            write_spectrum(&file, v, Some(&u))?;
        }
        emitted.push(n);
    }
    if cfg.output.wants(Artifact::Means) {
        write_means(&dir.join("means.csv"), sim)?;
    }
    Ok(emitted)
}

pub fn write_eoc_table(path: &Path, report: &EocReport) -> Result<(), OutputError> {
    let rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .map(|l| {
            vec![
                l.j.to_string(),
                format_real(l.h),
                format_real(l.k),
                format_real(l.error_v),
                format_real(l.error_u),
                format_real(l.newton_error_v),
                format_real(l.newton_error_u),
                format_real(l.newton_vs_cn),
            ]
        })
        .collect();
    write_table(
        path,
        &["J", "h", "k", "error_v", "error_u", "newton_error_v", "newton_error_u", "newton_vs_cn"],
        &rows,
    )
}

pub fn write_stability_map(csv_path: &Path, json_path: &Path, map: &StabilityMap) -> Result<(), OutputError> {
    let mut header = vec!["R".to_string()];
    header.extend((2..=map.m_max).map(|m| format!("delta_m{m}")));
    header.push("unstable_modes".into());
    header.push("predicted_dominant".into());
    let rows: Vec<Vec<String>> = map
        .samples
        .iter()
        .map(|s| {
            let mut row = vec![format_real(s.radius)];
            row.extend(s.neutral_delta.iter().map(|d| format_real(*d)));
            row.push(
                s.unstable_modes
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            row.push(s.predicted_dominant.map_or(String::new(), |m| m.to_string()));
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(csv_path, &header_refs, &rows)?;
    write_json(json_path, map)
}

fn join_modes(ms: &[usize]) -> String {
    ms.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn opt_mode(m: Option<usize>) -> String {
    m.map_or("-".into(), |m| m.to_string())
}

pub fn write_suite(csv_path: &Path, json_path: &Path, rows: &[SuiteRow]) -> Result<(), OutputError> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format_real(r.r0),
                join_modes(&r.initial_modes),
                join_modes(&r.unstable_modes),
                opt_mode(r.predicted_dominant),
                opt_mode(r.measured_dominant),
                if r.pass { "pass" } else { "fail" }.into(),
            ]
        })
        .collect();
    write_table(
        csv_path,
        &["R0", "initial_modes", "unstable_modes", "predicted_dominant", "measured_dominant", "result"],
        &table,
    )?;
    write_json(json_path, &rows)
}

/// Plain-text summary of the suite, one row per configuration.
pub fn suite_table(rows: &[SuiteRow]) -> String {
    let mut s = format!(
        "{:>6}  {:<12} {:<14} {:>9} {:>8}  {}\n",
        "R0", "modes", "unstable", "predicted", "measured", "result"
    );
    for r in rows {
        s += &format!(
            "{:>6}  {:<12} {:<14} {:>9} {:>8}  {}\n",
            r.r0,
            join_modes(&r.initial_modes),
            join_modes(&r.unstable_modes),
            opt_mode(r.predicted_dominant),
            opt_mode(r.measured_dominant),
            match (&r.error, r.pass) {
                (Some(e), _) => format!("fail ({e})"),
                (None, true) => "pass".into(),
                (None, false) => "fail".into(),
            }
        );
    }
    s
}

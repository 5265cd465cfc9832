//! Run configuration: a sectioned `key = value` file.
//!
//! ```ini
//! [model]
//! delta = 4
//! alpha = 1.5
//! v_c = 0.001
//!
//! [grid]
//! J = 1024
//! k = 0.01
//! T = 100
//!
//! [initial]
//! R0 = 6
//! amplitudes = 0.1, 0.1, 0.1, 0.1
//! modes = 2, 3, 4, 5
//!
//! [solver]
//! jn = 3
//!
//! [output]
//! dir = small-circle
//! stride = 1000
//! artifacts = v, u, curve, spectrum, means
//! ```
//!
//! Optional keys: `initial.I0`, `solver.newton_tol` (switches to a residual
//! stopping rule), `solver.max_iterations`, `solver.linear_tol`,
//! `solver.reference_tol`, `solver.reference_max_iterations`,
//! `solver.v0 = analytic | centered`, `solver.scheme = newton | reference`,
//! and a `[stability]` section with `r_min`, `r_max`, `samples`, `m_max`.

use std::fmt;
use std::path::{Path, PathBuf};

use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiments::{Scheme, SimulationSetup, V0Method};
use crate::field::MIN_POINTS;
use crate::model::{ModelParams, TimeGrid};
use crate::solver::{NewtonPolicy, SolverConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  {}", .0.iter().map(Issue::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<Issue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            Self::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Artifact {
    V,
    U,
    Curve,
    Spectrum,
    Means,
}

impl Artifact {
    pub const ALL: [Artifact; 5] = [Self::V, Self::U, Self::Curve, Self::Spectrum, Self::Means];

    fn parse(s: &str) -> Option<Self> {
        match s {
            "v" => Some(Self::V),
            "u" => Some(Self::U),
            "curve" => Some(Self::Curve),
            "spectrum" => Some(Self::Spectrum),
            "means" => Some(Self::Means),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::V => "v",
            Self::U => "u",
            Self::Curve => "curve",
            Self::Spectrum => "spectrum",
            Self::Means => "means",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub j: usize,
    pub k: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialConfig {
    pub r0: f64,
    /// `(p_i, m_i)` of `u₀ = Σ p_i cos(m_i σ)`.
    pub modes: Vec<(f64, usize)>,
    pub i0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSection {
    pub jn: usize,
    pub newton_tol: Option<f64>,
    pub max_iterations: usize,
    pub linear_tol: f64,
    pub reference_tol: f64,
    pub reference_max_iterations: usize,
    pub v0: V0Method,
    pub scheme: Scheme,
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        let newton = match self.newton_tol {
            Some(tol) => NewtonPolicy::Residual {
                tol,
                max_iterations: self.max_iterations,
            },
            None => NewtonPolicy::Fixed(self.jn),
        };
        SolverConfig {
            newton,
            linear_tol: self.linear_tol,
            reference_tol: self.reference_tol,
            reference_max_iterations: self.reference_max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub stride: usize,
    pub artifacts: Vec<Artifact>,
}

impl OutputConfig {
    pub fn wants(&self, a: Artifact) -> bool {
        self.artifacts.contains(&a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub samples: usize,
    pub m_max: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            r_min: 0.0,
            r_max: 30.0,
            samples: 61,
            m_max: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridConfig,
    pub initial: InitialConfig,
    pub solver: SolverSection,
    pub output: OutputConfig,
    pub stability: StabilityConfig,
}

impl RunConfig {
    /// Expanding circle from `R₀ = 6` with `p = 0.1` on modes 2 to 5.
    pub fn small_circle() -> Self {
        Self::preset(
            ModelParams::new(4.0, 1.5, 0.001, 6.0).expect("valid constants"),
            GridConfig {
                j: 1024,
                k: 0.01,
                horizon: 100.0,
            },
            (2..=5).map(|m| (0.1, m)).collect(),
            1000,
        )
    }

    /// Large circle `R₀ = 60`, `α = 1.28`, `v_c = 0.1`, run to `T = 1000`
    /// with snapshots every 100 time units. Data: `p_i = 0.12 i`,
    /// `m_i = 5(1 + i)`.
    pub fn large_circle() -> Self {
        Self::large_circle_with((1..=4).map(|i| (0.12 * i as f64, 5 * (1 + i))).collect())
    }

    /// Same run with `p_i = 0.06 i` on modes 7, 11, 13, 17.
    pub fn large_circle_b() -> Self {
        let modes = [7, 11, 13, 17];
        Self::large_circle_with((1..=4).map(|i| (0.06 * i as f64, modes[i - 1])).collect())
    }

    fn large_circle_with(modes: Vec<(f64, usize)>) -> Self {
        Self::preset(
            ModelParams::new(4.0, 1.28, 0.1, 60.0).expect("valid constants"),
            GridConfig {
                j: 1024,
                k: 0.01,
                horizon: 1000.0,
            },
            modes,
            10_000,
        )
    }

    fn preset(model: ModelParams, grid: GridConfig, modes: Vec<(f64, usize)>, stride: usize) -> Self {
        let d = SolverConfig::default();
        Self {
            initial: InitialConfig {
                r0: model.r0,
                modes,
                i0: None,
            },
            model,
            grid,
            solver: SolverSection {
                jn: 3,
                newton_tol: None,
                max_iterations: 20,
                linear_tol: d.linear_tol,
                reference_tol: d.reference_tol,
                reference_max_iterations: d.reference_max_iterations,
                v0: V0Method::Analytic,
                scheme: Scheme::Newton,
            },
            output: OutputConfig {
                dir: None,
                stride,
                artifacts: Artifact::ALL.to_vec(),
            },
            stability: StabilityConfig::default(),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid, crate::model::ParamError> {
        TimeGrid::from_horizon(self.grid.k, self.grid.horizon)
    }

    pub fn simulation_setup(&self, force: bool) -> Result<SimulationSetup, crate::model::ParamError> {
        let mut s = SimulationSetup::new(
            self.model,
            self.grid.j,
            self.time_grid()?,
            self.initial.modes.clone(),
        );
        s.v0_method = self.solver.v0;
        s.initial_mean = self.initial.i0;
        s.solver = self.solver.solver_config();
        s.scheme = self.solver.scheme;
        s.stride = self.output.stride;
        s.force = force;
        Ok(s)
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Renders the configuration in the file format accepted by
    /// [`parse_config`].
    pub fn to_ini(&self) -> String {
        let join = |xs: Vec<String>| xs.join(", ");
        let mut s = String::new();
        s += &format!(
            "[model]\ndelta = {}\nalpha = {}\nv_c = {}\n\n",
            self.model.delta, self.model.alpha, self.model.v_c
        );
        s += &format!(
            "[grid]\nJ = {}\nk = {}\nT = {}\n\n",
            self.grid.j, self.grid.k, self.grid.horizon
        );
        s += &format!(
            "[initial]\nR0 = {}\namplitudes = {}\nmodes = {}\n",
            self.initial.r0,
            join(self.initial.modes.iter().map(|m| m.0.to_string()).collect()),
            join(self.initial.modes.iter().map(|m| m.1.to_string()).collect()),
        );
        if let Some(i0) = self.initial.i0 {
            s += &format!("I0 = {i0}\n");
        }
        let sv = &self.solver;
        s += &format!(
            "\n[solver]\njn = {}\nmax_iterations = {}\nlinear_tol = {:e}\nreference_tol = {:e}\nreference_max_iterations = {}\nv0 = {}\nscheme = {}\n",
            sv.jn,
            sv.max_iterations,
            sv.linear_tol,
            sv.reference_tol,
            sv.reference_max_iterations,
            match sv.v0 {
                V0Method::Analytic => "analytic",
                V0Method::Centered => "centered",
            },
            match sv.scheme {
                Scheme::Newton => "newton",
                Scheme::Reference => "reference",
            }
        );
        if let Some(tol) = sv.newton_tol {
            s += &format!("newton_tol = {tol:e}\n");
        }
        s += "\n[output]\n";
        if let Some(dir) = &self.output.dir {
            s += &format!("dir = {}\n", dir.display());
        }
        s += &format!(
            "stride = {}\nartifacts = {}\n",
            self.output.stride,
            join(self.output.artifacts.iter().map(|a| a.name().to_string()).collect())
        );
        let st = &self.stability;
        s += &format!(
            "\n[stability]\nr_min = {}\nr_max = {}\nsamples = {}\nm_max = {}\n",
            st.r_min, st.r_max, st.samples, st.m_max
        );
        s
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("model", &["delta", "alpha", "v_c"]),
    ("grid", &["J", "k", "T"]),
    ("initial", &["R0", "amplitudes", "modes", "I0"]),
    (
        "solver",
        &[
            "jn",
            "newton_tol",
            "max_iterations",
            "linear_tol",
            "reference_tol",
            "reference_max_iterations",
            "v0",
            "scheme",
        ],
    ),
    ("output", &["dir", "stride", "artifacts"]),
    ("stability", &["r_min", "r_max", "samples", "m_max"]),
];

/// Collects typed values and every problem found along the way.
struct Reader<'a> {
    ini: &'a Ini,
    issues: Vec<Issue>,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|p| p.get(key)).map(str::trim)
    }

    fn issue(&mut self, section: &str, key: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            path: format!("{section}.{key}"),
            message: message.into(),
        });
    }

    fn parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<T> {
        let raw = self.raw(section, key)?.to_string();
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.issue(section, key, format!("expected {what}, found {raw:?}"));
                None
            }
        }
    }

    fn required<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<T> {
        if self.raw(section, key).is_none() {
            self.issue(section, key, "missing");
            return None;
        }
        self.parsed(section, key, what)
    }

    fn real(&mut self, section: &str, key: &str) -> Option<f64> {
        let v: f64 = self.required(section, key, "a real number")?;
        if !v.is_finite() {
            self.issue(section, key, "must be finite");
            return None;
        }
        Some(v)
    }

    fn optional_real(&mut self, section: &str, key: &str) -> Option<f64> {
        let v: f64 = self.parsed(section, key, "a real number")?;
        if !v.is_finite() {
            self.issue(section, key, "must be finite");
            return None;
        }
        Some(v)
    }

    fn list<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<Vec<T>> {
        let raw = match self.raw(section, key) {
            Some(r) => r.to_string(),
            None => {
                self.issue(section, key, "missing");
                return None;
            }
        };
        if raw.is_empty() {
            return Some(Vec::new());
        }
        let mut out = Vec::new();
        for item in raw.split(',') {
            match item.trim().parse::<T>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.issue(section, key, format!("expected a comma list of {what}, found {:?}", item.trim()));
                    return None;
                }
            }
        }
        Some(out)
    }
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut r = Reader {
        ini: &ini,
        issues: Vec::new(),
    };

    for (section, props) in ini.iter() {
        let Some(name) = section else {
            if let Some((key, _)) = props.iter().next() {
                r.issue("(top)", key, "keys must belong to a section");
            }
            continue;
        };
        match SECTIONS.iter().find(|(s, _)| *s == name) {
            None => r.issues.push(Issue {
                path: name.to_string(),
                message: "unknown section".into(),
            }),
            Some((_, keys)) => {
                for (key, _) in props.iter() {
                    if !keys.contains(&key) {
                        r.issue(name, key, "unknown key");
                    }
                }
            }
        }
    }

    let delta = r.real("model", "delta");
    let alpha = r.real("model", "alpha");
    let v_c = r.real("model", "v_c");
    let r0 = r.real("initial", "R0");
    if let Some(d) = delta.filter(|d| *d <= 0.0) {
        r.issue("model", "delta", format!("must be positive, found {d}"));
    }
    if let Some(a) = alpha.filter(|a| *a <= 1.0) {
        r.issue("model", "alpha", format!("must exceed 1, found {a}"));
    }
    if let Some(v) = v_c.filter(|v| *v <= 0.0) {
        r.issue("model", "v_c", format!("must be positive, found {v}"));
    }
    if let Some(x) = r0.filter(|x| *x <= 0.0) {
        r.issue("initial", "R0", format!("must be positive, found {x}"));
    }

    let j: Option<usize> = r.required("grid", "J", "a positive integer");
    if let Some(j) = j {
        if j % 2 != 0 || j < MIN_POINTS {
            r.issue("grid", "J", format!("must be even and at least {MIN_POINTS}, found {j}"));
        }
    }
    let k = r.real("grid", "k");
    let horizon = r.real("grid", "T");
    if let Some(k) = k.filter(|k| *k <= 0.0) {
        r.issue("grid", "k", format!("must be positive, found {k}"));
    }
    if let Some(t) = horizon.filter(|t| *t <= 0.0) {
        r.issue("grid", "T", format!("must be positive, found {t}"));
    }
    if let (Some(k), Some(t)) = (k, horizon) {
        if k > 0.0 && t > 0.0 && TimeGrid::from_horizon(k, t).is_err() {
            r.issue("grid", "T", format!("{t} is not an integer multiple of k = {k}"));
        }
    }

    let amplitudes: Option<Vec<f64>> = r.list("initial", "amplitudes", "real numbers");
    let modes: Option<Vec<usize>> = r.list("initial", "modes", "non-negative integers");
    let mut pairs = None;
    if let (Some(a), Some(m)) = (&amplitudes, &modes) {
        if a.len() != m.len() {
            r.issue(
                "initial",
                "modes",
                format!("{} modes but {} amplitudes", m.len(), a.len()),
            );
        } else if m.is_empty() {
            r.issue("initial", "modes", "must not be empty");
        } else if a.iter().any(|x| !x.is_finite()) {
            r.issue("initial", "amplitudes", "must be finite");
        } else if let Some(bad) = m.iter().find(|&&x| x < 2) {
            r.issue("initial", "modes", format!("modes must be at least 2, found {bad}"));
        } else if (1..m.len()).any(|i| m[..i].contains(&m[i])) {
            r.issue("initial", "modes", "modes must be distinct");
        } else {
            pairs = Some(a.iter().copied().zip(m.iter().copied()).collect::<Vec<_>>());
        }
    }
    let i0 = r.optional_real("initial", "I0");

    let d = SolverConfig::default();
    let jn: usize = r.parsed("solver", "jn", "a positive integer").unwrap_or(3);
    if jn == 0 {
        r.issue("solver", "jn", "must be at least 1");
    }
    let newton_tol = r.optional_real("solver", "newton_tol");
    let max_iterations: usize = r
        .parsed("solver", "max_iterations", "a positive integer")
        .unwrap_or(20);
    let linear_tol = r.optional_real("solver", "linear_tol").unwrap_or(d.linear_tol);
    let reference_tol = r.optional_real("solver", "reference_tol").unwrap_or(d.reference_tol);
    let reference_max_iterations: usize = r
        .parsed("solver", "reference_max_iterations", "a positive integer")
        .unwrap_or(d.reference_max_iterations);
    for (key, v) in [
        ("linear_tol", Some(linear_tol)),
        ("reference_tol", Some(reference_tol)),
        ("newton_tol", newton_tol),
    ] {
        if let Some(v) = v.filter(|v| *v <= 0.0) {
            r.issue("solver", key, format!("must be positive, found {v}"));
        }
    }
    if max_iterations == 0 {
        r.issue("solver", "max_iterations", "must be at least 1");
    }
    if reference_max_iterations == 0 {
        r.issue("solver", "reference_max_iterations", "must be at least 1");
    }
    let v0 = match r.raw("solver", "v0") {
        None | Some("analytic") => V0Method::Analytic,
        Some("centered") => V0Method::Centered,
        Some(other) => {
            let msg = format!("expected analytic or centered, found {other:?}");
            r.issue("solver", "v0", msg);
            V0Method::Analytic
        }
    };
    let scheme = match r.raw("solver", "scheme") {
        None | Some("newton") => Scheme::Newton,
        Some("reference") => Scheme::Reference,
        Some(other) => {
            let msg = format!("expected newton or reference, found {other:?}");
            r.issue("solver", "scheme", msg);
            Scheme::Newton
        }
    };

    let dir = r.raw("output", "dir").filter(|d| !d.is_empty()).map(PathBuf::from);
    let stride: usize = r.parsed("output", "stride", "a positive integer").unwrap_or(1);
    if stride == 0 {
        r.issue("output", "stride", "must be at least 1");
    }
    let artifacts = match r.raw("output", "artifacts").map(str::to_string) {
        None => Artifact::ALL.to_vec(),
        Some(raw) => {
            let mut out = Vec::new();
            for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                match Artifact::parse(item) {
                    Some(a) if !out.contains(&a) => out.push(a),
                    Some(_) => {}
                    None => r.issue("output", "artifacts", format!("unknown artifact {item:?}")),
                }
            }
            out
        }
    };

    let sd = StabilityConfig::default();
    let stability = StabilityConfig {
        r_min: r.optional_real("stability", "r_min").unwrap_or(sd.r_min),
        r_max: r.optional_real("stability", "r_max").unwrap_or(sd.r_max),
        samples: r
            .parsed("stability", "samples", "a positive integer")
            .unwrap_or(sd.samples),
        m_max: r
            .parsed("stability", "m_max", "a positive integer")
            .unwrap_or(sd.m_max),
    };
    if stability.r_min < 0.0 || stability.r_max <= stability.r_min {
        r.issue("stability", "r_max", "range must satisfy 0 ≤ r_min < r_max");
    }
    if stability.samples < 2 {
        r.issue("stability", "samples", "must be at least 2");
    }
    if stability.m_max < 2 {
        r.issue("stability", "m_max", "must be at least 2");
    }

    if !r.issues.is_empty() {
        return Err(ConfigError::Invalid(r.issues));
    }
    let model = ModelParams {
        delta: delta.expect("checked"),
        alpha: alpha.expect("checked"),
        v_c: v_c.expect("checked"),
        r0: r0.expect("checked"),
    };
    Ok(RunConfig {
        model,
        grid: GridConfig {
            j: j.expect("checked"),
            k: k.expect("checked"),
            horizon: horizon.expect("checked"),
        },
        initial: InitialConfig {
            r0: model.r0,
            modes: pairs.expect("checked"),
            i0,
        },
        solver: SolverSection {
            jn,
            newton_tol,
            max_iterations,
            linear_tol,
            reference_tol,
            reference_max_iterations,
            v0,
            scheme,
        },
        output: OutputConfig {
            dir,
            stride,
            artifacts,
        },
        stability,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

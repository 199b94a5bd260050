//! Library half of the `dicke` command-line tool: settings resolution,
//! parameter sweeps, single-point snapshots and mean-field phase diagrams.

pub mod config;
pub mod phase;
pub mod point;
pub mod sweep;

use std::io::Write;
use std::sync::mpsc;
use std::time::Duration;

use dicke::model::mhz;
use dicke::ModelParams;
use thiserror::Error;

pub use config::Settings;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Core(String),
}

impl CliError {
    pub fn core(e: impl std::fmt::Display) -> Self {
        Self::Core(e.to_string())
    }
}

/// Keys shared by every subcommand.
pub const COMMON_KEYS: &[&str] = &[
    "omega0", "omega", "kappa", "g", "u", "n-atoms", "n-max", "tol", "out", "workers", "timeout",
];

const COMMON_DEFAULTS: &[(&str, &str)] = &[
    ("omega0", "0.05"),
    ("omega", "1"),
    ("kappa", "0.2"),
    ("g", "0.01"),
    ("u", "0"),
    ("n-atoms", "10"),
    ("n-max", "9"),
    ("tol", "1e-6"),
    ("timeout", "600"),
];

/// Keys that do not influence results and stay out of file headers.
const RUNTIME_KEYS: &[&str] = &["out", "workers"];

/// Fills in defaults for keys absent from `s`.
pub fn with_defaults(mut s: Settings, extra: &[(&str, &str)]) -> Settings {
    for (k, v) in COMMON_DEFAULTS.iter().chain(extra) {
        if s.raw(k).is_none() {
            s.set(k, v);
        }
    }
    s
}

/// Frequencies as given on the command line, ν in MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frequencies {
    pub omega0: f64,
    pub omega: f64,
    pub kappa: f64,
    pub g: f64,
    pub u: f64,
}

impl Frequencies {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        Ok(Self {
            omega0: s.get("omega0", 0.05)?,
            omega: s.get("omega", 1.0)?,
            kappa: s.get("kappa", 0.2)?,
            g: s.get("g", 0.01)?,
            u: s.get("u", 0.0)?,
        })
    }

    pub fn params(&self, n_atoms: usize, n_max: usize) -> ModelParams {
        ModelParams::mhz(self.omega0, self.omega, self.kappa, self.g, self.u)
            .with_atoms(n_atoms)
            .with_n_max(n_max)
    }

    pub fn json(&self) -> serde_json::Value {
        let pair = |nu: f64| serde_json::json!({ "mhz": nu, "rad_per_us": mhz(nu) });
        serde_json::json!({
            "omega0": pair(self.omega0),
            "omega": pair(self.omega),
            "kappa": pair(self.kappa),
            "g": pair(self.g),
            "u": pair(self.u),
        })
    }
}

pub fn workers(s: &Settings) -> Result<usize, CliError> {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    let w: usize = s.get("workers", default)?;
    if w == 0 {
        return Err(CliError::Validation("workers must be >= 1".into()));
    }
    Ok(w)
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(CliError::core)
}

/// Comment block naming the tool version, the command and every setting that
/// affects the results.
pub fn header(command: &str, s: &Settings) -> Result<String, CliError> {
    let f = Frequencies::from_settings(s)?;
    let mut out = format!("# dicke {VERSION}\n# command: {command}\n");
    for (k, v) in s.iter().filter(|(k, _)| !RUNTIME_KEYS.contains(k)) {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str(&format!(
        "# rad/us: omega0 = {} omega = {} kappa = {} g = {} u = {}\n",
        mhz(f.omega0),
        mhz(f.omega),
        mhz(f.kappa),
        mhz(f.g),
        mhz(f.u)
    ));
    Ok(out)
}

/// Writes `header` followed by whatever `body` produces.
pub fn write_with_header<F>(path: &std::path::Path, header: &str, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
{
    let mut buf = header.as_bytes().to_vec();
    body(&mut buf)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Runs `f` on its own thread and gives up waiting after `limit`. The thread
/// is left to finish in the background.
pub fn with_timeout<T, F>(limit: Duration, f: F) -> Option<T>
where
    T: Send + 'static,
    F: FnOnce() -> T + Send + 'static,
{
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(f());
    });
    rx.recv_timeout(limit).ok()
}

pub fn timeout(s: &Settings) -> Result<Duration, CliError> {
    let secs: f64 = s.get("timeout", 600.0)?;
    if !(secs > 0.0) || !secs.is_finite() {
        return Err(CliError::Validation("timeout must be a positive number of seconds".into()));
    }
    Ok(Duration::from_secs_f64(secs))
}

/// Plain decimal for moderate magnitudes, exponent form otherwise.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Positive-integer list setting such as `n-atoms`.
pub fn atom_counts(s: &Settings) -> Result<Vec<usize>, CliError> {
    let list: Vec<usize> = s.get_list("n-atoms")?.unwrap_or_else(|| vec![10]);
    if list.is_empty() || list.contains(&0) {
        return Err(CliError::Validation("n-atoms values must be >= 1".into()));
    }
    Ok(list)
}

/// Parses a grid unit: `mhz` (ν in MHz) or `omega` (multiples of the cavity ν).
pub fn unit_scale(s: &Settings, f: &Frequencies) -> Result<f64, CliError> {
    match s.raw("grid-units").unwrap_or("mhz") {
        "mhz" => Ok(1.0),
        "omega" => Ok(f.omega),
        other => Err(CliError::Validation(format!(
            "grid-units must be `mhz` or `omega`, got `{other}`"
        ))),
    }
}

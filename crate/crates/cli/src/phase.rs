//! Mean-field phase diagrams over a `(g, U)` grid.

use std::path::PathBuf;

use dicke::model::mhz;
use dicke::observables::linspace;
use dicke::semiclassical::{phase_diagram, ClassifyOptions, PhaseDiagram};

use crate::{CliError, Frequencies, Settings};

pub const KEYS: &[&str] = &[
    "g-min", "g-max", "g-points", "u-min", "u-max", "u-points", "grid-units", "seeds",
];

pub const DEFAULTS: &[(&str, &str)] = &[
    ("g-min", "0.01"),
    ("g-max", "0.2"),
    ("g-points", "20"),
    ("u-min", "-5"),
    ("u-max", "5"),
    ("u-points", "20"),
    ("grid-units", "omega"),
    ("seeds", "8"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub freqs: Frequencies,
    /// Coupling grid, ν in MHz.
    pub g: Vec<f64>,
    /// Non-linear coupling grid, ν in MHz.
    pub u: Vec<f64>,
    pub seeds: usize,
    pub out: PathBuf,
}

fn axis(s: &Settings, name: &str, scale: f64) -> Result<Vec<f64>, CliError> {
    let lo: f64 = s.get(&format!("{name}-min"), 0.0)?;
    let hi: f64 = s.get(&format!("{name}-max"), 0.0)?;
    let n: usize = s.get(&format!("{name}-points"), 1)?;
    if !lo.is_finite() || !hi.is_finite() || !(lo <= hi) {
        return Err(CliError::Validation(format!("{name}-min {lo} > {name}-max {hi}")));
    }
    if n == 0 {
        return Err(CliError::Validation(format!("{name}-points must be >= 1")));
    }
    if n == 1 && lo != hi {
        return Err(CliError::Validation(format!(
            "{name}-points = 1 needs {name}-min = {name}-max"
        )));
    }
    Ok(linspace(lo * scale, hi * scale, n))
}

impl PhaseSpec {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let mut allowed = crate::COMMON_KEYS.to_vec();
        allowed.extend_from_slice(KEYS);
        s.check_keys(&allowed)?;
        let freqs = Frequencies::from_settings(s)?;
        let seeds: usize = s.get("seeds", 8)?;
        if seeds == 0 {
            return Err(CliError::Validation("seeds must be >= 1".into()));
        }
        Ok(Self {
            freqs,
            g: axis(s, "g", 1.0)?,
            u: axis(s, "u", crate::unit_scale(s, &freqs)?)?,
            seeds,
            out: PathBuf::from(s.raw("out").unwrap_or("phase_diagram.csv")),
        })
    }
}

/// Classifies the grid one coupling row at a time, reporting progress on
/// stderr when asked.
pub fn run(spec: &PhaseSpec, workers: usize, progress: bool) -> Result<PhaseDiagram, CliError> {
    let pool = crate::thread_pool(workers)?;
    let template = spec.freqs.params(1, 1);
    let u: Vec<f64> = spec.u.iter().map(|&v| mhz(v)).collect();
    let opts = ClassifyOptions::default();
    let mut cells = Vec::with_capacity(spec.g.len() * u.len());
    for (i, &g) in spec.g.iter().enumerate() {
        let row = pool
            .install(|| phase_diagram(&template, &[mhz(g)], &u, spec.seeds, &opts))
            .map_err(CliError::core)?;
        cells.extend(row.cells);
        if progress {
            eprintln!("[{}/{}] g = {g} MHz", i + 1, spec.g.len());
        }
    }
    Ok(PhaseDiagram { cells })
}

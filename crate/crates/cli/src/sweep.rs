//! Steady-state sweeps along a line in `U` or `g`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use dicke::model::{basis_state, mhz};
use dicke::observables::{expect, fidelity, g2_zero, log_negativity, purity};
use dicke::operators::JointOps;
use dicke::semiclassical::{fixed_points, FixedPointLabel};
use dicke::steady_state::{solve_model, CutoffPolicy, SolverOptions, SolverWarning};
use dicke::{DensityMatrix, ModelParams};
use rayon::prelude::*;

use crate::{CliError, Frequencies, Settings};

pub const KEYS: &[&str] = &[
    "vary",
    "min",
    "max",
    "step",
    "values",
    "grid-units",
    "observables",
];

pub const DEFAULTS: &[(&str, &str)] = &[
    ("vary", "u"),
    ("grid-units", "mhz"),
    ("observables", "jz,n,g2,en,purity,fidelity"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vary {
    U,
    G,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Observable {
    Jz,
    Photons,
    G2,
    LogNegativity,
    Purity,
    FidelityZeroZero,
}

impl Observable {
    pub const ALL: [Observable; 6] = [
        Self::Jz,
        Self::Photons,
        Self::G2,
        Self::LogNegativity,
        Self::Purity,
        Self::FidelityZeroZero,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Self::Jz => "jz",
            Self::Photons => "n",
            Self::G2 => "g2",
            Self::LogNegativity => "en",
            Self::Purity => "purity",
            Self::FidelityZeroZero => "fidelity",
        }
    }

    /// CSV columns produced by this observable.
    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            Self::Jz => &["jz", "jz_per_n"],
            Self::Photons => &["n"],
            Self::G2 => &["g2"],
            Self::LogNegativity => &["log_negativity"],
            Self::Purity => &["purity"],
            Self::FidelityZeroZero => &["fidelity_00"],
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Observable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.key() == s)
            .ok_or_else(|| format!("unknown observable `{s}`"))
    }
}

/// Values of `obs` in `rho`, in column order; `None` where undefined (e.g.
/// `g²(0)` of the vacuum, or `|0,0⟩` for odd `N`).
pub fn scalar_observables(rho: &DensityMatrix, obs: &[Observable]) -> Vec<(&'static str, Option<f64>)> {
    let dims = rho.dims();
    let ops = JointOps::new(dims);
    let mut out = Vec::new();
    for o in obs {
        match o {
            Observable::Jz => {
                let jz = expect(&ops.jz, rho).ok().map(|z| z.re);
                out.push(("jz", jz));
                out.push(("jz_per_n", jz.map(|j| j / dims.n_atoms as f64)));
            }
            Observable::Photons => out.push(("n", expect(&ops.n, rho).ok().map(|z| z.re))),
            Observable::G2 => out.push(("g2", g2_zero(rho).ok())),
            Observable::LogNegativity => out.push(("log_negativity", Some(log_negativity(rho)))),
            Observable::Purity => out.push(("purity", Some(purity(rho.matrix())))),
            Observable::FidelityZeroZero => {
                let f = dims.n_atoms.is_multiple_of(2)
                    .then(|| basis_state(dims, 0, dims.n_atoms / 2).ok())
                    .flatten()
                    .map(|t| fidelity(rho.matrix(), t.matrix()));
                out.push(("fidelity_00", f));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Frequencies,
    pub vary: Vary,
    /// Grid values in the requested units.
    pub grid: Vec<f64>,
    /// MHz per grid unit.
    pub scale: f64,
    pub n_atoms: Vec<usize>,
    pub n_max: usize,
    pub tol: f64,
    pub observables: Vec<Observable>,
    pub timeout: Duration,
    pub out: PathBuf,
}

fn grid_from(s: &Settings) -> Result<Vec<f64>, CliError> {
    if let Some(values) = s.get_list::<f64>("values")? {
        if values.is_empty() {
            return Err(CliError::Validation("values list is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Validation("values must be finite".into()));
        }
        return Ok(values);
    }
    let (Some(min), Some(max), Some(step)) = (
        s.get_opt::<f64>("min")?,
        s.get_opt::<f64>("max")?,
        s.get_opt::<f64>("step")?,
    ) else {
        return Err(CliError::Validation(
            "sweep grid needs either `values` or all of `min`, `max`, `step`".into(),
        ));
    };
    if !(min <= max) {
        return Err(CliError::Validation(format!("grid min {min} > max {max}")));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(CliError::Validation("grid step must be > 0".into()));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| min + k as f64 * step).collect())
}

impl SweepSpec {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let mut allowed = crate::COMMON_KEYS.to_vec();
        allowed.extend_from_slice(KEYS);
        s.check_keys(&allowed)?;
        let base = Frequencies::from_settings(s)?;
        let vary = match s.raw("vary").unwrap_or("u") {
            "u" | "U" => Vary::U,
            "g" => Vary::G,
            other => return Err(CliError::Validation(format!("vary must be `u` or `g`, got `{other}`"))),
        };
        let observables: Vec<Observable> = s
            .get_list::<String>("observables")?
            .unwrap_or_default()
            .iter()
            .map(|o| o.parse().map_err(CliError::Validation))
            .collect::<Result<_, _>>()?;
        if observables.is_empty() {
            return Err(CliError::Validation("no observables requested".into()));
        }
        let tol: f64 = s.get("tol", 1e-6)?;
        if !(tol > 0.0) {
            return Err(CliError::Validation("tol must be > 0".into()));
        }
        let n_max: usize = s.get("n-max", 9)?;
        if n_max == 0 {
            return Err(CliError::Validation("n-max must be >= 1".into()));
        }
        Ok(Self {
            base,
            vary,
            grid: grid_from(s)?,
            scale: crate::unit_scale(s, &base)?,
            n_atoms: crate::atom_counts(s)?,
            n_max,
            tol,
            observables,
            timeout: crate::timeout(s)?,
            out: PathBuf::from(s.raw("out").unwrap_or("sweep.csv")),
        })
    }

    /// Parameters of every point, `N`-major then grid order.
    pub fn points(&self) -> Vec<(f64, ModelParams)> {
        self.n_atoms
            .iter()
            .flat_map(|&n| {
                self.grid.iter().map(move |&x| {
                    let mut f = self.base;
                    match self.vary {
                        Vary::U => f.u = x * self.scale,
                        Vary::G => f.g = x * self.scale,
                    }
                    (x, f.params(n, self.n_max))
                })
            })
            .collect()
    }

    pub fn columns(&self) -> Vec<&'static str> {
        let mut c = vec![
            "x",
            "u_mhz",
            "g_mhz",
            "n_atoms",
            "n_max",
            "residual",
            "iterations",
            "p_nmax",
            "warning",
        ];
        for o in &self.observables {
            c.extend_from_slice(o.columns());
        }
        c.extend_from_slice(&["sc_stable", "sc_jz_per_n", "sc_n", "error"]);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Solved(Vec<String>),
    Failed(String),
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRow {
    pub x: f64,
    pub params: ModelParams,
    pub outcome: Outcome,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|v| v.is_finite()).map(crate::fmt_f64).unwrap_or_default()
}

fn semiclassical_columns(p: &ModelParams) -> [String; 3] {
    let set = fixed_points(p);
    let mut labels: Vec<&str> = set.stable().map(|f| f.label.name()).collect();
    if set.get(FixedPointLabel::LimitCycleGamma).any(|f| f.exists) {
        labels.push("LimitCycle");
    }
    let first = set.stable().next();
    [
        labels.join("+"),
        fmt_opt(first.map(|f| f.state.gamma)),
        fmt_opt(first.map(|f| p.n_atoms as f64 * f.state.alpha.norm_sqr())),
    ]
}

/// Solves one point and formats the solver and observable columns.
pub fn solve_point(p: ModelParams, tol: f64, observables: &[Observable]) -> Result<Vec<String>, String> {
    let opts = SolverOptions {
        tol,
        ..Default::default()
    };
    let ss = solve_model(&p, &opts, CutoffPolicy::default()).map_err(|e| e.to_string())?;
    let warning = ss
        .solution
        .warnings
        .iter()
        .map(|w| match w {
            SolverWarning::DegenerateNullSpace { .. } => "DegenerateNullSpace",
        })
        .collect::<Vec<_>>()
        .join("+");
    let mut cols = vec![
        ss.params.n_max.to_string(),
        crate::fmt_f64(ss.solution.residual),
        ss.solution.iterations.to_string(),
        crate::fmt_f64(ss.cutoff.top_population),
        warning,
    ];
    for (_, v) in scalar_observables(&ss.solution.rho, observables) {
        cols.push(fmt_opt(v));
    }
    Ok(cols)
}

/// Evaluates every point on `workers` threads. Results come back in point
/// order regardless of scheduling.
pub fn run(spec: &SweepSpec, workers: usize, progress: bool) -> Result<Vec<PointRow>, CliError> {
    let pool = crate::thread_pool(workers)?;
    let points = spec.points();
    let total = points.len();
    let done = AtomicUsize::new(0);
    let rows = pool.install(|| {
        points
            .par_iter()
            .map(|&(x, p)| {
                let obs = spec.observables.clone();
                let tol = spec.tol;
                let outcome = match crate::with_timeout(spec.timeout, move || solve_point(p, tol, &obs)) {
                    Some(Ok(cols)) => Outcome::Solved(cols),
                    Some(Err(e)) => Outcome::Failed(e),
                    None => Outcome::TimedOut,
                };
                if progress {
                    let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                    eprintln!("[{k}/{total}] N = {} x = {x}", p.n_atoms);
                }
                PointRow { x, params: p, outcome }
            })
            .collect()
    });
    Ok(rows)
}

/// CSV body (header row plus one row per point).
pub fn write_rows(spec: &SweepSpec, rows: &[PointRow], out: &mut Vec<u8>) -> Result<(), CliError> {
    let n_obs: usize = spec.observables.iter().map(|o| o.columns().len()).sum();
    let mut wr = csv::Writer::from_writer(out);
    let header = spec.columns();
    wr.write_record(&header).map_err(CliError::core)?;
    for r in rows {
        let p = &r.params;
        let mut rec = vec![
            crate::fmt_f64(r.x),
            crate::fmt_f64(p.u / mhz(1.0)),
            crate::fmt_f64(p.g / mhz(1.0)),
            p.n_atoms.to_string(),
        ];
        let error = match &r.outcome {
            Outcome::Solved(cols) => {
                rec.extend(cols.iter().cloned());
                String::new()
            }
            Outcome::Failed(e) => {
                rec.push(p.n_max.to_string());
                rec.extend(std::iter::repeat_n(String::new(), 4 + n_obs));
                e.clone()
            }
            Outcome::TimedOut => {
                rec.push(p.n_max.to_string());
                rec.extend(std::iter::repeat_n(String::new(), 4 + n_obs));
                "timeout".to_string()
            }
        };
        rec.extend(semiclassical_columns(p));
        rec.push(error);
        wr.write_record(&rec).map_err(CliError::core)?;
    }
    wr.flush()?;
    Ok(())
}

/// Points that failed for a reason other than the timeout.
pub fn fatal_errors(rows: &[PointRow]) -> usize {
    rows.iter()
        .filter(|r| matches!(r.outcome, Outcome::Failed(_)))
        .count()
}

//! Single-point snapshots: one steady state, several derived outputs.

use std::path::{Path, PathBuf};

use dicke::dynamics::{correlation_until_decayed, power_spectrum, DynamicsError, DEFAULT_WINDOW};
use dicke::model::build_liouvillian;
use dicke::observables::{azimuths, linspace, partial_trace, spin_qfunction, wigner, Subsystem};
use dicke::ode::OdeOptions;
use dicke::steady_state::{solve_model, CutoffPolicy, ModelSteadyState, SolverOptions, SolverWarning};
use serde_json::{json, Map, Value};

use crate::sweep::{scalar_observables, Observable};
use crate::{CliError, Frequencies, Settings};

pub const KEYS: &[&str] = &[
    "tasks",
    "wigner-extent",
    "wigner-points",
    "q-theta-points",
    "q-phi-points",
    "corr-dt",
    "corr-window",
];

pub const DEFAULTS: &[(&str, &str)] = &[
    ("tasks", "scalars,wigner,spin-q"),
    ("wigner-extent", "4"),
    ("wigner-points", "81"),
    ("q-theta-points", "61"),
    ("q-phi-points", "120"),
    ("corr-dt", "0.05"),
    ("corr-window", "1000"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Scalars,
    Wigner,
    SpinQ,
    Correlation,
    Spectrum,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scalars" => Ok(Self::Scalars),
            "wigner" => Ok(Self::Wigner),
            "spin-q" => Ok(Self::SpinQ),
            "correlation" => Ok(Self::Correlation),
            "spectrum" => Ok(Self::Spectrum),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSpec {
    pub freqs: Frequencies,
    pub n_atoms: usize,
    pub n_max: usize,
    pub tol: f64,
    pub tasks: Vec<Task>,
    pub wigner_extent: f64,
    pub wigner_points: usize,
    pub q_theta_points: usize,
    pub q_phi_points: usize,
    pub corr_dt: f64,
    pub corr_window: f64,
    pub out: PathBuf,
}

impl PointSpec {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let mut allowed = crate::COMMON_KEYS.to_vec();
        allowed.extend_from_slice(KEYS);
        s.check_keys(&allowed)?;
        let atoms = crate::atom_counts(s)?;
        if atoms.len() != 1 {
            return Err(CliError::Validation("point takes a single n-atoms value".into()));
        }
        let tasks: Vec<Task> = s
            .get_list::<String>("tasks")?
            .unwrap_or_default()
            .iter()
            .map(|t| t.parse().map_err(CliError::Validation))
            .collect::<Result<_, _>>()?;
        if tasks.is_empty() {
            return Err(CliError::Validation("no tasks requested".into()));
        }
        let spec = Self {
            freqs: Frequencies::from_settings(s)?,
            n_atoms: atoms[0],
            n_max: s.get("n-max", 9)?,
            tol: s.get("tol", 1e-6)?,
            tasks,
            wigner_extent: s.get("wigner-extent", 4.0)?,
            wigner_points: s.get("wigner-points", 81)?,
            q_theta_points: s.get("q-theta-points", 61)?,
            q_phi_points: s.get("q-phi-points", 120)?,
            corr_dt: s.get("corr-dt", 0.05)?,
            corr_window: s.get("corr-window", DEFAULT_WINDOW)?,
            out: PathBuf::from(s.raw("out").unwrap_or("point")),
        };
        if spec.n_max == 0 || !(spec.tol > 0.0) {
            return Err(CliError::Validation("n-max must be >= 1 and tol > 0".into()));
        }
        if !(spec.wigner_extent > 0.0) || spec.wigner_points < 2 {
            return Err(CliError::Validation("wigner grid needs extent > 0 and >= 2 points".into()));
        }
        if spec.q_theta_points < 2 || spec.q_phi_points < 1 {
            return Err(CliError::Validation("spin-q grid too small".into()));
        }
        if !(spec.corr_dt > 0.0) || !(spec.corr_window >= spec.corr_dt) {
            return Err(CliError::Validation("need corr-dt > 0 and corr-window >= corr-dt".into()));
        }
        Ok(spec)
    }

    fn wants(&self, t: Task) -> bool {
        self.tasks.contains(&t)
    }
}

fn warning_json(w: &SolverWarning) -> Value {
    match w {
        SolverWarning::DegenerateNullSpace { seed_spread } => {
            json!({ "kind": "DegenerateNullSpace", "seed_spread": seed_spread })
        }
    }
}

fn solver_json(ss: &ModelSteadyState, tol: f64) -> Value {
    let degenerate = ss
        .solution
        .warnings
        .iter()
        .any(|w| matches!(w, SolverWarning::DegenerateNullSpace { .. }));
    json!({
        "residual": ss.solution.residual,
        "iterations": ss.solution.iterations,
        "tol": tol,
        "p_nmax": ss.cutoff.top_population,
        "cutoff_ok": ss.cutoff.passes,
        "n_max_used": ss.params.n_max,
        "warnings": ss.solution.warnings.iter().map(warning_json).collect::<Vec<_>>(),
        "degenerate_null_space": degenerate,
    })
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// Runs every requested task and writes the files plus `manifest.json` into
/// `spec.out`. Returns the manifest.
pub fn run(spec: &PointSpec, settings: &Settings, workers: usize) -> Result<Value, CliError> {
    let pool = crate::thread_pool(workers)?;
    pool.install(|| run_inner(spec, settings))
}

fn run_inner(spec: &PointSpec, settings: &Settings) -> Result<Value, CliError> {
    let dir: &Path = &spec.out;
    std::fs::create_dir_all(dir)?;
    let header = crate::header("point", settings)?;
    let p = spec.freqs.params(spec.n_atoms, spec.n_max);
    let opts = SolverOptions {
        tol: spec.tol,
        ..Default::default()
    };
    let ss = solve_model(&p, &opts, CutoffPolicy::default()).map_err(CliError::core)?;
    let rho = &ss.solution.rho;

    let mut files = Vec::new();
    let mut manifest = Map::new();
    manifest.insert("tool".into(), json!("dicke"));
    manifest.insert("version".into(), json!(crate::VERSION));
    manifest.insert("command".into(), json!("point"));
    let settings_json: Map<String, Value> = settings
        .iter()
        .filter(|(k, _)| !["out", "workers"].contains(k))
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    manifest.insert("settings".into(), Value::Object(settings_json));
    manifest.insert("frequencies".into(), spec.freqs.json());
    manifest.insert("n_atoms".into(), json!(spec.n_atoms));
    manifest.insert("n_max_requested".into(), json!(spec.n_max));
    manifest.insert("solver".into(), solver_json(&ss, spec.tol));

    if spec.wants(Task::Scalars) {
        let values = scalar_observables(rho, &Observable::ALL);
        let path = dir.join("scalars.csv");
        crate::write_with_header(&path, &header, |buf| {
            let mut wr = csv::Writer::from_writer(buf);
            wr.write_record(["observable", "value"]).map_err(CliError::core)?;
            for (k, v) in &values {
                wr.write_record([k.to_string(), v.map(crate::fmt_f64).unwrap_or_default()])
                    .map_err(CliError::core)?;
            }
            wr.flush()?;
            Ok(())
        })?;
        let obj: Map<String, Value> = values
            .iter()
            .map(|(k, v)| (k.to_string(), v.map_or(Value::Null, num)))
            .collect();
        manifest.insert("scalars".into(), Value::Object(obj));
        files.push("scalars.csv");
    }

    if spec.wants(Task::Wigner) {
        let cav = partial_trace(rho, Subsystem::Cavity);
        let xs = linspace(-spec.wigner_extent, spec.wigner_extent, spec.wigner_points);
        let w = wigner(&cav, &xs, &xs);
        crate::write_with_header(&dir.join("wigner.csv"), &header, |buf| {
            w.write_csv(buf).map_err(CliError::core)
        })?;
        let maxima: Vec<Value> = w
            .local_maxima(1e-3)
            .iter()
            .map(|&(ix, iy, v)| json!({ "x": xs[ix], "y": xs[iy], "w": v }))
            .collect();
        manifest.insert(
            "wigner".into(),
            json!({ "integral": w.integral(), "local_maxima": maxima }),
        );
        files.push("wigner.csv");
    }

    if spec.wants(Task::SpinQ) {
        let spin = partial_trace(rho, Subsystem::Spin);
        let theta = linspace(0.0, std::f64::consts::PI, spec.q_theta_points);
        let q = spin_qfunction(&spin, &theta, &azimuths(spec.q_phi_points));
        crate::write_with_header(&dir.join("spin_q.csv"), &header, |buf| {
            q.write_csv(buf).map_err(CliError::core)
        })?;
        manifest.insert(
            "spin_q".into(),
            json!({ "normalization": q.normalization(spec.n_atoms) }),
        );
        files.push("spin_q.csv");
    }

    if spec.wants(Task::Correlation) || spec.wants(Task::Spectrum) {
        let l = build_liouvillian(&ss.params);
        let series = correlation_until_decayed(&l, rho, spec.corr_dt, spec.corr_window, &OdeOptions::default())
            .map_err(CliError::core)?;
        crate::write_with_header(&dir.join("correlation.csv"), &header, |buf| {
            series.write_csv(buf).map_err(CliError::core)
        })?;
        files.push("correlation.csv");
        let mut corr = Map::new();
        corr.insert("samples".into(), json!(series.len()));
        corr.insert("dt".into(), json!(series.dt));
        corr.insert("c0_re".into(), num(series.values[0].re));
        corr.insert("c0_im".into(), num(series.values[0].im));
        corr.insert("undecayed_correlation".into(), json!(false));
        if spec.wants(Task::Spectrum) {
            match power_spectrum(&series) {
                Ok(s) => {
                    crate::write_with_header(&dir.join("spectrum.csv"), &header, |buf| {
                        s.write_csv(buf).map_err(CliError::core)
                    })?;
                    files.push("spectrum.csv");
                    manifest.insert(
                        "spectrum".into(),
                        json!({
                            "integral": num(s.integral()),
                            "peak_nu": s.peak().map_or(Value::Null, |(n, _)| num(n)),
                        }),
                    );
                }
                Err(DynamicsError::UndecayedCorrelation { ratio, t_end }) => {
                    corr.insert("undecayed_correlation".into(), json!(true));
                    corr.insert("decay_ratio".into(), num(ratio));
                    corr.insert("t_end".into(), num(t_end));
                }
                Err(e) => return Err(CliError::core(e)),
            }
        }
        manifest.insert("correlation".into(), Value::Object(corr));
    }

    manifest.insert("files".into(), json!(files));
    let manifest = Value::Object(manifest);
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

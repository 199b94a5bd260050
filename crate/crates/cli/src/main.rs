use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dicke_cli::{phase, point, sweep, with_defaults, CliError, Settings};

/// Steady states, snapshots and mean-field phase diagrams of the dissipative
/// Dicke model. Frequencies are ν in MHz.
#[derive(Parser)]
#[command(name = "dicke", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state observables along a line in U or g.
    Sweep(SweepArgs),
    /// Steady state at one parameter point with Wigner, Q, correlation and spectrum outputs.
    Point(PointArgs),
    /// Mean-field attractor classification over a (g, U) grid.
    PhaseDiagram(PhaseArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    g: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u: Option<f64>,
    /// Comma-separated list for sweeps.
    #[arg(long)]
    n_atoms: Option<String>,
    #[arg(long)]
    n_max: Option<usize>,
    /// Steady-state residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Per-point timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// `key = value` settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        let s = |v: &Option<f64>| v.map(|x| x.to_string());
        vec![
            ("omega0", s(&self.omega0)),
            ("omega", s(&self.omega)),
            ("kappa", s(&self.kappa)),
            ("g", s(&self.g)),
            ("u", s(&self.u)),
            ("n-atoms", self.n_atoms.clone()),
            ("n-max", self.n_max.map(|v| v.to_string())),
            ("tol", s(&self.tol)),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("timeout", s(&self.timeout)),
        ]
    }

    fn settings(
        &self,
        extra: Vec<(&'static str, Option<String>)>,
        defaults: &[(&str, &str)],
    ) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        s.overlay(self.flags());
        s.overlay(extra);
        Ok(with_defaults(s, defaults))
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Swept parameter: `u` or `g`.
    #[arg(long)]
    vary: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    max: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Explicit comma-separated grid instead of min/max/step.
    #[arg(long, allow_hyphen_values = true)]
    values: Option<String>,
    /// `mhz` or `omega` (multiples of the cavity frequency).
    #[arg(long)]
    grid_units: Option<String>,
    /// Comma-separated subset of jz,n,g2,en,purity,fidelity.
    #[arg(long)]
    observables: Option<String>,
}

#[derive(Args)]
struct PointArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of scalars,wigner,spin-q,correlation,spectrum.
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    wigner_extent: Option<f64>,
    #[arg(long)]
    wigner_points: Option<usize>,
    #[arg(long)]
    q_theta_points: Option<usize>,
    #[arg(long)]
    q_phi_points: Option<usize>,
    /// Correlation sample step (µs).
    #[arg(long)]
    corr_dt: Option<f64>,
    /// Longest correlation window (µs).
    #[arg(long)]
    corr_window: Option<f64>,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    g_min: Option<f64>,
    #[arg(long)]
    g_max: Option<f64>,
    #[arg(long)]
    g_points: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    u_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u_max: Option<f64>,
    #[arg(long)]
    u_points: Option<usize>,
    /// Units of the U axis: `mhz` or `omega`.
    #[arg(long)]
    grid_units: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
}

fn f(v: Option<f64>) -> Option<String> {
    v.map(|x| x.to_string())
}

fn u(v: Option<usize>) -> Option<String> {
    v.map(|x| x.to_string())
}

fn run_sweep(a: &SweepArgs) -> Result<bool, CliError> {
    let s = a.common.settings(
        vec![
            ("vary", a.vary.clone()),
            ("min", f(a.min)),
            ("max", f(a.max)),
            ("step", f(a.step)),
            ("values", a.values.clone()),
            ("grid-units", a.grid_units.clone()),
            ("observables", a.observables.clone()),
        ],
        sweep::DEFAULTS,
    )?;
    let spec = sweep::SweepSpec::from_settings(&s)?;
    let workers = dicke_cli::workers(&s)?;
    let header = dicke_cli::header("sweep", &s)?;
    let rows = sweep::run(&spec, workers, !a.common.quiet)?;
    dicke_cli::write_with_header(&spec.out, &header, |buf| sweep::write_rows(&spec, &rows, buf))?;
    let failed = sweep::fatal_errors(&rows);
    if failed > 0 {
        eprintln!("{failed} point(s) failed; see the error column of {}", spec.out.display());
    }
    Ok(failed == 0)
}

fn run_point(a: &PointArgs) -> Result<bool, CliError> {
    let s = a.common.settings(
        vec![
            ("tasks", a.tasks.clone()),
            ("wigner-extent", f(a.wigner_extent)),
            ("wigner-points", u(a.wigner_points)),
            ("q-theta-points", u(a.q_theta_points)),
            ("q-phi-points", u(a.q_phi_points)),
            ("corr-dt", f(a.corr_dt)),
            ("corr-window", f(a.corr_window)),
        ],
        point::DEFAULTS,
    )?;
    let spec = point::PointSpec::from_settings(&s)?;
    let workers = dicke_cli::workers(&s)?;
    let timeout = dicke_cli::timeout(&s)?;
    let job_spec = spec.clone();
    let job_settings = s.clone();
    match dicke_cli::with_timeout(timeout, move || point::run(&job_spec, &job_settings, workers)) {
        Some(r) => {
            r?;
            Ok(true)
        }
        None => Err(CliError::Core(format!("point timed out after {timeout:?}"))),
    }
}

fn run_phase(a: &PhaseArgs) -> Result<bool, CliError> {
    let s = a.common.settings(
        vec![
            ("g-min", f(a.g_min)),
            ("g-max", f(a.g_max)),
            ("g-points", u(a.g_points)),
            ("u-min", f(a.u_min)),
            ("u-max", f(a.u_max)),
            ("u-points", u(a.u_points)),
            ("grid-units", a.grid_units.clone()),
            ("seeds", u(a.seeds)),
        ],
        phase::DEFAULTS,
    )?;
    let spec = phase::PhaseSpec::from_settings(&s)?;
    let workers = dicke_cli::workers(&s)?;
    let header = dicke_cli::header("phase-diagram", &s)?;
    let diagram = phase::run(&spec, workers, !a.common.quiet)?;
    dicke_cli::write_with_header(&spec.out, &header, |buf| {
        diagram.write_csv(buf).map_err(CliError::core)
    })?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sweep(a) => run_sweep(a),
        Command::Point(a) => run_point(a),
        Command::PhaseDiagram(a) => run_phase(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Mean-field limit: `α = ⟨a⟩/√N`, `β = ⟨J₋⟩/N`, `γ = ⟨Jz⟩/N` with
//!
//! ```text
//! α̇ = -i(ω - iκ + Uγ)α - ig(β + β*)
//! β̇ = -i(ω₀ + U|α|²)β + 2ig(α + α*)γ
//! γ̇ = ig(α + α*)(β - β*)
//! ```
//!
//! Real coordinates `(Re α, Im α, Re β, Im β, γ)` are used for Jacobians and
//! distances. The spin length `|β|² + γ²` is conserved.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use faer::Mat;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::ModelParams;
use crate::ode::{integrate as ode_integrate, ErrorControl, OdeError, OdeOptions};
use crate::C64;

#[derive(Debug, Error)]
pub enum SemiclassicalError {
    #[error("initial spin length |β|²+γ² = {0} exceeds 1/4")]
    Unphysical(f64),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiclassicalState {
    pub alpha: C64,
    pub beta: C64,
    pub gamma: f64,
}

impl SemiclassicalState {
    pub fn new(alpha: C64, beta: C64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    /// `α = β = 0`, `γ = -½`.
    pub fn normal() -> Self {
        Self::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), -0.5)
    }

    /// `α = β = 0`, `γ = +½`.
    pub fn inverted() -> Self {
        Self::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), 0.5)
    }

    /// Spin on the sphere of length ½ at polar angle `theta` from the normal
    /// pole and azimuth `phi`, with the given field.
    pub fn on_sphere(theta: f64, phi: f64, alpha: C64) -> Self {
        Self::new(alpha, C64::from_polar(0.5 * theta.sin(), -phi), -0.5 * theta.cos())
    }

    pub fn spin_length(&self) -> f64 {
        self.beta.norm_sqr() + self.gamma * self.gamma
    }

    pub fn is_physical(&self) -> bool {
        self.spin_length() <= 0.25 + 1e-12
    }

    pub fn to_real(&self) -> [f64; 5] {
        [self.alpha.re, self.alpha.im, self.beta.re, self.beta.im, self.gamma]
    }

    pub fn from_real(v: &[f64; 5]) -> Self {
        Self::new(C64::new(v[0], v[1]), C64::new(v[2], v[3]), v[4])
    }

    fn to_packed(self) -> [C64; 3] {
        [self.alpha, self.beta, C64::new(self.gamma, 0.0)]
    }

    fn from_packed(y: &[C64]) -> Self {
        Self::new(y[0], y[1], y[2].re)
    }

    /// Euclidean distance in the real coordinates.
    pub fn distance(&self, other: &Self) -> f64 {
        let (a, b) = (self.to_real(), other.to_real());
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.to_real().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn rhs_packed(p: &ModelParams, y: &[C64], dy: &mut [C64]) {
    let i = C64::new(0.0, 1.0);
    let (alpha, beta, gamma) = (y[0], y[1], y[2].re);
    let x_field = alpha + alpha.conj();
    dy[0] = -i * (C64::new(p.omega + p.u * gamma, -p.kappa)) * alpha - i * p.g * (beta + beta.conj());
    dy[1] = -i * (p.omega0 + p.u * alpha.norm_sqr()) * beta + 2.0 * i * p.g * x_field * gamma;
    dy[2] = C64::new((i * p.g * x_field * (beta - beta.conj())).re, 0.0);
}

/// Time derivative of `s`.
pub fn rhs(p: &ModelParams, s: &SemiclassicalState) -> SemiclassicalState {
    let mut d = [C64::new(0.0, 0.0); 3];
    rhs_packed(p, &s.to_packed(), &mut d);
    SemiclassicalState::from_packed(&d)
}

/// Jacobian of the flow in real coordinates.
pub fn jacobian(p: &ModelParams, s: &SemiclassicalState) -> [[f64; 5]; 5] {
    let [x, y, pr, q, z] = s.to_real();
    let (g, u, k) = (p.g, p.u, p.kappa);
    let w = p.omega + u * z;
    let spin_freq = p.omega0 + u * (x * x + y * y);
    [
        [-k, w, 0.0, 0.0, u * y],
        [-w, -k, -2.0 * g, 0.0, -u * x],
        [2.0 * u * x * q, 2.0 * u * y * q, 0.0, spin_freq, 0.0],
        [-2.0 * u * x * pr + 4.0 * g * z, -2.0 * u * y * pr, -spin_freq, 0.0, 4.0 * g * x],
        [-4.0 * g * q, 0.0, 0.0, -4.0 * g * x, 0.0],
    ]
}

/// Eigenvalues of a 5×5 Jacobian restricted to the tangent space of the
/// spin-length sphere through `s`.
pub fn tangent_eigenvalues(jac: &[[f64; 5]; 5], s: &SemiclassicalState) -> Vec<C64> {
    let [_, _, pr, q, z] = s.to_real();
    let grad = [0.0, 0.0, pr, q, z];
    let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut basis: Vec<[f64; 5]> = Vec::with_capacity(4);
    let normal: Option<[f64; 5]> = (gnorm > 0.0).then(|| grad.map(|v| v / gnorm));
    for e in 0..5 {
        let mut v = [0.0; 5];
        v[e] = 1.0;
        for b in normal.iter().chain(basis.iter()) {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 && basis.len() < if normal.is_some() { 4 } else { 5 } {
            basis.push(v.map(|a| a / n));
        }
    }
    let m = basis.len();
    let proj = Mat::<f64>::from_fn(m, m, |i, j| {
        let mut s = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                s += basis[i][a] * jac[a][b] * basis[j][b];
            }
        }
        s
    });
    proj.eigenvalues()
        .expect("eigenvalues of a small real matrix")
        .into_iter()
        .map(|z| C64::new(z.re, z.im))
        .collect()
}

/// Largest real part of the linearized flow at `s`, excluding the conserved
/// spin-length direction.
pub fn growth_rate(p: &ModelParams, s: &SemiclassicalState) -> f64 {
    tangent_eigenvalues(&jacobian(p, s), s)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Real parts below `-STABILITY_MARGIN` count as decaying.
pub const STABILITY_MARGIN: f64 = 1e-12;

pub fn is_linearly_stable(p: &ModelParams, s: &SemiclassicalState) -> bool {
    growth_rate(p, s) < -STABILITY_MARGIN
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<SemiclassicalState>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&SemiclassicalState> {
        self.states.last()
    }
}

pub const DEFAULT_TOL: f64 = 1e-10;

fn ode_options(tol: f64) -> OdeOptions {
    OdeOptions {
        control: ErrorControl::PerUnitTime(tol),
        ..Default::default()
    }
}

/// Integrates from `s0` and samples at every time in `t_grid` (ascending,
/// starting at the initial time).
pub fn integrate(
    p: &ModelParams,
    s0: &SemiclassicalState,
    t_grid: &[f64],
    tol: f64,
) -> Result<Trajectory, SemiclassicalError> {
    if !s0.is_physical() {
        return Err(SemiclassicalError::Unphysical(s0.spin_length()));
    }
    let mut states = Vec::with_capacity(t_grid.len());
    ode_integrate(
        |_, y, dy| rhs_packed(p, y, dy),
        &s0.to_packed(),
        t_grid,
        &ode_options(tol),
        |_, _, y| states.push(SemiclassicalState::from_packed(y)),
    )?;
    Ok(Trajectory {
        t: t_grid.to_vec(),
        states,
    })
}

/// Integrates to `t_final` and returns only the final state.
pub fn integrate_to(
    p: &ModelParams,
    s0: &SemiclassicalState,
    t_final: f64,
    tol: f64,
) -> Result<SemiclassicalState, SemiclassicalError> {
    let traj = integrate(p, s0, &[0.0, t_final], tol)?;
    Ok(*traj.last().expect("two-point grid"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalCouplings {
    /// Onset from the normal phase, `√(ω₀(κ² + ω₋²)/(4ω₋))`, `ω₋ = ω - U/2`.
    pub g_a_plus: Option<f64>,
    /// Onset from the inverted phase, `√(-ω₀(κ² + ω₊²)/(4ω₊))`, `ω₊ = ω + U/2`.
    pub g_a_minus: Option<f64>,
    /// Appearance of the `ω₀ + U|α|² = 0` branch, `κ√(ω₀U/(4(ω² - U²/4)))`.
    pub g_b: Option<f64>,
}

impl CriticalCouplings {
    pub fn normal_onset(&self) -> Option<f64> {
        self.g_a_plus
    }

    pub fn inverted_onset(&self) -> Option<f64> {
        self.g_a_minus
    }
}

fn positive_sqrt(radicand: f64) -> Option<f64> {
    (radicand > 0.0 && radicand.is_finite()).then(|| radicand.sqrt())
}

pub fn critical_couplings(p: &ModelParams) -> CriticalCouplings {
    let w_plus = p.omega + 0.5 * p.u;
    let w_minus = p.omega - 0.5 * p.u;
    let k2 = p.kappa * p.kappa;
    let g_b = if p.u < -2.0 * p.omega {
        positive_sqrt(p.omega0 * p.u / (4.0 * (p.omega * p.omega - 0.25 * p.u * p.u)))
            .map(|r| p.kappa * r)
    } else {
        None
    };
    CriticalCouplings {
        g_a_plus: positive_sqrt(p.omega0 * (k2 + w_minus * w_minus) / (4.0 * w_minus)),
        g_a_minus: positive_sqrt(-p.omega0 * (k2 + w_plus * w_plus) / (4.0 * w_plus)),
        g_b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FixedPointLabel {
    Normal,
    Inverted,
    SraPlus,
    SraMinus,
    SrbPlus,
    SrbMinus,
    LimitCycleGamma,
}

impl FixedPointLabel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal => "Normal",
            Self::Inverted => "Inverted",
            Self::SraPlus => "SRA+",
            Self::SraMinus => "SRA-",
            Self::SrbPlus => "SRB+",
            Self::SrbMinus => "SRB-",
            Self::LimitCycleGamma => "LimitCycleGamma",
        }
    }

    pub fn is_sra(&self) -> bool {
        matches!(self, Self::SraPlus | Self::SraMinus)
    }

    pub fn is_srb(&self) -> bool {
        matches!(self, Self::SrbPlus | Self::SrbMinus)
    }
}

impl fmt::Display for FixedPointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub label: FixedPointLabel,
    pub state: SemiclassicalState,
    pub exists: bool,
    /// Linear stability on the spin sphere; `None` for the limit-cycle `γ`.
    pub stable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSet {
    pub points: Vec<FixedPoint>,
}

impl FixedPointSet {
    pub fn existing(&self) -> impl Iterator<Item = &FixedPoint> {
        self.points.iter().filter(|f| f.exists)
    }

    /// Existing, genuine fixed points (the limit-cycle `γ` is excluded).
    pub fn proper(&self) -> impl Iterator<Item = &FixedPoint> {
        self.existing()
            .filter(|f| f.label != FixedPointLabel::LimitCycleGamma)
    }

    pub fn stable(&self) -> impl Iterator<Item = &FixedPoint> {
        self.proper().filter(|f| f.stable == Some(true))
    }

    pub fn get(&self, label: FixedPointLabel) -> impl Iterator<Item = &FixedPoint> {
        self.points.iter().filter(move |f| f.label == label)
    }
}

fn absent(label: FixedPointLabel) -> FixedPoint {
    let nan = f64::NAN;
    FixedPoint {
        label,
        state: SemiclassicalState::new(C64::new(nan, nan), C64::new(nan, nan), nan),
        exists: false,
        stable: None,
    }
}

fn with_stability(p: &ModelParams, label: FixedPointLabel, state: SemiclassicalState) -> FixedPoint {
    FixedPoint {
        label,
        state,
        exists: true,
        stable: Some(is_linearly_stable(p, &state)),
    }
}

/// SRA roots of `Uγ² + 2ωγ + c = 0`, `c = (ω₀(ω² + κ²) + Ug²)/(ω₀U + 4g²)`,
/// written so the `+` root stays finite as `U → 0`.
fn sra_gammas(p: &ModelParams) -> (Option<f64>, Option<f64>) {
    let (w, u, g) = (p.omega, p.u, p.g);
    let denom = p.omega0 * u + 4.0 * g * g;
    if denom == 0.0 {
        return (None, None);
    }
    let c = (p.omega0 * (w * w + p.kappa * p.kappa) + u * g * g) / denom;
    let disc = w * w - u * c;
    if disc < 0.0 {
        return (None, None);
    }
    let root = disc.sqrt();
    let plus = -c / (w + root);
    let minus = if u != 0.0 { Some((-w - root) / u) } else { None };
    (Some(plus), minus)
}

fn sra_states(p: &ModelParams, z: f64) -> Option<[SemiclassicalState; 2]> {
    if !(z.abs() < 0.5) {
        return None;
    }
    let w = p.omega + p.u * z;
    let k2 = p.kappa * p.kappa;
    if w == 0.0 || p.g == 0.0 {
        return None;
    }
    let r2 = p.g * p.g * (1.0 - 4.0 * z * z) / (w * w + k2);
    let x = w.abs() * r2.sqrt() / (w * w + k2).sqrt();
    let make = |x: f64| {
        let y = p.kappa * x / w;
        let beta_re = -x * (w * w + k2) / (2.0 * p.g * w);
        SemiclassicalState::new(C64::new(x, y), C64::new(beta_re, 0.0), z)
    };
    Some([make(x), make(-x)])
}

/// SRB points with `α = ±i√(-ω₀/U)`, `γ = -ω/U`; for each field sign both
/// signs of `Im β` solve the fixed-point equations.
fn srb_states(p: &ModelParams, sign: f64) -> Option<[SemiclassicalState; 2]> {
    if !(p.u < -2.0 * p.omega) || p.g == 0.0 {
        return None;
    }
    let z = -p.omega / p.u;
    let a = (-p.omega0 / p.u).sqrt();
    let y = sign * a;
    let beta_re = -p.kappa * y / (2.0 * p.g);
    let rem = 0.25 - z * z - beta_re * beta_re;
    if rem < 0.0 {
        return None;
    }
    let q = rem.sqrt();
    let make = |q: f64| SemiclassicalState::new(C64::new(0.0, y), C64::new(beta_re, q), z);
    Some([make(q), make(-q)])
}

pub fn fixed_points(p: &ModelParams) -> FixedPointSet {
    use FixedPointLabel::*;
    let mut points = vec![
        with_stability(p, Normal, SemiclassicalState::normal()),
        with_stability(p, Inverted, SemiclassicalState::inverted()),
    ];
    let (gp, gm) = sra_gammas(p);
    let mut push_pair = |label, states: Option<[SemiclassicalState; 2]>| match states {
        Some(pair) => {
            for s in pair {
                points.push(with_stability(p, label, s));
            }
        }
        None => points.push(absent(label)),
    };
    push_pair(
        SraPlus,
        gp.filter(|_| p.u < 2.0 * p.omega).and_then(|z| sra_states(p, z)),
    );
    push_pair(
        SraMinus,
        gm.filter(|_| p.u < -2.0 * p.omega).and_then(|z| sra_states(p, z)),
    );
    push_pair(SrbPlus, srb_states(p, 1.0));
    push_pair(SrbMinus, srb_states(p, -1.0));
    if p.u >= 2.0 * p.omega {
        let z = -p.omega / p.u;
        points.push(FixedPoint {
            label: LimitCycleGamma,
            state: SemiclassicalState::new(
                C64::new(0.0, 0.0),
                C64::new((0.25 - z * z).sqrt(), 0.0),
                z,
            ),
            exists: true,
            stable: None,
        });
    } else {
        points.push(absent(LimitCycleGamma));
    }
    FixedPointSet { points }
}

/// Smallest `g` in `[lo, hi]` at which the normal phase loses linear
/// stability, by bisection on the sign of its growth rate. `None` if the
/// stability does not change across the bracket.
pub fn normal_onset_by_bisection(p: &ModelParams, lo: f64, hi: f64, rel_tol: f64) -> Option<f64> {
    let unstable = |g: f64| !is_linearly_stable(&p.with_g(g), &SemiclassicalState::normal());
    let (mut a, mut b) = (lo, hi);
    if unstable(a) || !unstable(b) {
        return None;
    }
    while (b - a) > rel_tol * b {
        let mid = 0.5 * (a + b);
        if unstable(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Some(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttractorLabel {
    FixedPoint(FixedPointLabel),
    LimitCycle,
    Unresolved,
}

impl AttractorLabel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FixedPoint(l) => l.name(),
            Self::LimitCycle => "LimitCycle",
            Self::Unresolved => "Unresolved",
        }
    }

    /// Collapses `±` variants into one phase name (`SRA`, `SRB`).
    pub fn phase(&self) -> &'static str {
        match self {
            Self::FixedPoint(l) if l.is_sra() => "SRA",
            Self::FixedPoint(l) if l.is_srb() => "SRB",
            other => other.name(),
        }
    }
}

impl fmt::Display for AttractorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Discarded initial stretch (µs).
    pub transient: f64,
    /// Length of each analysed window (µs).
    pub window: f64,
    /// Windows examined before giving up.
    pub max_windows: usize,
    pub sample_dt: f64,
    pub tol: f64,
    /// Final distance to a fixed point for a settled trajectory.
    pub fp_distance: f64,
    /// Trailing-window variance below which a trajectory counts as settled.
    pub variance: f64,
    /// A steadily shrinking distance to a stable fixed point whose Aitken
    /// extrapolated limit is below this fraction of the current distance
    /// counts as convergence.
    pub extrapolation_fraction: f64,
    /// Minimum peak-to-peak oscillation of `|α|` for a limit cycle.
    pub cycle_amplitude: f64,
    /// Allowed relative change of that amplitude between windows.
    pub cycle_steadiness: f64,
    /// Allowed change of the window-mean `γ` between windows on a cycle.
    pub cycle_gamma_drift: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            transient: 200.0,
            window: 500.0,
            max_windows: 2000,
            sample_dt: 0.05,
            tol: DEFAULT_TOL,
            fp_distance: 1e-4,
            variance: 1e-10,
            extrapolation_fraction: 0.1,
            cycle_amplitude: 1e-3,
            cycle_steadiness: 1e-3,
            cycle_gamma_drift: 1e-6,
        }
    }
}

struct WindowStats {
    variance: f64,
    last: SemiclassicalState,
    mean_gamma: f64,
    mean_distance: Vec<f64>,
    alpha_amplitude: f64,
    periodic: bool,
}

fn analyse_window(states: &[SemiclassicalState], fps: &[FixedPoint]) -> WindowStats {
    let n = states.len() as f64;
    let reals: Vec<[f64; 5]> = states.iter().map(|s| s.to_real()).collect();
    let mut mean = [0.0; 5];
    for r in &reals {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let variance = reals
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    let mean_distance = fps
        .iter()
        .map(|f| states.iter().map(|s| s.distance(&f.state)).sum::<f64>() / n)
        .collect();
    let mags: Vec<f64> = states.iter().map(|s| s.alpha.norm()).collect();
    let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    WindowStats {
        variance,
        last: *states.last().expect("non-empty window"),
        mean_gamma: mean[4],
        mean_distance,
        alpha_amplitude: hi - lo,
        periodic: has_autocorrelation_peak(&mags, 0.8),
    }
}

/// True if the normalized autocorrelation of `x` has a local maximum above
/// `threshold` after its first zero crossing.
fn has_autocorrelation_peak(x: &[f64], threshold: f64) -> bool {
    let n = x.len();
    if n < 8 {
        return false;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = d.iter().map(|v| v * v).sum();
    if c0 == 0.0 {
        return false;
    }
    let ac = |lag: usize| -> f64 {
        d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / c0
    };
    let max_lag = n / 2;
    let mut crossed = false;
    let mut prev = ac(1);
    let mut cur = ac(2);
    for lag in 3..max_lag {
        let next = ac(lag);
        if cur < 0.0 {
            crossed = true;
        }
        if crossed && cur > prev && cur >= next && cur > threshold {
            return true;
        }
        prev = cur;
        cur = next;
    }
    false
}

/// Aitken limit of three strictly decreasing distances; `-∞` when the
/// decrease is not slowing down.
fn extrapolated_limit(d0: f64, d1: f64, d2: f64) -> Option<f64> {
    if !(d0 > d1 && d1 > d2) {
        return None;
    }
    let r = (d1 - d2) / (d0 - d1);
    Some(if r < 1.0 {
        d2 - (d1 - d2) * r / (1.0 - r)
    } else {
        f64::NEG_INFINITY
    })
}

/// Long-time attractor reached from `s0`.
///
/// Each window is tested in order for: a settled fixed point; steady
/// convergence towards a linearly stable fixed point (three shrinking window
/// means with a near-zero extrapolated limit); a limit cycle (periodic `|α|`
/// with steady amplitude and stationary mean `γ`).
pub fn classify_attractor(
    p: &ModelParams,
    s0: &SemiclassicalState,
    opts: &ClassifyOptions,
) -> Result<AttractorLabel, SemiclassicalError> {
    let fps: Vec<FixedPoint> = fixed_points(p).proper().copied().collect();
    let mut state = integrate_to(p, s0, opts.transient, opts.tol)?;
    let n_samples = (opts.window / opts.sample_dt).round().max(2.0) as usize + 1;
    let grid: Vec<f64> = (0..n_samples)
        .map(|k| k as f64 * opts.window / (n_samples - 1) as f64)
        .collect();
    let mut history: Vec<WindowStats> = Vec::with_capacity(3);
    for _ in 0..opts.max_windows {
        let traj = integrate(p, &state, &grid, opts.tol)?;
        let stats = analyse_window(&traj.states, &fps);
        state = stats.last;

        let nearest = fps
            .iter()
            .enumerate()
            .map(|(i, f)| (i, f.state.distance(&stats.last)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, d)) = nearest {
            if stats.variance < opts.variance && d < opts.fp_distance {
                return Ok(AttractorLabel::FixedPoint(fps[i].label));
            }
        }
        if history.len() == 2 {
            let (h0, h1) = (&history[0], &history[1]);
            let converging = fps.iter().enumerate().find(|(i, f)| {
                f.stable == Some(true)
                    && extrapolated_limit(
                        h0.mean_distance[*i],
                        h1.mean_distance[*i],
                        stats.mean_distance[*i],
                    )
                    .is_some_and(|lim| lim < opts.extrapolation_fraction * stats.mean_distance[*i])
            });
            if let Some((_, f)) = converging {
                return Ok(AttractorLabel::FixedPoint(f.label));
            }
            let amp = stats.alpha_amplitude;
            let steady = [h0.alpha_amplitude, h1.alpha_amplitude]
                .iter()
                .all(|a| (a - amp).abs() <= opts.cycle_steadiness * amp);
            let stationary = (stats.mean_gamma - h1.mean_gamma).abs() <= opts.cycle_gamma_drift;
            if amp > opts.cycle_amplitude && stats.periodic && steady && stationary {
                return Ok(AttractorLabel::LimitCycle);
            }
            history.remove(0);
        }
        history.push(stats);
    }
    Ok(AttractorLabel::Unresolved)
}

/// Polar offset (rad) of the two seeds placed next to the poles.
pub const POLE_OFFSET: f64 = 0.5;

/// Deterministic seeds on the physical sphere: near the normal pole, near the
/// inverted pole, then a golden-angle spiral. The field starts at its
/// adiabatic value for the given spin.
pub fn seed_states(p: &ModelParams, n_seeds: usize) -> Vec<SemiclassicalState> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let spiral = n_seeds.saturating_sub(2).max(1) as f64;
    (0..n_seeds)
        .map(|k| {
            let (theta, phi) = match k {
                0 => (POLE_OFFSET, 0.3),
                1 => (PI - POLE_OFFSET, 1.1),
                _ => {
                    let j = (k - 2) as f64;
                    let cos_t = 1.0 - 2.0 * (j + 0.382) / spiral;
                    (cos_t.clamp(-1.0, 1.0).acos(), golden * j + 0.4)
                }
            };
            let spin = SemiclassicalState::on_sphere(theta, phi, C64::new(0.0, 0.0));
            let drive = spin.beta + spin.beta.conj();
            let detuning = C64::new(p.omega + p.u * spin.gamma, -p.kappa);
            SemiclassicalState::new(-p.g * drive / detuning, spin.beta, spin.gamma)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCell {
    pub g: f64,
    pub u: f64,
    pub labels: BTreeSet<AttractorLabel>,
}

impl PhaseCell {
    /// Labels joined with `+` in sorted order, e.g. `Normal+Inverted`.
    pub fn label_string(&self) -> String {
        self.labels
            .iter()
            .map(|l| l.name())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn contains_phase(&self, phase: &str) -> bool {
        self.labels.iter().any(|l| l.phase() == phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub cells: Vec<PhaseCell>,
}

impl PhaseDiagram {
    /// Columns `g_mhz, u_mhz, labels` with frequencies as `ν = ω/2π`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SemiclassicalError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["g_mhz", "u_mhz", "labels"])?;
        for c in &self.cells {
            wr.write_record(&[
                (c.g / (2.0 * PI)).to_string(),
                (c.u / (2.0 * PI)).to_string(),
                c.label_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Classifies every `(g, U)` cell (row-major in `g`) from `n_seeds` seeds and
/// records the union of attractor labels.
pub fn phase_diagram(
    template: &ModelParams,
    g_grid: &[f64],
    u_grid: &[f64],
    n_seeds: usize,
    opts: &ClassifyOptions,
) -> Result<PhaseDiagram, SemiclassicalError> {
    let jobs: Vec<(usize, f64, f64, SemiclassicalState)> = g_grid
        .iter()
        .flat_map(|&g| u_grid.iter().map(move |&u| (g, u)))
        .enumerate()
        .flat_map(|(cell, (g, u))| {
            let p = template.with_g(g).with_u(u);
            seed_states(&p, n_seeds)
                .into_iter()
                .map(move |s| (cell, g, u, s))
        })
        .collect();
    let labels: Vec<(usize, AttractorLabel)> = jobs
        .par_iter()
        .map(|&(cell, g, u, s)| {
            classify_attractor(&template.with_g(g).with_u(u), &s, opts).map(|l| (cell, l))
        })
        .collect::<Result<_, _>>()?;
    let mut cells: Vec<PhaseCell> = g_grid
        .iter()
        .flat_map(|&g| {
            u_grid.iter().map(move |&u| PhaseCell {
                g,
                u,
                labels: BTreeSet::new(),
            })
        })
        .collect();
    for (cell, l) in labels {
        cells[cell].labels.insert(l);
    }
    Ok(PhaseDiagram { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mhz;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cut(g: f64, u_over_omega: f64) -> ModelParams {
        ModelParams::cut(g, u_over_omega)
    }

    fn random_physical(rng: &mut ChaCha8Rng) -> SemiclassicalState {
        let theta = rng.gen_range(0.0..PI);
        let phi = rng.gen_range(0.0..2.0 * PI);
        let r = rng.gen_range(0.0..1.0);
        let mut s = SemiclassicalState::on_sphere(
            theta,
            phi,
            C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
        );
        s.beta *= r;
        s.gamma *= r;
        s
    }

    #[test]
    fn poles_are_stationary() {
        for u in [-4.0, 0.0, 4.0] {
            let p = cut(0.1, u);
            assert_eq!(rhs(&p, &SemiclassicalState::normal()).norm(), 0.0);
            assert_eq!(rhs(&p, &SemiclassicalState::inverted()).norm(), 0.0);
        }
    }

    #[test]
    fn spin_length_rate_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = ModelParams::mhz(
                rng.gen_range(0.0..0.2),
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.0..0.5),
                rng.gen_range(0.0..0.3),
                rng.gen_range(-6.0..6.0),
            );
            let s = random_physical(&mut rng);
            let d = rhs(&p, &s);
            let rate = 2.0 * (s.beta.conj() * d.beta).re + 2.0 * s.gamma * d.gamma;
            assert!(rate.abs() < 1e-12, "{rate:e}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = cut(0.17, -2.7);
        for _ in 0..10 {
            let s = random_physical(&mut rng);
            let jac = jacobian(&p, &s);
            let h = 1e-6;
            for col in 0..5 {
                let mut plus = s.to_real();
                let mut minus = s.to_real();
                plus[col] += h;
                minus[col] -= h;
                let fp = rhs(&p, &SemiclassicalState::from_real(&plus)).to_real();
                let fm = rhs(&p, &SemiclassicalState::from_real(&minus)).to_real();
                for row in 0..5 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!((fd - jac[row][col]).abs() < 1e-7, "({row},{col})");
                }
            }
        }
    }

    #[test]
    fn critical_coupling_values() {
        let c = critical_couplings(&cut(0.1, 0.0));
        let want = (0.05f64 * 1.04 / 4.0).sqrt();
        assert!((c.normal_onset().unwrap() / mhz(1.0) - want).abs() < 1e-12);
        assert!((want - 0.11402).abs() < 1e-5);
        assert!(c.g_b.is_none() && c.inverted_onset().is_none());

        let c = critical_couplings(&cut(0.1, -4.0));
        let gb = c.g_b.unwrap() / mhz(1.0);
        assert!((gb - 0.2 * (1.0f64 / 60.0).sqrt()).abs() < 1e-12);
        assert!((gb - 0.02582).abs() < 1e-5);
        assert!(critical_couplings(&cut(0.1, -1.0)).g_b.is_none());
        assert!(critical_couplings(&cut(0.1, 1.0)).g_b.is_none());
    }

    #[test]
    fn srb_point_at_minus_four_omega() {
        let p = cut(0.1, -4.0);
        let set = fixed_points(&p);
        let srb: Vec<_> = set.get(FixedPointLabel::SrbPlus).collect();
        assert_eq!(srb.len(), 2);
        for f in &srb {
            assert!(f.exists);
            assert_eq!(f.state.gamma, 0.25);
            assert!((f.state.alpha.im - 0.111_80).abs() < 1e-5);
            assert_eq!(f.state.alpha.re, 0.0);
        }
        let minus = set.get(FixedPointLabel::SrbMinus).next().unwrap();
        assert!((minus.state.alpha.im + 0.111_80).abs() < 1e-5);
    }

    #[test]
    fn every_fixed_point_is_stationary() {
        for g in [0.01, 0.1, 0.17, 0.3] {
            for k in -20..=20 {
                let p = cut(g, k as f64 * 0.5);
                for f in fixed_points(&p).proper() {
                    let r = rhs(&p, &f.state).norm();
                    assert!(r < 1e-12, "{} at g={g} U={}: {r:e}", f.label, k as f64 * 0.5);
                    assert!((f.state.spin_length() - 0.25).abs() < 1e-12);
                    assert!(f.state.gamma <= 0.5);
                }
            }
        }
    }

    #[test]
    fn poles_always_exist_and_branch_filters_hold() {
        for k in -20..=20 {
            let u = k as f64 * 0.5;
            let p = cut(0.2, u);
            let set = fixed_points(&p);
            assert!(set.get(FixedPointLabel::Normal).all(|f| f.exists));
            assert!(set.get(FixedPointLabel::Inverted).all(|f| f.exists));
            let has = |l| set.get(l).any(|f| f.exists);
            if u >= -2.0 {
                assert!(!has(FixedPointLabel::SraMinus) && !has(FixedPointLabel::SrbPlus));
            }
            if u >= 2.0 {
                assert!(!has(FixedPointLabel::SraPlus));
                assert!(has(FixedPointLabel::LimitCycleGamma));
            }
        }
    }

    #[test]
    fn sra_field_matches_closed_form() {
        // α = ±2g√(¼ - γ²)/(ω + Uγ - iκ)
        for (g, u) in [(0.17, 0.0), (0.17, 1.0), (0.3, -1.5), (0.3, -5.0)] {
            let p = cut(g, u);
            for f in fixed_points(&p).proper().filter(|f| f.label.is_sra()) {
                let z = f.state.gamma;
                let a = 2.0 * p.g * (0.25 - z * z).sqrt()
                    / C64::new(p.omega + p.u * z, -p.kappa);
                let err = (f.state.alpha - a).norm().min((f.state.alpha + a).norm());
                assert!(err < 1e-12, "g={g} U={u}");
            }
        }
    }

    #[test]
    fn inverted_onset_below_minus_two_omega() {
        let p = cut(0.1, -4.0);
        let c = critical_couplings(&p);
        let gi = c.inverted_onset().unwrap();
        let w = p.omega + 0.5 * p.u;
        assert!((gi * gi + p.omega0 * (p.kappa.powi(2) + w * w) / (4.0 * w)).abs() < 1e-12);
        let inv = SemiclassicalState::inverted();
        assert!(is_linearly_stable(&p.with_g(0.9 * gi), &inv));
        assert!(!is_linearly_stable(&p.with_g(1.1 * gi), &inv));
        assert!(critical_couplings(&cut(0.1, -1.0)).inverted_onset().is_none());
    }

    #[test]
    fn srb_gamma_is_exact_above_threshold() {
        for u in [-2.5, -4.0, -7.0] {
            let p = cut(0.1, u);
            let gb = critical_couplings(&p).g_b.unwrap();
            let set = fixed_points(&p.with_g(1.2 * gb));
            let f = set.get(FixedPointLabel::SrbPlus).next().unwrap();
            assert!(f.exists);
            assert_eq!(f.state.gamma, -p.omega / p.u);
            assert!(!fixed_points(&p.with_g(0.8 * gb))
                .get(FixedPointLabel::SrbPlus)
                .any(|f| f.exists));
        }
    }

    #[test]
    fn limit_cycle_gamma_above_two_omega() {
        let set = fixed_points(&cut(0.01, 4.0));
        let lc = set.get(FixedPointLabel::LimitCycleGamma).next().unwrap();
        assert!(lc.exists && lc.state.gamma == -0.25);
        assert_eq!(set.stable().count(), 0);
    }

    #[test]
    fn zero_u_sra_matches_conventional_dicke() {
        let p = cut(0.17, 0.0);
        let gc = critical_couplings(&p).normal_onset().unwrap();
        let f = fixed_points(&p)
            .get(FixedPointLabel::SraPlus)
            .next()
            .copied()
            .unwrap();
        assert!(f.exists);
        assert!((f.state.gamma + 0.5 * (gc / p.g).powi(2)).abs() < 1e-12);
        let near = fixed_points(&p.with_u(1e-9))
            .get(FixedPointLabel::SraPlus)
            .next()
            .copied()
            .unwrap();
        assert!((near.state.gamma - f.state.gamma).abs() < 1e-8);
    }

    #[test]
    fn normal_onset_bisection_matches_closed_form() {
        for u in [0.0, -1.0, 1.0] {
            let p = cut(0.1, u);
            let gc = critical_couplings(&p).normal_onset().unwrap();
            let found = normal_onset_by_bisection(&p, 0.2 * gc, 5.0 * gc, 1e-10).unwrap();
            assert!((found / gc - 1.0).abs() < 1e-6, "U={u}");
        }
    }

    #[test]
    fn trajectory_near_normal_returns_below_threshold() {
        let p = cut(0.08, 0.0);
        let s0 = SemiclassicalState::on_sphere(0.2, 0.0, C64::new(0.0, 0.0));
        let end = integrate_to(&p, &s0, 2000.0, DEFAULT_TOL).unwrap();
        assert!(end.distance(&SemiclassicalState::normal()) < 0.5 * s0.distance(&SemiclassicalState::normal()));
        let up = cut(0.15, 0.0);
        let s0 = SemiclassicalState::on_sphere(1e-3, 0.0, C64::new(0.0, 0.0));
        let end = integrate_to(&up, &s0, 500.0, DEFAULT_TOL).unwrap();
        assert!(end.distance(&SemiclassicalState::normal()) > 0.1);
    }

    #[test]
    fn srb_fixed_point_is_held() {
        let p = cut(0.1, -4.0);
        let set = fixed_points(&p);
        let f = set
            .get(FixedPointLabel::SrbPlus)
            .find(|f| f.stable == Some(true))
            .expect("a stable SRB point");
        assert!(rhs(&p, &f.state).norm() < 1e-12);
        let traj = integrate(&p, &f.state, &crate::dynamics::uniform_grid(1.0, 101), DEFAULT_TOL).unwrap();
        for s in &traj.states {
            assert!(s.distance(&f.state) < 1e-6);
        }
    }

    #[test]
    fn spin_length_drift_over_long_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (g, u) in [(0.1, -4.0), (0.01, 4.0), (0.17, 0.0)] {
            let p = cut(g, u);
            let s0 = random_physical(&mut rng);
            let end = integrate_to(&p, &s0, 1000.0, DEFAULT_TOL).unwrap();
            assert!((end.spin_length() - s0.spin_length()).abs() < 1e-9, "g={g} U={u}");
        }
    }

    #[test]
    fn unphysical_start_is_rejected() {
        let s = SemiclassicalState::new(C64::new(0.0, 0.0), C64::new(0.5, 0.0), 0.5);
        assert!(matches!(
            integrate(&cut(0.1, 0.0), &s, &[0.0, 1.0], DEFAULT_TOL),
            Err(SemiclassicalError::Unphysical(_))
        ));
    }

    #[test]
    fn autocorrelation_detects_periodic_signal() {
        let sine: Vec<f64> = (0..2000).map(|k| (0.05 * k as f64).sin()).collect();
        assert!(has_autocorrelation_peak(&sine, 0.8));
        let ramp: Vec<f64> = (0..2000).map(|k| k as f64).collect();
        assert!(!has_autocorrelation_peak(&ramp, 0.8));
    }

    #[test]
    fn classifies_reference_cells() {
        let opts = ClassifyOptions::default();
        let p = cut(0.01, 0.0);
        let s0 = seed_states(&p, 8)[4];
        assert_eq!(
            classify_attractor(&p, &s0, &opts).unwrap(),
            AttractorLabel::FixedPoint(FixedPointLabel::Normal)
        );
        let p = cut(0.1, -4.0);
        let s0 = seed_states(&p, 8)[5];
        assert_eq!(classify_attractor(&p, &s0, &opts).unwrap().phase(), "SRB");
        let p = cut(0.01, 4.0);
        let s0 = seed_states(&p, 8)[2];
        let first = classify_attractor(&p, &s0, &opts).unwrap();
        assert_eq!(first, AttractorLabel::LimitCycle);
        assert_eq!(classify_attractor(&p, &s0, &opts).unwrap(), first);
    }

    #[test]
    fn limit_cycle_field_keeps_oscillating() {
        let p = cut(0.01, 4.0);
        let s0 = seed_states(&p, 8)[3];
        let late = integrate_to(&p, &s0, 3000.0, DEFAULT_TOL).unwrap();
        let grid: Vec<f64> = (0..=4000).map(|k| k as f64 * 0.05).collect();
        let traj = integrate(&p, &late, &grid, DEFAULT_TOL).unwrap();
        let mags: Vec<f64> = traj.states.iter().map(|s| s.alpha.norm()).collect();
        let spread = |xs: &[f64]| {
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - xs.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let (a, b) = mags.split_at(2000);
        assert!(spread(a) > 1e-3 && (spread(a) - spread(b)).abs() < 0.05 * spread(a));
    }

    #[test]
    fn seeds_are_physical_and_deterministic() {
        let p = cut(0.1, -4.0);
        let a = seed_states(&p, 8);
        assert_eq!(a, seed_states(&p, 8));
        for s in &a {
            assert!((s.spin_length() - 0.25).abs() < 1e-12);
        }
        assert!(a[0].gamma < -0.4 && a[1].gamma > 0.4);
    }
}

//! Time evolution of vectorized density matrices, two-time field
//! correlations by quantum regression, and power spectra.
//!
//! The spectrum is one-sided: `S(ν) = 2·Re Σ_k w_k C(t_k) e^{-iνt_k} dt` with
//! trapezoid weights (`w_0 = ½`, else 1). For a stationary correlation with
//! `C(-t) = C(t)*` this equals the two-sided integral `∫ C(t) e^{-iνt} dt`.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::FftPlanner;
use thiserror::Error;

use crate::model::{DensityMatrix, ModelError};
use crate::ode::{integrate, OdeError, OdeOptions, OdeStats};
use crate::operators::{unvec, JointOps, SparseComplexMatrix};
use crate::C64;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("generator is {rows}x{cols}, expected {expected}x{expected}")]
    Shape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("correlation has not decayed: |C(t_end)|/|C(0)| = {ratio:e} at t_end = {t_end} µs")]
    UndecayedCorrelation { ratio: f64, t_end: f64 },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decay ratio `|C(t_end)| / |C(0)|` below which a window counts as converged.
pub const DECAY_RATIO: f64 = 1e-3;
/// Default upper bound on a correlation window (µs).
pub const DEFAULT_WINDOW: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub values: Vec<C64>,
    pub dt: f64,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DynamicsError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "Re C", "Im C"])?;
        for (t, c) in self.t.iter().zip(&self.values) {
            wr.write_record(&[t.to_string(), c.re.to_string(), c.im.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Angular frequencies (rad/µs), ascending.
    pub nu: Vec<f64>,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn dnu(&self) -> f64 {
        if self.nu.len() < 2 {
            0.0
        } else {
            self.nu[1] - self.nu[0]
        }
    }

    /// `(1/2π) Σ S(ν) Δν`, which recovers `Re C(0)`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dnu() / (2.0 * PI)
    }

    /// `(ν, S)` at the largest value.
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.nu
            .iter()
            .zip(&self.values)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(&n, &s)| (n, s))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DynamicsError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["nu", "S"])?;
        for (n, s) in self.nu.iter().zip(&self.values) {
            wr.write_record(&[n.to_string(), s.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `t_k = k·dt` for `k = 0..n`.
pub fn uniform_grid(dt: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * dt).collect()
}

fn check_generator(l: &SparseComplexMatrix, d: usize) -> Result<(), DynamicsError> {
    if l.shape() != (d * d, d * d) {
        return Err(DynamicsError::Shape {
            rows: l.nrows(),
            cols: l.ncols(),
            expected: d * d,
        });
    }
    Ok(())
}

fn check_grid(t_grid: &[f64]) -> Result<(), DynamicsError> {
    match t_grid.first() {
        None => Err(DynamicsError::BadGrid("empty".into())),
        Some(&t0) if t0 != 0.0 => Err(DynamicsError::BadGrid(format!("starts at {t0}, not 0"))),
        _ => Ok(()),
    }
}

/// Integrates `dv/dt = L v` for a raw vectorized operator and reports every
/// grid point to `observe`.
pub fn propagate<O>(
    l: &SparseComplexMatrix,
    v0: &[C64],
    t_grid: &[f64],
    opts: &OdeOptions,
    observe: O,
) -> Result<OdeStats, DynamicsError>
where
    O: FnMut(usize, f64, &[C64]),
{
    if l.shape() != (v0.len(), v0.len()) {
        return Err(DynamicsError::Shape {
            rows: l.nrows(),
            cols: l.ncols(),
            expected: v0.len(),
        });
    }
    Ok(integrate(
        |_, y, dy| l.mul_vec_into(y, dy),
        v0,
        t_grid,
        opts,
        observe,
    )?)
}

/// `ρ(t_k) = exp(L t_k) ρ0` on an ascending grid starting at 0.
pub fn evolve(
    l: &SparseComplexMatrix,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<DensityMatrix>, DynamicsError> {
    check_grid(t_grid)?;
    check_generator(l, rho0.dim())?;
    let dims = rho0.dims();
    let d = rho0.dim();
    let mut out = Vec::with_capacity(t_grid.len());
    let mut failure = None;
    propagate(l, &rho0.to_vec(), t_grid, opts, |k, _, v| {
        if k == 0 {
            out.push(rho0.clone());
            return;
        }
        match DensityMatrix::from_matrix(dims, unvec(v, d)) {
            Ok(r) => out.push(r),
            Err(e) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(out),
    }
}

struct Regression {
    /// `(row, col, value)` of `a†`, so `tr(a† X) = Σ v·X[col, row]`.
    a_dag: Vec<(usize, usize, C64)>,
    seed: Vec<C64>,
    offset: f64,
    d: usize,
}

impl Regression {
    fn new(l: &SparseComplexMatrix, rho_ss: &DensityMatrix) -> Result<Self, DynamicsError> {
        let d = rho_ss.dim();
        check_generator(l, d)?;
        let ops = JointOps::new(rho_ss.dims());
        let seed_mat = ops.a.mul_dense(rho_ss.matrix());
        let mean_a: C64 = (0..d).map(|i| seed_mat[(i, i)]).sum();
        Ok(Self {
            a_dag: ops.a_dag.iter().collect(),
            seed: crate::operators::vec(&seed_mat),
            offset: mean_a.norm_sqr(),
            d,
        })
    }

    fn value(&self, v: &[C64]) -> C64 {
        let s: C64 = self
            .a_dag
            .iter()
            .map(|&(r, c, x)| x * v[r * self.d + c])
            .sum();
        s - self.offset
    }
}

/// `C(t) = tr[a† Φ_t(a ρ_ss)] - |tr(a ρ_ss)|²` on a uniform grid from 0.
pub fn correlation(
    l: &SparseComplexMatrix,
    rho_ss: &DensityMatrix,
    t_grid: &[f64],
    opts: &OdeOptions,
) -> Result<TimeSeries, DynamicsError> {
    check_grid(t_grid)?;
    let dt = if t_grid.len() > 1 { t_grid[1] - t_grid[0] } else { 0.0 };
    if t_grid.len() > 1 {
        let uniform = t_grid
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(w[1].abs() * 1e-3));
        if !(dt > 0.0) || !uniform {
            return Err(DynamicsError::BadGrid("not uniformly spaced".into()));
        }
    }
    let reg = Regression::new(l, rho_ss)?;
    let mut values = Vec::with_capacity(t_grid.len());
    propagate(l, &reg.seed, t_grid, opts, |_, _, v| values.push(reg.value(v)))?;
    Ok(TimeSeries {
        t: t_grid.to_vec(),
        values,
        dt,
    })
}

/// Samples `C(t)` every `dt` until `|C| < DECAY_RATIO·|C(0)|` or `t_max`,
/// whichever comes first. An identically vanishing seed yields `C ≡ 0` on a
/// two-point series.
pub fn correlation_until_decayed(
    l: &SparseComplexMatrix,
    rho_ss: &DensityMatrix,
    dt: f64,
    t_max: f64,
    opts: &OdeOptions,
) -> Result<TimeSeries, DynamicsError> {
    if !(dt > 0.0) || !(t_max >= dt) {
        return Err(DynamicsError::BadGrid(format!("dt = {dt}, t_max = {t_max}")));
    }
    const CHUNK: usize = 512;
    let reg = Regression::new(l, rho_ss)?;
    let c0 = reg.value(&reg.seed);
    if reg.seed.iter().all(|z| z.norm() == 0.0) {
        return Ok(TimeSeries {
            t: uniform_grid(dt, 2),
            values: vec![C64::new(0.0, 0.0); 2],
            dt,
        });
    }
    let n_total = (t_max / dt).floor() as usize + 1;
    let mut values = vec![c0];
    let mut state = reg.seed.clone();
    let mut k0 = 0usize;
    'outer: while k0 + 1 < n_total {
        let k1 = (k0 + CHUNK).min(n_total - 1);
        let grid: Vec<f64> = (k0..=k1).map(|k| k as f64 * dt).collect();
        let mut chunk = Vec::with_capacity(grid.len());
        let mut last = Vec::new();
        propagate(l, &state, &grid, opts, |i, _, v| {
            if i > 0 {
                chunk.push(reg.value(v));
            }
            if i == grid.len() - 1 {
                last = v.to_vec();
            }
        })?;
        for c in chunk {
            values.push(c);
            if c.norm() < DECAY_RATIO * c0.norm() {
                break 'outer;
            }
        }
        state = last;
        k0 = k1;
    }
    Ok(TimeSeries {
        t: uniform_grid(dt, values.len()),
        values,
        dt,
    })
}

/// One-sided FFT spectrum of a decayed correlation series.
pub fn power_spectrum(c: &TimeSeries) -> Result<Spectrum, DynamicsError> {
    let n = c.values.len();
    if n < 2 || !(c.dt > 0.0) {
        return Err(DynamicsError::BadGrid("need at least two samples".into()));
    }
    let c0 = c.values[0].norm();
    let c_end = c.values[n - 1].norm();
    let all_zero = c.values.iter().all(|z| z.norm() == 0.0);
    if !all_zero && !(c_end < DECAY_RATIO * c0) {
        return Err(DynamicsError::UndecayedCorrelation {
            ratio: if c0 > 0.0 { c_end / c0 } else { f64::INFINITY },
            t_end: c.t[n - 1],
        });
    }
    let m = (8 * n).next_power_of_two();
    let mut buf = vec![C64::new(0.0, 0.0); m];
    buf[..n].copy_from_slice(&c.values);
    buf[0] *= 0.5;
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let dnu = 2.0 * PI / (m as f64 * c.dt);
    let half = m / 2;
    let mut nu = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    for j in (half..m).chain(0..half) {
        let signed = if j >= half { j as f64 - m as f64 } else { j as f64 };
        nu.push(signed * dnu);
        values.push(2.0 * buf[j].re * c.dt);
    }
    Ok(Spectrum { nu, values })
}

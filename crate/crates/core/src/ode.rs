//! Adaptive Dormand–Prince 5(4) integrator for complex-valued linear and
//! non-linear systems, stepping exactly onto requested output times.

use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e}); the system is too stiff for the explicit integrator")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("exceeded {max_steps} steps before t = {t}")]
    TooManySteps { max_steps: usize, t: f64 },
    #[error("output times must be ascending and finite")]
    BadGrid,
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
}

/// How the embedded error estimate is judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorControl {
    /// `max |e_i| ≤ tol` on every step.
    PerStep(f64),
    /// `max |e_i| ≤ tol · h`, i.e. bounded error per unit time.
    PerUnitTime(f64),
    /// `max |e_i| / (atol + rtol·|y_i|) ≤ 1`.
    Mixed { atol: f64, rtol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub control: ErrorControl,
    /// Initial step; chosen from the first derivative when `None`.
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            control: ErrorControl::PerUnitTime(1e-10),
            h_init: None,
            h_min: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = C64::new(0.0, 0.0);
        for &(w, k) in terms {
            s += k[i] * w;
        }
        *o = y[i] + s * h;
    }
}

/// Integrates `dy/dt = f(t, y)` from `grid[0]` and calls `observe(k, t_k, y)`
/// at every grid time (including `grid[0]`, with the untouched initial state).
pub fn integrate<F, O>(
    mut f: F,
    y0: &[C64],
    grid: &[f64],
    opts: &OdeOptions,
    mut observe: O,
) -> Result<OdeStats, OdeError>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    O: FnMut(usize, f64, &[C64]),
{
    if grid.is_empty() {
        return Ok(OdeStats::default());
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::BadGrid);
    }
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    let mut t = grid[0];
    observe(0, t, &y);
    if grid.len() == 1 {
        return Ok(stats);
    }

    let zero = C64::new(0.0, 0.0);
    let mut k1 = vec![zero; n];
    let mut k2 = vec![zero; n];
    let mut k3 = vec![zero; n];
    let mut k4 = vec![zero; n];
    let mut k5 = vec![zero; n];
    let mut k6 = vec![zero; n];
    let mut k7 = vec![zero; n];
    let mut tmp = vec![zero; n];
    let mut y_new = vec![zero; n];

    f(t, &y, &mut k1);
    stats.evaluations += 1;

    let span = grid[grid.len() - 1] - grid[0];
    let mut h = match opts.h_init {
        Some(h) => h,
        None => {
            let dmax = k1.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let ymax = y.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-3);
            if dmax > 0.0 {
                (0.01 * ymax / dmax).min(span)
            } else {
                span
            }
        }
    }
    .min(opts.h_max)
    .max(opts.h_min);

    let mut next = 1;
    while next < grid.len() {
        let target = grid[next];
        if target == t {
            observe(next, t, &y);
            next += 1;
            continue;
        }
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps {
                max_steps: opts.max_steps,
                t,
            });
        }
        let remaining = target - t;
        let clipped = h >= remaining;
        let step = if clipped { remaining } else { h };

        combine(&mut tmp, &y, step, &[(A21, &k1)]);
        f(t + C2 * step, &tmp, &mut k2);
        combine(&mut tmp, &y, step, &[(A31, &k1), (A32, &k2)]);
        f(t + C3 * step, &tmp, &mut k3);
        combine(&mut tmp, &y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        f(t + C4 * step, &tmp, &mut k4);
        combine(&mut tmp, &y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        f(t + C5 * step, &tmp, &mut k5);
        combine(
            &mut tmp,
            &y,
            step,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        f(t + step, &tmp, &mut k6);
        combine(
            &mut y_new,
            &y,
            step,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        f(t + step, &y_new, &mut k7);
        stats.evaluations += 6;

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                * step;
            let ratio = match opts.control {
                ErrorControl::PerStep(tol) => e.norm() / tol,
                ErrorControl::PerUnitTime(tol) => e.norm() / (tol * step),
                ErrorControl::Mixed { atol, rtol } => {
                    e.norm() / (atol + rtol * y[i].norm().max(y_new[i].norm()))
                }
            };
            err = err.max(ratio);
        }
        if !err.is_finite() {
            if y_new.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) && step <= opts.h_min {
                return Err(OdeError::NonFinite { t });
            }
            err = 1e10;
        }

        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err <= 1.0 {
            stats.accepted += 1;
            t = if clipped { target } else { t + step };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            if clipped {
                observe(next, t, &y);
                next += 1;
                // a clipped step says nothing about the natural step size
                h = h.max(step * factor).min(opts.h_max);
            } else {
                h = (step * factor).min(opts.h_max);
            }
        } else {
            stats.rejected += 1;
            h = step * factor;
            if h < opts.h_min {
                return Err(OdeError::StepSizeUnderflow { t, h });
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_hits_grid_exactly() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.3).collect();
        let lambda = C64::new(-0.7, 2.0);
        let mut got = Vec::new();
        let opts = OdeOptions {
            control: ErrorControl::PerUnitTime(1e-12),
            ..Default::default()
        };
        integrate(
            |_, y, dy| dy[0] = lambda * y[0],
            &[C64::new(1.0, 0.0)],
            &grid,
            &opts,
            |_, t, y| got.push((t, y[0])),
        )
        .unwrap();
        assert_eq!(got.len(), grid.len());
        for ((t, y), &tg) in got.iter().zip(&grid) {
            assert_eq!(*t, tg);
            assert!((y - (lambda * *t).exp()).norm() < 1e-10);
        }
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let grid = [0.0, 50.0];
        let mut last = vec![];
        integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            &grid,
            &OdeOptions {
                control: ErrorControl::PerStep(1e-12),
                ..Default::default()
            },
            |_, _, y| last = y.to_vec(),
        )
        .unwrap();
        assert!((last[0].re - 50f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn rejects_descending_grid() {
        let r = integrate(
            |_, _, dy: &mut [C64]| dy[0] = C64::new(0.0, 0.0),
            &[C64::new(1.0, 0.0)],
            &[1.0, 0.0],
            &OdeOptions::default(),
            |_, _, _| {},
        );
        assert_eq!(r, Err(OdeError::BadGrid));
    }

    #[test]
    fn underflow_on_impossible_tolerance() {
        let opts = OdeOptions {
            control: ErrorControl::PerStep(1e-300),
            h_min: 1e-3,
            ..Default::default()
        };
        let r = integrate(
            |_, y, dy| dy[0] = y[0] * y[0],
            &[C64::new(1.0, 0.0)],
            &[0.0, 0.5],
            &opts,
            |_, _, _| {},
        );
        assert!(matches!(r, Err(OdeError::StepSizeUnderflow { .. })));
    }
}

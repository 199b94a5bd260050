//! Steady state of the Lindblad generator by shifted inverse power iteration,
//! with a dense null-space oracle for small systems.

use faer::linalg::solvers::Solve;
use faer::{Col, Mat};
use thiserror::Error;

use crate::model::{build_liouvillian, DensityMatrix, ModelError, ModelParams};
use crate::observables::{partial_trace, trace_distance, Subsystem};
use crate::operators::{unvec, HilbertDims, SparseComplexMatrix};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyStateError {
    #[error("inverse power iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("liouvillian shape {rows}x{cols} does not match joint dimension {dim}")]
    DimensionMismatch { rows: usize, cols: usize, dim: usize },
    #[error("joint dimension {dim} exceeds the dense limit {limit}")]
    DimensionOverLimit { dim: usize, limit: usize },
    #[error("smallest eigenvalue magnitude {0:e} is not zero")]
    NoZeroEigenvalue(f64),
    #[error("null space is degenerate (second eigenvalue magnitude {0:e})")]
    DegenerateNullSpace(f64),
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Non-fatal findings attached to a solution.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverWarning {
    /// Independent seeds converge to different null vectors; the returned state
    /// is the seed's projection onto the null space.
    DegenerateNullSpace { seed_spread: f64 },
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Absolute tolerance on `‖L·vec(ρ)‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Shift relative to `‖L‖∞`.
    pub shift: f64,
    /// Starting state; the maximally mixed state when `None`.
    pub seed: Option<DensityMatrix>,
    /// Run a second seed through the same factorization to detect a
    /// degenerate null space.
    pub probe_degeneracy: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            shift: 1e-15,
            seed: None,
            probe_degeneracy: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SteadyStateError> {
        if !(self.tol > 0.0) {
            return Err(SteadyStateError::InvalidOptions("tol must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(SteadyStateError::InvalidOptions("max_iter must be >= 1".into()));
        }
        if !(self.shift > 0.0) {
            return Err(SteadyStateError::InvalidOptions("shift must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// `‖L·vec(ρ)‖∞` of the returned (symmetrized, normalized) state.
    pub residual: f64,
    pub iterations: usize,
    pub warnings: Vec<SolverWarning>,
}

/// `‖L·vec(ρ)‖∞`.
pub fn residual(l: &SparseComplexMatrix, rho: &DensityMatrix) -> f64 {
    l.mul_vec(&rho.to_vec())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn check_shape(l: &SparseComplexMatrix, dims: HilbertDims) -> Result<usize, SteadyStateError> {
    let d = dims.joint_dim();
    if l.nrows() != d * d || l.ncols() != d * d {
        return Err(SteadyStateError::DimensionMismatch {
            rows: l.nrows(),
            cols: l.ncols(),
            dim: d,
        });
    }
    Ok(d)
}

fn trace_of_vec(x: &Col<C64>, d: usize) -> C64 {
    (0..d).map(|i| x[i + i * d]).sum()
}

fn max_abs(x: &Col<C64>) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Fixed point of `x ← (L - σI)⁻¹ x`, renormalized by the trace each step.
struct InverseIteration<'a> {
    l: &'a SparseComplexMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, C64>,
    d: usize,
}

impl InverseIteration<'_> {
    fn run(&self, seed: &[C64], tol: f64, max_iter: usize) -> (Col<C64>, usize, f64) {
        let d = self.d;
        let mut x = Col::<C64>::from_fn(seed.len(), |i| seed[i]);
        let mut last_residual = f64::INFINITY;
        for k in 1..=max_iter {
            let mut next = self.lu.solve(&x);
            let tr = trace_of_vec(&next, d);
            let scale = if tr.norm() > 1e-12 * max_abs(&next) {
                C64::new(1.0, 0.0) / tr
            } else {
                C64::new(1.0 / max_abs(&next), 0.0)
            };
            next.iter_mut().for_each(|z| *z *= scale);
            let change = next
                .iter()
                .zip(x.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            let v: Vec<C64> = next.iter().copied().collect();
            last_residual = self.l.mul_vec(&v).iter().map(|z| z.norm()).fold(0.0, f64::max);
            x = next;
            if last_residual < tol && change < tol {
                return (x, k, last_residual);
            }
        }
        (x, max_iter, last_residual)
    }
}

fn into_state(x: &Col<C64>, dims: HilbertDims) -> Result<DensityMatrix, ModelError> {
    let v: Vec<C64> = x.iter().copied().collect();
    DensityMatrix::normalized(dims, unvec(&v, dims.joint_dim()))
}

/// Deterministic full-rank diagonal state with unequal weights, used as the
/// second seed of the degeneracy probe.
fn probe_seed(dims: HilbertDims) -> Vec<C64> {
    let d = dims.joint_dim();
    let weights: Vec<f64> = (0..d).map(|k| 1.0 + ((k * 7919) % 13) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    for (k, w) in weights.iter().enumerate() {
        v[k + k * d] = C64::new(w / total, 0.0);
    }
    v
}

/// Steady state of `l` by shifted inverse power iteration. The factorization
/// of `L - σI` is computed once and reused for every iteration.
pub fn solve_inverse_power(
    l: &SparseComplexMatrix,
    dims: HilbertDims,
    opts: &SolverOptions,
) -> Result<SteadyState, SteadyStateError> {
    opts.validate()?;
    let d = check_shape(l, dims)?;
    let sigma = opts.shift * l.norm_inf().max(f64::MIN_POSITIVE);
    let shifted = l.add_scaled(
        &SparseComplexMatrix::identity(d * d),
        C64::new(-sigma, 0.0),
    );
    let lu = shifted
        .to_faer_csc()
        .map_err(|e| SteadyStateError::Factorization(e.to_string()))?
        .sp_lu()
        .map_err(|e| SteadyStateError::Factorization(format!("{e:?}")))?;
    let iter = InverseIteration { l, lu, d };

    let seed = match &opts.seed {
        Some(s) => {
            if s.dims() != dims {
                return Err(SteadyStateError::DimensionMismatch {
                    rows: s.dim(),
                    cols: s.dim(),
                    dim: d,
                });
            }
            s.to_vec()
        }
        None => DensityMatrix::maximally_mixed(dims).to_vec(),
    };
    let (x, iterations, _) = iter.run(&seed, opts.tol, opts.max_iter);
    let rho = into_state(&x, dims)?;
    let res = residual(l, &rho);
    if !(res < opts.tol) {
        return Err(SteadyStateError::NonConvergence {
            iterations,
            residual: res,
        });
    }

    let mut warnings = Vec::new();
    if opts.probe_degeneracy {
        let (x2, _, _) = iter.run(&probe_seed(dims), opts.tol, opts.max_iter);
        if let Ok(rho2) = into_state(&x2, dims) {
            let spread = trace_distance(rho.matrix(), rho2.matrix());
            if spread > 100.0 * opts.tol {
                warnings.push(SolverWarning::DegenerateNullSpace { seed_spread: spread });
            }
        }
    }

    Ok(SteadyState {
        rho,
        residual: res,
        iterations,
        warnings,
    })
}

pub const DEFAULT_DENSE_LIMIT: usize = 64;

/// Validation oracle: eigenvector of the smallest-magnitude eigenvalue of the
/// densified generator. Only for joint dimension up to `limit`.
pub fn solve_dense_nullspace(
    l: &SparseComplexMatrix,
    dims: HilbertDims,
    limit: usize,
) -> Result<DensityMatrix, SteadyStateError> {
    let d = check_shape(l, dims)?;
    if d > limit {
        return Err(SteadyStateError::DimensionOverLimit { dim: d, limit });
    }
    let dense: Mat<C64> = l.to_dense();
    let eig = dense
        .eigen()
        .map_err(|e| SteadyStateError::Factorization(format!("{e:?}")))?;
    let values: Vec<C64> = (0..d * d).map(|i| eig.S()[i]).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].norm().total_cmp(&values[b].norm()));
    let lambda0 = values[order[0]].norm();
    const ZERO_TOL: f64 = 1e-8;
    if lambda0 >= ZERO_TOL {
        return Err(SteadyStateError::NoZeroEigenvalue(lambda0));
    }
    if let Some(&second) = order.get(1) {
        let lambda1 = values[second].norm();
        if lambda1 < 10.0 * ZERO_TOL {
            return Err(SteadyStateError::DegenerateNullSpace(lambda1));
        }
    }
    let u = eig.U();
    let v: Vec<C64> = (0..d * d).map(|i| u[(i, order[0])]).collect();
    Ok(DensityMatrix::normalized(dims, unvec(&v, d))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffReport {
    /// Population of the highest retained Fock level.
    pub top_population: f64,
    pub passes: bool,
}

pub const CUTOFF_THRESHOLD: f64 = 1e-6;

pub fn check_cutoff(rho: &DensityMatrix) -> CutoffReport {
    let cav = partial_trace(rho, Subsystem::Cavity);
    let top = cav[(rho.dims().n_max, rho.dims().n_max)].re;
    CutoffReport {
        top_population: top,
        passes: top < CUTOFF_THRESHOLD,
    }
}

/// Fock-cutoff policy: start at `params.n_max` and raise by `step` until the
/// top-level population passes or `ceiling` is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffPolicy {
    pub step: usize,
    pub ceiling: usize,
}

impl Default for CutoffPolicy {
    fn default() -> Self {
        Self { step: 2, ceiling: 31 }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSteadyState {
    /// Parameters actually solved, including the final `n_max`.
    pub params: ModelParams,
    pub solution: SteadyState,
    pub cutoff: CutoffReport,
}

/// Builds the generator for `params`, solves it, and raises `n_max` while the
/// cutoff check fails. A seed in `opts` is only used at the initial `n_max`.
pub fn solve_model(
    params: &ModelParams,
    opts: &SolverOptions,
    policy: CutoffPolicy,
) -> Result<ModelSteadyState, SteadyStateError> {
    params.validate()?;
    let mut p = *params;
    let mut local = opts.clone();
    loop {
        let l = build_liouvillian(&p);
        let solution = solve_inverse_power(&l, p.dims(), &local)?;
        let cutoff = check_cutoff(&solution.rho);
        if cutoff.passes || p.n_max + policy.step > policy.ceiling || policy.step == 0 {
            return Ok(ModelSteadyState {
                params: p,
                solution,
                cutoff,
            });
        }
        p.n_max += policy.step;
        local.seed = None;
    }
}

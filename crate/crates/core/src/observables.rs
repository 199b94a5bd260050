//! Expectation values, reduced states, phase-space functions, and state
//! measures (purity, fidelity, trace distance, logarithmic negativity).

use std::f64::consts::PI;
use std::io::Write;

use faer::{Mat, Side};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::DensityMatrix;
use crate::operators::SparseComplexMatrix;
use crate::C64;

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error("operator shape {rows}x{cols} does not match state dimension {dim}")]
    DimensionMismatch { rows: usize, cols: usize, dim: usize },
    #[error("mean photon number {0:e} is too small for g2(0)")]
    VacuumField(f64),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Cavity,
    Spin,
}

/// `tr(op · ρ)`.
pub fn expect(op: &SparseComplexMatrix, rho: &DensityMatrix) -> Result<C64, ObservableError> {
    let d = rho.dim();
    if op.shape() != (d, d) {
        return Err(ObservableError::DimensionMismatch {
            rows: op.nrows(),
            cols: op.ncols(),
            dim: d,
        });
    }
    let m = rho.matrix();
    Ok(op.iter().map(|(r, c, v)| v * m[(c, r)]).sum())
}

/// Reduced state of the `keep` factor.
pub fn partial_trace(rho: &DensityMatrix, keep: Subsystem) -> Mat<C64> {
    let dims = rho.dims();
    let (dc, ds) = (dims.cavity_dim(), dims.spin_dim());
    let m = rho.matrix();
    match keep {
        Subsystem::Cavity => Mat::from_fn(dc, dc, |i, j| {
            (0..ds).map(|s| m[(i * ds + s, j * ds + s)]).sum()
        }),
        Subsystem::Spin => Mat::from_fn(ds, ds, |a, b| {
            (0..dc).map(|c| m[(c * ds + a, c * ds + b)]).sum()
        }),
    }
}

/// Photon-number distribution `p_n = ⟨n|ρ_cav|n⟩`.
pub fn photon_distribution(rho: &DensityMatrix) -> Vec<f64> {
    let cav = partial_trace(rho, Subsystem::Cavity);
    (0..cav.nrows()).map(|n| cav[(n, n)].re).collect()
}

/// `⟨a†a†aa⟩ / ⟨a†a⟩²`, evaluated on the photon-number distribution.
pub fn g2_zero(rho: &DensityMatrix) -> Result<f64, ObservableError> {
    g2_from_distribution(&photon_distribution(rho))
}

pub fn g2_from_distribution(p: &[f64]) -> Result<f64, ObservableError> {
    let mean: f64 = p.iter().enumerate().map(|(n, &pn)| n as f64 * pn).sum();
    if !(mean > 1e-12) {
        return Err(ObservableError::VacuumField(mean));
    }
    let fact2: f64 = p
        .iter()
        .enumerate()
        .map(|(n, &pn)| n as f64 * (n as f64 - 1.0) * pn)
        .sum();
    Ok(fact2 / (mean * mean))
}

fn hermitian_part(m: &Mat<C64>) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

fn hermitian_eigenvalues(m: &Mat<C64>) -> Vec<f64> {
    hermitian_part(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("hermitian eigendecomposition")
}

/// `Σ|λ_i|` of the Hermitian part of `m`.
pub fn trace_norm_hermitian(m: &Mat<C64>) -> f64 {
    hermitian_eigenvalues(m).iter().map(|l| l.abs()).sum()
}

/// `½‖a − b‖₁` for Hermitian matrices.
pub fn trace_distance(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    0.5 * trace_norm_hermitian(&(a - b))
}

/// `tr(ρ²)`.
pub fn purity(rho: &Mat<C64>) -> f64 {
    let d = rho.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += (rho[(i, j)] * rho[(j, i)]).re;
        }
    }
    s
}

/// Uhlmann fidelity `tr√(√ρ σ √ρ)`. Uses `√⟨ψ|ρ|ψ⟩` when `σ` is pure.
pub fn fidelity(rho: &Mat<C64>, sigma: &Mat<C64>) -> f64 {
    if purity(sigma) > 1.0 - 1e-10 {
        return pure_fidelity(rho, sigma);
    }
    let eig = hermitian_part(rho)
        .self_adjoint_eigen(Side::Lower)
        .expect("hermitian eigendecomposition");
    let d = rho.nrows();
    let u = eig.U();
    let s = eig.S().column_vector();
    let sqrt_rho = Mat::from_fn(d, d, |i, j| {
        (0..d)
            .map(|k| u[(i, k)] * s[k].re.max(0.0).sqrt() * u[(j, k)].conj())
            .sum::<C64>()
    });
    let inner = &(&sqrt_rho * sigma) * &sqrt_rho;
    hermitian_eigenvalues(&inner)
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum()
}

fn pure_fidelity(rho: &Mat<C64>, sigma: &Mat<C64>) -> f64 {
    let eig = hermitian_part(sigma)
        .self_adjoint_eigen(Side::Lower)
        .expect("hermitian eigendecomposition");
    let d = sigma.nrows();
    let psi: Vec<C64> = (0..d).map(|i| eig.U()[(i, d - 1)]).collect();
    let mut overlap = C64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            overlap += psi[i].conj() * rho[(i, j)] * psi[j];
        }
    }
    overlap.re.max(0.0).sqrt()
}

/// Partial transpose of a joint state over one factor.
pub fn partial_transpose(rho: &DensityMatrix, over: Subsystem) -> Mat<C64> {
    let dims = rho.dims();
    let ds = dims.spin_dim();
    let m = rho.matrix();
    let d = rho.dim();
    Mat::from_fn(d, d, |r, c| {
        let (i, a) = (r / ds, r % ds);
        let (j, b) = (c / ds, c % ds);
        match over {
            Subsystem::Cavity => m[(j * ds + a, i * ds + b)],
            Subsystem::Spin => m[(i * ds + b, j * ds + a)],
        }
    })
}

/// `log₂‖ρ^Γ‖₁` with the partial transpose taken over the cavity.
pub fn log_negativity(rho: &DensityMatrix) -> f64 {
    log_negativity_over(rho, Subsystem::Cavity)
}

pub fn log_negativity_over(rho: &DensityMatrix, over: Subsystem) -> f64 {
    trace_norm_hermitian(&partial_transpose(rho, over)).log2()
}

/// Truncated, renormalized coherent-state ket `|α⟩` on `0..=n_max`.
pub fn coherent_ket(n_max: usize, alpha: C64) -> Vec<C64> {
    let mut psi = Vec::with_capacity(n_max + 1);
    let mut amp = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..=n_max {
        if n > 0 {
            amp = amp * alpha / (n as f64).sqrt();
        }
        psi.push(amp);
    }
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    psi.iter().map(|z| z / norm).collect()
}

pub fn ket_to_dm(psi: &[C64]) -> Mat<C64> {
    Mat::from_fn(psi.len(), psi.len(), |i, j| psi[i] * psi[j].conj())
}

/// Truncated thermal state with mean occupation `n_bar` (before truncation).
pub fn thermal_dm(n_max: usize, n_bar: f64) -> Mat<C64> {
    let q = n_bar / (1.0 + n_bar);
    let weights: Vec<f64> = (0..=n_max).map(|n| q.powi(n as i32)).collect();
    let total: f64 = weights.iter().sum();
    Mat::from_fn(n_max + 1, n_max + 1, |i, j| {
        if i == j {
            C64::new(weights[i] / total, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Cavity Wigner function on a rectangular grid, `α = (x + iy)/√2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `values[ix * y.len() + iy] = W(α(x[ix], y[iy]))`.
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.y.len() + iy]
    }

    /// `∬ W d²α` by the trapezoid rule; `d²α = dx dy / 2`.
    pub fn integral(&self) -> f64 {
        0.5 * trapezoid_2d(&self.x, &self.y, |ix, iy| self.get(ix, iy))
    }

    /// Interior strict local maxima (8-neighbourhood) whose value exceeds
    /// `rel_floor` times the global maximum.
    pub fn local_maxima(&self, rel_floor: f64) -> Vec<(usize, usize, f64)> {
        local_maxima(self.x.len(), self.y.len(), rel_floor, |i, j| self.get(i, j))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ObservableError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "W"])?;
        for (ix, x) in self.x.iter().enumerate() {
            for (iy, y) in self.y.iter().enumerate() {
                wr.write_record(&[x.to_string(), y.to_string(), self.get(ix, iy).to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn trapezoid_2d(x: &[f64], y: &[f64], f: impl Fn(usize, usize) -> f64) -> f64 {
    let w = |v: &[f64], k: usize| -> f64 {
        let n = v.len();
        if n < 2 {
            return 0.0;
        }
        let left = if k > 0 { v[k] - v[k - 1] } else { 0.0 };
        let right = if k + 1 < n { v[k + 1] - v[k] } else { 0.0 };
        0.5 * (left + right)
    };
    let mut s = 0.0;
    for ix in 0..x.len() {
        let wx = w(x, ix);
        for iy in 0..y.len() {
            s += wx * w(y, iy) * f(ix, iy);
        }
    }
    s
}

fn local_maxima(
    nx: usize,
    ny: usize,
    rel_floor: f64,
    f: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, usize, f64)> {
    let mut global = f64::NEG_INFINITY;
    for i in 0..nx {
        for j in 0..ny {
            global = global.max(f(i, j));
        }
    }
    let mut out = Vec::new();
    for i in 1..nx.saturating_sub(1) {
        for j in 1..ny.saturating_sub(1) {
            let v = f(i, j);
            if v < rel_floor * global {
                continue;
            }
            let is_max = (-1i64..=1).all(|di| {
                (-1i64..=1).all(|dj| {
                    (di == 0 && dj == 0) || v > f((i as i64 + di) as usize, (j as i64 + dj) as usize)
                })
            });
            if is_max {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Matrix of `⟨m|D(β)|n⟩` for `m, n ≤ n_max` from the associated-Laguerre
/// closed form, exact for the untruncated displacement.
fn displacement_elements(n_max: usize, beta: C64) -> Vec<Vec<C64>> {
    let dim = n_max + 1;
    let x = beta.norm_sqr();
    let gauss = (-0.5 * x).exp();
    let mut out = vec![vec![C64::new(0.0, 0.0); dim]; dim];
    for k in 0..dim {
        // L_n^{(k)}(x) by upward recurrence in n
        let mut l_prev = 0.0;
        let mut l_cur = 1.0;
        // √(n!/(n+k)!) starting at n = 0
        let mut ratio: f64 = (1..=k).map(|j| 1.0 / (j as f64).sqrt()).product();
        let beta_k = beta.powu(k as u32);
        let mbeta_k = (-beta.conj()).powu(k as u32);
        for n in 0..dim - k {
            if n > 0 {
                let nf = (n - 1) as f64;
                let kf = k as f64;
                let next = ((2.0 * nf + 1.0 + kf - x) * l_cur - (nf + kf) * l_prev) / (nf + 1.0);
                l_prev = l_cur;
                l_cur = next;
                ratio *= ((n as f64) / ((n + k) as f64)).sqrt();
            }
            let common = ratio * gauss * l_cur;
            out[n + k][n] = beta_k * common;
            if k > 0 {
                out[n][n + k] = mbeta_k * common;
            }
        }
    }
    out
}

/// `W(α) = (2/π) tr[D†(α) ρ D(α) (−1)^{a†a}]` evaluated as the expectation of
/// the displaced parity `D(2α)(−1)^{a†a}`.
pub fn wigner_at(rho_cav: &Mat<C64>, alpha: C64) -> f64 {
    let dim = rho_cav.nrows();
    let dmat = displacement_elements(dim - 1, alpha * 2.0);
    let mut s = C64::new(0.0, 0.0);
    for n in 0..dim {
        let parity = if n % 2 == 0 { 1.0 } else { -1.0 };
        for (m, row) in dmat.iter().enumerate() {
            s += rho_cav[(n, m)] * row[n] * parity;
        }
    }
    2.0 / PI * s.re
}

pub fn wigner(rho_cav: &Mat<C64>, x: &[f64], y: &[f64]) -> WignerGrid {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let values: Vec<f64> = x
        .par_iter()
        .flat_map_iter(|&xv| {
            y.iter()
                .map(move |&yv| wigner_at(rho_cav, C64::new(xv * inv_sqrt2, yv * inv_sqrt2)))
        })
        .collect();
    WignerGrid {
        x: x.to_vec(),
        y: y.to_vec(),
        values,
    }
}

/// Spin-coherent ket `|η⟩`, `η = e^{iφ} tan(θ/2)`, written with
/// `cos/sin(θ/2)` so the `θ = π` pole needs no limit.
pub fn spin_coherent_ket(n_atoms: usize, theta: f64, phi: f64) -> Vec<C64> {
    let (s, c) = (0.5 * theta).sin_cos();
    let mut binom = 1.0f64;
    (0..=n_atoms)
        .map(|n| {
            if n > 0 {
                binom *= (n_atoms - n + 1) as f64 / n as f64;
            }
            let amp = binom.sqrt() * c.powi((n_atoms - n) as i32) * s.powi(n as i32);
            C64::from_polar(amp, n as f64 * phi)
        })
        .collect()
}

/// `Q(θ, φ) = ⟨η|ρ_spin|η⟩`.
pub fn spin_q_at(rho_spin: &Mat<C64>, theta: f64, phi: f64) -> f64 {
    let eta = spin_coherent_ket(rho_spin.nrows() - 1, theta, phi);
    let mut q = C64::new(0.0, 0.0);
    for (i, ei) in eta.iter().enumerate() {
        for (j, ej) in eta.iter().enumerate() {
            q += ei.conj() * rho_spin[(i, j)] * ej;
        }
    }
    q.re
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinQGrid {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// `values[it * phi.len() + ip]`.
    pub values: Vec<f64>,
}

impl SpinQGrid {
    pub fn get(&self, it: usize, ip: usize) -> f64 {
        self.values[it * self.phi.len() + ip]
    }

    /// `(N+1)/(4π) ∬ Q sinθ dθ dφ`, trapezoid in θ and a periodic rectangle
    /// rule in φ (assumes a uniform φ grid covering `[0, 2π)`).
    pub fn normalization(&self, n_atoms: usize) -> f64 {
        let dphi = 2.0 * PI / self.phi.len() as f64;
        let nt = self.theta.len();
        let mut s = 0.0;
        for it in 0..nt {
            let left = if it > 0 { self.theta[it] - self.theta[it - 1] } else { 0.0 };
            let right = if it + 1 < nt { self.theta[it + 1] - self.theta[it] } else { 0.0 };
            let wt = 0.5 * (left + right) * self.theta[it].sin();
            let row: f64 = (0..self.phi.len()).map(|ip| self.get(it, ip)).sum();
            s += wt * row * dphi;
        }
        (n_atoms + 1) as f64 / (4.0 * PI) * s
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ObservableError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["theta", "phi", "Q"])?;
        for (it, t) in self.theta.iter().enumerate() {
            for (ip, p) in self.phi.iter().enumerate() {
                wr.write_record(&[t.to_string(), p.to_string(), self.get(it, ip).to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn spin_qfunction(rho_spin: &Mat<C64>, theta: &[f64], phi: &[f64]) -> SpinQGrid {
    let values: Vec<f64> = theta
        .par_iter()
        .flat_map_iter(|&t| phi.iter().map(move |&p| spin_q_at(rho_spin, t, p)))
        .collect();
    SpinQGrid {
        theta: theta.to_vec(),
        phi: phi.to_vec(),
        values,
    }
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `n` evenly spaced azimuths on `[0, 2π)`.
pub fn azimuths(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::basis_state;
    use crate::operators::{build_spin_ops, HilbertDims, JointOps};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> Mat<C64> {
        let vs: Vec<Vec<C64>> = (0..rank)
            .map(|_| {
                (0..d)
                    .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let mut m = Mat::<C64>::zeros(d, d);
        for v in &vs {
            m = &m + &ket_to_dm(v);
        }
        let tr: f64 = (0..d).map(|i| m[(i, i)].re).sum();
        Mat::from_fn(d, d, |i, j| m[(i, j)] / tr)
    }

    fn diag(v: &[f64]) -> Mat<C64> {
        Mat::from_fn(v.len(), v.len(), |i, j| {
            if i == j {
                C64::new(v[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn expectation_basics() {
        let dims = HilbertDims::new(2, 4);
        let ops = JointOps::new(dims);
        let down = basis_state(dims, 0, 0).unwrap();
        assert_eq!(expect(&ops.identity(), &down).unwrap(), C64::new(1.0, 0.0));
        assert_eq!(expect(&ops.jz, &down).unwrap().re, -2.0);
        let wrong = SparseComplexMatrix::identity(3);
        assert!(matches!(
            expect(&wrong, &down),
            Err(ObservableError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn coherent_state_photon_number() {
        let dims = HilbertDims::new(20, 1);
        let ops = JointOps::new(dims);
        let cav = ket_to_dm(&coherent_ket(20, C64::new(1.0, 0.0)));
        let spin = diag(&[1.0, 0.0]);
        let rho = DensityMatrix::product(dims, &cav, &spin).unwrap();
        assert!((expect(&ops.n, &rho).unwrap().re - 1.0).abs() < 1e-6);
        assert!((g2_zero(&rho).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn partial_trace_of_products_and_bell_pairs() {
        let dims = HilbertDims::new(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rc = random_state(&mut rng, 2, 2);
        let rs = random_state(&mut rng, 2, 2);
        let rho = DensityMatrix::product(dims, &rc, &rs).unwrap();
        let back_c = partial_trace(&rho, Subsystem::Cavity);
        let back_s = partial_trace(&rho, Subsystem::Spin);
        for i in 0..2 {
            for j in 0..2 {
                assert!((back_c[(i, j)] - rc[(i, j)]).norm() < 1e-14);
                assert!((back_s[(i, j)] - rs[(i, j)]).norm() < 1e-14);
            }
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = DensityMatrix::pure(
            dims,
            &[C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0)],
        )
        .unwrap();
        let red = partial_trace(&bell, Subsystem::Spin);
        assert!((red[(0, 0)].re - 0.5).abs() < 1e-14 && red[(0, 1)].norm() < 1e-14);
        assert!(log_negativity(&rho).abs() < 1e-8);
        assert!((log_negativity(&bell) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn partial_trace_consistent_with_joint_number_operator() {
        let dims = HilbertDims::new(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = DensityMatrix::from_matrix(dims, random_state(&mut rng, 12, 3)).unwrap();
        let ops = JointOps::new(dims);
        let p = photon_distribution(&rho);
        let n_red: f64 = p.iter().enumerate().map(|(n, x)| n as f64 * x).sum();
        assert!((n_red - expect(&ops.n, &rho).unwrap().re).abs() < 1e-12);
    }

    #[test]
    fn g2_of_fock_and_thermal_states() {
        let mut p = vec![0.0; 5];
        p[1] = 1.0;
        assert_eq!(g2_from_distribution(&p).unwrap(), 0.0);
        let th = thermal_dm(30, 0.5);
        let p: Vec<f64> = (0..31).map(|n| th[(n, n)].re).collect();
        assert!((g2_from_distribution(&p).unwrap() - 2.0).abs() < 1e-4);
        assert!(matches!(
            g2_from_distribution(&[1.0, 0.0]),
            Err(ObservableError::VacuumField(_))
        ));
    }

    #[test]
    fn wigner_vacuum_fock_and_coherent() {
        let n_max = 12;
        let vac = ket_to_dm(&coherent_ket(n_max, C64::new(0.0, 0.0)));
        assert!((wigner_at(&vac, C64::new(0.0, 0.0)) - 2.0 / PI).abs() < 1e-6);
        let mut one = vec![C64::new(0.0, 0.0); n_max + 1];
        one[1] = C64::new(1.0, 0.0);
        assert!((wigner_at(&ket_to_dm(&one), C64::new(0.0, 0.0)) + 2.0 / PI).abs() < 1e-6);

        let a0 = C64::new(1.2, -0.7);
        let nbar = a0.norm_sqr();
        let n_max = (nbar + 6.0 * nbar.sqrt()).ceil() as usize + 6;
        let coh = ket_to_dm(&coherent_ket(n_max, a0));
        assert!((wigner_at(&coh, a0) - 2.0 / PI).abs() < 1e-4);
        for d in [C64::new(0.3, 0.0), C64::new(-0.2, 0.4)] {
            let want = 2.0 / PI * (-2.0 * d.norm_sqr()).exp();
            assert!((wigner_at(&coh, a0 + d) - want).abs() < 1e-4);
        }
    }

    #[test]
    fn wigner_grid_integrates_to_one() {
        let th = thermal_dm(25, 0.4);
        let xs = linspace(-6.0, 6.0, 121);
        let grid = wigner(&th, &xs, &xs);
        assert!((grid.integral() - 1.0).abs() < 0.01);
        let peaks = grid.local_maxima(1e-3);
        assert_eq!(peaks.len(), 1);
        assert_eq!((peaks[0].0, peaks[0].1), (60, 60));
    }

    #[test]
    fn spin_q_poles_and_coherent_peak() {
        let n = 6;
        let mut down = Mat::<C64>::zeros(n + 1, n + 1);
        down[(0, 0)] = C64::new(1.0, 0.0);
        assert!((spin_q_at(&down, 0.0, 1.3) - 1.0).abs() < 1e-14);
        assert!(spin_q_at(&down, PI, 0.2).abs() < 1e-14);

        let (t0, p0) = (1.1, 2.3);
        let eta0 = ket_to_dm(&spin_coherent_ket(n, t0, p0));
        assert!((spin_q_at(&eta0, t0, p0) - 1.0).abs() < 1e-12);
        let grid = spin_qfunction(&eta0, &linspace(0.0, PI, 64), &azimuths(64));
        assert!(grid.values.iter().all(|&q| (-1e-12..=1.0 + 1e-12).contains(&q)));

        // θ = π limit is |n = N⟩ up to phase
        let up = spin_coherent_ket(n, PI, 0.7);
        assert!((up[n].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spin_q_is_normalized_for_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [1, 4, 10] {
            let rho = random_state(&mut rng, n + 1, 2);
            let grid = spin_qfunction(&rho, &linspace(0.0, PI, 128), &azimuths(128));
            assert!((grid.normalization(n) - 1.0).abs() < 0.01, "N={n}");
        }
    }

    #[test]
    fn spin_coherent_state_is_rotated_down_state() {
        // ⟨η|Jz|η⟩ = -N/2 cos θ for this orientation
        let n = 5;
        let s = build_spin_ops(n);
        let ket = spin_coherent_ket(n, 0.9, 0.0);
        let jz = s.jz.to_dense();
        let mut v = C64::new(0.0, 0.0);
        for i in 0..=n {
            v += ket[i].conj() * jz[(i, i)] * ket[i];
        }
        assert!((v.re + 2.5 * 0.9f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn purity_closed_forms() {
        let psi = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        assert!((purity(&ket_to_dm(&psi)) - 1.0).abs() < 1e-12);
        assert!((purity(&diag(&[0.25; 4])) - 0.25).abs() < 1e-12);
        let e0 = ket_to_dm(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let e1 = ket_to_dm(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let half = &(&e0 + &e1) * faer::Scale(C64::new(0.5, 0.0));
        assert!((purity(&half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fidelity_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_state(&mut rng, 5, 3);
        assert!((fidelity(&rho, &rho) - 1.0).abs() < 1e-8);
        let e0 = ket_to_dm(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let e1 = ket_to_dm(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        assert!(fidelity(&e0, &e1).abs() < 1e-8);
        let a = diag(&[0.75, 0.25]);
        let b = diag(&[0.25, 0.75]);
        assert!((fidelity(&a, &b) - 3f64.sqrt() / 2.0).abs() < 1e-8);
    }

    #[test]
    fn fidelity_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for rank in [1, 2, 4] {
            let a = random_state(&mut rng, 4, rank);
            let b = random_state(&mut rng, 4, 3);
            assert!((fidelity(&a, &b) - fidelity(&b, &a)).abs() < 1e-8);
        }
    }

    #[test]
    fn log_negativity_independent_of_transposed_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = HilbertDims::new(2, 3);
        for _ in 0..5 {
            let rho = DensityMatrix::from_matrix(dims, random_state(&mut rng, 12, 2)).unwrap();
            let a = log_negativity_over(&rho, Subsystem::Cavity);
            let b = log_negativity_over(&rho, Subsystem::Spin);
            assert!((a - b).abs() < 1e-10);
            assert!(a > -1e-12);
        }
    }

    #[test]
    fn trace_distance_of_orthogonal_states() {
        let e0 = ket_to_dm(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let e1 = ket_to_dm(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        assert!((trace_distance(&e0, &e1) - 1.0).abs() < 1e-14);
        assert_eq!(trace_distance(&e0, &e0), 0.0);
    }
}

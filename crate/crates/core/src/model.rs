//! Generalized Dicke Hamiltonian, its Lindblad generator, and the density
//! matrix type shared by the solvers.
//!
//! `H = ω₀Jz + ωa†a + g/√N (J₋ + J₊)(a + a†) + U/N Jz a†a` and
//! `dρ/dt = -i[H, ρ] + 2κ (aρa† - ½a†aρ - ½ρa†a)`.

use std::f64::consts::PI;

use faer::{Mat, Side};
use thiserror::Error;

use crate::operators::{superop, HilbertDims, JointOps, SparseComplexMatrix};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("basis label ({n_cavity}, {n_spin}) outside dims n_max={n_max}, N={n_atoms}")]
    IndexOutOfRange {
        n_cavity: usize,
        n_spin: usize,
        n_max: usize,
        n_atoms: usize,
    },
    #[error("density matrix has shape {rows}x{cols}, expected {dim}x{dim}")]
    Shape { rows: usize, cols: usize, dim: usize },
    #[error("state invariant violated: {0}")]
    InvalidState(String),
}

/// Model parameters. Frequencies are angular (rad/µs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub omega0: f64,
    pub omega: f64,
    pub kappa: f64,
    pub g: f64,
    pub u: f64,
    pub n_atoms: usize,
    pub n_max: usize,
}

/// Converts ν in MHz to an angular frequency in rad/µs.
pub fn mhz(nu: f64) -> f64 {
    2.0 * PI * nu
}

impl ModelParams {
    /// Parameters from frequencies ν = ω/2π given in MHz. Defaults to `N = 1`
    /// and `n_max = 9`.
    pub fn mhz(omega0: f64, omega: f64, kappa: f64, g: f64, u: f64) -> Self {
        Self {
            omega0: mhz(omega0),
            omega: mhz(omega),
            kappa: mhz(kappa),
            g: mhz(g),
            u: mhz(u),
            n_atoms: 1,
            n_max: 9,
        }
    }

    /// The `{ω₀, ω, κ} = {0.05, 1.0, 0.2}·2π MHz` family at coupling `g` (MHz)
    /// and `U = u_over_omega · ω`.
    pub fn cut(g_mhz: f64, u_over_omega: f64) -> Self {
        Self::mhz(0.05, 1.0, 0.2, g_mhz, u_over_omega)
    }

    pub fn with_atoms(mut self, n_atoms: usize) -> Self {
        self.n_atoms = n_atoms;
        self
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn with_u(mut self, u: f64) -> Self {
        self.u = u;
        self
    }

    pub fn dims(&self) -> HilbertDims {
        HilbertDims::new(self.n_max, self.n_atoms)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, reason: &str| {
            Err(ModelError::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        for (name, v) in [
            ("omega0", self.omega0),
            ("omega", self.omega),
            ("kappa", self.kappa),
            ("g", self.g),
            ("u", self.u),
        ] {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if self.omega0 < 0.0 {
            return bad("omega0", "must be >= 0");
        }
        if self.omega <= 0.0 {
            return bad("omega", "must be > 0");
        }
        if self.kappa < 0.0 {
            return bad("kappa", "must be >= 0");
        }
        if self.g < 0.0 {
            return bad("g", "must be >= 0");
        }
        if self.n_atoms < 1 {
            return bad("n_atoms", "must be >= 1");
        }
        if self.n_max < 1 {
            return bad("n_max", "must be >= 1");
        }
        Ok(())
    }
}

/// `H` on the joint space, assembled from the operators in `ops`.
pub fn hamiltonian_from_ops(p: &ModelParams, ops: &JointOps) -> SparseComplexMatrix {
    let n = p.n_atoms as f64;
    let x_spin = &ops.jm + &ops.jp;
    let x_cav = &ops.a + &ops.a_dag;
    let coupling = &x_spin * &x_cav;
    let nonlinear = &ops.jz * &ops.n;
    ops.jz
        .scale_real(p.omega0)
        .add_scaled(&ops.n, C64::new(p.omega, 0.0))
        .add_scaled(&coupling, C64::new(p.g / n.sqrt(), 0.0))
        .add_scaled(&nonlinear, C64::new(p.u / n, 0.0))
}

pub fn build_hamiltonian(p: &ModelParams) -> SparseComplexMatrix {
    hamiltonian_from_ops(p, &JointOps::new(p.dims()))
}

/// Lindblad generator `L` with `L·vec(ρ) = vec(-i[H,ρ] + 2κ D[a]ρ)` under the
/// column-stacking convention.
pub fn build_liouvillian(p: &ModelParams) -> SparseComplexMatrix {
    let ops = JointOps::new(p.dims());
    let h = hamiltonian_from_ops(p, &ops);
    liouvillian_from(&h, &[(&ops.a, 2.0 * p.kappa)])
}

/// Generic Lindblad generator for Hamiltonian `h` and jump operators with
/// rates: `Σ rate·(cρc† - ½c†cρ - ½ρc†c)`.
pub fn liouvillian_from(
    h: &SparseComplexMatrix,
    jumps: &[(&SparseComplexMatrix, f64)],
) -> SparseComplexMatrix {
    let d = h.nrows();
    let minus_i = C64::new(0.0, -1.0);
    let pre_h = superop(Some(h), None, d).expect("square hamiltonian");
    let post_h = superop(None, Some(h), d).expect("square hamiltonian");
    let mut l = (&pre_h - &post_h).scale(minus_i);
    for &(c, rate) in jumps {
        if rate == 0.0 {
            continue;
        }
        let c_dag = c.adjoint();
        let cdc = &c_dag * c;
        let sandwich = superop(Some(c), Some(&c_dag), d).expect("square jump operator");
        let pre = superop(Some(&cdc), None, d).expect("square jump operator");
        let post = superop(None, Some(&cdc), d).expect("square jump operator");
        let half = C64::new(-0.5 * rate, 0.0);
        l = l
            .add_scaled(&sandwich, C64::new(rate, 0.0))
            .add_scaled(&pre, half)
            .add_scaled(&post, half);
    }
    l
}

/// Diagonal energy of the joint basis state `|n_cavity⟩ ⊗ |n_spin⟩` (the part
/// of `H` that survives at `g = 0`).
pub fn diagonal_energy(p: &ModelParams, n_cavity: usize, n_spin: usize) -> f64 {
    let m = n_spin as f64 - p.n_atoms as f64 / 2.0;
    let nc = n_cavity as f64;
    p.omega0 * m + p.omega * nc + p.u / p.n_atoms as f64 * m * nc
}

/// Value of `U` at which two joint basis states are degenerate in the diagonal
/// part of `H`. Energies are affine in `U`; `None` if the lines are parallel.
pub fn diagonal_crossing_u(p: &ModelParams, a: (usize, usize), b: (usize, usize)) -> Option<f64> {
    let at = |u: f64, s: (usize, usize)| diagonal_energy(&p.with_u(u), s.0, s.1);
    let (ea0, eb0) = (at(0.0, a), at(0.0, b));
    let slope = (at(1.0, a) - ea0) - (at(1.0, b) - eb0);
    if slope == 0.0 {
        return None;
    }
    Some(-(ea0 - eb0) / slope)
}

/// Crossing of `|0,⇓⟩` and `|1,⇑⟩`, exact value and the `-2ω₀N` estimate that
/// ignores the single-photon energy `ω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyReport {
    pub exact: f64,
    pub estimate_without_cavity_energy: f64,
}

pub fn ground_inverted_crossing(p: &ModelParams) -> DegeneracyReport {
    let exact = diagonal_crossing_u(p, (0, 0), (1, p.n_atoms)).expect("slopes differ");
    DegeneracyReport {
        exact,
        estimate_without_cavity_energy: -2.0 * p.omega0 * p.n_atoms as f64,
    }
}

/// Hermitian, unit-trace, positive semidefinite state on the joint space.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    dims: HilbertDims,
    mat: Mat<C64>,
}

/// Measured deviations from the density-matrix invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDiagnostics {
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

impl StateDiagnostics {
    pub const TRACE_TOL: f64 = 1e-10;
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const POSITIVITY_TOL: f64 = 1e-8;

    pub fn is_valid(&self) -> bool {
        self.trace_error < Self::TRACE_TOL
            && self.hermiticity_error < Self::HERMITICITY_TOL
            && self.min_eigenvalue > -Self::POSITIVITY_TOL
    }
}

impl DensityMatrix {
    /// Wraps a matrix without checking the state invariants.
    pub fn from_matrix(dims: HilbertDims, mat: Mat<C64>) -> Result<Self, ModelError> {
        let dim = dims.joint_dim();
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(ModelError::Shape {
                rows: mat.nrows(),
                cols: mat.ncols(),
                dim,
            });
        }
        Ok(Self { dims, mat })
    }

    /// Hermitian-symmetrizes and trace-normalizes `mat`.
    pub fn normalized(dims: HilbertDims, mat: Mat<C64>) -> Result<Self, ModelError> {
        let mut rho = Self::from_matrix(dims, mat)?;
        rho.symmetrize();
        let tr = rho.trace().re;
        if !(tr.abs() > 0.0) || !tr.is_finite() {
            return Err(ModelError::InvalidState(format!("cannot normalize trace {tr}")));
        }
        rho.mat = &rho.mat * faer::Scale(C64::new(1.0 / tr, 0.0));
        Ok(rho)
    }

    /// Checks the invariants and returns the state if they hold.
    pub fn validated(dims: HilbertDims, mat: Mat<C64>) -> Result<Self, ModelError> {
        let rho = Self::from_matrix(dims, mat)?;
        let d = rho.diagnostics();
        if !d.is_valid() {
            return Err(ModelError::InvalidState(format!("{d:?}")));
        }
        Ok(rho)
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector.
    pub fn pure(dims: HilbertDims, psi: &[C64]) -> Result<Self, ModelError> {
        let dim = dims.joint_dim();
        if psi.len() != dim {
            return Err(ModelError::Shape {
                rows: psi.len(),
                cols: 1,
                dim,
            });
        }
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let m = Mat::from_fn(dim, dim, |i, j| psi[i] * psi[j].conj() / norm2);
        Self::from_matrix(dims, m)
    }

    pub fn maximally_mixed(dims: HilbertDims) -> Self {
        let dim = dims.joint_dim();
        let m = Mat::from_fn(dim, dim, |i, j| {
            if i == j {
                C64::new(1.0 / dim as f64, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self { dims, mat: m }
    }

    /// `ρ_cav ⊗ ρ_spin`.
    pub fn product(
        dims: HilbertDims,
        rho_cavity: &Mat<C64>,
        rho_spin: &Mat<C64>,
    ) -> Result<Self, ModelError> {
        let (dc, ds) = (dims.cavity_dim(), dims.spin_dim());
        if rho_cavity.nrows() != dc || rho_spin.nrows() != ds {
            return Err(ModelError::Shape {
                rows: rho_cavity.nrows() * rho_spin.nrows(),
                cols: rho_cavity.ncols() * rho_spin.ncols(),
                dim: dims.joint_dim(),
            });
        }
        let m = Mat::from_fn(dc * ds, dc * ds, |i, j| {
            rho_cavity[(i / ds, j / ds)] * rho_spin[(i % ds, j % ds)]
        });
        Self::from_matrix(dims, m)
    }

    pub fn dims(&self) -> HilbertDims {
        self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Mat<C64> {
        self.mat
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.mat[(i, i)]).sum()
    }

    pub fn symmetrize(&mut self) {
        let d = self.dim();
        let sym = Mat::from_fn(d, d, |i, j| (self.mat[(i, j)] + self.mat[(j, i)].conj()) * 0.5);
        self.mat = sym;
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut m: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                m = m.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        m
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim();
        let herm = Mat::from_fn(d, d, |i, j| (self.mat[(i, j)] + self.mat[(j, i)].conj()) * 0.5);
        herm.self_adjoint_eigenvalues(Side::Lower)
            .expect("hermitian eigendecomposition")
    }

    pub fn diagnostics(&self) -> StateDiagnostics {
        let ev = self.eigenvalues();
        StateDiagnostics {
            trace_error: (self.trace() - C64::new(1.0, 0.0)).norm(),
            hermiticity_error: self.hermiticity_error(),
            min_eigenvalue: ev.first().copied().unwrap_or(0.0),
        }
    }

    pub fn to_vec(&self) -> Vec<C64> {
        crate::operators::vec(&self.mat)
    }
}

/// Pure product state `|n_cavity⟩ ⊗ |n_spin⟩`, with `n_spin = 0` the `Jz = -N/2`
/// state.
pub fn basis_state(
    dims: HilbertDims,
    n_cavity: usize,
    n_spin: usize,
) -> Result<DensityMatrix, ModelError> {
    if n_cavity > dims.n_max || n_spin > dims.n_atoms {
        return Err(ModelError::IndexOutOfRange {
            n_cavity,
            n_spin,
            n_max: dims.n_max,
            n_atoms: dims.n_atoms,
        });
    }
    let dim = dims.joint_dim();
    let k = dims.index(n_cavity, n_spin);
    let m = Mat::from_fn(dim, dim, |i, j| {
        if i == k && j == k {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    DensityMatrix::from_matrix(dims, m)
}

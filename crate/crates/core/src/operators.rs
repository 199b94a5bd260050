//! Truncated cavity and collective-spin operators, a small CSR sparse matrix,
//! and the vectorization / superoperator primitives.
//!
//! Vectorization convention: column stacking,
//! `vec(ρ)[i + j·D] = ρ[i, j]`. With it, `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.
//! Every superoperator in the crate is built through [`superop`].

use std::ops::{Add, Mul, Sub};

use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sparse conversion failed: {0}")]
    Conversion(String),
}

/// Sizes of the truncated cavity ⊗ spin Hilbert space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HilbertDims {
    /// Highest retained Fock level.
    pub n_max: usize,
    /// Atom number `N`; the spin sector is `j = N/2`.
    pub n_atoms: usize,
}

impl HilbertDims {
    pub fn new(n_max: usize, n_atoms: usize) -> Self {
        assert!(n_atoms >= 1, "atom number must be at least 1");
        Self { n_max, n_atoms }
    }

    pub fn cavity_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn spin_dim(&self) -> usize {
        self.n_atoms + 1
    }

    pub fn joint_dim(&self) -> usize {
        self.cavity_dim() * self.spin_dim()
    }

    /// Joint index of `|n_cavity⟩ ⊗ |n_spin⟩`.
    pub fn index(&self, n_cavity: usize, n_spin: usize) -> usize {
        n_cavity * self.spin_dim() + n_spin
    }

    /// Inverse of [`HilbertDims::index`].
    pub fn labels(&self, index: usize) -> (usize, usize) {
        (index / self.spin_dim(), index % self.spin_dim())
    }
}

/// Complex sparse matrix in compressed-row form.
///
/// Column indices inside a row are strictly increasing and no exact zeros are
/// stored, so equal matrices have equal storage and iteration order is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseComplexMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseComplexMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![C64::new(1.0, 0.0); n])
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        Self::from_triplets(
            diag.len(),
            diag.len(),
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)),
        )
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and entries that end up exactly zero are dropped.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut entries: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
        }
        entries.sort_by_key(|e| (e.0, e.1));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut iter = entries.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != C64::new(0.0, 0.0) {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &Mat<C64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// Stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.iter().map(|(r, c, v)| (c, r, v)))
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.iter().map(|(r, c, v)| (c, r, v.conj())),
        )
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_triplets(self.nrows, self.ncols, self.iter().map(|(r, c, v)| (r, c, v * s)))
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Largest absolute value of any entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute row sum (the induced ∞-norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul shape mismatch");
        let mut t = Vec::new();
        let mut acc = vec![C64::new(0.0, 0.0); other.ncols];
        let mut touched = vec![false; other.ncols];
        let mut cols = Vec::new();
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                t.push((r, c, acc[c]));
                acc[c] = C64::new(0.0, 0.0);
                touched[c] = false;
            }
            cols.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    /// `y = self · x`.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yr = s;
        }
    }

    pub fn mul_dense(&self, m: &Mat<C64>) -> Mat<C64> {
        assert_eq!(self.ncols, m.nrows());
        let mut out = Mat::<C64>::zeros(self.nrows, m.ncols());
        for (r, c, v) in self.iter() {
            for j in 0..m.ncols() {
                out[(r, j)] += v * m[(c, j)];
            }
        }
        out
    }

    pub fn add_scaled(&self, other: &Self, s: C64) -> Self {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        Self::from_triplets(
            self.nrows,
            self.ncols,
            self.iter().chain(other.iter().map(|(r, c, v)| (r, c, v * s))),
        )
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    pub fn to_faer_csc(&self) -> Result<SparseColMat<usize, C64>, OperatorError> {
        let t: Vec<Triplet<usize, usize, C64>> =
            self.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| OperatorError::Conversion(format!("{e:?}")))
    }
}

impl Add for &SparseComplexMatrix {
    type Output = SparseComplexMatrix;
    fn add(self, rhs: Self) -> SparseComplexMatrix {
        self.add_scaled(rhs, C64::new(1.0, 0.0))
    }
}

impl Sub for &SparseComplexMatrix {
    type Output = SparseComplexMatrix;
    fn sub(self, rhs: Self) -> SparseComplexMatrix {
        self.add_scaled(rhs, C64::new(-1.0, 0.0))
    }
}

impl Mul for &SparseComplexMatrix {
    type Output = SparseComplexMatrix;
    fn mul(self, rhs: Self) -> SparseComplexMatrix {
        self.matmul(rhs)
    }
}

/// Kronecker product `A ⊗ B`.
pub fn tensor(a: &SparseComplexMatrix, b: &SparseComplexMatrix) -> SparseComplexMatrix {
    let (br, bc) = b.shape();
    let mut t = Vec::with_capacity(a.nnz() * b.nnz());
    for (ra, ca, va) in a.iter() {
        for (rb, cb, vb) in b.iter() {
            t.push((ra * br + rb, ca * bc + cb, va * vb));
        }
    }
    SparseComplexMatrix::from_triplets(a.nrows() * br, a.ncols() * bc, t)
}

/// Returns `M` with `M · vec(ρ) = vec(left · ρ · right)`; `None` stands for
/// the identity on a `dim`-dimensional space.
pub fn superop(
    left: Option<&SparseComplexMatrix>,
    right: Option<&SparseComplexMatrix>,
    dim: usize,
) -> Result<SparseComplexMatrix, OperatorError> {
    for op in [left, right].into_iter().flatten() {
        if op.shape() != (dim, dim) {
            return Err(OperatorError::DimensionMismatch {
                expected: dim,
                got: op.nrows().max(op.ncols()),
            });
        }
    }
    let id = SparseComplexMatrix::identity(dim);
    let l = left.unwrap_or(&id);
    let r = right.map(|r| r.transpose()).unwrap_or_else(|| id.clone());
    Ok(tensor(&r, l))
}

/// Column-stacking vectorization.
pub fn vec(m: &Mat<C64>) -> Vec<C64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`] for a square `dim × dim` matrix.
pub fn unvec(v: &[C64], dim: usize) -> Mat<C64> {
    assert_eq!(v.len(), dim * dim, "vector length is not dim²");
    Mat::from_fn(dim, dim, |i, j| v[i + j * dim])
}

/// Truncated cavity annihilation, creation and number operators.
#[derive(Debug, Clone)]
pub struct CavityOps {
    pub a: SparseComplexMatrix,
    pub a_dag: SparseComplexMatrix,
    pub n: SparseComplexMatrix,
}

pub fn build_cavity_ops(n_max: usize) -> CavityOps {
    let dim = n_max + 1;
    let a = SparseComplexMatrix::from_triplets(
        dim,
        dim,
        (1..dim).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    );
    let a_dag = a.adjoint();
    let n = SparseComplexMatrix::from_diagonal(
        &(0..dim).map(|k| C64::new(k as f64, 0.0)).collect::<Vec<_>>(),
    );
    CavityOps { a, a_dag, n }
}

/// Collective spin operators on the symmetric sector `j = N/2`.
#[derive(Debug, Clone)]
pub struct SpinOps {
    pub jz: SparseComplexMatrix,
    pub jp: SparseComplexMatrix,
    pub jm: SparseComplexMatrix,
}

impl SpinOps {
    /// `J² = Jz² + (J₊J₋ + J₋J₊)/2`.
    pub fn j_squared(&self) -> SparseComplexMatrix {
        let pm = &self.jp * &self.jm;
        let mp = &self.jm * &self.jp;
        let half = C64::new(0.5, 0.0);
        (&self.jz * &self.jz).add_scaled(&(&pm + &mp), half)
    }
}

pub fn build_spin_ops(n_atoms: usize) -> SpinOps {
    assert!(n_atoms >= 1, "atom number must be at least 1");
    let dim = n_atoms + 1;
    let half_n = n_atoms as f64 / 2.0;
    // Exact zeros (Jz = 0 for even N) are dropped by the constructor.
    let jz = SparseComplexMatrix::from_diagonal(
        &(0..dim).map(|n| C64::new(n as f64 - half_n, 0.0)).collect::<Vec<_>>(),
    );
    let jp = SparseComplexMatrix::from_triplets(
        dim,
        dim,
        (0..n_atoms).map(|n| {
            let amp = (((n_atoms - n) * (n + 1)) as f64).sqrt();
            (n + 1, n, C64::new(amp, 0.0))
        }),
    );
    let jm = jp.adjoint();
    SpinOps { jz, jp, jm }
}

/// All model operators lifted to the joint cavity ⊗ spin space.
#[derive(Debug, Clone)]
pub struct JointOps {
    pub dims: HilbertDims,
    pub a: SparseComplexMatrix,
    pub a_dag: SparseComplexMatrix,
    pub n: SparseComplexMatrix,
    pub jz: SparseComplexMatrix,
    pub jp: SparseComplexMatrix,
    pub jm: SparseComplexMatrix,
    pub j2: SparseComplexMatrix,
}

impl JointOps {
    pub fn new(dims: HilbertDims) -> Self {
        let cav = build_cavity_ops(dims.n_max);
        let spin = build_spin_ops(dims.n_atoms);
        let ic = SparseComplexMatrix::identity(dims.cavity_dim());
        let is = SparseComplexMatrix::identity(dims.spin_dim());
        Self {
            dims,
            a: tensor(&cav.a, &is),
            a_dag: tensor(&cav.a_dag, &is),
            n: tensor(&cav.n, &is),
            jz: tensor(&ic, &spin.jz),
            jp: tensor(&ic, &spin.jp),
            jm: tensor(&ic, &spin.jm),
            j2: tensor(&ic, &spin.j_squared()),
        }
    }

    pub fn identity(&self) -> SparseComplexMatrix {
        SparseComplexMatrix::identity(self.dims.joint_dim())
    }
}

//! Exact finite-N simulation of the dissipative Dicke model with a non-linear
//! atom-photon coupling `U/N Jz a†a`, alongside its mean-field limit.
//!
//! Conventions used throughout the crate:
//!
//! * Frequencies are angular, in rad/µs, and times are in µs. `ModelParams::mhz`
//!   converts from ν in MHz (`ω = 2πν`).
//! * The joint Hilbert space is ordered cavity ⊗ spin. Joint index of
//!   `|n_c⟩ ⊗ |n_s⟩` is `n_c * (N + 1) + n_s`.
//! * The spin basis is the symmetric `j = N/2` sector labelled by excitation
//!   number `n_s = 0..=N`, with `Jz = n_s - N/2`.
//! * Density matrices are vectorized by column stacking (see
//!   [`operators::vec`]).

pub mod dynamics;
pub mod model;
pub mod observables;
pub mod ode;
pub mod operators;
pub mod semiclassical;
pub mod steady_state;

pub use model::{DensityMatrix, ModelParams};
pub use operators::{HilbertDims, SparseComplexMatrix};

/// Complex scalar used everywhere.
pub type C64 = num_complex::Complex64;

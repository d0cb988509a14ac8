//! Dense exact-diagonalization toolkit for Davies thermalization dynamics of
//! finite 1D commuting spin chains: Gibbs states, Lindblad generators with
//! KMS-detailed-balanced rates, conditional expectations, entropy production,
//! mixing-time / MLSI estimation and quasi-factorization diagnostics.
//!
//! Conventions, fixed project-wide:
//! - sites are little-endian: site 0 is the fastest-varying index of the
//!   2^n-dimensional Hilbert space;
//! - operators are vectorized by column stacking, `vec(X)[i + d*j] = X[i,j]`,
//!   so a map `X -> A X B^dagger` has matrix `kron(conj(B), A)`;
//! - all entropies are in nats.

pub mod chain;
pub mod condexp;
pub mod davies;
pub mod entropy;
pub mod geometry;
pub mod gibbs;
pub mod kms;
pub mod linalg;
pub mod mixing;
pub mod probes;
pub mod sector;
pub mod tensor;

use num_complex::Complex64 as C64;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },
    #[error("matrix is not Hermitian: max |A - A^H| = {residual:.3e}")]
    NotHermitian { residual: f64 },
    #[error("eigensolver failed: {0}")]
    EigFailure(String),
    #[error("function undefined on spectrum: {0}")]
    SpectrumDomain(String),
    #[error("state is not full rank (min eigenvalue {min_eig:.3e})")]
    RankDeficient { min_eig: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("Hamiltonian terms do not commute: max commutator norm {0:.3e}")]
    NonCommuting(f64),
    #[error("rate function violates the KMS condition at omega = {omega}: {detail}")]
    KmsViolation { omega: f64, detail: String },
    #[error("generator is not ergodic (fixed space dimension {fixed_dim})")]
    NonErgodic { fixed_dim: usize },
    #[error("kernel threshold ambiguity: {0}")]
    KernelAmbiguous(String),
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),
    #[error("{0}")]
    Numerical(String),
}

/// Frobenius-normalized max-abs difference, used all over the tests.
pub fn max_abs_diff(a: &ndarray::Array2<C64>, b: &ndarray::Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

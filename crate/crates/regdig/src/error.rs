//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("eps must lie in (0, 1/10), got {0}")]
    BadEps(f64),
    #[error("residue {residue} out of range for modulus {modulus}")]
    BadResidue { residue: u64, modulus: u64 },
    #[error("enumeration budget exceeded: {0}")]
    TooLarge(String),
    #[error("exact identity violated: {0}")]
    IdentityViolated(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("phase vector is not centered: coordinate sum is nonzero")]
    NotCentered,
    #[error("third moment is not proportional to sum of cubes at p={p}: ratios {ratios:?}")]
    NotProportional { p: u64, ratios: Vec<f64> },
    #[error("profile outside the regime of the approximation: {0}")]
    OutOfRegime(String),
    #[error("the profile (n,0,...,0) of the zero vector is excluded")]
    Excluded,
    #[error("simplex weights must be nonnegative and sum to 1")]
    BadSimplex,
    #[error("optimizer failed to converge: {0}")]
    NoConverge(String),
    #[error("rejection sampling budget of {0} retries exhausted")]
    RejectionBudget(usize),
    #[error("no primes supplied")]
    NoPrimes,
    #[error("quadrature failed to reach tolerance {0}")]
    Quadrature(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

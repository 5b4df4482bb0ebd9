//! A laboratory for the singularity probability of adjacency matrices of
//! random directed d-regular multigraphs.
//!
//! The crate is organized around the random-walk picture of the kernel
//! equation `M v = 0` over a prime field: a candidate kernel vector is
//! summarized by its residue histogram (a [`walk::Profile`]), and the number
//! of configuration-model matrices annihilating it is an exact product
//! formula driven by the walk whose step law is the multiset `U_{d,p}` of
//! zero-sum d-tuple histograms ([`walk::StepDistribution`]).
//!
//! Modules:
//! - [`params`], [`exact`], [`rng`]: shared parameter records, exact
//!   rational probabilities, reproducible stream-splittable randomness.
//! - [`walk`]: the step multiset, exact walk probabilities (dynamic
//!   programming and character sums), and both sides of the kernel-counting
//!   identity.
//! - [`config_model`]: pairing sampler and exhaustive pairing enumeration.
//! - [`mod_linalg`]: rank/kernel over F_p and certified rational singularity.
//! - [`charfn`]: characteristic function of the step, exact moments, ball
//!   geometry, inverse-theorem search, structure recovery.
//! - [`asymptotics`]: Stirling machinery, local-limit prediction, profile
//!   classification, large-deviation rate function.
//! - [`integrals`]: numerical verification of the cubic-phase and
//!   sphere-expectation estimates.
//! - [`experiments`]: Monte Carlo drivers, persistent records, verification
//!   suites behind the CLI.

pub mod asymptotics;
pub mod charfn;
pub mod config_model;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod integrals;
pub mod mod_linalg;
pub mod params;
pub mod rng;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
pub use exact::ExactProb;
pub use params::ModelParams;
pub use rng::SeededRng;

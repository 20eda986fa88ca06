//! Equilibrium statistics of the planar point-vortex gas.
//!
//! The crate covers the full chain from microstates to the mean-field limit:
//!
//! * [`geometry`] — domains, coarse grids, configurations, macrostates and
//!   the coarse-graining map;
//! * [`hamiltonian`] — exact, coarse-grained and remainder energies;
//! * [`sampler`] — Metropolis sampling of the canonical ensemble at positive
//!   and negative inverse temperature;
//! * [`ensemble`] — exact macrostate enumeration, partition functions, Gibbs
//!   entropy, variational free energies and the tiny-N quadrature oracle;
//! * [`meanfield`] — the finite-N occupation fixed point, its scaling limits,
//!   and the continuum solvers (single-species limit equation and the
//!   two-species sinh relation).
//!
//! All numerics are generic over the scalar type via [`scalar::Real`];
//! the `*64` aliases below pin `f64`, which is what the CLI and the
//! verification suites use.

pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod hamiltonian;
pub mod meanfield;
pub mod numeric;
pub mod sampler;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` aliases for the common types.
pub type Point64 = geometry::Point<f64>;
pub type Domain64 = geometry::Domain<f64>;
pub type Grid64 = geometry::CoarseGrid<f64>;
pub type Config64 = geometry::VortexConfiguration<f64>;
pub type Chain64 = sampler::Chain<f64>;
pub type SamplerConfig64 = sampler::SamplerConfig<f64>;
pub type FreeEnergyReport64 = ensemble::FreeEnergyReport<f64>;
pub type OccupationSolution64 = meanfield::OccupationSolution<f64>;
pub type MeanField64 = meanfield::continuum::MeanField<f64>;

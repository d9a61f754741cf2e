//! Energy-based analysis of two-port port-Hamiltonian systems.
//!
//! A port-Hamiltonian system
//!
//! ```text
//! ẋ = J(x)e − 𝓡(x,e) + G(x)u,   e = ∂H/∂x,   y = Gᵀ(x)e
//! ```
//!
//! with skew-symmetric interconnection `J`, dissipation `𝓡` satisfying
//! `eᵀ𝓡(x,e) ≥ 0`, and power-conjugate port pairs `(u, y)` is cyclo-passive
//! with storage `H`.  When the state splits as `x = (x₁, x₂)` such that the
//! two ports decouple blockwise and the input matrix of the first port is
//! square, constant and invertible, holding the first output `y₁` constant
//! pins `e₁ = ē₁` and the partial Legendre transform `H₁*(ē₁, x₂)` becomes a
//! storage function for the second port alone.  Systems with that structure
//! cannot convert energy from port 1 to port 2 in a recurrent manner — the
//! same limitation the Second Law imposes on extracting work from a single
//! heat source.
//!
//! This crate provides:
//!
//! * [`system`] — the system representation and pointwise evaluations,
//! * [`legendre`] — numerical partial Legendre transforms and their
//!   differential identities,
//! * [`structure`] — certification (or refutation) of the blockwise
//!   structural conditions for a declared partition,
//! * [`simulate`] — time integration, including the constant-`y₁`
//!   ("isothermal") and constant-`x₁` ("isentropic") constrained modes,
//! * [`dissipativity`] — dissipation-inequality verification, cyclic supply
//!   integrals, available-storage/required-supply estimation, and search for
//!   energy-extracting counterexample cycles,
//! * [`models`] — ready-made example systems from several physical domains
//!   (ideal gas, DC motor, adjustable spring, coupled inductors, capacitor
//!   microphone, synchronous machine in phase and dq variables, heat
//!   exchanger).
//!
//! All randomized procedures take explicit seeds and reduce results
//! deterministically, so runs are reproducible.  With the default
//! `parallel` feature, batch work (structure sampling, optimizer restarts,
//! storage grids) runs on rayon; disabling the feature falls back to
//! sequential loops with identical results.

pub mod dissipativity;
mod error;
pub mod exec;
pub mod legendre;
pub mod models;
pub mod optimize;
pub mod signal;
pub mod simulate;
pub mod structure;
pub mod system;
pub mod trajectory;

pub use error::{Error, Result};
pub use system::{PortHamiltonianSystem, StatePartition, StructureFlags};
pub use trajectory::{SupplySample, Trajectory};

//! Ready-made example systems from several physical domains, each with
//! closed-form derivatives and declared structure flags.
//!
//! Every constructor returns the system in a documented "natural" state
//! order; [`crate::system::PortHamiltonianSystem::swapped`] gives the
//! orientation with the other port first.  Parameters are desk-scale SI
//! values chosen for analysis, not data sheets; all are user-settable.

mod dc_motor;
mod gas;
mod heat_exchanger;
mod inductors;
mod microphone;
pub mod park;
mod spring;
mod sync_machine;

pub use dc_motor::{dc_motor, DcMotorParams};
pub use gas::{ideal_gas, IdealGasParams};
pub use heat_exchanger::{heat_exchanger, HeatExchangerParams};
pub use inductors::{coupled_inductors, CoupledInductorParams};
pub use microphone::{microphone, microphone_momentum_first, MicrophoneParams};
pub use spring::{adjustable_spring, SpringParams};
pub use sync_machine::{sync_machine, sync_machine_dq, SyncMachineParams};

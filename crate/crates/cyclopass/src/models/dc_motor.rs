//! Permanent-magnet DC machine (motor or dynamo).
//!
//! State `(φ, p)` — armature flux linkage and rotor angular momentum, with
//! `H = φ²/2L + p²/2J`.  The gyration constant `K` couples the electrical
//! port `(V, I)` to the mechanical port `(τ, ω)` through the off-diagonal
//! interconnection
//!
//! ```text
//! J = [ 0  −K ]      R = diag(R_e, b)      G = I₂
//!     [ K   0 ]
//! ```
//!
//! For `K ≠ 0` the interconnection couples the two blocks, so the machine is
//! not in the blockwise form at either port — which is exactly what lets it
//! convert energy in both directions.  The degenerate `K = 0` variant
//! decouples and passes the structure check at both ports.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::system::{BlockMatrix, PortHamiltonianSystem, StatePartition, StructureFlags};

#[derive(Debug, Clone, Copy)]
pub struct DcMotorParams {
    /// Armature inductance, H.
    pub inductance: f64,
    /// Rotor inertia, kg·m².
    pub inertia: f64,
    /// Gyration (torque) constant, N·m/A.
    pub gyration: f64,
    /// Mechanical friction, N·m·s.
    pub friction: f64,
    /// Armature resistance, Ω.
    pub resistance: f64,
}

impl Default for DcMotorParams {
    fn default() -> Self {
        Self {
            inductance: 1.0,
            inertia: 1.0,
            gyration: 1.0,
            friction: 1.0,
            resistance: 1.0,
        }
    }
}

impl DcMotorParams {
    /// Input pair `(V, τ)` sustaining the equilibrium `(Ī, ω̄)`.
    pub fn equilibrium_inputs(&self, i_bar: f64, w_bar: f64) -> (f64, f64) {
        (
            self.gyration * w_bar + self.resistance * i_bar,
            self.friction * w_bar - self.gyration * i_bar,
        )
    }
}

/// Electrical port `(V, I)` first, mechanical port `(τ, ω)` second.
pub fn dc_motor(params: DcMotorParams) -> Result<PortHamiltonianSystem> {
    let p = params;
    if p.inductance <= 0.0 || p.inertia <= 0.0 || p.friction < 0.0 || p.resistance < 0.0 {
        return Err(Error::InvalidParameter(
            "motor requires L, J > 0 and b, R ≥ 0".into(),
        ));
    }
    let (l, j_rot, k) = (p.inductance, p.inertia, p.gyration);
    PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
        .name("dc-motor")
        .hamiltonian(move |x| x[0] * x[0] / (2.0 * l) + x[1] * x[1] / (2.0 * j_rot))
        .gradient(move |x| DVector::from_vec(vec![x[0] / l, x[1] / j_rot]))
        .hessian(move |_| DMatrix::from_row_slice(2, 2, &[1.0 / l, 0.0, 0.0, 1.0 / j_rot]))
        .j_constant(DMatrix::from_row_slice(2, 2, &[0.0, -k, k, 0.0]))
        .dissipation_matrix_constant(DMatrix::from_row_slice(
            2,
            2,
            &[p.resistance, 0.0, 0.0, p.friction],
        ))
        .inputs_partitioned(
            BlockMatrix::Constant(DMatrix::identity(1, 1)),
            BlockMatrix::Constant(DMatrix::identity(1, 1)),
        )
        .flags(StructureFlags {
            j_block_diagonal: k == 0.0,
            ..StructureFlags::all_true()
        })
        .nominal_state(DVector::from_vec(vec![0.5, 0.5]))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lossless_variant_gyrates() {
        // L = J = K = 1, b = R = 0, x = (1, 0), u = 0 → ẋ = (0, 1)
        let sys = dc_motor(DcMotorParams {
            friction: 0.0,
            resistance: 0.0,
            ..Default::default()
        })
        .unwrap();
        let dx = sys
            .dynamics(&DVector::from_vec(vec![1.0, 0.0]), &DVector::zeros(2))
            .unwrap();
        assert_relative_eq!(dx[0], 0.0);
        assert_relative_eq!(dx[1], 1.0);
    }

    #[test]
    fn outputs_scale_by_l_and_j() {
        let sys = dc_motor(DcMotorParams {
            inductance: 2.0,
            inertia: 4.0,
            ..Default::default()
        })
        .unwrap();
        let (y1, y2) = sys.outputs(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(y1[0], 0.5);
        assert_relative_eq!(y2[0], 0.25);
    }

    #[test]
    fn equilibrium_inputs_hold_the_state() {
        let p = DcMotorParams::default();
        let sys = dc_motor(p).unwrap();
        let (i_bar, w_bar) = (1.0, 0.5);
        let (v, tau) = p.equilibrium_inputs(i_bar, w_bar);
        let x = DVector::from_vec(vec![p.inductance * i_bar, p.inertia * w_bar]);
        let dx = sys.dynamics(&x, &DVector::from_vec(vec![v, tau])).unwrap();
        assert!(dx.norm() < 1e-14, "{dx:?}");
    }

    #[test]
    fn energy_decays_freely_with_damping() {
        let p = DcMotorParams::default();
        let sys = dc_motor(p).unwrap();
        let x = DVector::from_vec(vec![1.0, -0.5]);
        let e = sys.gradient(&x);
        let diss = sys.dissipation(&x, &e);
        assert!(e.dot(&diss) > 0.0);
    }
}

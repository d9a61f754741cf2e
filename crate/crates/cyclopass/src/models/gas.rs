//! Ideal gas with reversible entropy port.
//!
//! State `(V, S)`; pure integrator dynamics `V̇ = u_V`, `Ṡ = u_S` with
//! outputs `y_V = ∂E/∂V = −P` and `y_S = ∂E/∂S = T`.  Only reversible
//! processes are modeled, so the entropy flow is `u_S = q/T` and the thermal
//! supply `T·u_S` equals the heat flow `q`.
//!
//! The internal energy is the calorically ideal closure
//!
//! ```text
//! E(V, S) = C_V · exp(S/C_V) · V^(−R/C_V)
//! ```
//!
//! the unique form with `T = E/C_V` and the gas law `P·V = R·T` holding
//! identically (`P = −∂E/∂V = (R/C_V)·E/V`).
//!
//! Natural order puts the mechanical port first, so the certificate covers
//! the thermal port (constant pressure, enthalpy-style storage); the
//! swapped orientation certifies the mechanical port with Helmholtz-form
//! storage `F = E − T·S`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::system::{BlockMatrix, PortHamiltonianSystem, StatePartition, StructureFlags};

#[derive(Debug, Clone, Copy)]
pub struct IdealGasParams {
    /// Heat capacity at constant volume, J/K.
    pub c_v: f64,
    /// Gas constant (per amount of substance folded in), J/K.
    pub r_gas: f64,
    /// Entropy constant of the closed-form free energy, J/K.  Shifts the
    /// reference free-energy expression only; gradients are unaffected.
    pub entropy_constant: f64,
    /// Integration constant of the closed-form free energy, J.
    pub energy_offset: f64,
}

impl Default for IdealGasParams {
    fn default() -> Self {
        Self {
            c_v: 1.5,
            r_gas: 1.0,
            entropy_constant: 0.0,
            energy_offset: 0.0,
        }
    }
}

impl IdealGasParams {
    pub fn energy(&self, v: f64, s: f64) -> f64 {
        if v <= 0.0 || !s.is_finite() {
            return f64::NAN;
        }
        self.c_v * (s / self.c_v).exp() * v.powf(-self.r_gas / self.c_v)
    }

    /// `S(V, T) = C_V ln T + R ln V`, the inverse of `T = ∂E/∂S`.
    pub fn entropy_at(&self, v: f64, temperature: f64) -> f64 {
        self.c_v * temperature.ln() + self.r_gas * v.ln()
    }

    pub fn pressure(&self, v: f64, s: f64) -> f64 {
        self.r_gas * self.energy(v, s) / (self.c_v * v)
    }

    pub fn temperature(&self, v: f64, s: f64) -> f64 {
        self.energy(v, s) / self.c_v
    }

    /// Closed-form free energy `F(V,T) = C_V·T + W − T(C_V ln T + R ln V + a)`,
    /// used as an independent cross-check of the certified storage gradient.
    pub fn free_energy(&self, v: f64, temperature: f64) -> f64 {
        self.c_v * temperature + self.energy_offset
            - temperature
                * (self.c_v * temperature.ln()
                    + self.r_gas * v.ln()
                    + self.entropy_constant)
    }
}

/// Two-state lossless gas; mechanical port `(u_V, −P)` first, thermal port
/// `(u_S, T)` second.
pub fn ideal_gas(params: IdealGasParams) -> Result<PortHamiltonianSystem> {
    if params.c_v <= 0.0 || params.r_gas <= 0.0 {
        return Err(Error::InvalidParameter(
            "gas requires C_V > 0 and R > 0".into(),
        ));
    }
    let p = params;
    let k = p.r_gas / p.c_v;
    PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
        .name("ideal-gas")
        .hamiltonian(move |x| p.energy(x[0], x[1]))
        .gradient(move |x| {
            let e = p.energy(x[0], x[1]);
            DVector::from_vec(vec![-k * e / x[0], e / p.c_v])
        })
        .hessian(move |x| {
            let e = p.energy(x[0], x[1]);
            let (v, _) = (x[0], x[1]);
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    k * (k + 1.0) * e / (v * v),
                    -k * e / (p.c_v * v),
                    -k * e / (p.c_v * v),
                    e / (p.c_v * p.c_v),
                ],
            )
        })
        .lossless()
        .inputs_partitioned(
            BlockMatrix::Constant(DMatrix::identity(1, 1)),
            BlockMatrix::Constant(DMatrix::identity(1, 1)),
        )
        .flags(StructureFlags::all_true())
        .nominal_state(DVector::from_vec(vec![2.0, 8.0]))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::axiom_violations;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gas_law_holds_identically() {
        let p = IdealGasParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v = 0.3 + 3.0 * rng.random::<f64>();
            let s = 4.0 + 6.0 * rng.random::<f64>();
            let lhs = p.pressure(v, s) * v;
            let rhs = p.r_gas * p.temperature(v, s);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
            assert_relative_eq!(p.temperature(v, s), p.energy(v, s) / p.c_v, max_relative = 1e-12);
        }
    }

    #[test]
    fn entropy_inverts_temperature() {
        let p = IdealGasParams::default();
        let s = p.entropy_at(2.0, 300.0);
        assert_relative_eq!(p.temperature(2.0, s), 300.0, max_relative = 1e-12);
    }

    #[test]
    fn outputs_are_minus_pressure_and_temperature() {
        let p = IdealGasParams::default();
        let sys = ideal_gas(p).unwrap();
        let x = DVector::from_vec(vec![2.0, p.entropy_at(2.0, 300.0)]);
        let (y1, y2) = sys.outputs(&x).unwrap();
        assert_relative_eq!(y1[0], -p.pressure(2.0, x[1]), max_relative = 1e-12);
        assert_relative_eq!(y2[0], 300.0, max_relative = 1e-12);
        // PV = RT through the port outputs
        assert_relative_eq!(-y1[0] * 2.0, p.r_gas * y2[0], max_relative = 1e-10);
    }

    #[test]
    fn axioms_hold_at_random_states() {
        let sys = ideal_gas(IdealGasParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = DVector::from_vec(vec![
                0.5 + 2.0 * rng.random::<f64>(),
                6.0 + 3.0 * rng.random::<f64>(),
            ]);
            let e = DVector::from_vec(vec![rng.random::<f64>(), rng.random::<f64>()]);
            let v = axiom_violations(&sys, &x, &e);
            assert!(v.skew_symmetry <= 1e-12);
            assert!(v.dissipation_negativity <= 1e-12);
            assert!(v.gradient_fd_error <= 1e-5, "{v:?}");
            assert!(v.hessian_fd_error <= 1e-5, "{v:?}");
        }
    }

    #[test]
    fn nonpositive_volume_is_an_evaluation_error() {
        let sys = ideal_gas(IdealGasParams::default()).unwrap();
        let bad = DVector::from_vec(vec![-1.0, 5.0]);
        assert!(sys.gradient_checked(&bad).is_err());
    }
}

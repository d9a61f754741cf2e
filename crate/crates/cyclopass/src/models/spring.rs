//! Linear spring with time-adjustable stiffness (variable stiffness
//! control).
//!
//! State `(q, k)` — extension and stiffness, both driven directly:
//! `q̇ = v`, `k̇ = u`, with `H = ½kq²` and outputs `F = ∂H/∂q = kq`,
//! `y = ∂H/∂k = ½q²`.
//!
//! `H` is homogeneous of degree one in `k`, so `∂²H/∂k² = 0`: the transform
//! with respect to `k` is degenerate and the check of the `(v, F)` port
//! refuses with a singular Hessian block.  With respect to `q` the
//! transform exists wherever `k ≠ 0` and equals `H*(F, k) = −F²/(2k)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::system::{BlockMatrix, PortHamiltonianSystem, StatePartition, StructureFlags};

#[derive(Debug, Clone, Copy)]
pub struct SpringParams {
    /// Nominal stiffness around which analyses sample, N/m.
    pub nominal_stiffness: f64,
    /// Nominal extension, m.
    pub nominal_extension: f64,
}

impl Default for SpringParams {
    fn default() -> Self {
        Self {
            nominal_stiffness: 2.0,
            nominal_extension: 0.5,
        }
    }
}

/// Extension port `(v, F)` first, stiffness port `(u, y)` second.
pub fn adjustable_spring(params: SpringParams) -> Result<PortHamiltonianSystem> {
    if params.nominal_stiffness <= 0.0 {
        return Err(Error::InvalidParameter("stiffness must be positive".into()));
    }
    PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
        .name("adjustable-spring")
        .hamiltonian(|x| 0.5 * x[1] * x[0] * x[0])
        .gradient(|x| DVector::from_vec(vec![x[1] * x[0], 0.5 * x[0] * x[0]]))
        .hessian(|x| DMatrix::from_row_slice(2, 2, &[x[1], x[0], x[0], 0.0]))
        .lossless()
        .inputs_partitioned(
            BlockMatrix::Constant(DMatrix::identity(1, 1)),
            BlockMatrix::Constant(DMatrix::identity(1, 1)),
        )
        .flags(StructureFlags::all_true())
        .nominal_state(DVector::from_vec(vec![
            params.nominal_extension,
            params.nominal_stiffness,
        ]))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre::partial_legendre;
    use approx::assert_relative_eq;

    #[test]
    fn transform_wrt_extension_matches_closed_form() {
        let sys = adjustable_spring(SpringParams::default()).unwrap();
        for (f, k) in [(0.7, 2.0), (-1.3, 0.5), (2.0, 3.0)] {
            let r = partial_legendre(
                &sys,
                &DVector::from_vec(vec![f]),
                &DVector::from_vec(vec![k]),
                &DVector::from_vec(vec![0.1]),
            )
            .unwrap();
            // H*(F, k) = −F²/(2k)
            assert_relative_eq!(r.value, -f * f / (2.0 * k), epsilon = 1e-10);
            assert_relative_eq!(r.x1_solved[0], f / k, epsilon = 1e-9);
        }
    }

    #[test]
    fn force_output_is_hookes_law() {
        let sys = adjustable_spring(SpringParams::default()).unwrap();
        let (y1, y2) = sys.outputs(&DVector::from_vec(vec![0.5, 2.0])).unwrap();
        assert_relative_eq!(y1[0], 1.0); // F = kq
        assert_relative_eq!(y2[0], 0.125); // y = q²/2
    }
}

//! Numerical partial Legendre transform.
//!
//! For `H(x₁, x₂)` with invertible block Hessian `H₁₁ = ∂²H/∂x₁²`, the
//! transform with respect to `x₁` is
//!
//! ```text
//! H₁*(e₁, x₂) = H(x₁, x₂) − e₁ᵀx₁,   where  e₁ = ∂H/∂x₁(x₁, x₂),
//! ```
//!
//! with `x₁` eliminated through the stationarity equation.  The sign
//! convention matches the thermodynamic potentials (Helmholtz free energy is
//! the transform of internal energy with respect to entropy), not the
//! opposite mechanics/convex-analysis convention.  The transform here is the
//! local one: any root of the stationarity equation is accepted, no convex
//! conjugacy is attempted.
//!
//! Well-known differential identities, both checkable numerically:
//!
//! ```text
//! ∂H₁*/∂e₁ = −x₁        ∂H₁*/∂x₂ = ∂H/∂x₂
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::system::{PortHamiltonianSystem, State};

/// Condition-number threshold distinguishing exact degeneracy (e.g. a
/// Hamiltonian homogeneous of degree one in the eliminated variable) from
/// mere ill-conditioning.
pub const SINGULARITY_COND: f64 = 1e12;

/// Absolute Newton tolerance on `‖∂H/∂x₁ − e₁‖`.
pub const NEWTON_TOL: f64 = 1e-10;

/// Newton iteration cap.
pub const NEWTON_MAX_ITERS: usize = 100;

/// Result of one partial Legendre transform.
#[derive(Debug, Clone)]
pub struct LegendreResult {
    pub e1: DVector<f64>,
    pub x2: DVector<f64>,
    /// Solution of `∂H/∂x₁(x₁, x₂) = e₁`.
    pub x1_solved: DVector<f64>,
    /// `H₁*(e₁, x₂)` in joules.
    pub value: f64,
    pub newton_iterations: usize,
    /// Final `‖∂H/∂x₁ − e₁‖`.
    pub residual: f64,
}

/// Damped Newton with Armijo backtracking on the squared residual.
/// `grad` returns the residual r(z), `jac` its Jacobian.
pub(crate) fn damped_newton<G, J>(
    z0: &DVector<f64>,
    grad: G,
    jac: J,
    tol: f64,
    max_iters: usize,
) -> Result<(DVector<f64>, usize, f64)>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut z = z0.clone();
    let mut r = grad(&z);
    let mut rn = r.norm();
    for iter in 0..max_iters {
        if rn <= tol {
            return Ok((z, iter, rn));
        }
        if !rn.is_finite() {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: rn,
            });
        }
        let j = jac(&z);
        let cond = condition_number(&j);
        if !(cond < SINGULARITY_COND) {
            return Err(Error::SingularHessian { cond });
        }
        let step = j
            .clone()
            .lu()
            .solve(&r)
            .ok_or(Error::SingularHessian { cond })?;
        // Armijo on φ = ‖r‖²; the Newton direction gives ∇φᵀd = −2φ.
        let phi = rn * rn;
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-12 {
            let trial = &z - t * &step;
            let rt = grad(&trial);
            let pt = rt.norm_squared();
            if pt.is_finite() && pt <= phi * (1.0 - 1e-4 * t) {
                z = trial;
                r = rt;
                rn = pt.sqrt();
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: iter + 1,
                residual: rn,
            });
        }
    }
    if rn <= tol {
        return Ok((z, max_iters, rn));
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: rn,
    })
}

pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

fn assemble(x1: &DVector<f64>, x2: &DVector<f64>) -> State {
    let mut x = DVector::zeros(x1.len() + x2.len());
    x.rows_mut(0, x1.len()).copy_from(x1);
    x.rows_mut(x1.len(), x2.len()).copy_from(x2);
    x
}

/// Solve `∂H/∂x₁(x₁, x₂) = e₁` for `x₁` and return the transform value.
///
/// Fails with [`Error::SingularHessian`] when the condition number of `H₁₁`
/// exceeds [`SINGULARITY_COND`] along the Newton path (the full-rank
/// hypothesis of the blockwise form fails at this point), or with
/// [`Error::NoConvergence`] after [`NEWTON_MAX_ITERS`] iterations.
pub fn partial_legendre(
    sys: &PortHamiltonianSystem,
    e1: &DVector<f64>,
    x2: &DVector<f64>,
    x1_guess: &DVector<f64>,
) -> Result<LegendreResult> {
    let p = sys.partition();
    if e1.len() != p.n1 || x2.len() != p.n2 || x1_guess.len() != p.n1 {
        return Err(Error::DimensionMismatch {
            context: "partial_legendre",
            expected: p.n1,
            actual: e1.len(),
        });
    }
    let residual = |x1: &DVector<f64>| -> DVector<f64> {
        let x = assemble(x1, x2);
        sys.gradient(&x).rows(0, p.n1).into_owned() - e1
    };
    let block_hessian = |x1: &DVector<f64>| -> DMatrix<f64> {
        let x = assemble(x1, x2);
        sys.hessian(&x).view((0, 0), (p.n1, p.n1)).into_owned()
    };
    let tol = NEWTON_TOL * sys.tolerance_scale();
    let (x1, iters, rn) = damped_newton(x1_guess, residual, block_hessian, tol, NEWTON_MAX_ITERS)?;
    let x = assemble(&x1, x2);
    let value = sys.hamiltonian(&x) - e1.dot(&x1);
    Ok(LegendreResult {
        e1: e1.clone(),
        x2: x2.clone(),
        x1_solved: x1,
        value,
        newton_iterations: iters,
        residual: rn,
    })
}

/// Transform with the caller's guess defaulting to the nominal-state block.
pub fn partial_legendre_nominal(
    sys: &PortHamiltonianSystem,
    e1: &DVector<f64>,
    x2: &DVector<f64>,
) -> Result<LegendreResult> {
    let n1 = sys.partition().n1;
    let guess = sys.nominal_state().rows(0, n1).into_owned();
    partial_legendre(sys, e1, x2, &guess)
}

/// Residuals of the two differential identities, from central finite
/// differences on the numerically computed transform (re-solving the Newton
/// problem at every perturbed argument).
#[derive(Debug, Clone)]
pub struct IdentityReport {
    /// max rel. error of `∂H₁*/∂e₁ + x₁`.
    pub conjugate_residual: f64,
    /// max rel. error of `∂H₁*/∂x₂ − ∂H/∂x₂`.
    pub passive_residual: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        self.conjugate_residual.max(self.passive_residual)
    }
}

/// Check `∂H₁*/∂e₁ = −x₁` and `∂H₁*/∂x₂ = ∂H/∂x₂` at `(e₁, x₂)`.
pub fn verify_legendre_identities(
    sys: &PortHamiltonianSystem,
    e1: &DVector<f64>,
    x2: &DVector<f64>,
    x1_guess: &DVector<f64>,
) -> Result<IdentityReport> {
    let base = partial_legendre(sys, e1, x2, x1_guess)?;
    let p = sys.partition();

    let transform_at = |e1p: &DVector<f64>, x2p: &DVector<f64>| -> Result<f64> {
        Ok(partial_legendre(sys, e1p, x2p, &base.x1_solved)?.value)
    };

    let mut conj: f64 = 0.0;
    for i in 0..p.n1 {
        let h = f64::EPSILON.cbrt() * e1[i].abs().max(1.0);
        let mut ep = e1.clone();
        let mut em = e1.clone();
        ep[i] += h;
        em[i] -= h;
        let d = (transform_at(&ep, x2)? - transform_at(&em, x2)?) / (2.0 * h);
        let expect = -base.x1_solved[i];
        conj = conj.max((d - expect).abs() / expect.abs().max(1.0));
    }

    let full_grad = sys.gradient(&assemble(&base.x1_solved, x2));
    let mut pass: f64 = 0.0;
    for i in 0..p.n2 {
        let h = f64::EPSILON.cbrt() * x2[i].abs().max(1.0);
        let mut xp = x2.clone();
        let mut xm = x2.clone();
        xp[i] += h;
        xm[i] -= h;
        let d = (transform_at(e1, &xp)? - transform_at(e1, &xm)?) / (2.0 * h);
        let expect = full_grad[p.n1 + i];
        pass = pass.max((d - expect).abs() / expect.abs().max(1.0));
    }

    Ok(IdentityReport {
        conjugate_residual: conj,
        passive_residual: pass,
    })
}

/// Apply the transform twice (same sign convention both times) and return
/// the recovered value, which must equal `H(x₁, x₂)` up to solver error.
///
/// The second transform treats the numerically computed `H₁*(·, x₂)` as a
/// scalar field of `e₁` with finite-difference derivatives, so the recovery
/// exercises the whole numerical path rather than an algebraic shortcut.
pub fn double_transform(
    sys: &PortHamiltonianSystem,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
) -> Result<f64> {
    let p = sys.partition();
    let x = assemble(x1, x2);
    let e1 = sys.gradient_checked(&x)?.rows(0, p.n1).into_owned();
    let inner = partial_legendre(sys, &e1, x2, x1)?;

    let outer_field = |v: &DVector<f64>| -> Result<f64> {
        Ok(partial_legendre(sys, v, x2, &inner.x1_solved)?.value)
    };
    let outer_grad = |v: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(p.n1);
        for i in 0..p.n1 {
            let h = f64::EPSILON.cbrt() * v[i].abs().max(1.0);
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[i] += h;
            vm[i] -= h;
            g[i] = match (outer_field(&vp), outer_field(&vm)) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
                _ => f64::NAN,
            };
        }
        g
    };
    let target = -x1; // conjugate variable of the outer transform
    let res = |v: &DVector<f64>| outer_grad(v) - &target;
    let jac = |v: &DVector<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(p.n1, p.n1);
        for i in 0..p.n1 {
            let h = f64::EPSILON.powf(0.25) * v[i].abs().max(1.0);
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[i] += h;
            vm[i] -= h;
            let col = (outer_grad(&vp) - outer_grad(&vm)) / (2.0 * h);
            j.set_column(i, &col);
        }
        j
    };
    // FD derivatives of a Newton-computed field carry ~1e-8 noise; tighter
    // tolerances stall the line search without improving the answer.
    let (v, _, _) = damped_newton(&e1, res, jac, 1e-7 * sys.tolerance_scale(), 50)?;
    let inner_value = outer_field(&v)?;
    Ok(inner_value - target.dot(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{BlockMatrix, PortHamiltonianSystem, StatePartition};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn scalar_quadratic() -> PortHamiltonianSystem {
        // H = x1²/2 + x2²/2
        PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
            .gradient(|x| x.clone())
            .hessian(|x| DMatrix::identity(x.len(), x.len()))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .build()
            .unwrap()
    }

    #[test]
    fn quadratic_transform_matches_hand_value() {
        let sys = scalar_quadratic();
        let r = partial_legendre(
            &sys,
            &DVector::from_vec(vec![2.0]),
            &DVector::from_vec(vec![3.0]),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_relative_eq!(r.x1_solved[0], 2.0, epsilon = 1e-10);
        // H(2,3) − 2·2 = 6.5 − 4 = 2.5
        assert_relative_eq!(r.value, 2.5, epsilon = 1e-10);
        assert!(r.residual <= NEWTON_TOL);
    }

    #[test]
    fn quadratic_identities_tight() {
        let sys = scalar_quadratic();
        let rep = verify_legendre_identities(
            &sys,
            &DVector::from_vec(vec![2.0]),
            &DVector::from_vec(vec![3.0]),
            &DVector::zeros(1),
        )
        .unwrap();
        assert!(rep.conjugate_residual <= 1e-8, "{rep:?}");
        assert!(rep.passive_residual <= 1e-8, "{rep:?}");
    }

    #[test]
    fn quadratic_double_transform_recovers_h() {
        let sys = scalar_quadratic();
        let v = double_transform(
            &sys,
            &DVector::from_vec(vec![2.0]),
            &DVector::from_vec(vec![3.0]),
        )
        .unwrap();
        assert_relative_eq!(v, 6.5, max_relative = 1e-8);
    }

    #[test]
    fn degenerate_block_raises_singular_hessian() {
        // H homogeneous of degree one in x1: ∂²H/∂x1² = 0
        let sys = PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| 0.5 * x[0] * x[1] * x[1])
            .gradient(|x| DVector::from_vec(vec![0.5 * x[1] * x[1], x[0] * x[1]]))
            .hessian(|x| DMatrix::from_row_slice(2, 2, &[0.0, x[1], x[1], x[0]]))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .build()
            .unwrap();
        let err = partial_legendre(
            &sys,
            &DVector::from_vec(vec![0.3]),
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularHessian { .. }), "{err:?}");
    }

    #[test]
    fn newton_reports_iterations() {
        // quartic well: a few damped steps needed from a far guess
        let sys = PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| 0.25 * x[0].powi(4) + 0.5 * x[1] * x[1])
            .gradient(|x| DVector::from_vec(vec![x[0].powi(3), x[1]]))
            .hessian(|x| DMatrix::from_row_slice(2, 2, &[3.0 * x[0] * x[0], 0.0, 0.0, 1.0]))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .build()
            .unwrap();
        let r = partial_legendre(
            &sys,
            &DVector::from_vec(vec![8.0]),
            &DVector::from_vec(vec![0.0]),
            &DVector::from_vec(vec![5.0]),
        )
        .unwrap();
        assert_relative_eq!(r.x1_solved[0], 2.0, epsilon = 1e-8);
        assert!(r.newton_iterations > 1);
    }
}

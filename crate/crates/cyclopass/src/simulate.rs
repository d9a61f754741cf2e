//! Time integration of port-Hamiltonian dynamics.
//!
//! Three modes:
//!
//! * [`integrate`] — free dynamics under a given input signal,
//! * [`constrained_simulate_y1`] — the first port output held at a constant
//!   set-point `ȳ₁` ("isothermal" mode): the exact feedback law derived from
//!   `d/dt e₁ = H₁₁ẋ₁ + H₁₂ẋ₂ = 0` reconstructs `u₁` so that `e₁ ≡ ē₁`,
//! * [`constrained_simulate_x1`] — the first state block held at `x̄₁`
//!   ("isentropic" mode): `u₁` cancels `ẋ₁` exactly.
//!
//! The vector field only describes *what* the dynamics do when `y₁` is held
//! constant; which physical controller supplies `u₁` is outside the model,
//! the feedback law is one realization of the constraint.
//!
//! Integration is classical fixed-step RK4 by default; an embedded
//! Dormand–Prince 5(4) pair with PI-free step control is available through
//! [`Method::Adaptive`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::legendre::{self, condition_number};
use crate::signal::Signal;
use crate::structure::StorageCertificate;
use crate::system::{InputMap, PortHamiltonianSystem, State};
use crate::trajectory::{SupplySample, Trajectory};

/// Tolerance for the initial-condition constraint residual before the
/// Newton projection kicks in, and for the drift alarm along the run.
pub const CONSTRAINT_PROJECTION_TOL: f64 = 1e-8;
pub const DRIFT_ALARM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FixedRk4,
    Adaptive,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Fixed step size; `None` means `1e-3 ·` span.
    pub step: Option<f64>,
    /// Adaptive absolute/relative tolerances.
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: Method::FixedRk4,
            step: None,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
        }
    }
}

impl IntegratorOptions {
    pub fn with_step(step: f64) -> Self {
        Self {
            step: Some(step),
            ..Self::default()
        }
    }

    fn fixed_step(&self, span: f64) -> f64 {
        self.step.unwrap_or(1e-3 * span)
    }
}

/// What one recorded sample carries beyond the raw state.
struct SamplePoint {
    u1: DVector<f64>,
    u2: DVector<f64>,
    y1: DVector<f64>,
    y2: DVector<f64>,
    h_star: Option<f64>,
}

/// Drive `dx/dt = f(t, x)` over `t_span`, recording a sample at `t0` and
/// after every accepted step.
fn drive<F, R>(
    sys: &PortHamiltonianSystem,
    x0: &State,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
    f: F,
    record: R,
) -> Result<Trajectory>
where
    F: Fn(f64, &State) -> Result<State>,
    R: Fn(f64, &State) -> Result<SamplePoint>,
{
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(
            "time span must have positive length".into(),
        ));
    }
    let span = t1 - t0;
    let mut traj = Trajectory::with_capacity(1024);
    let mut push = |t: f64, x: &State| -> Result<()> {
        let p = record(t, x)?;
        let s1 = p.y1.dot(&p.u1);
        let s2 = p.y2.dot(&p.u2);
        let h = sys.hamiltonian(x);
        traj.push(
            t,
            x.clone(),
            (p.u1, p.u2),
            (p.y1, p.y2),
            SupplySample {
                t,
                s1,
                s2,
                h,
                h_star: p.h_star,
            },
        );
        Ok(())
    };

    let mut x = x0.clone();
    let mut t = t0;
    push(t, &x)?;

    match opts.method {
        Method::FixedRk4 => {
            let dt = opts.fixed_step(span);
            let steps = (span / dt).round().max(1.0) as usize;
            let dt = span / steps as f64;
            for k in 0..steps {
                x = rk4_step(&f, t, &x, dt)?;
                t = t0 + (k + 1) as f64 * dt;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::StepFailure { t });
                }
                push(t, &x)?;
            }
        }
        Method::Adaptive => {
            let mut dt = opts.fixed_step(span).min(span);
            while t < t1 - 1e-14 * span {
                dt = dt.min(t1 - t);
                match dopri_step(&f, t, &x, dt, opts.abs_tol, opts.rel_tol) {
                    Ok((xn, err_ratio)) => {
                        if err_ratio <= 1.0 {
                            t += dt;
                            x = xn;
                            if x.iter().any(|v| !v.is_finite()) {
                                return Err(Error::StepFailure { t });
                            }
                            push(t, &x)?;
                        }
                        let factor = if err_ratio > 0.0 {
                            (0.9 * err_ratio.powf(-0.2)).clamp(0.2, 5.0)
                        } else {
                            5.0
                        };
                        dt *= factor;
                    }
                    Err(_) => {
                        // stage blew up; retry smaller
                        dt *= 0.5;
                    }
                }
                if dt < 1e-12 {
                    return Err(Error::TooStiff { t, dt });
                }
            }
        }
    }
    Ok(traj)
}

fn rk4_step<F>(f: &F, t: f64, x: &State, dt: f64) -> Result<State>
where
    F: Fn(f64, &State) -> Result<State>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * dt, &(x + 0.5 * dt * &k1))?;
    let k3 = f(t + 0.5 * dt, &(x + 0.5 * dt * &k2))?;
    let k4 = f(t + dt, &(x + dt * &k3))?;
    Ok(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// One Dormand–Prince 5(4) trial step; returns the 5th-order state and the
/// scaled error ratio (≤ 1 means accept).
fn dopri_step<F>(
    f: &F,
    t: f64,
    x: &State,
    dt: f64,
    atol: f64,
    rtol: f64,
) -> Result<(State, f64)>
where
    F: Fn(f64, &State) -> Result<State>,
{
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [&[f64]; 6] = [
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
        ],
        &[
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut k: Vec<State> = Vec::with_capacity(7);
    k.push(f(t, x)?);
    for s in 0..6 {
        let mut xs = x.clone();
        for (j, aj) in A[s].iter().enumerate() {
            xs += dt * *aj * &k[j];
        }
        k.push(f(t + C[s] * dt, &xs)?);
    }
    let mut x5 = x.clone();
    let mut x4 = x.clone();
    for j in 0..7 {
        if B5[j] != 0.0 {
            x5 += dt * B5[j] * &k[j];
        }
        if B4[j] != 0.0 {
            x4 += dt * B4[j] * &k[j];
        }
    }
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sc = atol + rtol * x5[i].abs().max(x[i].abs());
        let e = (x5[i] - x4[i]) / sc;
        acc += e * e;
    }
    let ratio = (acc / n as f64).sqrt();
    if !ratio.is_finite() {
        return Err(Error::StepFailure { t });
    }
    Ok((x5, ratio))
}

fn split_u(u: &DVector<f64>, m1: usize, m2: usize) -> (DVector<f64>, DVector<f64>) {
    (u.rows(0, m1).into_owned(), u.rows(m1, m2).into_owned())
}

/// Free simulation under the stacked input signal `u(t) = (u₁, u₂)`.
pub fn integrate(
    sys: &PortHamiltonianSystem,
    x0: &State,
    u: &Signal,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let p = sys.partition();
    if u.dim() != p.m() {
        return Err(Error::DimensionMismatch {
            context: "integrate input signal",
            expected: p.m(),
            actual: u.dim(),
        });
    }
    let f = |t: f64, x: &State| -> Result<State> {
        sys.dynamics(x, &u.eval(t)).map_err(|e| match e {
            Error::NonFinite { .. } => Error::StepFailure { t },
            other => other,
        })
    };
    let record = |t: f64, x: &State| -> Result<SamplePoint> {
        let (y1, y2) = sys.outputs(x)?;
        let (u1, u2) = split_u(&u.eval(t), p.m1, p.m2);
        Ok(SamplePoint {
            u1,
            u2,
            y1,
            y2,
            h_star: None,
        })
    };
    drive(sys, x0, t_span, opts, f, record)
}

struct ConstrainedY1<'a> {
    sys: &'a PortHamiltonianSystem,
    e1_bar: DVector<f64>,
    g1_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> ConstrainedY1<'a> {
    fn new(sys: &'a PortHamiltonianSystem, e1_bar: DVector<f64>) -> Result<Self> {
        let p = sys.partition();
        if p.m1 != p.n1 {
            return Err(Error::Unsupported(format!(
                "constant-y1 mode needs a square G1 (n1 = {}, m1 = {})",
                p.n1, p.m1
            )));
        }
        let g1 = sys
            .g1_constant()
            .ok_or_else(|| Error::Unsupported("constant-y1 mode needs a constant G1".into()))?
            .clone();
        let g1_lu = g1.lu();
        Ok(Self { sys, e1_bar, g1_lu })
    }

    /// `(ẋ, u₁)` under the exact constraint law; the full `J(x)e` row blocks
    /// are used so the law also applies formally to systems with coupled
    /// interconnection (the certified case reduces to the blockwise
    /// formulas).
    fn rhs(&self, x: &State, u2: &DVector<f64>) -> Result<(State, DVector<f64>)> {
        let sys = self.sys;
        let p = sys.partition();
        let (n1, n2) = (p.n1, p.n2);
        let e = sys.gradient_checked(x)?;
        let hess = sys.hessian(x);
        let h11 = hess.view((0, 0), (n1, n1)).into_owned();
        let h12 = hess.view((0, n1), (n1, n2)).into_owned();
        let je = sys.j_matrix(x) * &e;
        let diss = sys.dissipation(x, &e);

        let g2 = match sys.input_map() {
            InputMap::Partitioned { g2, .. } => g2.eval(x),
            InputMap::General(_) => {
                return Err(Error::Unsupported(
                    "constrained modes need a partitioned input map".into(),
                ))
            }
        };

        let dx2 = je.rows(n1, n2) - diss.rows(n1, n2) + &g2 * u2;
        let h11_lu = h11.clone().lu();
        let dx1 = h11_lu
            .solve(&(-(&h12 * &dx2)))
            .ok_or_else(|| Error::SingularHessian {
                cond: condition_number(&h11),
            })?;
        let u1 = self
            .g1_lu
            .solve(&(&dx1 - je.rows(0, n1) + diss.rows(0, n1)))
            .ok_or(Error::SingularHessian { cond: f64::INFINITY })?;

        let mut dx = DVector::zeros(n1 + n2);
        dx.rows_mut(0, n1).copy_from(&dx1);
        dx.rows_mut(n1, n2).copy_from(&dx2);
        Ok((dx, u1))
    }
}

/// Project `x₁` so that `∂H/∂x₁(x₁, x₂) = ē₁`, keeping `x₂` fixed.
pub fn project_to_constraint(
    sys: &PortHamiltonianSystem,
    e1_bar: &DVector<f64>,
    x0: &State,
) -> Result<State> {
    let p = sys.partition();
    let x1 = x0.rows(0, p.n1).into_owned();
    let x2 = x0.rows(p.n1, p.n2).into_owned();
    let e1_now = sys.gradient_checked(x0)?.rows(0, p.n1).into_owned();
    let tol = CONSTRAINT_PROJECTION_TOL * sys.tolerance_scale();
    if (&e1_now - e1_bar).norm() <= tol {
        return Ok(x0.clone());
    }
    let solved = legendre::partial_legendre(sys, e1_bar, &x2, &x1)?;
    let mut x = x0.clone();
    x.rows_mut(0, p.n1).copy_from(&solved.x1_solved);
    Ok(x)
}

fn constrained_y1_run(
    sys: &PortHamiltonianSystem,
    e1_bar: &DVector<f64>,
    y1_bar: &DVector<f64>,
    u2: &Signal,
    x0: &State,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let p = sys.partition();
    if u2.dim() != p.m2 {
        return Err(Error::DimensionMismatch {
            context: "constrained input signal",
            expected: p.m2,
            actual: u2.dim(),
        });
    }
    let law = ConstrainedY1::new(sys, e1_bar.clone())?;
    let x_start = project_to_constraint(sys, e1_bar, x0)?;
    let drift_tol = DRIFT_ALARM_TOL * sys.tolerance_scale();

    let f = |t: f64, x: &State| -> Result<State> {
        law.rhs(x, &u2.eval(t)).map(|(dx, _)| dx).map_err(|e| match e {
            Error::NonFinite { .. } => Error::StepFailure { t },
            other => other,
        })
    };
    let record = |t: f64, x: &State| -> Result<SamplePoint> {
        let (y1, y2) = sys.outputs(x)?;
        let drift = (&y1 - y1_bar).amax();
        if drift > drift_tol {
            return Err(Error::DriftAlarm { t, drift });
        }
        let u2_now = u2.eval(t);
        let (_, u1) = law.rhs(x, &u2_now)?;
        // On the constraint manifold e₁ ≡ ē₁, so the transform value needs
        // no Newton solve: H₁*(ē₁, x₂) = H(x) − ē₁ᵀx₁.
        let h_star = sys.hamiltonian(x) - e1_bar.dot(&x.rows(0, p.n1).into_owned());
        Ok(SamplePoint {
            u1,
            u2: u2_now,
            y1,
            y2,
            h_star: Some(h_star),
        })
    };
    drive(sys, &x_start, t_span, opts, f, record)
}

/// Constant-`y₁` simulation on a certified system.  Records the storage
/// samples `H₁*(ē₁, x₂(t))` and the reconstructed `u₁`.
pub fn constrained_simulate_y1(
    sys: &PortHamiltonianSystem,
    cert: &StorageCertificate,
    y1_bar: &DVector<f64>,
    u2: &Signal,
    x0: &State,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if !cert.verdict.is_certified() {
        return Err(Error::Unsupported(
            "constrained_simulate_y1 requires a certified system".into(),
        ));
    }
    let e1_bar = cert.e1_from_y1(y1_bar)?;
    constrained_y1_run(sys, &e1_bar, y1_bar, u2, x0, t_span, opts)
}

/// Constant-`y₁` simulation applied formally (no certificate): the same
/// feedback law, valid wherever `H₁₁` stays invertible.  Counterexample
/// searches on structurally failing systems use this entry point.
pub fn constrained_simulate_y1_formal(
    sys: &PortHamiltonianSystem,
    y1_bar: &DVector<f64>,
    u2: &Signal,
    x0: &State,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let g1 = sys
        .g1_constant()
        .ok_or_else(|| Error::Unsupported("constant-y1 mode needs a constant G1".into()))?;
    let e1_bar = g1
        .transpose()
        .lu()
        .solve(y1_bar)
        .ok_or(Error::SingularHessian { cond: f64::INFINITY })?;
    constrained_y1_run(sys, &e1_bar, y1_bar, u2, x0, t_span, opts)
}

/// Constant-`x₁` simulation: `u₁ = G₁(x)⁻¹(𝓡₁ − [J(x)e]₁)` cancels `ẋ₁`.
/// `G₁` may be state-dependent here; it must stay square and invertible
/// along the run.  The trajectory records `H(x̄₁, x₂(t))` (equal to `H(x(t))`
/// since `x₁` is pinned) as the storage sample.
pub fn constrained_simulate_x1(
    sys: &PortHamiltonianSystem,
    x1_bar: &DVector<f64>,
    u2: &Signal,
    x0: &State,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let p = sys.partition();
    if p.m1 != p.n1 {
        return Err(Error::Unsupported(format!(
            "constant-x1 mode needs a square G1 (n1 = {}, m1 = {})",
            p.n1, p.m1
        )));
    }
    if u2.dim() != p.m2 {
        return Err(Error::DimensionMismatch {
            context: "constrained input signal",
            expected: p.m2,
            actual: u2.dim(),
        });
    }
    let mut x_start = x0.clone();
    x_start.rows_mut(0, p.n1).copy_from(x1_bar);

    let pieces = |x: &State| -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let e = sys.gradient_checked(x)?;
        let je = sys.j_matrix(x) * &e;
        let diss = sys.dissipation(x, &e);
        let (g1, g2) = match sys.input_map() {
            InputMap::Partitioned { g1, g2 } => (g1.eval(x), g2.eval(x)),
            InputMap::General(_) => {
                return Err(Error::Unsupported(
                    "constrained modes need a partitioned input map".into(),
                ))
            }
        };
        Ok((je, diss, g1, g2))
    };
    let u1_of = |x: &State,
                 je: &DVector<f64>,
                 diss: &DVector<f64>,
                 g1: &DMatrix<f64>|
     -> Result<DVector<f64>> {
        let _ = x;
        g1.clone()
            .lu()
            .solve(&(diss.rows(0, p.n1) - je.rows(0, p.n1)))
            .ok_or(Error::SingularHessian { cond: f64::INFINITY })
    };

    let f = |t: f64, x: &State| -> Result<State> {
        let (je, diss, _g1, g2) = pieces(x).map_err(|e| match e {
            Error::NonFinite { .. } => Error::StepFailure { t },
            other => other,
        })?;
        let dx2 = je.rows(p.n1, p.n2) - diss.rows(p.n1, p.n2) + g2 * u2.eval(t);
        let mut dx = DVector::zeros(p.n());
        dx.rows_mut(p.n1, p.n2).copy_from(&dx2);
        Ok(dx)
    };
    let record = |t: f64, x: &State| -> Result<SamplePoint> {
        let (y1, y2) = sys.outputs(x)?;
        let (je, diss, g1, _) = pieces(x)?;
        let u1 = u1_of(x, &je, &diss, &g1)?;
        Ok(SamplePoint {
            u1,
            u2: u2.eval(t),
            y1,
            y2,
            h_star: Some(sys.hamiltonian(x)),
        })
    };
    drive(sys, &x_start, t_span, opts, f, record)
}

/// How a candidate cycle is simulated.
#[derive(Debug, Clone)]
pub enum CycleMode {
    /// Free dynamics; the signal is the stacked `(u₁, u₂)` input.
    Unconstrained,
    /// Constant first output (formal feedback law); signal drives port 2.
    HoldY1(DVector<f64>),
    /// Constant first state block; signal drives port 2.
    HoldX1(DVector<f64>),
}

/// A candidate periodic process.
#[derive(Debug, Clone)]
pub struct CycleSpec {
    pub mode: CycleMode,
    pub period: f64,
    /// Stacked input for [`CycleMode::Unconstrained`], port-2 input for the
    /// constrained modes.
    pub inputs: Signal,
    pub x0: State,
    /// Polish the initial state with a damped Newton solve of the
    /// period-map fixed point before the recorded run.
    pub newton_closure: bool,
    /// Components counted in the closure defect (`None` = all).  Constraint
    /// modes that command a drifting coordinate mask it out explicitly.
    pub closure_mask: Option<Vec<bool>>,
    pub opts: IntegratorOptions,
}

#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub trajectory: Trajectory,
    /// `‖x(T) − x(0)‖` over the masked components.
    pub closure_defect: f64,
}

fn simulate_cycle_once(sys: &PortHamiltonianSystem, spec: &CycleSpec, x0: &State) -> Result<Trajectory> {
    let span = (0.0, spec.period);
    match &spec.mode {
        CycleMode::Unconstrained => integrate(sys, x0, &spec.inputs, span, &spec.opts),
        CycleMode::HoldY1(y1) => {
            constrained_simulate_y1_formal(sys, y1, &spec.inputs, x0, span, &spec.opts)
        }
        CycleMode::HoldX1(x1) => {
            constrained_simulate_x1(sys, x1, &spec.inputs, x0, span, &spec.opts)
        }
    }
}

/// Indices of initial-state components the closure Newton may adjust.
fn free_indices(sys: &PortHamiltonianSystem, spec: &CycleSpec) -> Vec<usize> {
    let p = sys.partition();
    let all: Vec<usize> = match &spec.mode {
        // x1 is slaved to the constraint (projected), only x2 is free
        CycleMode::HoldY1(_) | CycleMode::HoldX1(_) => (p.n1..p.n()).collect(),
        CycleMode::Unconstrained => (0..p.n()).collect(),
    };
    all.into_iter()
        .filter(|&i| spec.closure_mask.as_ref().map(|m| m[i]).unwrap_or(true))
        .collect()
}

/// Simulate one period of a periodic input family and report the closure
/// defect.  With `newton_closure`, the initial state is first refined by a
/// damped Newton solve of `x(T; z) = z` over the free components
/// (finite-difference Jacobian); systems whose period map has no isolated
/// fixed point (pure integrators under a nonzero mean input) simply keep
/// the unrefined start.
pub fn close_cycle(sys: &PortHamiltonianSystem, spec: &CycleSpec) -> Result<CycleOutcome> {
    let free = free_indices(sys, spec);
    let mut x0 = spec.x0.clone();

    if spec.newton_closure && !free.is_empty() {
        let map_defect = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let mut xs = spec.x0.clone();
            for (k, &i) in free.iter().enumerate() {
                xs[i] = z[k];
            }
            let traj = simulate_cycle_once(sys, spec, &xs)?;
            let xf = traj.final_state();
            Ok(DVector::from_fn(free.len(), |k, _| xf[free[k]] - z[k]))
        };
        let mut z = DVector::from_fn(free.len(), |k, _| spec.x0[free[k]]);
        'newton: for _ in 0..12 {
            let r = match map_defect(&z) {
                Ok(r) => r,
                Err(_) => break 'newton,
            };
            if r.norm() <= 1e-11 {
                break 'newton;
            }
            // FD Jacobian of the defect
            let m = free.len();
            let mut jac = DMatrix::zeros(m, m);
            for k in 0..m {
                let h = 1e-6 * z[k].abs().max(1.0);
                let mut zp = z.clone();
                zp[k] += h;
                let rp = match map_defect(&zp) {
                    Ok(rp) => rp,
                    Err(_) => break 'newton,
                };
                jac.set_column(k, &((rp - &r) / h));
            }
            match jac.lu().solve(&r) {
                Some(step) if step.iter().all(|v| v.is_finite()) => {
                    z -= step;
                }
                _ => break 'newton, // singular period map: no fixed point to find
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x0[i] = z[k];
        }
    }

    let trajectory = simulate_cycle_once(sys, spec, &x0)?;
    let closure_defect = trajectory.closure_defect(spec.closure_mask.as_deref());
    Ok(CycleOutcome {
        trajectory,
        closure_defect,
    })
}

/// Pointwise port-2 storage-rate margins along a trajectory.
///
/// For every sample, recomputes `ẋ` from the recorded inputs and returns
/// `storage_rate = e₂ᵀẋ₂` (the analytic `d/dt H₁*` in constant-`y₁` mode and
/// `d/dt H(x̄₁, x₂)` in constant-`x₁` mode), the recorded port-2 supply, and
/// the dissipated power `e₂ᵀ𝓡₂`.  The blockwise form guarantees
/// `storage_rate = s₂ − dissipated ≤ s₂`.
#[derive(Debug, Clone, Copy)]
pub struct PointwiseMargin {
    pub t: f64,
    pub storage_rate: f64,
    pub s2: f64,
    pub dissipated: f64,
}

pub fn port2_storage_margins(
    sys: &PortHamiltonianSystem,
    traj: &Trajectory,
) -> Result<Vec<PointwiseMargin>> {
    let p = sys.partition();
    let mut out = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let x = &traj.states[k];
        let (u1, u2) = &traj.inputs[k];
        let mut u = DVector::zeros(p.m());
        u.rows_mut(0, p.m1).copy_from(u1);
        u.rows_mut(p.m1, p.m2).copy_from(u2);
        let dx = sys.dynamics(x, &u)?;
        let e = sys.gradient(x);
        let e2 = e.rows(p.n1, p.n2);
        let rate = e2.dot(&dx.rows(p.n1, p.n2));
        let diss = sys.dissipation(x, &e);
        let dissipated = e2.dot(&diss.rows(p.n1, p.n2));
        out.push(PointwiseMargin {
            t: traj.times[k],
            storage_rate: rate,
            s2: traj.supplies[k].s2,
            dissipated,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::FourierSignal;
    use crate::system::{BlockMatrix, StatePartition, StructureFlags};
    use approx::assert_relative_eq;

    /// Lossless gyrator: H = x1²/2 + x2²/2, J = [[0,-1],[1,0]]; the flow is
    /// a rotation, solvable in closed form.
    fn rotor() -> PortHamiltonianSystem {
        PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .name("rotor")
            .hamiltonian(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
            .gradient(|x| x.clone())
            .hessian(|x| DMatrix::identity(x.len(), x.len()))
            .j_constant(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .flags(StructureFlags {
                j_block_diagonal: false,
                ..StructureFlags::all_true()
            })
            .build()
            .unwrap()
    }

    #[test]
    fn rk4_matches_rotation() {
        let sys = rotor();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = integrate(
            &sys,
            &x0,
            &Signal::Zero(2),
            (0.0, 1.0),
            &IntegratorOptions::default(),
        )
        .unwrap();
        let xf = traj.final_state();
        assert_relative_eq!(xf[0], 1.0f64.cos(), epsilon = 1e-9);
        assert_relative_eq!(xf[1], 1.0f64.sin(), epsilon = 1e-9);
        // H is conserved along the lossless flow
        let h0 = traj.supplies.first().unwrap().h;
        let h1 = traj.supplies.last().unwrap().h;
        assert_relative_eq!(h0, h1, epsilon = 1e-9);
    }

    #[test]
    fn adaptive_matches_fixed() {
        let sys = rotor();
        let x0 = DVector::from_vec(vec![0.3, -0.4]);
        let opts = IntegratorOptions {
            method: Method::Adaptive,
            ..Default::default()
        };
        let traj = integrate(&sys, &x0, &Signal::Zero(2), (0.0, 2.0), &opts).unwrap();
        let xf = traj.final_state();
        let c = 2.0f64.cos();
        let s = 2.0f64.sin();
        assert_relative_eq!(xf[0], 0.3 * c + 0.4 * s, epsilon = 1e-6);
        assert_relative_eq!(xf[1], 0.3 * s - 0.4 * c, epsilon = 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // pure integrator driven by a smooth signal: global error ~ h^4
        let sys = PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
            .gradient(|x| x.clone())
            .hessian(|x| DMatrix::identity(x.len(), x.len()))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .build()
            .unwrap();
        let u = Signal::Fourier(vec![
            FourierSignal::from_flat(1.0, &[0.0, 0.0, 1.0]),
            FourierSignal::from_flat(1.0, &[0.0, 1.0, 0.0]),
        ]);
        let x0 = DVector::zeros(2);
        let exact = |t: f64| {
            let w = std::f64::consts::TAU;
            DVector::from_vec(vec![(1.0 - (w * t).cos()) / w, (w * t).sin() / w])
        };
        let err = |h: f64| {
            let traj = integrate(
                &sys,
                &x0,
                &u,
                (0.0, 0.7),
                &IntegratorOptions::with_step(h),
            )
            .unwrap();
            (traj.final_state() - exact(0.7)).norm()
        };
        let e1 = err(0.7 / 64.0);
        let e2 = err(0.7 / 128.0);
        let ratio = e1 / e2;
        assert!(
            (10.0..24.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio}"
        );
    }

    #[test]
    fn too_stiff_on_finite_time_blowup() {
        // ẋ₁ = x₁² via J = 0, R(x,e) = -x1²·e-ish trick is contrived; use
        // a Hamiltonian with a pole instead: H = -1/x1 + x2²/2, gradient
        // (1/x1², x2); u1 = 1 drives x1 toward 0 from below.
        let sys = PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| -1.0 / x[0] + 0.5 * x[1] * x[1])
            .gradient(|x| DVector::from_vec(vec![1.0 / (x[0] * x[0]), x[1]]))
            .hessian(|x| {
                DMatrix::from_row_slice(2, 2, &[-2.0 / (x[0] * x[0] * x[0]), 0.0, 0.0, 1.0])
            })
            .j_constant(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .flags(StructureFlags {
                j_block_diagonal: false,
                ..StructureFlags::all_true()
            })
            .build()
            .unwrap();
        let opts = IntegratorOptions {
            method: Method::Adaptive,
            ..Default::default()
        };
        // x1 starts near the pole and is pushed into it
        let err = integrate(
            &sys,
            &DVector::from_vec(vec![0.05, -10.0]),
            &Signal::Constant(DVector::from_vec(vec![-1.0, 0.0])),
            (0.0, 10.0),
            &opts,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::TooStiff { .. } | Error::StepFailure { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn equilibrium_cycle_closes_exactly() {
        let sys = rotor();
        let spec = CycleSpec {
            mode: CycleMode::Unconstrained,
            period: 1.0,
            inputs: Signal::Zero(2),
            x0: DVector::zeros(2),
            newton_closure: false,
            closure_mask: None,
            opts: IntegratorOptions::default(),
        };
        let out = close_cycle(&sys, &spec).unwrap();
        assert_eq!(out.closure_defect, 0.0);
    }
}

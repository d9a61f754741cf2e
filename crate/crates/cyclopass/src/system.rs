//! Two-port port-Hamiltonian system representation and pointwise evaluations.
//!
//! Systems are immutable after construction and cheap to clone (all callable
//! pieces live behind `Arc`), so they can be shared freely across threads.
//! Every evaluation is a pure function of its arguments.
//!
//! Units are SI throughout (states in their natural physical units, energies
//! in joules, port products in watts); nothing enforces this, it is a
//! documentation convention.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type State = DVector<f64>;

type ScalarField = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(&State) -> DVector<f64> + Send + Sync>;
type MatrixField = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;
type DissipationFn = Arc<dyn Fn(&State, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Split of the state into `x₁` (first `n1` components) and `x₂` (the rest),
/// with the first port (width `m1`) acting on the `x₁` block and the second
/// port (width `m2`) on the `x₂` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatePartition {
    pub n1: usize,
    pub n2: usize,
    pub m1: usize,
    pub m2: usize,
}

impl StatePartition {
    pub fn new(n1: usize, n2: usize, m1: usize, m2: usize) -> Self {
        Self { n1, n2, m1, m2 }
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn m(&self) -> usize {
        self.m1 + self.m2
    }

    /// Partition with the two blocks (and ports) exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            n1: self.n2,
            n2: self.n1,
            m1: self.m2,
            m2: self.m1,
        }
    }
}

/// Declared structural metadata for the blockwise form.  Declarations are
/// the source of truth; sampling in the structure checker only corroborates
/// them (a sampled violation of a `true` flag is a hard error).
#[derive(Debug, Clone, Copy)]
pub struct StructureFlags {
    /// Off-diagonal blocks of `J(x)` vanish identically.
    pub j_block_diagonal: bool,
    /// Block 1 of `𝓡(x,e)` depends on `e` only through `e₁`, block 2 only
    /// through `e₂`.
    pub dissipation_blockwise: bool,
    /// The input matrix couples port 1 only to the `x₁` block and port 2
    /// only to the `x₂` block.
    pub g_block_diagonal: bool,
    /// `G₁` is a constant square invertible matrix.
    pub g1_constant_invertible: bool,
    /// `G₂` is a constant square invertible matrix (relevant when the
    /// partition is viewed with the ports exchanged).
    pub g2_constant_invertible: bool,
}

impl StructureFlags {
    pub fn all_true() -> Self {
        Self {
            j_block_diagonal: true,
            dissipation_blockwise: true,
            g_block_diagonal: true,
            g1_constant_invertible: true,
            g2_constant_invertible: true,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            g1_constant_invertible: self.g2_constant_invertible,
            g2_constant_invertible: self.g1_constant_invertible,
            ..*self
        }
    }
}

/// A matrix-valued quantity that is either genuinely constant or a function
/// of the state.  Constancy is structural information the checker can rely
/// on exactly.
#[derive(Clone)]
pub enum BlockMatrix {
    Constant(DMatrix<f64>),
    StateDep(MatrixField),
}

impl BlockMatrix {
    pub fn eval(&self, x: &State) -> DMatrix<f64> {
        match self {
            BlockMatrix::Constant(m) => m.clone(),
            BlockMatrix::StateDep(f) => f(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, BlockMatrix::Constant(_))
    }

    pub fn as_constant(&self) -> Option<&DMatrix<f64>> {
        match self {
            BlockMatrix::Constant(m) => Some(m),
            BlockMatrix::StateDep(_) => None,
        }
    }
}

/// Input structure: either per-block matrices `(G₁, G₂)` or one full `G(x)`.
#[derive(Clone)]
pub enum InputMap {
    Partitioned { g1: BlockMatrix, g2: BlockMatrix },
    General(BlockMatrix),
}

/// Dissipation mapping `𝓡(x,e)`.  The matrix form `𝓡(x,e) = R(x)e` carries
/// more structure (blockwise checks become exact); the callable form is
/// fully general.
#[derive(Clone)]
pub enum DissipationMap {
    None,
    Matrix(BlockMatrix),
    Map(DissipationFn),
}

impl DissipationMap {
    pub fn eval(&self, x: &State, e: &DVector<f64>) -> DVector<f64> {
        match self {
            DissipationMap::None => DVector::zeros(e.len()),
            DissipationMap::Matrix(r) => r.eval(x) * e,
            DissipationMap::Map(f) => f(x, e),
        }
    }

    pub fn matrix(&self) -> Option<&BlockMatrix> {
        match self {
            DissipationMap::Matrix(r) => Some(r),
            _ => None,
        }
    }
}

enum Derivatives {
    /// Closed-form gradient and Hessian supplied at construction.
    ClosedForm {
        gradient: VectorField,
        hessian: MatrixField,
    },
    /// Central finite differences on the Hamiltonian.  Downstream tolerances
    /// are relaxed by [`PortHamiltonianSystem::tolerance_scale`].
    FiniteDifference,
}

/// An input-state-output port-Hamiltonian system without feedthrough, with
/// its state partitioned into two blocks carrying one power port each.
#[derive(Clone)]
pub struct PortHamiltonianSystem {
    name: String,
    partition: StatePartition,
    hamiltonian: ScalarField,
    derivatives: Arc<Derivatives>,
    j_matrix: BlockMatrix,
    dissipation: DissipationMap,
    input_map: InputMap,
    flags: StructureFlags,
    nominal_state: State,
}

impl std::fmt::Debug for PortHamiltonianSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PortHamiltonianSystem")
            .field("name", &self.name)
            .field("partition", &self.partition)
            .finish_non_exhaustive()
    }
}

impl PortHamiltonianSystem {
    pub fn builder(partition: StatePartition) -> SystemBuilder {
        SystemBuilder::new(partition)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    pub fn partition(&self) -> StatePartition {
        self.partition
    }

    pub fn flags(&self) -> StructureFlags {
        self.flags
    }

    pub fn input_map(&self) -> &InputMap {
        &self.input_map
    }

    pub fn dissipation_map(&self) -> &DissipationMap {
        &self.dissipation
    }

    /// A physically meaningful operating point, used as the default center
    /// of sampling domains and as a Newton starting guess.
    pub fn nominal_state(&self) -> &State {
        &self.nominal_state
    }

    /// 1 for closed-form derivatives, 10 when derivatives come from finite
    /// differences (all downstream tolerances are relaxed accordingly).
    pub fn tolerance_scale(&self) -> f64 {
        match *self.derivatives {
            Derivatives::ClosedForm { .. } => 1.0,
            Derivatives::FiniteDifference => 10.0,
        }
    }

    pub fn hamiltonian(&self, x: &State) -> f64 {
        (self.hamiltonian)(x)
    }

    /// `e = ∂H/∂x`.
    pub fn gradient(&self, x: &State) -> DVector<f64> {
        match &*self.derivatives {
            Derivatives::ClosedForm { gradient, .. } => gradient(x),
            Derivatives::FiniteDifference => fd_gradient(&self.hamiltonian, x),
        }
    }

    /// `∂²H/∂x²`, symmetric.
    pub fn hessian(&self, x: &State) -> DMatrix<f64> {
        match &*self.derivatives {
            Derivatives::ClosedForm { hessian, .. } => hessian(x),
            Derivatives::FiniteDifference => fd_hessian(&self.hamiltonian, x),
        }
    }

    pub fn j_matrix(&self, x: &State) -> DMatrix<f64> {
        self.j_matrix.eval(x)
    }

    pub fn j_matrix_map(&self) -> &BlockMatrix {
        &self.j_matrix
    }

    /// `𝓡(x, e)`.
    pub fn dissipation(&self, x: &State, e: &DVector<f64>) -> DVector<f64> {
        self.dissipation.eval(x, e)
    }

    /// Full input matrix `G(x)`, `n × (m1+m2)`, assembled blockwise when the
    /// system is in partitioned form.
    pub fn input_matrix(&self, x: &State) -> DMatrix<f64> {
        let p = self.partition;
        match &self.input_map {
            InputMap::General(g) => g.eval(x),
            InputMap::Partitioned { g1, g2 } => {
                let mut g = DMatrix::zeros(p.n(), p.m());
                g.view_mut((0, 0), (p.n1, p.m1)).copy_from(&g1.eval(x));
                g.view_mut((p.n1, p.m1), (p.n2, p.m2))
                    .copy_from(&g2.eval(x));
                g
            }
        }
    }

    /// Constant `G₁`, when the system declares one.
    pub fn g1_constant(&self) -> Option<&DMatrix<f64>> {
        match &self.input_map {
            InputMap::Partitioned { g1, .. } => g1.as_constant(),
            InputMap::General(_) => None,
        }
    }

    fn check_state_dim(&self, x: &State, context: &'static str) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Gradient with a finiteness check; errors identify the offending
    /// component.
    pub fn gradient_checked(&self, x: &State) -> Result<DVector<f64>> {
        self.check_state_dim(x, "gradient")?;
        let e = self.gradient(x);
        for (i, v) in e.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    index: i,
                });
            }
        }
        Ok(e)
    }

    /// `ẋ = J(x)e − 𝓡(x,e) + G(x)u` with `e = ∂H/∂x`.
    pub fn dynamics(&self, x: &State, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state_dim(x, "dynamics")?;
        if u.len() != self.partition.m() {
            return Err(Error::DimensionMismatch {
                context: "dynamics input",
                expected: self.partition.m(),
                actual: u.len(),
            });
        }
        let e = self.gradient_checked(x)?;
        let mut dx = self.j_matrix(x) * &e - self.dissipation(x, &e);
        dx += self.input_matrix(x) * u;
        Ok(dx)
    }

    /// Port outputs `(y₁, y₂) = (G₁ᵀ e₁, G₂ᵀ(x) e₂)` in partitioned form, or
    /// the `(m1, m2)` split of `Gᵀ(x) e` in general form.
    pub fn outputs(&self, x: &State) -> Result<(DVector<f64>, DVector<f64>)> {
        let e = self.gradient_checked(x)?;
        let p = self.partition;
        match &self.input_map {
            InputMap::Partitioned { g1, g2 } => {
                let e1 = e.rows(0, p.n1).into_owned();
                let e2 = e.rows(p.n1, p.n2).into_owned();
                Ok((g1.eval(x).transpose() * e1, g2.eval(x).transpose() * e2))
            }
            InputMap::General(g) => {
                let y = g.eval(x).transpose() * e;
                if y.len() != p.m() {
                    return Err(Error::DimensionMismatch {
                        context: "outputs",
                        expected: p.m(),
                        actual: y.len(),
                    });
                }
                Ok((y.rows(0, p.m1).into_owned(), y.rows(p.m1, p.m2).into_owned()))
            }
        }
    }

    /// The same physical system with the two state blocks and their ports
    /// exchanged, so that structural claims about "the other" port can be
    /// checked with the same machinery.
    ///
    /// New coordinates are `x' = (x₂, x₁)`, new inputs `u' = (u₂, u₁)`.
    pub fn swapped(&self) -> PortHamiltonianSystem {
        let p = self.partition;
        let n = p.n();
        // old index stored at new slot i
        let old_of_new: Arc<Vec<usize>> =
            Arc::new((p.n1..n).chain(0..p.n1).collect::<Vec<usize>>());
        // new slot of old index j
        let new_of_old: Arc<Vec<usize>> = {
            let mut t = vec![0usize; n];
            for (new_i, &old_i) in old_of_new.iter().enumerate() {
                t[old_i] = new_i;
            }
            Arc::new(t)
        };

        let to_old = {
            let new_of_old = new_of_old.clone();
            Arc::new(move |x_new: &State| -> State {
                DVector::from_fn(x_new.len(), |old_i, _| x_new[new_of_old[old_i]])
            })
        };
        let permute_vec = {
            let old_of_new = old_of_new.clone();
            Arc::new(move |v_old: &DVector<f64>| -> DVector<f64> {
                DVector::from_fn(v_old.len(), |new_i, _| v_old[old_of_new[new_i]])
            })
        };
        let permute_mat = {
            let old_of_new = old_of_new.clone();
            Arc::new(move |m_old: &DMatrix<f64>| -> DMatrix<f64> {
                DMatrix::from_fn(m_old.nrows(), m_old.ncols(), |i, j| {
                    m_old[(old_of_new[i], old_of_new[j])]
                })
            })
        };

        let ham = {
            let h = self.hamiltonian.clone();
            let to_old = to_old.clone();
            Arc::new(move |x_new: &State| h(&to_old(x_new))) as ScalarField
        };

        let derivatives = match &*self.derivatives {
            Derivatives::FiniteDifference => Derivatives::FiniteDifference,
            Derivatives::ClosedForm { gradient, hessian } => {
                let g = gradient.clone();
                let hs = hessian.clone();
                let (t1, t2) = (to_old.clone(), to_old.clone());
                let (pv, pm) = (permute_vec.clone(), permute_mat.clone());
                Derivatives::ClosedForm {
                    gradient: Arc::new(move |x_new: &State| pv(&g(&t1(x_new)))),
                    hessian: Arc::new(move |x_new: &State| pm(&hs(&t2(x_new)))),
                }
            }
        };

        let permute_block = |src: &BlockMatrix| -> BlockMatrix {
            match src {
                BlockMatrix::Constant(m) => BlockMatrix::Constant(permute_mat(m)),
                BlockMatrix::StateDep(f) => {
                    let f = f.clone();
                    let to_old = to_old.clone();
                    let pm = permute_mat.clone();
                    BlockMatrix::StateDep(Arc::new(move |x_new: &State| pm(&f(&to_old(x_new)))))
                }
            }
        };

        let j = permute_block(&self.j_matrix);
        let dissipation = match &self.dissipation {
            DissipationMap::None => DissipationMap::None,
            DissipationMap::Matrix(r) => DissipationMap::Matrix(permute_block(r)),
            DissipationMap::Map(f) => {
                let f = f.clone();
                let to_old = to_old.clone();
                let pv = permute_vec.clone();
                let new_of_old = new_of_old.clone();
                DissipationMap::Map(Arc::new(move |x_new: &State, e_new: &DVector<f64>| {
                    let e_old =
                        DVector::from_fn(e_new.len(), |old_i, _| e_new[new_of_old[old_i]]);
                    pv(&f(&to_old(x_new), &e_old))
                }))
            }
        };

        // Port-block matrices keep their own row ordering; only the state
        // argument needs remapping for state-dependent blocks.
        let remap_state_arg = |src: &BlockMatrix| -> BlockMatrix {
            match src {
                BlockMatrix::Constant(m) => BlockMatrix::Constant(m.clone()),
                BlockMatrix::StateDep(f) => {
                    let f = f.clone();
                    let to_old = to_old.clone();
                    BlockMatrix::StateDep(Arc::new(move |x_new: &State| f(&to_old(x_new))))
                }
            }
        };

        let input_map = match &self.input_map {
            InputMap::Partitioned { g1, g2 } => InputMap::Partitioned {
                g1: remap_state_arg(g2),
                g2: remap_state_arg(g1),
            },
            InputMap::General(g) => {
                let g = g.clone();
                let to_old = to_old.clone();
                let old_of_new = old_of_new.clone();
                let (m1, m2) = (p.m1, p.m2);
                InputMap::General(BlockMatrix::StateDep(Arc::new(move |x_new: &State| {
                    let g_old = g.eval(&to_old(x_new));
                    // rows permuted like the state, columns reordered (u2, u1)
                    DMatrix::from_fn(g_old.nrows(), m1 + m2, |i, c| {
                        let old_col = if c < m2 { m1 + c } else { c - m2 };
                        g_old[(old_of_new[i], old_col)]
                    })
                })))
            }
        };

        let nominal = permute_vec(&self.nominal_state);

        PortHamiltonianSystem {
            name: format!("{} (ports swapped)", self.name),
            partition: p.swapped(),
            hamiltonian: ham,
            derivatives: Arc::new(derivatives),
            j_matrix: j,
            dissipation,
            input_map,
            flags: self.flags.swapped(),
            nominal_state: nominal,
        }
    }
}

/// Instantaneous port power `yᵀu`.
pub fn supply_rate(y: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    if y.len() != u.len() {
        return Err(Error::DimensionMismatch {
            context: "supply_rate",
            expected: y.len(),
            actual: u.len(),
        });
    }
    Ok(y.dot(u))
}

/// Central finite-difference gradient with step `h = ε^{1/3}·max(1,|xᵢ|)`.
pub fn fd_gradient(f: &ScalarField, x: &State) -> DVector<f64> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let h = f64::EPSILON.cbrt() * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

fn fd_hessian(f: &ScalarField, x: &State) -> DMatrix<f64> {
    // second-order central differences on H, symmetrized
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let step = |v: f64| f64::EPSILON.powf(0.25) * v.abs().max(1.0);
    for i in 0..n {
        let hi = step(x[i]);
        // diagonal
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += hi;
        xm[i] -= hi;
        hess[(i, i)] = (f(&xp) - 2.0 * f(x) + f(&xm)) / (hi * hi);
        for j in (i + 1)..n {
            let hj = step(x[j]);
            let mut xpp = x.clone();
            let mut xpm = x.clone();
            let mut xmp = x.clone();
            let mut xmm = x.clone();
            xpp[i] += hi;
            xpp[j] += hj;
            xpm[i] += hi;
            xpm[j] -= hj;
            xmp[i] -= hi;
            xmp[j] += hj;
            xmm[i] -= hi;
            xmm[j] -= hj;
            let v = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Builder for [`PortHamiltonianSystem`].  Built-in models register
/// closed-form gradient and Hessian; user-defined systems may register only
/// the Hamiltonian, in which case central finite differences are used and
/// downstream tolerances relax ×10.
pub struct SystemBuilder {
    name: String,
    partition: StatePartition,
    hamiltonian: Option<ScalarField>,
    gradient: Option<VectorField>,
    hessian: Option<MatrixField>,
    j_matrix: Option<BlockMatrix>,
    dissipation: DissipationMap,
    input_map: Option<InputMap>,
    flags: Option<StructureFlags>,
    nominal_state: Option<State>,
}

impl SystemBuilder {
    pub fn new(partition: StatePartition) -> Self {
        Self {
            name: String::from("unnamed"),
            partition,
            hamiltonian: None,
            gradient: None,
            hessian: None,
            j_matrix: None,
            dissipation: DissipationMap::None,
            input_map: None,
            flags: None,
            nominal_state: None,
        }
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn hamiltonian(mut self, f: impl Fn(&State) -> f64 + Send + Sync + 'static) -> Self {
        self.hamiltonian = Some(Arc::new(f));
        self
    }

    pub fn gradient(mut self, f: impl Fn(&State) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(f));
        self
    }

    pub fn hessian(mut self, f: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(f));
        self
    }

    pub fn j_constant(mut self, j: DMatrix<f64>) -> Self {
        self.j_matrix = Some(BlockMatrix::Constant(j));
        self
    }

    pub fn j_state_dep(
        mut self,
        f: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.j_matrix = Some(BlockMatrix::StateDep(Arc::new(f)));
        self
    }

    pub fn lossless(mut self) -> Self {
        self.dissipation = DissipationMap::None;
        self
    }

    pub fn dissipation_matrix_constant(mut self, r: DMatrix<f64>) -> Self {
        self.dissipation = DissipationMap::Matrix(BlockMatrix::Constant(r));
        self
    }

    pub fn dissipation_matrix(
        mut self,
        f: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dissipation = DissipationMap::Matrix(BlockMatrix::StateDep(Arc::new(f)));
        self
    }

    pub fn dissipation_map(
        mut self,
        f: impl Fn(&State, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dissipation = DissipationMap::Map(Arc::new(f));
        self
    }

    pub fn inputs_partitioned(mut self, g1: BlockMatrix, g2: BlockMatrix) -> Self {
        self.input_map = Some(InputMap::Partitioned { g1, g2 });
        self
    }

    pub fn inputs_general(mut self, g: BlockMatrix) -> Self {
        self.input_map = Some(InputMap::General(g));
        self
    }

    pub fn flags(mut self, flags: StructureFlags) -> Self {
        self.flags = Some(flags);
        self
    }

    pub fn nominal_state(mut self, x: State) -> Self {
        self.nominal_state = Some(x);
        self
    }

    pub fn build(self) -> Result<PortHamiltonianSystem> {
        let p = self.partition;
        if p.n1 == 0 || p.n2 == 0 {
            return Err(Error::InvalidParameter(
                "both state blocks must be non-empty".into(),
            ));
        }
        let hamiltonian = self
            .hamiltonian
            .ok_or_else(|| Error::InvalidParameter("missing Hamiltonian".into()))?;
        let derivatives = match (self.gradient, self.hessian) {
            (Some(gradient), Some(hessian)) => Derivatives::ClosedForm { gradient, hessian },
            (None, None) => Derivatives::FiniteDifference,
            _ => {
                return Err(Error::InvalidParameter(
                    "register both gradient and Hessian, or neither".into(),
                ))
            }
        };
        let j_matrix = self
            .j_matrix
            .unwrap_or_else(|| BlockMatrix::Constant(DMatrix::zeros(p.n(), p.n())));
        let input_map = self
            .input_map
            .ok_or_else(|| Error::InvalidParameter("missing input map".into()))?;
        match &input_map {
            InputMap::Partitioned { g1, g2 } => {
                if let Some(m) = g1.as_constant() {
                    check_shape(m, p.n1, p.m1, "G1")?;
                }
                if let Some(m) = g2.as_constant() {
                    check_shape(m, p.n2, p.m2, "G2")?;
                }
            }
            InputMap::General(g) => {
                if let Some(m) = g.as_constant() {
                    check_shape(m, p.n(), p.m(), "G")?;
                }
            }
        }
        let nominal_state = self.nominal_state.unwrap_or_else(|| DVector::zeros(p.n()));
        if nominal_state.len() != p.n() {
            return Err(Error::DimensionMismatch {
                context: "nominal state",
                expected: p.n(),
                actual: nominal_state.len(),
            });
        }
        Ok(PortHamiltonianSystem {
            name: self.name,
            partition: p,
            hamiltonian,
            derivatives: Arc::new(derivatives),
            j_matrix,
            dissipation: self.dissipation,
            input_map,
            flags: self.flags.unwrap_or(StructureFlags::all_true()),
            nominal_state,
        })
    }
}

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::InvalidParameter(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Pointwise consistency report for the basic system axioms at one state.
#[derive(Debug, Clone, Default)]
pub struct AxiomViolations {
    pub skew_symmetry: f64,
    pub dissipation_negativity: f64,
    pub gradient_fd_error: f64,
    pub hessian_asymmetry: f64,
    pub hessian_fd_error: f64,
}

/// Evaluate the axioms (skew `J`, `eᵀ𝓡 ≥ 0`, gradient/Hessian consistency
/// with `H`) at one state and one probe covector, returning worst violation
/// magnitudes. Callers compare against their tolerance of choice.
pub fn axiom_violations(
    sys: &PortHamiltonianSystem,
    x: &State,
    e_probe: &DVector<f64>,
) -> AxiomViolations {
    let j = sys.j_matrix(x);
    let scale = j.amax().max(1.0);
    let skew = (&j + j.transpose()).amax() / scale;

    let r = sys.dissipation(x, e_probe);
    let quad = e_probe.dot(&r);
    let neg = (-quad / e_probe.norm_squared().max(f64::MIN_POSITIVE)).max(0.0);

    let g = sys.gradient(x);
    let g_fd = fd_gradient(&sys.hamiltonian, x);
    let gerr = (&g - &g_fd).norm() / g_fd.norm().max(1.0);

    let h = sys.hessian(x);
    let asym = (&h - h.transpose()).amax() / h.amax().max(1.0);

    // Hessian against finite differences of the registered gradient.
    let n = x.len();
    let mut herr: f64 = 0.0;
    for i in 0..n {
        let hstep = f64::EPSILON.cbrt() * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += hstep;
        xm[i] -= hstep;
        let col = (sys.gradient(&xp) - sys.gradient(&xm)) / (2.0 * hstep);
        let approx_col = h.column(i).into_owned();
        herr = herr.max((col - approx_col).norm() / h.amax().max(1.0));
    }

    AxiomViolations {
        skew_symmetry: skew,
        dissipation_negativity: neg,
        gradient_fd_error: gerr,
        hessian_asymmetry: asym,
        hessian_fd_error: herr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quadratic_2d() -> PortHamiltonianSystem {
        // H = x1²/2 + x2²/2, J = 0, R = 0, G = I
        PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .name("quadratic")
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
    fn supply_rate_inner_product() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let u = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(supply_rate(&y, &u).unwrap(), 1.0);
        assert_eq!(supply_rate(&y, &DVector::zeros(2)).unwrap(), 0.0);
        assert!(supply_rate(&y, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn dynamics_zero_gradient_is_stationary_without_input() {
        let sys = quadratic_2d();
        let x = DVector::zeros(2);
        let dx = sys.dynamics(&x, &DVector::zeros(2)).unwrap();
        assert_eq!(dx.norm(), 0.0);
    }

    #[test]
    fn dynamics_dimension_errors() {
        let sys = quadratic_2d();
        assert!(matches!(
            sys.dynamics(&DVector::zeros(3), &DVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            sys.dynamics(&DVector::zeros(2), &DVector::zeros(1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_gradient_identifies_component() {
        let sys = PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| x[0].ln() + x[1])
            .gradient(|x| DVector::from_vec(vec![1.0 / x[0], 1.0]))
            .hessian(|x| {
                DMatrix::from_row_slice(2, 2, &[-1.0 / (x[0] * x[0]), 0.0, 0.0, 0.0])
            })
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .build()
            .unwrap();
        let err = sys
            .dynamics(&DVector::from_vec(vec![0.0, 1.0]), &DVector::zeros(2))
            .unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn finite_difference_fallback_matches_closed_form() {
        let fd = PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
                BlockMatrix::Constant(DMatrix::identity(1, 1)),
            )
            .build()
            .unwrap();
        assert_eq!(fd.tolerance_scale(), 10.0);
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let g = fd.gradient(&x);
        assert_relative_eq!(g[0], 0.3, max_relative = 1e-7);
        assert_relative_eq!(g[1], -1.2, max_relative = 1e-7);
        let h = fd.hessian(&x);
        assert_relative_eq!(h[(0, 0)], 1.0, max_relative = 1e-5);
        assert_relative_eq!(h[(0, 1)], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn swapped_exchanges_blocks_and_ports() {
        // H = x1²/2 + 2·x2², distinct blocks so the swap is observable
        let sys = PortHamiltonianSystem::builder(StatePartition::new(1, 1, 1, 1))
            .hamiltonian(|x| 0.5 * x[0] * x[0] + 2.0 * x[1] * x[1])
            .gradient(|x| DVector::from_vec(vec![x[0], 4.0 * x[1]]))
            .hessian(|_| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]))
            .j_constant(DMatrix::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0]))
            .inputs_partitioned(
                BlockMatrix::Constant(DMatrix::from_element(1, 1, 5.0)),
                BlockMatrix::Constant(DMatrix::from_element(1, 1, 7.0)),
            )
            .nominal_state(DVector::from_vec(vec![1.0, 2.0]))
            .build()
            .unwrap();
        let sw = sys.swapped();
        let x_old = DVector::from_vec(vec![1.0, 2.0]);
        let x_new = DVector::from_vec(vec![2.0, 1.0]);
        assert_eq!(sys.hamiltonian(&x_old), sw.hamiltonian(&x_new));
        let g = sw.gradient(&x_new);
        assert_eq!(g[0], 8.0);
        assert_eq!(g[1], 1.0);
        let j = sw.j_matrix(&x_new);
        assert_eq!(j[(0, 1)], 3.0);
        assert_eq!(j[(1, 0)], -3.0);
        assert_eq!(sw.g1_constant().unwrap()[(0, 0)], 7.0);
        assert_eq!(sw.nominal_state()[0], 2.0);
        // outputs swap too
        let (y1, y2) = sys.outputs(&x_old).unwrap();
        let (z1, z2) = sw.outputs(&x_new).unwrap();
        assert_eq!(y1[0], z2[0]);
        assert_eq!(y2[0], z1[0]);
    }

    #[test]
    fn axioms_hold_for_quadratic() {
        let sys = quadratic_2d();
        let x = DVector::from_vec(vec![0.4, -0.7]);
        let v = axiom_violations(&sys, &x, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(v.skew_symmetry <= 1e-12);
        assert!(v.dissipation_negativity <= 1e-12);
        assert!(v.gradient_fd_error <= 1e-5);
        assert!(v.hessian_asymmetry <= 1e-12);
        assert!(v.hessian_fd_error <= 1e-5);
    }
}

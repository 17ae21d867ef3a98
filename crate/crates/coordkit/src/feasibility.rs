//! Stacked differential-algebraic system and its motion basis.
//!
//! The group's admissible joint velocities are the solutions of
//!
//! ```text
//! Ω_K(P)·Ṗ = T_K(P)      (kinematics)
//! Ω_E(P)·Ṗ = T_E(P, t)   (equality tasks)
//! Ω_I(P)·Ṗ ≤ T_I(P, t)   (active inequality rows)
//! ```
//!
//! Feasibility of the equality part is a rank test: solutions exist iff
//! `rank(Ω) = rank([Ω | T])` under a scaled singular-value threshold. When
//! feasible, the full solution set is the affine family `K̄ + Σ wₗ·Kₗ` with
//! `K̄` the minimum-norm particular solution and `K₁…K_κ` an orthonormal
//! null-space basis; both come from one singular value decomposition.
//! Inequality rows are kept out of the rank test and handled downstream by
//! virtual-input selection.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{
    active_set, edge_eval, scatter_jacobian, ActiveSet, ConstraintSpec, Flavor,
};
use crate::error::{Error, Result};
use crate::kinematics::{stack_kinematics, JointState, VehicleModel};

/// Relative singular-value threshold: σ below `RANK_TOL·σ_max·max(M,N)`
/// counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// A particular solution certifies feasibility when its residual stays
/// below `RESIDUAL_TOL·(1 + ‖rhs‖∞)`.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Where a stacked row came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowSource {
    /// Kinematic codistribution row of one vehicle.
    Kinematic { vehicle: usize },
    /// Row of an equality task constraint.
    Equality { constraint: String, row: usize },
}

/// The assembled equality system plus the currently active inequality rows.
///
/// Kinematic rows precede equality rows; inequality rows live in their own
/// block. All matrices share the column layout of the joint state.
#[derive(Debug, Clone)]
pub struct ConstraintStack {
    /// Equality-part matrix (kinematic rows then equality-constraint rows).
    pub omega: DMatrix<f64>,
    /// Equality right-hand side.
    pub rhs: DVector<f64>,
    /// Provenance label per row of `omega`.
    pub labels: Vec<RowSource>,
    /// Gradient rows of the active inequality constraints.
    pub ineq_omega: DMatrix<f64>,
    /// Inequality right-hand side (time terms of the active rows).
    pub ineq_rhs: DVector<f64>,
    /// The active set that produced the inequality block.
    pub active: ActiveSet,
}

impl ConstraintStack {
    /// Joint state dimension N.
    pub fn state_dim(&self) -> usize {
        self.omega.ncols()
    }

    /// Append a raw equality row (used for injected test systems and
    /// follower-local assembly).
    pub fn push_equality_row(&mut self, row: &DVector<f64>, rhs: f64, label: RowSource) {
        let m = self.omega.nrows();
        let n = self.omega.ncols();
        let mut omega = DMatrix::zeros(m + 1, n);
        omega.view_mut((0, 0), (m, n)).copy_from(&self.omega);
        omega.row_mut(m).copy_from(&row.transpose());
        self.omega = omega;
        self.rhs = DVector::from_iterator(m + 1, self.rhs.iter().cloned().chain([rhs]));
        self.labels.push(label);
    }
}

/// Assemble the stacked system at `(P, t)`: kinematic rows for every
/// vehicle, all equality-constraint rows, and inequality rows for the
/// active set under tolerance `eps_act`.
pub fn assemble(
    models: &[VehicleModel],
    equality_cs: &[ConstraintSpec],
    inequality_cs: &[ConstraintSpec],
    state: &JointState,
    t: f64,
    eps_act: f64,
) -> Result<ConstraintStack> {
    for c in equality_cs {
        if c.flavor() != Flavor::Equality {
            return Err(Error::DimensionMismatch {
                what: format!("constraint `{}` listed as equality", c.id),
                expected: 0,
                got: 1,
            });
        }
    }
    let n = state.dim();
    let (kin_omega, kin_rhs) = stack_kinematics(models, state)?;
    let mut labels: Vec<RowSource> = Vec::new();
    {
        let mut row = 0;
        for (i, m) in models.iter().enumerate() {
            for _ in 0..m.codim() {
                labels.push(RowSource::Kinematic { vehicle: i });
                row += 1;
            }
            let _ = row;
        }
    }

    let mut eq_rows: Vec<DVector<f64>> = Vec::new();
    let mut eq_rhs: Vec<f64> = Vec::new();
    for c in equality_cs {
        let e = edge_eval(c, state, t)?;
        let jac = scatter_jacobian(c, state, &e);
        for r in 0..jac.nrows() {
            eq_rows.push(jac.row(r).transpose());
            eq_rhs.push(e.t_rhs[r]);
            labels.push(RowSource::Equality {
                constraint: c.id.clone(),
                row: r,
            });
        }
    }

    let m_total = kin_omega.nrows() + eq_rows.len();
    let mut omega = DMatrix::zeros(m_total, n);
    let mut rhs = DVector::zeros(m_total);
    omega
        .view_mut((0, 0), (kin_omega.nrows(), n))
        .copy_from(&kin_omega);
    rhs.rows_mut(0, kin_rhs.len()).copy_from(&kin_rhs);
    for (k, row) in eq_rows.iter().enumerate() {
        omega.row_mut(kin_omega.nrows() + k).tr_copy_from(row);
        rhs[kin_omega.nrows() + k] = eq_rhs[k];
    }

    let active = active_set(inequality_cs, state, t, eps_act)?;
    let mut ineq_omega = DMatrix::zeros(active.len(), n);
    let mut ineq_rhs = DVector::zeros(active.len());
    for (k, entry) in active.entries.iter().enumerate() {
        let c = &inequality_cs[entry.constraint];
        let e = edge_eval(c, state, t)?;
        let jac = scatter_jacobian(c, state, &e);
        ineq_omega.row_mut(k).copy_from(&jac.row(entry.row));
        ineq_rhs[k] = e.t_rhs[entry.row];
    }

    Ok(ConstraintStack {
        omega,
        rhs,
        labels,
        ineq_omega,
        ineq_rhs,
        active,
    })
}

/// Verdict of the rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

/// Ranks behind a feasibility verdict.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityReport {
    pub verdict: Feasibility,
    pub rank_omega: usize,
    pub rank_augmented: usize,
    /// Null-space dimension κ = N − rank(Ω).
    pub kappa: usize,
}

fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    let cut = tol * sigma_max * (m.nrows().max(m.ncols()) as f64);
    svd.singular_values.iter().filter(|s| **s > cut).count()
}

/// Rank comparison of `Ω` against `[Ω | T]` under threshold
/// `tol·σ_max·max(M,N)`.
pub fn check_feasibility(stack: &ConstraintStack, tol: f64) -> Feasibility {
    feasibility_report(stack, tol).verdict
}

/// Rank test with the underlying ranks exposed.
pub fn feasibility_report(stack: &ConstraintStack, tol: f64) -> FeasibilityReport {
    let n = stack.state_dim();
    let m = stack.omega.nrows();
    if m == 0 {
        return FeasibilityReport {
            verdict: Feasibility::Feasible,
            rank_omega: 0,
            rank_augmented: 0,
            kappa: n,
        };
    }
    let rank_omega = numerical_rank(&stack.omega, tol);
    let mut augmented = DMatrix::zeros(m, n + 1);
    augmented.view_mut((0, 0), (m, n)).copy_from(&stack.omega);
    augmented.column_mut(n).copy_from(&stack.rhs);
    let rank_augmented = numerical_rank(&augmented, tol);
    let verdict = if rank_omega == rank_augmented {
        Feasibility::Feasible
    } else {
        Feasibility::Infeasible
    };
    FeasibilityReport {
        verdict,
        rank_omega,
        rank_augmented,
        kappa: n - rank_omega,
    }
}

/// A special solution and a null-space basis of the stacked equality
/// system: every admissible joint velocity is `special + Σ wₗ·basis[l]`.
#[derive(Debug, Clone)]
pub struct MotionBasis {
    /// Minimum-norm particular solution K̄.
    pub special: DVector<f64>,
    /// Orthonormal null-space generators K₁…K_κ as matrix columns (N × κ).
    pub basis: DMatrix<f64>,
    /// Null-space dimension κ.
    pub kappa: usize,
    /// ‖Ω·K̄ − T‖∞.
    pub residual: f64,
}

impl MotionBasis {
    /// Basis column l as a vector.
    pub fn generator(&self, l: usize) -> DVector<f64> {
        self.basis.column(l).into_owned()
    }
}

/// Solve the equality part of the stack: minimum-norm particular solution
/// plus orthonormal null-space basis from one SVD. Errors with
/// `InfeasibleSystem` when the particular solution does not actually solve
/// the system.
///
/// Wide systems (fewer rows than columns) are zero-padded to square before
/// the decomposition so the right-singular-vector matrix is always full;
/// the padding changes neither the singular values nor the solution, and
/// the trailing right singular vectors then span the entire null space to
/// machine precision.
pub fn solve_basis(stack: &ConstraintStack) -> Result<MotionBasis> {
    let n = stack.state_dim();
    let m = stack.omega.nrows();
    if m == 0 {
        return Ok(MotionBasis {
            special: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            kappa: n,
            residual: 0.0,
        });
    }
    let rows = m.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m, n)).copy_from(&stack.omega);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, m).copy_from(&stack.rhs);

    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let cut = RANK_TOL * sigma_max * (m.max(n) as f64);
    let rank = sigma.iter().filter(|s| **s > cut).count();

    // minimum-norm solution: V Σ⁺ Uᵀ rhs
    let mut special = DVector::zeros(n);
    for k in 0..rank {
        let coeff = u.column(k).dot(&rhs) / sigma[k];
        special += v_t.row(k).transpose() * coeff;
    }

    let kappa = n - rank;
    let mut basis = DMatrix::zeros(n, kappa);
    for (col, k) in (rank..n).enumerate() {
        basis.column_mut(col).copy_from(&v_t.row(k).transpose());
    }

    let residual = (&stack.omega * &special - &stack.rhs).abs().max();
    if residual > RESIDUAL_TOL * (1.0 + stack.rhs.abs().max()) {
        return Err(Error::InfeasibleSystem { residual });
    }
    Ok(MotionBasis {
        special,
        basis,
        kappa,
        residual,
    })
}

/// Rotate `basis` columns to best match a reference basis (orthogonal
/// Procrustes). The null space of the stacked system is well defined at
/// each state, but the individual singular vectors spanning it are not;
/// when a motion `K̄ + B·w` must be re-evaluated at a nearby state with a
/// frozen `w`, the re-solved basis is aligned to the one `w` was chosen
/// for, making the combined vector field continuous in the state.
pub fn align_basis_to(basis: &MotionBasis, reference: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if reference.ncols() != basis.kappa {
        return Err(Error::DimensionMismatch {
            what: "basis alignment reference".into(),
            expected: basis.kappa,
            got: reference.ncols(),
        });
    }
    if basis.kappa == 0 {
        return Ok(basis.basis.clone());
    }
    let m = basis.basis.transpose() * reference;
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let rotation = u * v_t;
    Ok(&basis.basis * rotation)
}

/// Max-norm residual `‖Ω·candidate − T‖∞`; values at or below `1e−9`
/// certify that `candidate` lies in the affine solution set
/// `K̄ + span(basis)`.
pub fn verify_solution_membership(
    _basis: &MotionBasis,
    stack: &ConstraintStack,
    candidate: &DVector<f64>,
) -> f64 {
    (&stack.omega * candidate - &stack.rhs).abs().max()
}

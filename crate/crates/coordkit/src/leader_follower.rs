//! Leader-follower decomposition over a directed tree.
//!
//! Each follower has exactly one leader and alone maintains the
//! constraints on its in-edge; the leader is unaffected. Solving proceeds
//! from the root down: once a leader's velocity `ṗᵢ` is known, follower j
//! solves its own small system
//!
//! ```text
//! Ω_{K_j}(p_j)·ṗ_j = T_{K_j}(p_j)
//! ∂Φ/∂p_j·ṗ_j      = −∂Φ/∂p_i·ṗᵢ − ∂Φ/∂t          (edge equalities)
//! ∂I/∂p_j·ṗ_j      ≤ −∂I/∂p_i·ṗᵢ − ∂I/∂t   (active edge inequalities)
//! ```
//!
//! over its **own** state space only: the leader's velocity enters through
//! the right-hand side as a value. Each follower runs the same virtual-input
//! program as the centralized path, just on its local κ_j-dimensional basis.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{
    activation_scale, edge_eval_blocks, ActivationWindow, ConstraintSpec, Edge, Flavor,
};
use crate::error::{Error, Result};
use crate::expr::TimeExpr;
use crate::feasibility::{
    align_basis_to, feasibility_report, solve_basis, ConstraintStack, Feasibility, MotionBasis,
    RowSource, RANK_TOL,
};
use crate::kinematics::{JointState, VehicleModel};
use crate::motion_gen::{select_virtual_inputs, VirtualInputPolicy};

/// Directed coordination tree: every non-root vehicle has exactly one
/// in-edge from its leader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinationTree {
    pub vehicle_count: usize,
    pub root: usize,
    /// Directed edges (leader → follower).
    pub edges: Vec<(usize, usize)>,
}

impl CoordinationTree {
    /// The leader of `vehicle`, if it has one.
    pub fn parent(&self, vehicle: usize) -> Option<usize> {
        self.edges
            .iter()
            .find(|(_, j)| *j == vehicle)
            .map(|(i, _)| *i)
    }
}

/// How the root vehicle's motion is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum RootPolicy {
    /// Track reference speed along the heading and reference heading rate.
    VelocityTrack { v_r: TimeExpr, u_r: TimeExpr },
    /// Feed scheduled control inputs straight into the control fields.
    PrescribedInputs { inputs: Vec<TimeExpr> },
}

/// Order vehicles so leaders precede their followers (root first, siblings
/// by ascending index). Errors when the edge set is not a tree rooted at
/// `root`.
pub fn topological_order(tree: &CoordinationTree) -> Result<Vec<usize>> {
    let n = tree.vehicle_count;
    if tree.root >= n {
        return Err(Error::NotATree(format!(
            "root {} out of range for {} vehicles",
            tree.root, n
        )));
    }
    let mut parent = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in &tree.edges {
        if i >= n || j >= n {
            return Err(Error::NotATree(format!("edge ({i}, {j}) out of range")));
        }
        if i == j {
            return Err(Error::NotATree(format!("self-loop at vehicle {i}")));
        }
        if parent[j].is_some() {
            return Err(Error::NotATree(format!("vehicle {j} has multiple leaders")));
        }
        parent[j] = Some(i);
        children[i].push(j);
    }
    if parent[tree.root].is_some() {
        return Err(Error::NotATree(format!(
            "root {} has an incoming edge",
            tree.root
        )));
    }
    for list in &mut children {
        list.sort_unstable();
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![tree.root];
    let mut seen = vec![false; n];
    while let Some(v) = stack.pop() {
        if seen[v] {
            return Err(Error::NotATree(format!("cycle through vehicle {v}")));
        }
        seen[v] = true;
        order.push(v);
        // push in reverse so ascending-index siblings pop first
        for &c in children[v].iter().rev() {
            stack.push(c);
        }
    }
    if order.len() != n {
        let missing: Vec<usize> = (0..n).filter(|v| !seen[*v]).collect();
        return Err(Error::NotATree(format!(
            "vehicles {missing:?} unreachable from the root"
        )));
    }
    Ok(order)
}

/// A follower's local solve: motion basis over its own state space plus
/// the active inequality rows forwarded to virtual-input selection (in
/// local coordinates, right-hand sides already including the leader's
/// motion).
#[derive(Debug, Clone)]
pub struct FollowerSystem {
    pub basis: MotionBasis,
    pub active_omega: DMatrix<f64>,
    pub active_rhs: DVector<f64>,
}

/// Solve one follower's differential-algebraic system given its leader's
/// state and velocity. Reads nothing beyond the follower's own model and
/// state, the leader's state and velocity, and the edge constraints.
pub fn follower_feasibility(
    follower: usize,
    model_j: &VehicleModel,
    p_j: &[f64],
    leader_pdot: &DVector<f64>,
    p_i: &[f64],
    edge_constraints: &[ConstraintSpec],
    t: f64,
    eps_act: f64,
) -> Result<FollowerSystem> {
    follower_system(
        follower,
        model_j,
        p_j,
        leader_pdot,
        p_i,
        edge_constraints,
        t,
        &ActivationWindow::base(eps_act),
        None,
    )
}

/// Window-aware variant of [`follower_feasibility`]; `prev_rates` supplies
/// the previous-step velocities of (leader, follower) blocks for lookahead
/// activation.
#[allow(clippy::too_many_arguments)]
pub fn follower_system(
    follower: usize,
    model_j: &VehicleModel,
    p_j: &[f64],
    leader_pdot: &DVector<f64>,
    p_i: &[f64],
    edge_constraints: &[ConstraintSpec],
    t: f64,
    window: &ActivationWindow,
    prev_rates: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<FollowerSystem> {
    let n_j = model_j.state_dim();
    let mut stack = ConstraintStack {
        omega: model_j.codistribution(p_j)?,
        rhs: model_j.drift_image(p_j)?,
        labels: (0..model_j.codim())
            .map(|_| RowSource::Kinematic { vehicle: follower })
            .collect(),
        ineq_omega: DMatrix::zeros(0, n_j),
        ineq_rhs: DVector::zeros(0),
        active: Default::default(),
    };

    let mut active_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for c in edge_constraints {
        let e = edge_eval_blocks(c, p_i, Some(p_j), t)?;
        match c.flavor() {
            Flavor::Equality => {
                for r in 0..e.value.len() {
                    let row = e.jac_j.row(r).transpose();
                    let rhs = e.t_rhs[r] - e.jac_i.row(r).transpose().dot(leader_pdot);
                    stack.push_equality_row(
                        &row,
                        rhs,
                        RowSource::Equality {
                            constraint: c.id.clone(),
                            row: r,
                        },
                    );
                }
            }
            Flavor::Inequality => {
                for r in 0..e.value.len() {
                    let approach = match prev_rates {
                        Some((prev_i, prev_j)) => {
                            e.jac_i.row(r).transpose().dot(prev_i)
                                + e.jac_j.row(r).transpose().dot(prev_j)
                                - e.t_rhs[r]
                        }
                        None => 0.0,
                    };
                    if window.is_active(e.value[r], activation_scale(c, r, t)?, approach) {
                        let row = e.jac_j.row(r).transpose();
                        let rhs = window.effective_rhs(
                            e.t_rhs[r] - e.jac_i.row(r).transpose().dot(leader_pdot),
                            e.value[r],
                        );
                        active_rows.push((row, rhs));
                    }
                }
            }
        }
    }

    if feasibility_report(&stack, RANK_TOL).verdict == Feasibility::Infeasible {
        return Err(Error::InfeasibleFollower { vehicle: follower });
    }
    let basis = solve_basis(&stack).map_err(|_| Error::InfeasibleFollower { vehicle: follower })?;

    let mut active_omega = DMatrix::zeros(active_rows.len(), n_j);
    let mut active_rhs = DVector::zeros(active_rows.len());
    for (k, (row, rhs)) in active_rows.iter().enumerate() {
        active_omega.row_mut(k).tr_copy_from(row);
        active_rhs[k] = *rhs;
    }
    Ok(FollowerSystem {
        basis,
        active_omega,
        active_rhs,
    })
}

/// Per-follower quantities frozen at the start of an integration step so
/// intermediate stage evaluations reuse the same virtual inputs.
#[derive(Debug, Clone)]
pub struct CascadeFrozen {
    /// (vehicle, w, basis it was chosen in), in topological order.
    pub followers: Vec<(usize, DVector<f64>, DMatrix<f64>)>,
}

/// Result of one cascade evaluation.
#[derive(Debug, Clone)]
pub struct CascadeMotion {
    pub pdot: DVector<f64>,
    pub frozen: CascadeFrozen,
    /// Virtual inputs concatenated in topological follower order.
    pub w_flat: DVector<f64>,
}

/// Settings for one cascade evaluation.
pub struct CascadeInput<'a> {
    pub models: &'a [VehicleModel],
    pub tree: &'a CoordinationTree,
    pub root_policy: &'a RootPolicy,
    pub constraints: &'a [ConstraintSpec],
    pub policy: &'a VirtualInputPolicy,
    pub window: ActivationWindow,
}

/// Assemble the group velocity leader-first: the root moves by its policy,
/// every follower solves its local system given its parent's
/// already-computed velocity. When `frozen` is given, followers reuse the
/// stored virtual inputs against aligned bases (integration stages);
/// otherwise each follower selects fresh inputs and the choices are
/// returned for freezing.
pub fn cascade_motion(
    input: &CascadeInput<'_>,
    state: &JointState,
    t: f64,
    prev_pdot: &DVector<f64>,
    dt: f64,
    frozen: Option<&CascadeFrozen>,
) -> Result<CascadeMotion> {
    let order = topological_order(input.tree)?;
    let n = state.dim();
    let mut pdot = DVector::zeros(n);
    let mut blocks: Vec<Option<DVector<f64>>> = vec![None; input.models.len()];
    let mut new_frozen = CascadeFrozen {
        followers: Vec::new(),
    };
    let mut w_parts: Vec<DVector<f64>> = Vec::new();

    for &v in &order {
        let model = &input.models[v];
        let p_v = state.block_slice(v);
        let block = if v == input.tree.root {
            root_motion(model, p_v, input.root_policy, t)?
        } else {
            let parent = input.tree.parent(v).expect("non-root has a parent");
            let parent_pdot = blocks[parent].as_ref().expect("parents solved first");
            let edge_cs: Vec<ConstraintSpec> = input
                .constraints
                .iter()
                .filter(|c| c.edge == Edge::Pair(parent, v))
                .cloned()
                .collect();
            let prev_i = prev_pdot
                .rows(state.offset(parent), input.models[parent].state_dim())
                .into_owned();
            let prev_j = prev_pdot.rows(state.offset(v), model.state_dim()).into_owned();
            let system = follower_system(
                v,
                model,
                p_v,
                parent_pdot,
                state.block_slice(parent),
                &edge_cs,
                t,
                &input.window,
                Some((&prev_i, &prev_j)),
            )?;
            let (w, basis_cols) = match frozen {
                Some(f) => {
                    let (_, w, reference) = f
                        .followers
                        .iter()
                        .find(|(fv, _, _)| *fv == v)
                        .ok_or(Error::InfeasibleFollower { vehicle: v })?;
                    let aligned = align_basis_to(&system.basis, reference)?;
                    (w.clone(), aligned)
                }
                None => {
                    let prev_block = prev_pdot.rows(state.offset(v), model.state_dim());
                    let w = select_virtual_inputs(
                        &system.basis,
                        (&system.active_omega, &system.active_rhs),
                        input.policy,
                        &prev_block.into_owned(),
                        dt,
                    )?;
                    (w, system.basis.basis.clone())
                }
            };
            let block = &system.basis.special + &basis_cols * &w;
            if frozen.is_none() {
                new_frozen.followers.push((v, w.clone(), basis_cols));
                w_parts.push(w);
            }
            block
        };
        pdot.rows_mut(state.offset(v), model.state_dim())
            .copy_from(&block);
        blocks[v] = Some(block);
    }

    let w_total: usize = w_parts.iter().map(|w| w.len()).sum();
    let mut w_flat = DVector::zeros(w_total);
    let mut at = 0;
    for w in &w_parts {
        w_flat.rows_mut(at, w.len()).copy_from(w);
        at += w.len();
    }
    Ok(CascadeMotion {
        pdot,
        frozen: new_frozen,
        w_flat,
    })
}

/// The root vehicle's velocity under its policy.
pub fn root_motion(
    model: &VehicleModel,
    p: &[f64],
    policy: &RootPolicy,
    t: f64,
) -> Result<DVector<f64>> {
    match policy {
        RootPolicy::PrescribedInputs { inputs } => {
            if inputs.len() != model.control_dim() {
                return Err(Error::DimensionMismatch {
                    what: "prescribed root inputs".into(),
                    expected: model.control_dim(),
                    got: inputs.len(),
                });
            }
            let mut u = DVector::zeros(inputs.len());
            for (k, e) in inputs.iter().enumerate() {
                u[k] = e.eval(t)?;
            }
            Ok(model.drift(p)? + model.control_fields(p)? * u)
        }
        RootPolicy::VelocityTrack { v_r, u_r } => {
            if p.len() < 3 {
                return Err(Error::DimensionMismatch {
                    what: "velocity tracking needs a heading".into(),
                    expected: 3,
                    got: p.len(),
                });
            }
            let n = model.state_dim();
            let mut stack = ConstraintStack {
                omega: model.codistribution(p)?,
                rhs: model.drift_image(p)?,
                labels: (0..model.codim())
                    .map(|_| RowSource::Kinematic { vehicle: 0 })
                    .collect(),
                ineq_omega: DMatrix::zeros(0, n),
                ineq_rhs: DVector::zeros(0),
                active: Default::default(),
            };
            let theta = p[2];
            let mut speed_row = DVector::zeros(n);
            speed_row[0] = theta.cos();
            speed_row[1] = theta.sin();
            stack.push_equality_row(
                &speed_row,
                v_r.eval(t)?,
                RowSource::Equality {
                    constraint: "root_speed".into(),
                    row: 0,
                },
            );
            let mut rate_row = DVector::zeros(n);
            rate_row[2] = 1.0;
            stack.push_equality_row(
                &rate_row,
                u_r.eval(t)?,
                RowSource::Equality {
                    constraint: "root_rate".into(),
                    row: 0,
                },
            );
            let basis = solve_basis(&stack)?;
            Ok(basis.special)
        }
    }
}

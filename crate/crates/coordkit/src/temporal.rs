//! Temporal viability predicates for time-varying constraint sets.
//!
//! A time-varying set `F(t) = {x | g_i(x,t) ≤ 0}` stays invariant under a
//! flow exactly when the velocity lies in the temporal contingent cone at
//! every boundary point. With a full-rank active-constraint Jacobian the
//! cone has the explicit description
//!
//! ```text
//! ⟨∇ₓg_i, v⟩ + ∂g_i/∂t ≤ 0   for every active row i,
//! ```
//!
//! and is the whole space when nothing is active. For a control-affine
//! system the velocity is `f₀ + F·u`, giving a linear condition on the
//! inputs.
//!
//! These predicates are diagnostic: the simulator's virtual-input program
//! does the enforcing, and the monitor uses the functions here to certify
//! after the fact that every logged step satisfied the cone condition.

use nalgebra::DVector;

use crate::constraints::{active_set, edge_eval, scatter_jacobian, ConstraintSpec};
use crate::error::Result;
use crate::kinematics::{stack_fields, JointState, VehicleModel};
use crate::motion_gen::flatten_controls;

/// Slack absorbing floating-point noise in composed evaluations; the
/// underlying condition is `≤ 0`.
pub const EPS_CONE: f64 = 1e-8;

/// A velocity and the active rows to test it against: each row carries the
/// state gradient `∇ₓg` and the raw time partial `∂g/∂t`.
#[derive(Debug, Clone)]
pub struct ConeQuery {
    pub velocity: DVector<f64>,
    pub active_rows: Vec<(DVector<f64>, f64)>,
}

/// Whether `velocity` lies in the temporal contingent cone: every active
/// row satisfies `⟨∇ₓg, v⟩ + ∂g/∂t ≤ EPS_CONE`. With no active rows the
/// cone is the whole space and the answer is always true.
pub fn temporal_cone_membership(q: &ConeQuery) -> bool {
    q.active_rows
        .iter()
        .all(|(grad, dgdt)| grad.dot(&q.velocity) + dgdt <= EPS_CONE)
}

/// Left-hand sides of the invariance condition at `(P, t, u)`: one value
/// `⟨∇g, f₀ + F·u⟩ + ∂g/∂t` per active inequality row. All entries below a
/// small tolerance certify that the inputs keep the constraint set
/// invariant at this instant.
pub fn controlled_invariance_residuals(
    models: &[VehicleModel],
    state: &JointState,
    controls: &[DVector<f64>],
    inequality_cs: &[ConstraintSpec],
    t: f64,
    eps_act: f64,
) -> Result<DVector<f64>> {
    let rows = active_gradient_rows(inequality_cs, state, t, eps_act)?;
    let (f0, fields) = stack_fields(models, state)?;
    let u = flatten_controls(controls);
    let velocity = f0 + fields * u;
    let mut residuals = DVector::zeros(rows.len());
    for (k, (grad, dgdt)) in rows.iter().enumerate() {
        residuals[k] = grad.dot(&velocity) + dgdt;
    }
    Ok(residuals)
}

/// Gradient rows and time partials `(∇ₓg, ∂g/∂t)` of the inequality rows
/// active at `(P, t)`.
pub fn active_gradient_rows(
    inequality_cs: &[ConstraintSpec],
    state: &JointState,
    t: f64,
    eps_act: f64,
) -> Result<Vec<(DVector<f64>, f64)>> {
    let active = active_set(inequality_cs, state, t, eps_act)?;
    let mut rows = Vec::with_capacity(active.len());
    for entry in &active.entries {
        let c = &inequality_cs[entry.constraint];
        let e = edge_eval(c, state, t)?;
        let jac = scatter_jacobian(c, state, &e);
        // the stored right-hand side is T = −∂g/∂t
        rows.push((jac.row(entry.row).transpose(), -e.t_rhs[entry.row]));
    }
    Ok(rows)
}

//! Coordination task constraints.
//!
//! A constraint ties one vehicle pair (or a single vehicle) to a scalar- or
//! vector-valued task function with three evaluators:
//!
//! * value `g(P, t)`: equality rows are residuals (0 ⇔ satisfied),
//!   inequality rows satisfy `g ≤ 0`;
//! * state gradient `∂g/∂P` in the nominal dual basis, with zero columns
//!   for vehicles not on the edge;
//! * time right-hand side `T = −∂g/∂t`, so maintained rows obey
//!   `∂g/∂P · Ṗ = T` (equality) or `≤ T` (inequality).
//!
//! Families:
//!
//! * `distance_eq`: ½‖Δp‖² = ½d(t)², in the half-squared form so the
//!   gradient is linear in positions;
//! * `distance_band`: two-sided ½d_min(t)² ≤ ½‖Δp‖² ≤ ½d_max(t)², emitted
//!   as two rows (upper then lower) so each side activates independently;
//! * `relative_pose`: Δp = (δx(t), δy(t)) and common heading offset;
//! * `heading_eq`: θᵢ − θⱼ = δ(t), compared with explicit angle wrapping;
//! * `visibility`: cone constraint cos α(t) ≤ ⟨a,bⱼ⟩/‖a‖ keeping vehicle i
//!   inside observer j's half-apex-angle-α cone, in the cosine form (the
//!   arctangent form has range problems);
//! * `velocity_track`: reference rows cos θ·ẋ + sin θ·ẏ = v_r(t),
//!   θ̇ = u_r(t) on a single vehicle. These constrain velocities directly
//!   and have no state-level residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::TimeExpr;
use crate::kinematics::{wrap_angle, JointState};

/// Vehicles separated by less than this are degenerate for visibility.
pub const DEGENERACY_EPS: f64 = 1e-9;

/// Default activity tolerance multiplier; the effective per-row band is
/// `eps_act · max(1, scale)` with `scale` the row's parameter magnitude.
pub const DEFAULT_EPS_ACT: f64 = 1e-6;

/// Equality or inequality constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Equality,
    Inequality,
}

/// What the constraint attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    /// Ordered vehicle pair (i, j); in leader-follower mode i is the leader.
    Pair(usize, usize),
    /// A single vehicle (velocity tracking).
    Single(usize),
}

impl Edge {
    pub fn vehicles(&self) -> (usize, Option<usize>) {
        match *self {
            Edge::Pair(i, j) => (i, Some(j)),
            Edge::Single(i) => (i, None),
        }
    }
}

/// Constraint family with its (possibly time-varying) parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    DistanceEq { d: TimeExpr },
    DistanceBand { d_min: TimeExpr, d_max: TimeExpr },
    RelativePose { dx: TimeExpr, dy: TimeExpr, dtheta: TimeExpr },
    HeadingEq { delta: TimeExpr },
    Visibility { alpha: TimeExpr },
    VelocityTrack { v_r: TimeExpr, u_r: TimeExpr },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::DistanceEq { .. } => "distance_eq",
            Family::DistanceBand { .. } => "distance_band",
            Family::RelativePose { .. } => "relative_pose",
            Family::HeadingEq { .. } => "heading_eq",
            Family::Visibility { .. } => "visibility",
            Family::VelocityTrack { .. } => "velocity_track",
        }
    }
}

/// One task constraint on an edge or a single vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub id: String,
    pub family: Family,
    pub edge: Edge,
}

impl ConstraintSpec {
    pub fn new(id: impl Into<String>, family: Family, edge: Edge) -> Self {
        ConstraintSpec {
            id: id.into(),
            family,
            edge,
        }
    }

    pub fn flavor(&self) -> Flavor {
        match self.family {
            Family::DistanceBand { .. } | Family::Visibility { .. } => Flavor::Inequality,
            _ => Flavor::Equality,
        }
    }

    /// Number of scalar rows this constraint contributes.
    pub fn row_count(&self) -> usize {
        match self.family {
            Family::DistanceBand { .. } | Family::VelocityTrack { .. } => 2,
            Family::RelativePose { .. } => 3,
            _ => 1,
        }
    }

    /// Whether the rows constrain velocities directly, with no state-level
    /// residual (velocity tracking). Such rows are skipped by projection and
    /// by gradient finite-difference checks.
    pub fn is_velocity_level(&self) -> bool {
        matches!(self.family, Family::VelocityTrack { .. })
    }
}

/// Block-local evaluation of one constraint: value, per-vehicle Jacobian
/// blocks, and the time right-hand side.
#[derive(Debug, Clone)]
pub struct EdgeEval {
    pub value: DVector<f64>,
    /// rows × nᵢ gradient block for the first vehicle.
    pub jac_i: DMatrix<f64>,
    /// rows × nⱼ gradient block for the second vehicle (0×0 when single).
    pub jac_j: DMatrix<f64>,
    /// Right-hand side T = −∂g/∂t per row.
    pub t_rhs: DVector<f64>,
}

fn heading_of(block: &[f64], c: &ConstraintSpec) -> Result<f64> {
    if block.len() < 3 {
        return Err(Error::DimensionMismatch {
            what: format!(
                "constraint `{}` ({}) needs a vehicle with a heading",
                c.id,
                c.family.name()
            ),
            expected: 3,
            got: block.len(),
        });
    }
    Ok(block[2])
}

/// Evaluate one constraint into per-vehicle blocks. This is the single
/// source for values, Jacobians and time terms; the full-width operations
/// and the leader-follower solver both build on it.
pub fn edge_eval(c: &ConstraintSpec, state: &JointState, t: f64) -> Result<EdgeEval> {
    let (vi, vj) = c.edge.vehicles();
    edge_eval_blocks(
        c,
        state.block_slice(vi),
        vj.map(|j| state.block_slice(j)),
        t,
    )
}

/// Block-local variant of [`edge_eval`]: sees only the states of the
/// vehicles on the constraint's edge. The leader-follower solver calls this
/// directly, which makes its information pattern decentralized by
/// construction.
pub fn edge_eval_blocks(
    c: &ConstraintSpec,
    block_i: &[f64],
    block_j: Option<&[f64]>,
    t: f64,
) -> Result<EdgeEval> {
    let ni = block_i.len();
    let nj = block_j.map(|b| b.len()).unwrap_or(0);
    let xy_i = (block_i[0], block_i[1]);
    let xy_j = block_j.map(|b| (b[0], b[1]));
    match &c.family {
        Family::DistanceEq { d } => {
            let (xi, yi) = xy_i;
            let (xj, yj) = xy_j.expect("pair edge");
            let (dx, dy) = (xi - xj, yi - yj);
            let dist = d.eval(t)?;
            let value = DVector::from_vec(vec![0.5 * (dx * dx + dy * dy) - 0.5 * dist * dist]);
            let mut jac_i = DMatrix::zeros(1, ni);
            let mut jac_j = DMatrix::zeros(1, nj);
            jac_i[(0, 0)] = dx;
            jac_i[(0, 1)] = dy;
            jac_j[(0, 0)] = -dx;
            jac_j[(0, 1)] = -dy;
            let t_rhs = DVector::from_vec(vec![dist * d.eval_deriv(t)?]);
            Ok(EdgeEval {
                value,
                jac_i,
                jac_j,
                t_rhs,
            })
        }
        Family::DistanceBand { d_min, d_max } => {
            let (xi, yi) = xy_i;
            let (xj, yj) = xy_j.expect("pair edge");
            let (dx, dy) = (xi - xj, yi - yj);
            let half_sq = 0.5 * (dx * dx + dy * dy);
            let lo = d_min.eval(t)?;
            let hi = d_max.eval(t)?;
            if lo >= hi {
                return Err(Error::EvalError {
                    t,
                    detail: format!(
                        "constraint `{}`: empty band d_min={lo} >= d_max={hi}",
                        c.id
                    ),
                });
            }
            let value = DVector::from_vec(vec![half_sq - 0.5 * hi * hi, 0.5 * lo * lo - half_sq]);
            let mut jac_i = DMatrix::zeros(2, ni);
            let mut jac_j = DMatrix::zeros(2, nj);
            jac_i[(0, 0)] = dx;
            jac_i[(0, 1)] = dy;
            jac_j[(0, 0)] = -dx;
            jac_j[(0, 1)] = -dy;
            jac_i[(1, 0)] = -dx;
            jac_i[(1, 1)] = -dy;
            jac_j[(1, 0)] = dx;
            jac_j[(1, 1)] = dy;
            let t_rhs = DVector::from_vec(vec![
                hi * d_max.eval_deriv(t)?,
                -lo * d_min.eval_deriv(t)?,
            ]);
            Ok(EdgeEval {
                value,
                jac_i,
                jac_j,
                t_rhs,
            })
        }
        Family::RelativePose { dx, dy, dtheta } => {
            let (xi, yi) = xy_i;
            let (xj, yj) = xy_j.expect("pair edge");
            let ti = heading_of(block_i, c)?;
            let tj = heading_of(block_j.expect("pair edge"), c)?;
            let value = DVector::from_vec(vec![
                xi - xj - dx.eval(t)?,
                yi - yj - dy.eval(t)?,
                wrap_angle(ti - tj - dtheta.eval(t)?),
            ]);
            let mut jac_i = DMatrix::zeros(3, ni);
            let mut jac_j = DMatrix::zeros(3, nj);
            for k in 0..3 {
                jac_i[(k, k)] = 1.0;
                jac_j[(k, k)] = -1.0;
            }
            let t_rhs = DVector::from_vec(vec![
                dx.eval_deriv(t)?,
                dy.eval_deriv(t)?,
                dtheta.eval_deriv(t)?,
            ]);
            Ok(EdgeEval {
                value,
                jac_i,
                jac_j,
                t_rhs,
            })
        }
        Family::HeadingEq { delta } => {
            let ti = heading_of(block_i, c)?;
            let tj = heading_of(block_j.expect("pair edge"), c)?;
            let value = DVector::from_vec(vec![wrap_angle(ti - tj - delta.eval(t)?)]);
            let mut jac_i = DMatrix::zeros(1, ni);
            let mut jac_j = DMatrix::zeros(1, nj);
            jac_i[(0, 2)] = 1.0;
            jac_j[(0, 2)] = -1.0;
            let t_rhs = DVector::from_vec(vec![delta.eval_deriv(t)?]);
            Ok(EdgeEval {
                value,
                jac_i,
                jac_j,
                t_rhs,
            })
        }
        Family::Visibility { alpha } => {
            let (xi, yi) = xy_i;
            let (xj, yj) = xy_j.expect("pair edge");
            let tj = heading_of(block_j.expect("pair edge"), c)?;
            let a = alpha.eval(t)?;
            if a <= 0.0 || a >= std::f64::consts::PI {
                return Err(Error::EvalError {
                    t,
                    detail: format!("constraint `{}`: apex half-angle {a} outside (0, pi)", c.id),
                });
            }
            let (ax, ay) = (xi - xj, yi - yj);
            let r2 = ax * ax + ay * ay;
            let r = r2.sqrt();
            if r < DEGENERACY_EPS {
                return Err(Error::DegenerateGeometry {
                    constraint: c.id.clone(),
                    detail: format!("inter-vehicle distance {r:.2e} below {DEGENERACY_EPS:.0e}"),
                });
            }
            let (bx, by) = (tj.cos(), tj.sin());
            // mu = <a, c_j> with c_j the left-normal of the body direction
            let mu = -ax * by + ay * bx;
            let value = DVector::from_vec(vec![a.cos() - (ax * bx + ay * by) / r]);
            let mut jac_i = DMatrix::zeros(1, ni);
            let mut jac_j = DMatrix::zeros(1, nj);
            let r3 = r2 * r;
            jac_i[(0, 0)] = -mu * ay / r3;
            jac_i[(0, 1)] = mu * ax / r3;
            jac_j[(0, 0)] = mu * ay / r3;
            jac_j[(0, 1)] = -mu * ax / r3;
            jac_j[(0, 2)] = -mu / r;
            let t_rhs = DVector::from_vec(vec![a.sin() * alpha.eval_deriv(t)?]);
            Ok(EdgeEval {
                value,
                jac_i,
                jac_j,
                t_rhs,
            })
        }
        Family::VelocityTrack { v_r, u_r } => {
            let theta = heading_of(block_i, c)?;
            let value = DVector::zeros(2);
            let mut jac_i = DMatrix::zeros(2, ni);
            jac_i[(0, 0)] = theta.cos();
            jac_i[(0, 1)] = theta.sin();
            jac_i[(1, 2)] = 1.0;
            let t_rhs = DVector::from_vec(vec![v_r.eval(t)?, u_r.eval(t)?]);
            Ok(EdgeEval {
                value,
                jac_i,
                jac_j: DMatrix::zeros(0, 0),
                t_rhs,
            })
        }
    }
}

/// Constraint value(s) at `(P, t)`.
pub fn eval_constraint(c: &ConstraintSpec, state: &JointState, t: f64) -> Result<DVector<f64>> {
    Ok(edge_eval(c, state, t)?.value)
}

/// Full-width Jacobian (row_count × N) with zero columns for vehicles not
/// on the constraint's edge.
pub fn constraint_jacobian(
    c: &ConstraintSpec,
    state: &JointState,
    t: f64,
) -> Result<DMatrix<f64>> {
    let e = edge_eval(c, state, t)?;
    Ok(scatter_jacobian(c, state, &e))
}

/// Scatter block Jacobians into the N-wide row layout.
pub fn scatter_jacobian(c: &ConstraintSpec, state: &JointState, e: &EdgeEval) -> DMatrix<f64> {
    let rows = e.value.len();
    let mut full = DMatrix::zeros(rows, state.dim());
    let (vi, vj) = c.edge.vehicles();
    full.view_mut((0, state.offset(vi)), (rows, e.jac_i.ncols()))
        .copy_from(&e.jac_i);
    if let Some(j) = vj {
        full.view_mut((0, state.offset(j)), (rows, e.jac_j.ncols()))
            .copy_from(&e.jac_j);
    }
    full
}

/// Time right-hand side `T = −∂g/∂t` per row, so maintained rows satisfy
/// `∂g/∂P·Ṗ = T` (equality) or `≤ T` (inequality).
pub fn time_partial(c: &ConstraintSpec, state: &JointState, t: f64) -> Result<DVector<f64>> {
    Ok(edge_eval(c, state, t)?.t_rhs)
}

/// Magnitude scale of one row, used to make the activity band
/// scale-invariant: squared bound for distance rows, 1 for angle/cosine
/// rows.
pub fn activation_scale(c: &ConstraintSpec, row: usize, t: f64) -> Result<f64> {
    Ok(match &c.family {
        Family::DistanceBand { d_min, d_max } => {
            if row == 0 {
                let v = d_max.eval(t)?;
                v * v
            } else {
                let v = d_min.eval(t)?;
                v * v
            }
        }
        _ => 1.0,
    })
}

/// Decides when an inequality row counts as active and how its rate bound
/// is tightened near the boundary.
///
/// The base band `eps_act·max(1, scale)` realizes exact-boundary activation
/// in floating point. The two optional discrete-time corrections matter at
/// finite step size h:
///
/// * `lookahead_dt` widens the band by the distance the row can close in
///   one step under the previous velocity, so a fast approach activates the
///   row one step before contact instead of overshooting through the band;
/// * `pushback_dt` tightens an already-violated row's rate bound to
///   `T − g/dt`, steering it back to the boundary within a step, which
///   stops the slow outward creep that curvature causes when a row sits
///   pinned at `ġ = 0` for thousands of steps.
///
/// Both default to off, which is the plain boundary rule.
#[derive(Debug, Clone, Copy)]
pub struct ActivationWindow {
    pub eps_act: f64,
    pub lookahead_dt: f64,
    pub pushback_dt: f64,
}

impl ActivationWindow {
    pub fn base(eps_act: f64) -> Self {
        ActivationWindow {
            eps_act,
            lookahead_dt: 0.0,
            pushback_dt: 0.0,
        }
    }

    /// Whether a row with value `g`, band scale `scale` and approach rate
    /// `ġ` (under the previous motion) is treated as active.
    pub fn is_active(&self, g: f64, scale: f64, approach_rate: f64) -> bool {
        g >= -(self.eps_act * scale.max(1.0)) - self.lookahead_dt * approach_rate.max(0.0)
    }

    /// Rate bound for an active row, tightened when the row is already past
    /// its boundary.
    pub fn effective_rhs(&self, t_rhs: f64, g: f64) -> f64 {
        if self.pushback_dt > 0.0 {
            t_rhs - g.max(0.0) / self.pushback_dt
        } else {
            t_rhs
        }
    }
}

/// One active inequality row.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveEntry {
    /// Index into the constraint list handed to [`active_set`].
    pub constraint: usize,
    /// Constraint id (for reports).
    pub id: String,
    /// Row index within the constraint.
    pub row: usize,
}

/// The rows currently at their boundary.
#[derive(Debug, Clone, Default)]
pub struct ActiveSet {
    pub entries: Vec<ActiveEntry>,
}

impl ActiveSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Detect the active inequality rows at `(P, t)`: row included iff its value
/// `g ≥ −eps_act · max(1, scale)`. Equality constraints never appear: they
/// are always enforced.
pub fn active_set(
    cs: &[ConstraintSpec],
    state: &JointState,
    t: f64,
    eps_act: f64,
) -> Result<ActiveSet> {
    let mut entries = Vec::new();
    for (idx, c) in cs.iter().enumerate() {
        if c.flavor() != Flavor::Inequality {
            continue;
        }
        let value = eval_constraint(c, state, t)?;
        let window = ActivationWindow::base(eps_act);
        for row in 0..value.len() {
            if window.is_active(value[row], activation_scale(c, row, t)?, 0.0) {
                entries.push(ActiveEntry {
                    constraint: idx,
                    id: c.id.clone(),
                    row,
                });
            }
        }
    }
    Ok(ActiveSet { entries })
}

/// Compare the analytic Jacobian and time term against central differences
/// of the value; returns the max relative error over all entries.
///
/// Velocity-level constraints have no state-level value to differentiate
/// and report 0.
pub fn finite_diff_check(c: &ConstraintSpec, state: &JointState, t: f64, h: f64) -> Result<f64> {
    if c.is_velocity_level() {
        return Ok(0.0);
    }
    let jac = constraint_jacobian(c, state, t)?;
    let t_rhs = time_partial(c, state, t)?;
    let rows = c.row_count();
    let n = state.dim();
    let mut worst: f64 = 0.0;
    let mut rel = |analytic: f64, numeric: f64| {
        let denom = analytic.abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic - numeric).abs() / denom);
    };
    for k in 0..n {
        let mut plus = state.as_vector().clone();
        let mut minus = state.as_vector().clone();
        plus[k] += h;
        minus[k] -= h;
        let gp = eval_constraint(c, &state.with_data(plus)?, t)?;
        let gm = eval_constraint(c, &state.with_data(minus)?, t)?;
        for r in 0..rows {
            rel(jac[(r, k)], (gp[r] - gm[r]) / (2.0 * h));
        }
    }
    let gp = eval_constraint(c, state, t + h)?;
    let gm = eval_constraint(c, state, t - h)?;
    for r in 0..rows {
        // t_rhs is the negated time-partial
        rel(t_rhs[r], -(gp[r] - gm[r]) / (2.0 * h));
    }
    Ok(worst)
}

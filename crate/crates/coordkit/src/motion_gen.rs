//! Virtual-input selection and control recovery.
//!
//! Given a motion basis, the coordinated motion is `Ṗ = K̄ + Σ wₗ·Kₗ`. The
//! virtual inputs `w` are free except where active inequality rows restrict
//! them; selection is a box-constrained least-distance program (a convex
//! quadratic program) instead of trial sampling, which makes it
//! deterministic and certifiable. The actual per-vehicle controls are
//! recovered from the joint velocity by block least squares,
//! `u = (FᵀF)⁻¹Fᵀ(Ṗ − F₀)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feasibility::MotionBasis;
use crate::kinematics::{JointState, VehicleModel};
use crate::qp::{least_distance_from, LdpOutcome};

/// How to pick virtual inputs among the feasible ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Keep the joint velocity close to the previous step's
    /// (slew-rate minimization).
    MinSlew,
    /// Smallest-norm w.
    Zero,
    /// Track a fixed w vector (open-loop scenarios).
    Fixed,
}

/// Virtual-input selection policy.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualInputPolicy {
    pub objective: Objective,
    /// Lower bound applied to every component of w.
    pub w_min: f64,
    /// Upper bound applied to every component of w.
    pub w_max: f64,
    /// Target vector for [`Objective::Fixed`].
    pub fixed_w: Option<Vec<f64>>,
    /// Slack allowed when verifying the selected w against the active rows.
    pub qp_tolerance: f64,
}

impl Default for VirtualInputPolicy {
    fn default() -> Self {
        VirtualInputPolicy {
            objective: Objective::MinSlew,
            w_min: -10.0,
            w_max: 10.0,
            fixed_w: None,
            qp_tolerance: 1e-8,
        }
    }
}

/// The abstract motion `K̄ + Σ wₗ·Kₗ`.
pub fn abstract_motion(basis: &MotionBasis, w: &DVector<f64>) -> Result<DVector<f64>> {
    if w.len() != basis.kappa {
        return Err(Error::DimensionMismatch {
            what: "virtual input vector".into(),
            expected: basis.kappa,
            got: w.len(),
        });
    }
    Ok(&basis.special + &basis.basis * w)
}

/// Select virtual inputs subject to the active inequality rows
/// `rows·Ṗ ≤ rhs` and the componentwise box of the policy.
///
/// Under [`Objective::MinSlew`] the selected w minimizes
/// `‖(K̄ + Σ wₗKₗ − prev_pdot)/dt‖₂²` over the feasible set; `Zero`
/// minimizes `‖w‖`; `Fixed` stays as close to `fixed_w` as the constraints
/// allow. Since the basis columns are orthonormal, all three reduce to a
/// least-distance program in w, whose unique minimizer is also the
/// deterministic tie-break.
pub fn select_virtual_inputs(
    basis: &MotionBasis,
    active_rows: (&DMatrix<f64>, &DVector<f64>),
    policy: &VirtualInputPolicy,
    prev_pdot: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if dt <= 0.0 {
        return Err(Error::DimensionMismatch {
            what: "step size".into(),
            expected: 1,
            got: 0,
        });
    }
    let kappa = basis.kappa;
    let (ineq, ineq_rhs) = active_rows;
    if ineq.nrows() != ineq_rhs.len() || (ineq.nrows() > 0 && ineq.ncols() != basis.special.len())
    {
        return Err(Error::DimensionMismatch {
            what: "active inequality rows".into(),
            expected: ineq.nrows(),
            got: ineq_rhs.len(),
        });
    }

    let w0 = match policy.objective {
        Objective::Zero => DVector::zeros(kappa),
        Objective::Fixed => {
            let fixed = policy
                .fixed_w
                .as_ref()
                .ok_or_else(|| Error::DimensionMismatch {
                    what: "fixed_w for the fixed objective".into(),
                    expected: kappa,
                    got: 0,
                })?;
            if fixed.len() != kappa {
                return Err(Error::DimensionMismatch {
                    what: "fixed_w".into(),
                    expected: kappa,
                    got: fixed.len(),
                });
            }
            DVector::from_row_slice(fixed)
        }
        // ‖K̄ + Bw − prev‖² = ‖w − Bᵀ(prev − K̄)‖² + const for orthonormal B
        Objective::MinSlew => basis.basis.transpose() * (prev_pdot - &basis.special),
    };

    if kappa == 0 {
        // nothing to choose; the motion is fully determined
        let residual = ineq * &basis.special - ineq_rhs;
        if residual.iter().any(|r| *r > policy.qp_tolerance) {
            return Err(Error::NoFeasibleVirtualInput);
        }
        return Ok(DVector::zeros(0));
    }

    // G w <= h stacks the active rows (in w coordinates) over the box
    let m = ineq.nrows();
    let mut g = DMatrix::zeros(m + 2 * kappa, kappa);
    let mut h = DVector::zeros(m + 2 * kappa);
    if m > 0 {
        let rows_w = ineq * &basis.basis;
        g.view_mut((0, 0), (m, kappa)).copy_from(&rows_w);
        let shift = ineq_rhs - ineq * &basis.special;
        h.rows_mut(0, m).copy_from(&shift);
    }
    for k in 0..kappa {
        g[(m + k, k)] = 1.0;
        h[m + k] = policy.w_max;
        g[(m + kappa + k, k)] = -1.0;
        h[m + kappa + k] = -policy.w_min;
    }

    let w = match least_distance_from(&w0, &g, &h, 1e-10) {
        LdpOutcome::Solved(w) => w,
        LdpOutcome::Infeasible => return Err(Error::NoFeasibleVirtualInput),
    };
    let slack = (&g * &w - &h).iter().cloned().fold(f64::MIN, f64::max);
    if slack > policy.qp_tolerance {
        return Err(Error::NoFeasibleVirtualInput);
    }
    Ok(w)
}

/// Recover per-vehicle controls from a target joint velocity: block
/// least squares `uᵢ = argmin ‖f₀ᵢ + Fᵢuᵢ − ṗᵢ‖`. For valid motions the
/// reconstruction is exact.
pub fn recover_controls(
    models: &[VehicleModel],
    state: &JointState,
    pdot_target: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    if pdot_target.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            what: "target joint velocity".into(),
            expected: state.dim(),
            got: pdot_target.len(),
        });
    }
    let mut controls = Vec::with_capacity(models.len());
    for (i, model) in models.iter().enumerate() {
        let p = state.block_slice(i);
        let f0 = model.drift(p)?;
        let fields = model.control_fields(p)?;
        let local = pdot_target.rows(state.offset(i), model.state_dim());
        let rhs = local - f0;
        let svd = fields.clone().svd(true, true);
        let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        if smin < 1e-9 {
            return Err(Error::RankDeficientFields { vehicle: i });
        }
        let u = svd
            .solve(&rhs, 1e-13)
            .map_err(|_| Error::RankDeficientFields { vehicle: i })?;
        controls.push(u);
    }
    Ok(controls)
}

/// Stack per-vehicle controls into one vector (the layout of the
/// block-diagonal field matrix).
pub fn flatten_controls(controls: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = controls.iter().map(|u| u.len()).sum();
    let mut flat = DVector::zeros(total);
    let mut at = 0;
    for u in controls {
        flat.rows_mut(at, u.len()).copy_from(u);
        at += u.len();
    }
    flat
}

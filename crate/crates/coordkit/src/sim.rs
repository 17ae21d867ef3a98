//! Closed-loop simulation: assemble → check → solve basis → select virtual
//! inputs → recover controls → integrate.
//!
//! Integration is classical 4-stage Runge–Kutta at a fixed step. The
//! virtual inputs are selected once per step (at the step's start state)
//! and held constant across the four stages; the stages re-solve the
//! equality system at their own states and rotate the re-solved null-space
//! basis onto the step-start basis so the frozen `w` keeps its meaning.
//! Because every stage velocity satisfies the stacked equality system
//! exactly, equality constraints are first integrals of the stage fields
//! and drift only by the integrator's own O(h⁵) local error.
//!
//! A Gauss–Newton projection after each step pulls the state back onto the
//! equality manifold; inequality satisfaction relies on early activation
//! plus the virtual-input filter, and deliberately is not projected so the
//! monitor can catch filter failures.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{
    activation_scale, edge_eval, scatter_jacobian, ActivationWindow, ConstraintSpec, Flavor,
};
use crate::error::{Error, Result};
use crate::feasibility::{align_basis_to, assemble, feasibility_report, solve_basis, Feasibility, RANK_TOL};
use crate::kinematics::{stack_fields, JointState, VehicleModel};
use crate::leader_follower::{
    cascade_motion, CascadeFrozen, CascadeInput, CoordinationTree, RootPolicy,
};
use crate::motion_gen::{
    abstract_motion, recover_controls, select_virtual_inputs, VirtualInputPolicy,
};
use crate::temporal::{temporal_cone_membership, ConeQuery};

/// Safety factor on the one-step lookahead used for activation.
const LOOKAHEAD_FACTOR: f64 = 1.5;

/// Simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Fixed integration step (s).
    pub h: f64,
    /// Total duration (s); the log holds `floor(duration/h) + 1` samples.
    pub duration: f64,
    /// Activation band multiplier. Inflated relative to the library default
    /// so rows activate slightly before their boundary at finite step size.
    pub eps_act: f64,
    pub projection_enabled: bool,
    pub projection_tol: f64,
    pub projection_max_iters: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1e-3,
            duration: 10.0,
            eps_act: 1e-3,
            projection_enabled: true,
            projection_tol: 1e-10,
            projection_max_iters: 25,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.duration >= self.h) || !(self.projection_tol > 0.0) {
            return Err(Error::SchemaError {
                path: "sim".into(),
                detail: "requires h > 0, duration >= h, projection_tol > 0".into(),
            });
        }
        Ok(())
    }

    fn window(&self) -> ActivationWindow {
        ActivationWindow {
            eps_act: self.eps_act,
            lookahead_dt: LOOKAHEAD_FACTOR * self.h,
            pushback_dt: self.h,
        }
    }
}

/// Centralized solve of the whole group, or leader-first cascade over a
/// directed tree.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineMode {
    Centralized,
    LeaderFollower {
        tree: CoordinationTree,
        root_policy: RootPolicy,
    },
}

/// Everything a step needs: models, constraints in declaration order, the
/// virtual-input policy and the solve mode.
pub struct Pipeline<'a> {
    pub models: &'a [VehicleModel],
    pub constraints: &'a [ConstraintSpec],
    pub policy: &'a VirtualInputPolicy,
    pub mode: &'a PipelineMode,
}

impl<'a> Pipeline<'a> {
    fn equality_cs(&self) -> Vec<ConstraintSpec> {
        self.constraints
            .iter()
            .filter(|c| c.flavor() == Flavor::Equality)
            .cloned()
            .collect()
    }

    fn inequality_cs(&self) -> Vec<ConstraintSpec> {
        self.constraints
            .iter()
            .filter(|c| c.flavor() == Flavor::Inequality)
            .cloned()
            .collect()
    }
}

/// Identity of one scalar constraint row in the log.
#[derive(Debug, Clone, PartialEq)]
pub struct RowId {
    pub constraint: String,
    pub row: usize,
    pub flavor: Flavor,
}

/// One logged instant.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub t: f64,
    pub state: Vec<f64>,
    /// Per-vehicle control vectors chosen at this instant.
    pub controls: Vec<Vec<f64>>,
    /// Virtual inputs (centralized: κ entries; leader-follower: the
    /// followers' inputs concatenated in topological order).
    pub w: Vec<f64>,
    /// All constraint rows' values, in declaration order.
    pub constraint_values: Vec<f64>,
    /// Activity flags for the inequality rows, in declaration order.
    pub active: Vec<bool>,
    /// Temporal-cone membership of the chosen velocity at the active rows.
    pub cone_ok: bool,
    /// Max invariance-condition value over the active rows (0 when none).
    pub invariance_residual: f64,
    /// ‖Ω·Ṗ − T‖∞ over the kinematic and equality rows.
    pub eq_residual: f64,
}

/// Time-indexed log of one run.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub samples: Vec<SampleRecord>,
    /// Layout of `constraint_values`.
    pub rows: Vec<RowId>,
    /// Layout of `active` (the inequality subset of `rows`).
    pub ineq_rows: Vec<RowId>,
    /// Number of virtual-input columns.
    pub w_len: usize,
    pub kappa_min: usize,
    pub kappa_max: usize,
    /// Ranks of the stacked equality system at the initial state.
    pub rank_omega: usize,
    pub rank_augmented: usize,
}

/// A finished or aborted run: the log always holds whatever was produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    pub error: Option<Error>,
}

fn constraint_rows(constraints: &[ConstraintSpec]) -> (Vec<RowId>, Vec<RowId>) {
    let mut rows = Vec::new();
    let mut ineq = Vec::new();
    for c in constraints {
        for r in 0..c.row_count() {
            let id = RowId {
                constraint: c.id.clone(),
                row: r,
                flavor: c.flavor(),
            };
            rows.push(id.clone());
            if c.flavor() == Flavor::Inequality {
                ineq.push(id);
            }
        }
    }
    (rows, ineq)
}

/// The motion chosen at a step start, with everything frozen that the
/// stages reuse.
struct StepPlan {
    pdot: DVector<f64>,
    w: DVector<f64>,
    frozen: FrozenChoice,
}

enum FrozenChoice {
    Centralized {
        w: DVector<f64>,
        basis_ref: DMatrix<f64>,
    },
    Cascade(CascadeFrozen),
}

/// Inequality rows the virtual-input program must respect at this step,
/// with lookahead activation and boundary pushback applied.
fn enforcement_rows(
    inequality: &[ConstraintSpec],
    state: &JointState,
    t: f64,
    window: &ActivationWindow,
    prev_pdot: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for c in inequality {
        let e = edge_eval(c, state, t)?;
        let jac = scatter_jacobian(c, state, &e);
        for r in 0..e.value.len() {
            let grad = jac.row(r).transpose();
            let approach = grad.dot(prev_pdot) - e.t_rhs[r];
            if window.is_active(e.value[r], activation_scale(c, r, t)?, approach) {
                rows.push((grad, window.effective_rhs(e.t_rhs[r], e.value[r])));
            }
        }
    }
    let mut omega = DMatrix::zeros(rows.len(), state.dim());
    let mut rhs = DVector::zeros(rows.len());
    for (k, (grad, b)) in rows.iter().enumerate() {
        omega.row_mut(k).tr_copy_from(grad);
        rhs[k] = *b;
    }
    Ok((omega, rhs))
}

fn plan_step(
    pipeline: &Pipeline<'_>,
    state: &JointState,
    t: f64,
    cfg: &SimConfig,
    prev_pdot: &DVector<f64>,
) -> Result<StepPlan> {
    let equality = pipeline.equality_cs();
    let inequality = pipeline.inequality_cs();
    match pipeline.mode {
        PipelineMode::Centralized => {
            let stack = assemble(
                pipeline.models,
                &equality,
                &inequality,
                state,
                t,
                cfg.eps_act,
            )?;
            if feasibility_report(&stack, RANK_TOL).verdict == Feasibility::Infeasible {
                return Err(Error::InfeasibleSystem {
                    residual: f64::NAN,
                });
            }
            let basis = solve_basis(&stack)?;
            let (ineq_omega, ineq_rhs) =
                enforcement_rows(&inequality, state, t, &cfg.window(), prev_pdot)?;
            let w = select_virtual_inputs(
                &basis,
                (&ineq_omega, &ineq_rhs),
                pipeline.policy,
                prev_pdot,
                cfg.h,
            )?;
            let pdot = abstract_motion(&basis, &w)?;
            Ok(StepPlan {
                pdot,
                w: w.clone(),
                frozen: FrozenChoice::Centralized {
                    w,
                    basis_ref: basis.basis.clone(),
                },
            })
        }
        PipelineMode::LeaderFollower { tree, root_policy } => {
            let input = CascadeInput {
                models: pipeline.models,
                tree,
                root_policy,
                constraints: pipeline.constraints,
                policy: pipeline.policy,
                window: cfg.window(),
            };
            let motion = cascade_motion(&input, state, t, prev_pdot, cfg.h, None)?;
            Ok(StepPlan {
                pdot: motion.pdot.clone(),
                w: motion.w_flat.clone(),
                frozen: FrozenChoice::Cascade(motion.frozen),
            })
        }
    }
}

/// Stage re-evaluation with the step-start choice frozen.
fn stage_motion(
    pipeline: &Pipeline<'_>,
    state: &JointState,
    t: f64,
    cfg: &SimConfig,
    prev_pdot: &DVector<f64>,
    frozen: &FrozenChoice,
) -> Result<DVector<f64>> {
    match frozen {
        FrozenChoice::Centralized { w, basis_ref } => {
            let equality = pipeline.equality_cs();
            let stack = assemble(pipeline.models, &equality, &[], state, t, cfg.eps_act)?;
            let basis = solve_basis(&stack)?;
            let aligned = align_basis_to(&basis, basis_ref)?;
            Ok(&basis.special + aligned * w)
        }
        FrozenChoice::Cascade(frozen) => {
            let PipelineMode::LeaderFollower { tree, root_policy } = pipeline.mode else {
                unreachable!("cascade freeze outside leader-follower mode");
            };
            let input = CascadeInput {
                models: pipeline.models,
                tree,
                root_policy,
                constraints: pipeline.constraints,
                policy: pipeline.policy,
                window: cfg.window(),
            };
            Ok(cascade_motion(&input, state, t, prev_pdot, cfg.h, Some(frozen))?.pdot)
        }
    }
}

/// One classical Runge–Kutta step of size `cfg.h` from `(state, t)`; the
/// virtual input is chosen at the start state and held across the stages.
/// Returns the new state and the log record for the start instant.
pub fn step(
    pipeline: &Pipeline<'_>,
    state: &JointState,
    t: f64,
    cfg: &SimConfig,
    prev_pdot: &DVector<f64>,
) -> Result<(JointState, SampleRecord)> {
    let plan = plan_step(pipeline, state, t, cfg, prev_pdot).map_err(|e| e.at_time(t))?;
    let record = make_record(pipeline, state, t, cfg, &plan).map_err(|e| e.at_time(t))?;

    let h = cfg.h;
    let k1 = &plan.pdot;
    let at = |offset: f64, k: &DVector<f64>| -> Result<JointState> {
        state.with_data(state.as_vector() + k * (h * offset))
    };
    let s2 = at(0.5, k1)?;
    let k2 = stage_motion(pipeline, &s2, t + 0.5 * h, cfg, prev_pdot, &plan.frozen)
        .map_err(|e| e.at_time(t + 0.5 * h))?;
    let s3 = at(0.5, &k2)?;
    let k3 = stage_motion(pipeline, &s3, t + 0.5 * h, cfg, prev_pdot, &plan.frozen)
        .map_err(|e| e.at_time(t + 0.5 * h))?;
    let s4 = at(1.0, &k3)?;
    let k4 = stage_motion(pipeline, &s4, t + h, cfg, prev_pdot, &plan.frozen)
        .map_err(|e| e.at_time(t + h))?;

    let next = state.with_data(
        state.as_vector() + (k1 + k2 * 2.0 + k3 * 2.0 + &k4) * (h / 6.0),
    )?;
    let next = if cfg.projection_enabled {
        let equality = pipeline.equality_cs();
        project_equalities(&next, &equality, t + h, cfg).map_err(|e| e.at_time(t + h))?
    } else {
        next
    };
    Ok((next, record))
}

fn make_record(
    pipeline: &Pipeline<'_>,
    state: &JointState,
    t: f64,
    cfg: &SimConfig,
    plan: &StepPlan,
) -> Result<SampleRecord> {
    let controls = recover_controls(pipeline.models, state, &plan.pdot)?;
    let inequality = pipeline.inequality_cs();
    let equality = pipeline.equality_cs();

    let mut constraint_values = Vec::new();
    let mut active_flags = Vec::new();
    for c in pipeline.constraints {
        let e = edge_eval(c, state, t)?;
        for r in 0..e.value.len() {
            constraint_values.push(e.value[r]);
            if c.flavor() == Flavor::Inequality {
                let window = ActivationWindow::base(cfg.eps_act);
                active_flags.push(window.is_active(e.value[r], activation_scale(c, r, t)?, 0.0));
            }
        }
    }

    // diagnostics on the boundary-rule active set
    let mut active_rows = Vec::new();
    for c in &inequality {
        let e = edge_eval(c, state, t)?;
        let jac = scatter_jacobian(c, state, &e);
        for r in 0..e.value.len() {
            let window = ActivationWindow::base(cfg.eps_act);
            if window.is_active(e.value[r], activation_scale(c, r, t)?, 0.0) {
                active_rows.push((jac.row(r).transpose(), -e.t_rhs[r]));
            }
        }
    }
    let invariance_residual = active_rows
        .iter()
        .map(|(grad, dgdt)| grad.dot(&plan.pdot) + dgdt)
        .fold(0.0f64, f64::max);
    let cone_ok = temporal_cone_membership(&ConeQuery {
        velocity: plan.pdot.clone(),
        active_rows,
    });

    let stack = assemble(pipeline.models, &equality, &[], state, t, cfg.eps_act)?;
    let eq_residual = if stack.omega.nrows() > 0 {
        (&stack.omega * &plan.pdot - &stack.rhs).abs().max()
    } else {
        0.0
    };

    Ok(SampleRecord {
        t,
        state: state.as_slice().to_vec(),
        controls: controls.iter().map(|u| u.as_slice().to_vec()).collect(),
        w: plan.w.as_slice().to_vec(),
        constraint_values,
        active: active_flags,
        cone_ok,
        invariance_residual,
        eq_residual,
    })
}

/// Gauss–Newton projection onto the equality manifold `Φ(P, t) = 0`:
/// `x ← x − Jᵀ(JJᵀ)⁻¹Φ` until `‖Φ‖∞ ≤ projection_tol`. Kinematic rows
/// constrain velocities, not states, and are not touched; velocity-level
/// equality rows have no state residual and are skipped.
pub fn project_equalities(
    state: &JointState,
    equality_cs: &[ConstraintSpec],
    t: f64,
    cfg: &SimConfig,
) -> Result<JointState> {
    let position_cs: Vec<&ConstraintSpec> = equality_cs
        .iter()
        .filter(|c| !c.is_velocity_level())
        .collect();
    if position_cs.is_empty() {
        return Ok(state.clone());
    }
    let mut current = state.clone();
    let mut residual = f64::MAX;
    for _ in 0..cfg.projection_max_iters.max(1) {
        let mut values = Vec::new();
        let mut rows: Vec<DVector<f64>> = Vec::new();
        for c in &position_cs {
            let e = edge_eval(c, &current, t)?;
            let jac = scatter_jacobian(c, &current, &e);
            for r in 0..e.value.len() {
                values.push(e.value[r]);
                rows.push(jac.row(r).transpose());
            }
        }
        let m = values.len();
        let phi = DVector::from_vec(values);
        residual = phi.abs().max();
        if residual <= cfg.projection_tol {
            return Ok(current);
        }
        let mut jac = DMatrix::zeros(m, state.dim());
        for (k, row) in rows.iter().enumerate() {
            jac.row_mut(k).tr_copy_from(row);
        }
        let gram = &jac * jac.transpose();
        let svd = gram.svd(true, true);
        let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        if smin < 1e-12 {
            return Err(Error::ProjectionDiverged { residual });
        }
        let y = svd
            .solve(&phi, 1e-13)
            .map_err(|_| Error::ProjectionDiverged { residual })?;
        let next = current.as_vector() - jac.transpose() * y;
        current = current.with_data(next)?;
    }
    // converged exactly at the last iterate?
    let mut worst: f64 = 0.0;
    for c in &position_cs {
        let e = edge_eval(c, &current, t)?;
        worst = worst.max(e.value.abs().max());
    }
    if worst <= cfg.projection_tol {
        Ok(current)
    } else {
        Err(Error::ProjectionDiverged { residual })
    }
}

/// Verify the start state: equality rows within `projection_tol`
/// (projecting first when projection is enabled) and inequality rows
/// strictly negative.
pub fn prepare_initial_state(
    pipeline: &Pipeline<'_>,
    state: &JointState,
    cfg: &SimConfig,
) -> Result<JointState> {
    let equality = pipeline.equality_cs();
    let state = if cfg.projection_enabled {
        project_equalities(state, &equality, 0.0, cfg)
            .map_err(|e| Error::InitialStateInfeasible(e.to_string()))?
    } else {
        state.clone()
    };
    for c in &equality {
        if c.is_velocity_level() {
            continue;
        }
        let v = edge_eval(c, &state, 0.0)?.value;
        if v.abs().max() > cfg.projection_tol.max(1e-9) {
            return Err(Error::InitialStateInfeasible(format!(
                "equality `{}` residual {:.3e} at t=0",
                c.id,
                v.abs().max()
            )));
        }
    }
    for c in pipeline.inequality_cs() {
        let v = edge_eval(&c, &state, 0.0)?.value;
        for r in 0..v.len() {
            if v[r] >= 0.0 {
                return Err(Error::InitialStateInfeasible(format!(
                    "inequality `{}` row {} value {:.3e} not strictly negative at t=0",
                    c.id, r, v[r]
                )));
            }
        }
    }
    Ok(state)
}

/// Run the closed loop over `[0, duration]`. On error the outcome carries
/// the partial log together with the time-annotated error.
pub fn run(pipeline: &Pipeline<'_>, initial: &JointState, cfg: &SimConfig) -> RunOutcome {
    let (rows, ineq_rows) = constraint_rows(pipeline.constraints);
    let mut log = TrajectoryLog {
        samples: Vec::new(),
        rows,
        ineq_rows,
        w_len: 0,
        kappa_min: usize::MAX,
        kappa_max: 0,
        rank_omega: 0,
        rank_augmented: 0,
    };
    let fail = |e: Error, log: TrajectoryLog| RunOutcome {
        log,
        error: Some(e),
    };

    if let Err(e) = cfg.validate() {
        return fail(e, log);
    }
    let state0 = match prepare_initial_state(pipeline, initial, cfg) {
        Ok(s) => s,
        Err(e) => return fail(e, log),
    };

    // rank metadata at the initial state
    {
        let equality = pipeline.equality_cs();
        let inequality = pipeline.inequality_cs();
        match assemble(
            pipeline.models,
            &equality,
            &inequality,
            &state0,
            0.0,
            cfg.eps_act,
        ) {
            Ok(stack) => {
                let report = feasibility_report(&stack, RANK_TOL);
                log.rank_omega = report.rank_omega;
                log.rank_augmented = report.rank_augmented;
            }
            Err(e) => return fail(e, log),
        }
    }

    let steps = (cfg.duration / cfg.h).floor() as usize;
    let mut state = state0;
    // slew reference at t = 0 is the drift-only motion
    let mut prev_pdot = match stack_fields(pipeline.models, &state) {
        Ok((f0, _)) => f0,
        Err(e) => return fail(e, log),
    };

    for k in 0..steps {
        let t = k as f64 * cfg.h;
        match step(pipeline, &state, t, cfg, &prev_pdot) {
            Ok((next, record)) => {
                log.w_len = log.w_len.max(record.w.len());
                log.kappa_min = log.kappa_min.min(record.w.len());
                log.kappa_max = log.kappa_max.max(record.w.len());
                prev_pdot = DVector::from_vec(
                    record
                        .state
                        .iter()
                        .enumerate()
                        .map(|(i, _)| (next.as_slice()[i] - record.state[i]) / cfg.h)
                        .collect(),
                );
                log.samples.push(record);
                state = next;
            }
            Err(e) => return fail(e, log),
        }
    }

    // final sample at t = duration
    let t_end = steps as f64 * cfg.h;
    match plan_step(pipeline, &state, t_end, cfg, &prev_pdot)
        .and_then(|plan| make_record(pipeline, &state, t_end, cfg, &plan))
    {
        Ok(record) => {
            log.w_len = log.w_len.max(record.w.len());
            log.kappa_min = log.kappa_min.min(record.w.len());
            log.kappa_max = log.kappa_max.max(record.w.len());
            log.samples.push(record);
        }
        Err(e) => return fail(e.at_time(t_end), log),
    }
    if log.kappa_min == usize::MAX {
        log.kappa_min = 0;
    }
    RunOutcome { log, error: None }
}

/// Post-hoc report for one constraint row.
#[derive(Debug, Clone)]
pub struct RowReport {
    pub constraint: String,
    pub row: usize,
    pub flavor: Flavor,
    /// Max g (inequality) or max |residual| (equality) over the log.
    pub max_value: f64,
    pub t_at_max: f64,
    /// Samples with value above the tolerance.
    pub violations: usize,
}

/// Post-hoc constraint check over a log.
#[derive(Debug, Clone)]
pub struct ViolationReport {
    pub rows: Vec<RowReport>,
    /// Samples whose chosen velocity failed the temporal-cone test.
    pub cone_failures: usize,
    pub tolerance: f64,
    pub sample_count: usize,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.cone_failures == 0 && self.rows.iter().all(|r| r.violations == 0)
    }
}

/// Scan a log: per constraint row the max value, the time it occurred and
/// the number of samples above `tolerance`; plus the count of samples
/// failing the cone-membership check.
pub fn monitor(log: &TrajectoryLog, tolerance: f64) -> ViolationReport {
    let mut rows: Vec<RowReport> = log
        .rows
        .iter()
        .map(|id| RowReport {
            constraint: id.constraint.clone(),
            row: id.row,
            flavor: id.flavor,
            max_value: f64::NEG_INFINITY,
            t_at_max: 0.0,
            violations: 0,
        })
        .collect();
    let mut cone_failures = 0;
    for sample in &log.samples {
        if !sample.cone_ok {
            cone_failures += 1;
        }
        for (k, report) in rows.iter_mut().enumerate() {
            let value = match report.flavor {
                Flavor::Inequality => sample.constraint_values[k],
                Flavor::Equality => sample.constraint_values[k].abs(),
            };
            if value > report.max_value {
                report.max_value = value;
                report.t_at_max = sample.t;
            }
            if value > tolerance {
                report.violations += 1;
            }
        }
    }
    for report in &mut rows {
        if report.max_value == f64::NEG_INFINITY {
            report.max_value = 0.0;
        }
    }
    ViolationReport {
        rows,
        cone_failures,
        tolerance,
        sample_count: log.samples.len(),
    }
}

//! Scenario files: schema, validation, builtins.
//!
//! A scenario is a JSON document listing vehicles (kind, parameters,
//! initial state), constraints (family, edge, parameters: constants or
//! time expressions), the solve mode, the virtual-input policy, and
//! simulation settings. See `docs/scenario-format.md` in the repository
//! root for the full field reference.
//!
//! Six builtin scenarios cover the benchmark coordination tasks: the
//! two-vehicle pairings, the three-vehicle group with a velocity reference
//! and seven inequality rows, the heterogeneous triple with a time-varying
//! distance, and the leader-follower chain with time-varying bands and
//! visibility cones.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSpec, Edge, Family, Flavor};
use crate::error::{Error, Result};
use crate::expr::TimeExpr;
use crate::kinematics::{make_vehicle, JointState, VehicleKind, VehicleModel};
use crate::leader_follower::{topological_order, CoordinationTree, RootPolicy};
use crate::motion_gen::{Objective, VirtualInputPolicy};
use crate::sim::{PipelineMode, SimConfig};

/// A fully validated scenario, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub models: Vec<VehicleModel>,
    pub initial: JointState,
    pub constraints: Vec<ConstraintSpec>,
    pub mode: PipelineMode,
    pub policy: VirtualInputPolicy,
    pub sim: SimConfig,
}

// ---------------------------------------------------------------- schema

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    #[serde(default)]
    name: String,
    #[serde(default)]
    description: String,
    vehicles: Vec<VehicleDoc>,
    constraints: Vec<ConstraintDoc>,
    #[serde(default)]
    mode: ModeDoc,
    #[serde(default)]
    policy: PolicyDoc,
    #[serde(default)]
    sim: SimDoc,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct VehicleDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, f64>,
    initial: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ConstraintDoc {
    id: String,
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vehicle: Option<usize>,
    params: BTreeMap<String, TimeExpr>,
}

#[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ModeDoc {
    #[default]
    Centralized,
    LeaderFollower {
        root: usize,
        edges: Vec<[usize; 2]>,
        root_policy: RootPolicyDoc,
    },
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum RootPolicyDoc {
    VelocityTrack { v_r: TimeExpr, u_r: TimeExpr },
    PrescribedInputs { inputs: Vec<TimeExpr> },
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    #[serde(default = "default_objective")]
    objective: String,
    #[serde(default = "default_w_min")]
    w_min: f64,
    #[serde(default = "default_w_max")]
    w_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_w: Option<Vec<f64>>,
    #[serde(default = "default_qp_tolerance")]
    qp_tolerance: f64,
}

fn default_objective() -> String {
    "min_slew".into()
}
fn default_w_min() -> f64 {
    -10.0
}
fn default_w_max() -> f64 {
    10.0
}
fn default_qp_tolerance() -> f64 {
    1e-8
}

impl Default for PolicyDoc {
    fn default() -> Self {
        PolicyDoc {
            objective: default_objective(),
            w_min: default_w_min(),
            w_max: default_w_max(),
            fixed_w: None,
            qp_tolerance: default_qp_tolerance(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct SimDoc {
    #[serde(default = "default_h")]
    h: f64,
    #[serde(default = "default_duration")]
    duration: f64,
    #[serde(default = "default_eps_act")]
    eps_act: f64,
    #[serde(default = "default_projection")]
    projection: bool,
    #[serde(default = "default_projection_tol")]
    projection_tol: f64,
    #[serde(default = "default_projection_max_iters")]
    projection_max_iters: usize,
}

fn default_h() -> f64 {
    1e-3
}
fn default_duration() -> f64 {
    10.0
}
fn default_eps_act() -> f64 {
    1e-3
}
fn default_projection() -> bool {
    true
}
fn default_projection_tol() -> f64 {
    1e-10
}
fn default_projection_max_iters() -> usize {
    25
}

impl Default for SimDoc {
    fn default() -> Self {
        SimDoc {
            h: default_h(),
            duration: default_duration(),
            eps_act: default_eps_act(),
            projection: default_projection(),
            projection_tol: default_projection_tol(),
            projection_max_iters: default_projection_max_iters(),
        }
    }
}

// ------------------------------------------------------------ validation

fn schema_err(path: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::SchemaError {
        path: path.into(),
        detail: detail.into(),
    }
}

fn take_param(
    doc: &ConstraintDoc,
    idx: usize,
    name: &str,
    used: &mut Vec<String>,
) -> Result<TimeExpr> {
    used.push(name.to_string());
    doc.params.get(name).cloned().ok_or_else(|| {
        schema_err(
            format!("constraints[{idx}].params.{name}"),
            format!("`{}` requires parameter `{name}`", doc.family),
        )
    })
}

fn optional_param(
    doc: &ConstraintDoc,
    name: &str,
    default: f64,
    used: &mut Vec<String>,
) -> TimeExpr {
    used.push(name.to_string());
    doc.params
        .get(name)
        .cloned()
        .unwrap_or_else(|| TimeExpr::constant(default))
}

fn build_constraint(
    doc: &ConstraintDoc,
    idx: usize,
    models: &[VehicleModel],
) -> Result<ConstraintSpec> {
    let n = models.len();
    let mut used: Vec<String> = Vec::new();
    let pair = |idx: usize| -> Result<Edge> {
        let [i, j] = doc.edge.ok_or_else(|| {
            schema_err(
                format!("constraints[{idx}].edge"),
                format!("`{}` needs an `edge` of two vehicle indices", doc.family),
            )
        })?;
        if i >= n || j >= n {
            return Err(schema_err(
                format!("constraints[{idx}].edge"),
                format!("edge ({i}, {j}) out of range for {n} vehicles"),
            ));
        }
        if i == j {
            return Err(schema_err(
                format!("constraints[{idx}].edge"),
                "edge endpoints must differ",
            ));
        }
        Ok(Edge::Pair(i, j))
    };

    let family = match doc.family.as_str() {
        "distance_eq" => Family::DistanceEq {
            d: take_param(doc, idx, "d", &mut used)?,
        },
        "distance_band" => Family::DistanceBand {
            d_min: take_param(doc, idx, "d_min", &mut used)?,
            d_max: take_param(doc, idx, "d_max", &mut used)?,
        },
        "relative_pose" => Family::RelativePose {
            dx: take_param(doc, idx, "delta_x", &mut used)?,
            dy: take_param(doc, idx, "delta_y", &mut used)?,
            dtheta: optional_param(doc, "delta_theta", 0.0, &mut used),
        },
        "heading_eq" => Family::HeadingEq {
            delta: take_param(doc, idx, "delta", &mut used)?,
        },
        "visibility" => Family::Visibility {
            alpha: take_param(doc, idx, "alpha", &mut used)?,
        },
        "velocity_track" => Family::VelocityTrack {
            v_r: take_param(doc, idx, "v_r", &mut used)?,
            u_r: take_param(doc, idx, "u_r", &mut used)?,
        },
        other => {
            return Err(schema_err(
                format!("constraints[{idx}].family"),
                format!("unknown family `{other}`"),
            ))
        }
    };
    for key in doc.params.keys() {
        if !used.contains(key) {
            return Err(schema_err(
                format!("constraints[{idx}].params.{key}"),
                format!("unknown parameter for family `{}`", doc.family),
            ));
        }
    }

    let edge = if matches!(family, Family::VelocityTrack { .. }) {
        let v = doc.vehicle.ok_or_else(|| {
            schema_err(
                format!("constraints[{idx}].vehicle"),
                "`velocity_track` needs a `vehicle` index",
            )
        })?;
        if v >= n {
            return Err(schema_err(
                format!("constraints[{idx}].vehicle"),
                format!("vehicle {v} out of range for {n} vehicles"),
            ));
        }
        Edge::Single(v)
    } else {
        if doc.vehicle.is_some() {
            return Err(schema_err(
                format!("constraints[{idx}].vehicle"),
                "only `velocity_track` takes a `vehicle`; use `edge`",
            ));
        }
        pair(idx)?
    };

    // heading requirements per family
    let needs_heading: Vec<usize> = match (&family, edge) {
        (Family::RelativePose { .. }, Edge::Pair(i, j))
        | (Family::HeadingEq { .. }, Edge::Pair(i, j)) => vec![i, j],
        (Family::Visibility { .. }, Edge::Pair(_, j)) => vec![j],
        (Family::VelocityTrack { .. }, Edge::Single(i)) => vec![i],
        _ => vec![],
    };
    for v in needs_heading {
        if !models[v].kind().has_heading() {
            return Err(schema_err(
                format!("constraints[{idx}]"),
                format!(
                    "family `{}` needs a heading on vehicle {v}, but it is an integrator",
                    doc.family
                ),
            ));
        }
    }

    Ok(ConstraintSpec::new(doc.id.clone(), family, edge))
}

fn build_scenario(doc: ScenarioDoc, fallback_name: &str) -> Result<Scenario> {
    if doc.vehicles.is_empty() {
        return Err(schema_err("vehicles", "at least one vehicle required"));
    }
    let mut models = Vec::with_capacity(doc.vehicles.len());
    let mut flat = Vec::new();
    for (i, v) in doc.vehicles.iter().enumerate() {
        let kind = VehicleKind::from_name(&v.kind)
            .map_err(|e| schema_err(format!("vehicles[{i}].kind"), e.to_string()))?;
        let model = make_vehicle(kind, &v.params)
            .map_err(|e| schema_err(format!("vehicles[{i}].params"), e.to_string()))?;
        if v.initial.len() != model.state_dim() {
            return Err(schema_err(
                format!("vehicles[{i}].initial"),
                format!(
                    "{} needs {} state entries, got {}",
                    v.kind,
                    model.state_dim(),
                    v.initial.len()
                ),
            ));
        }
        flat.extend_from_slice(&v.initial);
        models.push(model);
    }
    let initial = JointState::new(&models, flat).expect("layout checked above");

    let mut ids: Vec<&str> = Vec::new();
    let mut constraints = Vec::with_capacity(doc.constraints.len());
    for (i, c) in doc.constraints.iter().enumerate() {
        if c.id.is_empty() {
            return Err(schema_err(format!("constraints[{i}].id"), "empty id"));
        }
        if ids.contains(&c.id.as_str()) {
            return Err(schema_err(
                format!("constraints[{i}].id"),
                format!("duplicate id `{}`", c.id),
            ));
        }
        ids.push(&c.id);
        constraints.push(build_constraint(c, i, &models)?);
    }

    let mode = match doc.mode {
        ModeDoc::Centralized => PipelineMode::Centralized,
        ModeDoc::LeaderFollower {
            root,
            edges,
            root_policy,
        } => {
            let tree = CoordinationTree {
                vehicle_count: models.len(),
                root,
                edges: edges.iter().map(|[i, j]| (*i, *j)).collect(),
            };
            topological_order(&tree).map_err(|e| schema_err("mode", e.to_string()))?;
            for (i, c) in constraints.iter().enumerate() {
                match c.edge {
                    Edge::Pair(a, b) => {
                        if !tree.edges.contains(&(a, b)) {
                            return Err(schema_err(
                                format!("constraints[{i}].edge"),
                                format!(
                                    "edge ({a}, {b}) is not a (leader, follower) edge of the tree"
                                ),
                            ));
                        }
                    }
                    Edge::Single(_) => {
                        return Err(schema_err(
                            format!("constraints[{i}]"),
                            "velocity_track is expressed by the root policy in \
                             leader_follower mode",
                        ))
                    }
                }
            }
            let root_policy = match root_policy {
                RootPolicyDoc::VelocityTrack { v_r, u_r } => {
                    if !models[root].kind().has_heading() {
                        return Err(schema_err(
                            "mode.root_policy",
                            "velocity_track root policy needs a heading",
                        ));
                    }
                    RootPolicy::VelocityTrack { v_r, u_r }
                }
                RootPolicyDoc::PrescribedInputs { inputs } => {
                    if inputs.len() != models[root].control_dim() {
                        return Err(schema_err(
                            "mode.root_policy.inputs",
                            format!(
                                "root vehicle has {} inputs, got {}",
                                models[root].control_dim(),
                                inputs.len()
                            ),
                        ));
                    }
                    RootPolicy::PrescribedInputs { inputs }
                }
            };
            PipelineMode::LeaderFollower { tree, root_policy }
        }
    };

    let objective = match doc.policy.objective.as_str() {
        "min_slew" => Objective::MinSlew,
        "zero" => Objective::Zero,
        "fixed" => Objective::Fixed,
        other => {
            return Err(schema_err(
                "policy.objective",
                format!("unknown objective `{other}` (min_slew | zero | fixed)"),
            ))
        }
    };
    if objective == Objective::Fixed && doc.policy.fixed_w.is_none() {
        return Err(schema_err(
            "policy.fixed_w",
            "the fixed objective needs `fixed_w`",
        ));
    }
    if doc.policy.w_min > doc.policy.w_max {
        return Err(schema_err("policy", "w_min must not exceed w_max"));
    }
    let policy = VirtualInputPolicy {
        objective,
        w_min: doc.policy.w_min,
        w_max: doc.policy.w_max,
        fixed_w: doc.policy.fixed_w,
        qp_tolerance: doc.policy.qp_tolerance,
    };

    let sim = SimConfig {
        h: doc.sim.h,
        duration: doc.sim.duration,
        eps_act: doc.sim.eps_act,
        projection_enabled: doc.sim.projection,
        projection_tol: doc.sim.projection_tol,
        projection_max_iters: doc.sim.projection_max_iters,
    };
    sim.validate()?;

    Ok(Scenario {
        name: if doc.name.is_empty() {
            fallback_name.to_string()
        } else {
            doc.name
        },
        description: doc.description,
        models,
        initial,
        constraints,
        mode,
        policy,
        sim,
    })
}

fn to_doc(s: &Scenario) -> ScenarioDoc {
    let vehicles = s
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| VehicleDoc {
            kind: m.kind().name().to_string(),
            params: m.params().clone(),
            initial: s.initial.block_slice(i).to_vec(),
        })
        .collect();
    let constraints = s
        .constraints
        .iter()
        .map(|c| {
            let mut params = BTreeMap::new();
            let family = match &c.family {
                Family::DistanceEq { d } => {
                    params.insert("d".into(), d.clone());
                    "distance_eq"
                }
                Family::DistanceBand { d_min, d_max } => {
                    params.insert("d_min".into(), d_min.clone());
                    params.insert("d_max".into(), d_max.clone());
                    "distance_band"
                }
                Family::RelativePose { dx, dy, dtheta } => {
                    params.insert("delta_x".into(), dx.clone());
                    params.insert("delta_y".into(), dy.clone());
                    params.insert("delta_theta".into(), dtheta.clone());
                    "relative_pose"
                }
                Family::HeadingEq { delta } => {
                    params.insert("delta".into(), delta.clone());
                    "heading_eq"
                }
                Family::Visibility { alpha } => {
                    params.insert("alpha".into(), alpha.clone());
                    "visibility"
                }
                Family::VelocityTrack { v_r, u_r } => {
                    params.insert("v_r".into(), v_r.clone());
                    params.insert("u_r".into(), u_r.clone());
                    "velocity_track"
                }
            };
            let (edge, vehicle) = match c.edge {
                Edge::Pair(i, j) => (Some([i, j]), None),
                Edge::Single(i) => (None, Some(i)),
            };
            ConstraintDoc {
                id: c.id.clone(),
                family: family.to_string(),
                edge,
                vehicle,
                params,
            }
        })
        .collect();
    let mode = match &s.mode {
        PipelineMode::Centralized => ModeDoc::Centralized,
        PipelineMode::LeaderFollower { tree, root_policy } => ModeDoc::LeaderFollower {
            root: tree.root,
            edges: tree.edges.iter().map(|(i, j)| [*i, *j]).collect(),
            root_policy: match root_policy {
                RootPolicy::VelocityTrack { v_r, u_r } => RootPolicyDoc::VelocityTrack {
                    v_r: v_r.clone(),
                    u_r: u_r.clone(),
                },
                RootPolicy::PrescribedInputs { inputs } => RootPolicyDoc::PrescribedInputs {
                    inputs: inputs.clone(),
                },
            },
        },
    };
    ScenarioDoc {
        name: s.name.clone(),
        description: s.description.clone(),
        vehicles,
        constraints,
        mode,
        policy: PolicyDoc {
            objective: match s.policy.objective {
                Objective::MinSlew => "min_slew".into(),
                Objective::Zero => "zero".into(),
                Objective::Fixed => "fixed".into(),
            },
            w_min: s.policy.w_min,
            w_max: s.policy.w_max,
            fixed_w: s.policy.fixed_w.clone(),
            qp_tolerance: s.policy.qp_tolerance,
        },
        sim: SimDoc {
            h: s.sim.h,
            duration: s.sim.duration,
            eps_act: s.sim.eps_act,
            projection: s.sim.projection_enabled,
            projection_tol: s.sim.projection_tol,
            projection_max_iters: s.sim.projection_max_iters,
        },
    }
}

/// Serialize a scenario back to its JSON document form.
pub fn scenario_to_json(s: &Scenario) -> String {
    serde_json::to_string_pretty(&to_doc(s)).expect("scenario serialization")
}

/// Parse and validate a scenario from JSON text.
pub fn load_scenario_str(json: &str, fallback_name: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = serde_json::from_str(json).map_err(|e| Error::SchemaError {
        path: format!("line {} column {}", e.line(), e.column()),
        detail: e.to_string(),
    })?;
    build_scenario(doc, fallback_name)
}

/// The builtin scenario names, in a fixed order.
pub fn builtin_scenarios() -> Vec<&'static str> {
    vec![
        "two_unicycles_distance",
        "unicycle_constspeed",
        "unicycle_car",
        "complex_three",
        "heterogeneous_timevarying",
        "leader_follower_tv",
    ]
}

/// Load a builtin scenario by name.
pub fn load_builtin(name: &str) -> Result<Scenario> {
    let json = match name {
        "two_unicycles_distance" => include_str!("../scenarios/two_unicycles_distance.json"),
        "unicycle_constspeed" => include_str!("../scenarios/unicycle_constspeed.json"),
        "unicycle_car" => include_str!("../scenarios/unicycle_car.json"),
        "complex_three" => include_str!("../scenarios/complex_three.json"),
        "heterogeneous_timevarying" => {
            include_str!("../scenarios/heterogeneous_timevarying.json")
        }
        "leader_follower_tv" => include_str!("../scenarios/leader_follower_tv.json"),
        other => return Err(Error::UnknownScenario(other.into())),
    };
    load_scenario_str(json, name)
}

/// Load a scenario from a builtin name or a file path (builtins win).
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    if builtin_scenarios().contains(&name_or_path) {
        return load_builtin(name_or_path);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::UnknownScenario(name_or_path.into()));
    }
    let json = std::fs::read_to_string(path)?;
    let fallback = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    load_scenario_str(&json, fallback)
}

/// Split a scenario's constraints by flavor.
pub fn split_constraints(s: &Scenario) -> (Vec<ConstraintSpec>, Vec<ConstraintSpec>) {
    let eq = s
        .constraints
        .iter()
        .filter(|c| c.flavor() == Flavor::Equality)
        .cloned()
        .collect();
    let ineq = s
        .constraints
        .iter()
        .filter(|c| c.flavor() == Flavor::Inequality)
        .cloned()
        .collect();
    (eq, ineq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{prepare_initial_state, Pipeline};

    #[test]
    fn builtins_all_load_and_are_feasible_at_start() {
        let names = builtin_scenarios();
        assert_eq!(names.len(), 6);
        for name in names {
            let s = load_builtin(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
            let pipeline = Pipeline {
                models: &s.models,
                constraints: &s.constraints,
                policy: &s.policy,
                mode: &s.mode,
            };
            prepare_initial_state(&pipeline, &s.initial, &s.sim)
                .unwrap_or_else(|e| panic!("{name}: initial state: {e}"));
        }
    }

    #[test]
    fn unknown_scenario_name() {
        assert!(matches!(
            load_scenario("no_such_thing"),
            Err(Error::UnknownScenario(_))
        ));
    }

    #[test]
    fn out_of_range_edge_is_schema_error() {
        let json = r#"{
            "vehicles": [
                {"kind": "unicycle", "initial": [0, 0, 0]},
                {"kind": "unicycle", "initial": [1, 0, 0]},
                {"kind": "unicycle", "initial": [2, 0, 0]}
            ],
            "constraints": [
                {"id": "d", "family": "distance_eq", "edge": [1, 5], "params": {"d": 1.0}}
            ]
        }"#;
        match load_scenario_str(json, "bad") {
            Err(Error::SchemaError { path, .. }) => {
                assert_eq!(path, "constraints[0].edge");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn extra_field_rejected() {
        let json = r#"{
            "vehicles": [{"kind": "unicycle", "initial": [0, 0, 0]}],
            "constraints": [],
            "unexpected": 1
        }"#;
        assert!(matches!(
            load_scenario_str(json, "bad"),
            Err(Error::SchemaError { .. })
        ));
    }

    #[test]
    fn integrator_cannot_track_velocity() {
        let json = r#"{
            "vehicles": [{"kind": "integrator", "initial": [0, 0]}],
            "constraints": [
                {"id": "r", "family": "velocity_track", "vehicle": 0,
                 "params": {"v_r": "1", "u_r": "0"}}
            ]
        }"#;
        assert!(matches!(
            load_scenario_str(json, "bad"),
            Err(Error::SchemaError { .. })
        ));
    }

    #[test]
    fn roundtrip_identity() {
        for name in builtin_scenarios() {
            let a = load_builtin(name).unwrap();
            let json = scenario_to_json(&a);
            let b = load_scenario_str(&json, name).unwrap();
            assert_eq!(a, b, "round trip changed `{name}`");
        }
    }

    #[test]
    fn bad_expression_reported() {
        let json = r#"{
            "vehicles": [
                {"kind": "unicycle", "initial": [0, 0, 0]},
                {"kind": "unicycle", "initial": [1, 0, 0]}
            ],
            "constraints": [
                {"id": "d", "family": "distance_eq", "edge": [0, 1],
                 "params": {"d": "2*sin("}}
            ]
        }"#;
        assert!(matches!(
            load_scenario_str(json, "bad"),
            Err(Error::SchemaError { .. })
        ));
    }
}

//! Trajectory CSV and report JSON.
//!
//! CSV layout: `t`, per-vehicle state columns `v<i>.<name>`, per-vehicle
//! control columns `u<i>.<k>`, virtual inputs `w.1…w.W`, one value column
//! per constraint row `g.<id>.<row>`, the active-set bitmask as text, the
//! cone-membership flag, and the equality residual. Floats are printed in
//! shortest round-trip form, so re-reading a log reproduces the exact
//! numbers and identical runs produce byte-identical files.
//!
//! Re-validation recomputes constraint values, activity, cone membership
//! and the equality residual from the stored states and controls: the
//! stored `g` columns are convenience output, not trusted input.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::constraints::{
    activation_scale, edge_eval, scatter_jacobian, ActivationWindow, Flavor,
};
use crate::error::{Error, Result};
use crate::feasibility::assemble;
use crate::kinematics::{stack_fields, JointState};
use crate::scenario::{split_constraints, Scenario};
use crate::sim::{monitor, RowId, SampleRecord, TrajectoryLog, ViolationReport};
use crate::temporal::{temporal_cone_membership, ConeQuery};

/// Column headers for a scenario's trajectory CSV.
pub fn csv_header(scenario: &Scenario, w_len: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for (i, m) in scenario.models.iter().enumerate() {
        for name in m.kind().state_names() {
            cols.push(format!("v{i}.{name}"));
        }
    }
    for (i, m) in scenario.models.iter().enumerate() {
        for k in 1..=m.control_dim() {
            cols.push(format!("u{i}.{k}"));
        }
    }
    for k in 1..=w_len {
        cols.push(format!("w.{k}"));
    }
    for c in &scenario.constraints {
        for r in 0..c.row_count() {
            cols.push(format!("g.{}.{}", c.id, r));
        }
    }
    cols.push("active".into());
    cols.push("cone".into());
    cols.push("eqres".into());
    cols
}

/// Render a log as CSV text.
pub fn log_to_csv(scenario: &Scenario, log: &TrajectoryLog) -> String {
    let mut out = String::new();
    let header = csv_header(scenario, log.w_len);
    out.push_str(&header.join(","));
    out.push('\n');
    for sample in &log.samples {
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        fields.push(format_float(sample.t));
        for v in &sample.state {
            fields.push(format_float(*v));
        }
        for u in &sample.controls {
            for v in u {
                fields.push(format_float(*v));
            }
        }
        for k in 0..log.w_len {
            fields.push(format_float(sample.w.get(k).copied().unwrap_or(0.0)));
        }
        for v in &sample.constraint_values {
            fields.push(format_float(*v));
        }
        let mut mask = String::with_capacity(sample.active.len());
        for a in &sample.active {
            mask.push(if *a { '1' } else { '0' });
        }
        fields.push(mask);
        fields.push(if sample.cone_ok { "1" } else { "0" }.into());
        fields.push(format_float(sample.eq_residual));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn format_float(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").expect("write to string");
    s
}

/// Write the trajectory CSV for a finished (or aborted) run.
pub fn write_csv(path: &Path, scenario: &Scenario, log: &TrajectoryLog) -> Result<()> {
    std::fs::write(path, log_to_csv(scenario, log))?;
    Ok(())
}

/// Machine-readable run report.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: &'static str,
    pub h: f64,
    pub duration: f64,
    pub seed: Option<u64>,
    pub samples: usize,
    pub tolerance: f64,
    pub feasibility: FeasibilityMeta,
    pub constraints: Vec<RowSummary>,
    pub cone_failures: usize,
    pub max_eq_residual: f64,
    pub clean: bool,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct FeasibilityMeta {
    pub rank_omega: usize,
    pub rank_augmented: usize,
    pub kappa_min: usize,
    pub kappa_max: usize,
}

#[derive(Debug, Serialize)]
pub struct RowSummary {
    pub id: String,
    pub row: usize,
    pub flavor: &'static str,
    pub max_value: f64,
    pub t_at_max: f64,
    pub violations: usize,
}

/// Build the report for a run from its log and monitor results.
pub fn build_report(
    scenario: &Scenario,
    log: &TrajectoryLog,
    report: &ViolationReport,
    seed: Option<u64>,
    error: Option<&Error>,
) -> RunReport {
    let max_eq_residual = log
        .samples
        .iter()
        .map(|s| s.eq_residual)
        .fold(0.0f64, f64::max);
    RunReport {
        scenario: scenario.name.clone(),
        mode: match scenario.mode {
            crate::sim::PipelineMode::Centralized => "centralized",
            crate::sim::PipelineMode::LeaderFollower { .. } => "leader_follower",
        },
        h: scenario.sim.h,
        duration: scenario.sim.duration,
        seed,
        samples: log.samples.len(),
        tolerance: report.tolerance,
        feasibility: FeasibilityMeta {
            rank_omega: log.rank_omega,
            rank_augmented: log.rank_augmented,
            kappa_min: log.kappa_min,
            kappa_max: log.kappa_max,
        },
        constraints: report
            .rows
            .iter()
            .map(|r| RowSummary {
                id: r.constraint.clone(),
                row: r.row,
                flavor: match r.flavor {
                    Flavor::Equality => "equality",
                    Flavor::Inequality => "inequality",
                },
                max_value: r.max_value,
                t_at_max: r.t_at_max,
                violations: r.violations,
            })
            .collect(),
        cone_failures: report.cone_failures,
        max_eq_residual,
        clean: error.is_none() && report.is_clean(),
        error: error.map(|e| e.to_string()),
    }
}

/// Write the report JSON.
pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serialization");
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Re-read a trajectory CSV against its scenario, recomputing constraint
/// values, activity flags, cone membership and equality residuals from the
/// stored states and controls.
pub fn read_log_csv(path: &Path, scenario: &Scenario) -> Result<TrajectoryLog> {
    let text = std::fs::read_to_string(path)?;
    parse_log_csv(&text, scenario)
}

/// Parse CSV text into a revalidated log (see [`read_log_csv`]).
pub fn parse_log_csv(text: &str, scenario: &Scenario) -> Result<TrajectoryLog> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| schema("empty log file".to_string()))?;
    let header: Vec<&str> = header_line.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| schema(format!("missing column `{name}`")))
    };

    let n_states = scenario.initial.dim();
    let t_col = col("t")?;
    let mut state_cols = Vec::with_capacity(n_states);
    for (i, m) in scenario.models.iter().enumerate() {
        for name in m.kind().state_names() {
            state_cols.push(col(&format!("v{i}.{name}"))?);
        }
    }
    let mut control_cols: Vec<Vec<usize>> = Vec::new();
    for (i, m) in scenario.models.iter().enumerate() {
        let mut cols = Vec::new();
        for k in 1..=m.control_dim() {
            cols.push(col(&format!("u{i}.{k}"))?);
        }
        control_cols.push(cols);
    }
    let mut w_cols = Vec::new();
    for k in 1.. {
        match header.iter().position(|h| *h == format!("w.{k}")) {
            Some(idx) => w_cols.push(idx),
            None => break,
        }
    }

    let (equality, inequality) = split_constraints(scenario);
    let mut rows: Vec<RowId> = Vec::new();
    let mut ineq_rows: Vec<RowId> = Vec::new();
    for c in &scenario.constraints {
        for r in 0..c.row_count() {
            let id = RowId {
                constraint: c.id.clone(),
                row: r,
                flavor: c.flavor(),
            };
            rows.push(id.clone());
            if c.flavor() == Flavor::Inequality {
                ineq_rows.push(id);
            }
        }
    }

    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize| -> Result<f64> {
            fields
                .get(idx)
                .ok_or_else(|| schema(format!("line {}: missing field {idx}", lineno + 2)))?
                .parse::<f64>()
                .map_err(|e| schema(format!("line {}: {e}", lineno + 2)))
        };
        let t = parse(t_col)?;
        let mut flat = Vec::with_capacity(n_states);
        for &idx in &state_cols {
            flat.push(parse(idx)?);
        }
        let state = JointState::new(&scenario.models, flat)?;
        let mut controls = Vec::new();
        for cols in &control_cols {
            let mut u = Vec::with_capacity(cols.len());
            for &idx in cols {
                u.push(parse(idx)?);
            }
            controls.push(u);
        }
        let mut w = Vec::with_capacity(w_cols.len());
        for &idx in &w_cols {
            w.push(parse(idx)?);
        }

        // recompute everything the monitor needs from (state, controls)
        let mut constraint_values = Vec::new();
        let mut active = Vec::new();
        let window = ActivationWindow::base(scenario.sim.eps_act);
        let mut active_rows = Vec::new();
        for c in &scenario.constraints {
            let e = edge_eval(c, &state, t)?;
            let jac = scatter_jacobian(c, &state, &e);
            for r in 0..e.value.len() {
                constraint_values.push(e.value[r]);
                if c.flavor() == Flavor::Inequality {
                    let is_active = window.is_active(e.value[r], activation_scale(c, r, t)?, 0.0);
                    active.push(is_active);
                    if is_active {
                        active_rows.push((jac.row(r).transpose(), -e.t_rhs[r]));
                    }
                }
            }
        }
        let (f0, fields_m) = stack_fields(&scenario.models, &state)?;
        let mut u_flat = DVector::zeros(fields_m.ncols());
        let mut at = 0;
        for u in &controls {
            for v in u {
                u_flat[at] = *v;
                at += 1;
            }
        }
        let velocity = f0 + fields_m * u_flat;
        let cone_ok = temporal_cone_membership(&ConeQuery {
            velocity: velocity.clone(),
            active_rows,
        });
        let stack = assemble(
            &scenario.models,
            &equality,
            &inequality,
            &state,
            t,
            scenario.sim.eps_act,
        )?;
        let eq_residual = if stack.omega.nrows() > 0 {
            (&stack.omega * &velocity - &stack.rhs).abs().max()
        } else {
            0.0
        };

        samples.push(SampleRecord {
            t,
            state: state.as_slice().to_vec(),
            controls,
            w,
            constraint_values,
            active,
            cone_ok,
            invariance_residual: 0.0,
            eq_residual,
        });
    }

    Ok(TrajectoryLog {
        samples,
        rows,
        ineq_rows,
        w_len: w_cols.len(),
        kappa_min: w_cols.len(),
        kappa_max: w_cols.len(),
        rank_omega: 0,
        rank_augmented: 0,
    })
}

fn schema(detail: String) -> Error {
    Error::SchemaError {
        path: "log.csv".into(),
        detail,
    }
}

/// Run the monitor over a stored log.
pub fn validate_log(path: &Path, scenario: &Scenario, tolerance: f64) -> Result<ViolationReport> {
    let log = read_log_csv(path, scenario)?;
    Ok(monitor(&log, tolerance))
}

//! Command-line front end: feasibility checks, simulation runs, and log
//! validation for coordination scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coordkit::feasibility::{assemble, feasibility_report, Feasibility, RANK_TOL};
use coordkit::output::{build_report, validate_log, write_csv, write_report};
use coordkit::scenario::{builtin_scenarios, load_scenario, split_constraints, Scenario};
use coordkit::sim::{monitor, prepare_initial_state, run, Pipeline};
use coordkit::Error;

/// Exit codes: 0 ok, 1 usage/schema/parse, 2 infeasible at check,
/// 3 runtime infeasibility, 4 validation violations.
#[derive(Parser)]
#[command(
    name = "coordkit",
    version,
    about = "Constrained multi-vehicle coordination toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide coordination feasibility at a scenario's initial state.
    Check {
        /// Builtin scenario name or path to a scenario JSON file.
        scenario: String,
    },
    /// Simulate a scenario and write trajectory CSV plus report JSON.
    Run {
        /// Builtin scenario name or path to a scenario JSON file.
        scenario: String,
        /// Integration step override (s).
        #[arg(long = "h")]
        step: Option<f64>,
        /// Duration override (s).
        #[arg(long = "T")]
        duration: Option<f64>,
        /// Recorded in the report; runs are deterministic regardless.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the COORDKIT_OUT environment
        /// variable (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Violation tolerance used by the post-run monitor.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Re-run the constraint monitor over a stored trajectory CSV.
    Validate {
        /// Path to the trajectory CSV.
        log: PathBuf,
        /// Builtin scenario name or path to a scenario JSON file.
        scenario: String,
        /// Violation tolerance.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Print the builtin scenario names.
    ListScenarios,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::ListScenarios => {
            for name in builtin_scenarios() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { scenario } => check(&load_scenario(&scenario)?),
        Command::Run {
            scenario,
            step,
            duration,
            seed,
            out,
            tol,
        } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(h) = step {
                s.sim.h = h;
            }
            if let Some(t) = duration {
                s.sim.duration = t;
            }
            s.sim.validate()?;
            run_scenario(&s, seed, out, tol)
        }
        Command::Validate { log, scenario, tol } => {
            let s = load_scenario(&scenario)?;
            let report = validate_log(&log, &s, tol)?;
            let violations: usize = report.rows.iter().map(|r| r.violations).sum();
            for row in &report.rows {
                println!(
                    "{}.{}: max {:.6e} at t={:.4} ({} violation(s) above {:.1e})",
                    row.constraint, row.row, row.max_value, row.t_at_max, row.violations, tol
                );
            }
            println!("cone failures: {}", report.cone_failures);
            if violations == 0 && report.cone_failures == 0 {
                println!("clean: {} samples within {:.1e}", report.sample_count, tol);
                Ok(ExitCode::SUCCESS)
            } else {
                println!("violations found");
                Ok(ExitCode::from(4))
            }
        }
    }
}

fn check(scenario: &Scenario) -> Result<ExitCode, Error> {
    let pipeline = Pipeline {
        models: &scenario.models,
        constraints: &scenario.constraints,
        policy: &scenario.policy,
        mode: &scenario.mode,
    };
    let state = prepare_initial_state(&pipeline, &scenario.initial, &scenario.sim)?;
    let (equality, inequality) = split_constraints(scenario);
    let stack = assemble(
        &scenario.models,
        &equality,
        &inequality,
        &state,
        0.0,
        scenario.sim.eps_act,
    )?;
    let report = feasibility_report(&stack, RANK_TOL);
    println!(
        "scenario: {} ({} vehicles, {} constraint rows)",
        scenario.name,
        scenario.models.len(),
        stack.omega.nrows() + stack.ineq_omega.nrows()
    );
    println!("rank(Omega) = {}", report.rank_omega);
    println!("rank([Omega | T]) = {}", report.rank_augmented);
    println!("kappa = {}", report.kappa);
    match report.verdict {
        Feasibility::Feasible => {
            println!("verdict: Feasible");
            Ok(ExitCode::SUCCESS)
        }
        Feasibility::Infeasible => {
            println!("verdict: Infeasible");
            Ok(ExitCode::from(2))
        }
    }
}

fn run_scenario(
    scenario: &Scenario,
    seed: Option<u64>,
    out: Option<PathBuf>,
    tol: f64,
) -> Result<ExitCode, Error> {
    let out_dir = out
        .or_else(|| std::env::var_os("COORDKIT_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;

    let pipeline = Pipeline {
        models: &scenario.models,
        constraints: &scenario.constraints,
        policy: &scenario.policy,
        mode: &scenario.mode,
    };
    let outcome = run(&pipeline, &scenario.initial, &scenario.sim);
    let violation_report = monitor(&outcome.log, tol);
    let report = build_report(
        scenario,
        &outcome.log,
        &violation_report,
        seed,
        outcome.error.as_ref(),
    );

    let csv_path = out_dir.join(format!("{}_trajectory.csv", scenario.name));
    let report_path = out_dir.join(format!("{}_report.json", scenario.name));
    write_csv(&csv_path, scenario, &outcome.log)?;
    write_report(&report_path, &report)?;

    println!(
        "{}: {} samples, kappa in [{}, {}]",
        scenario.name,
        outcome.log.samples.len(),
        outcome.log.kappa_min,
        outcome.log.kappa_max
    );
    println!("trajectory: {}", csv_path.display());
    println!("report: {}", report_path.display());
    let violations: usize = violation_report.rows.iter().map(|r| r.violations).sum();
    println!(
        "violations above {:.1e}: {} ({} cone failures)",
        tol, violations, violation_report.cone_failures
    );
    match outcome.error {
        Some(e) => {
            eprintln!("run aborted: {e}");
            Ok(ExitCode::from(3))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

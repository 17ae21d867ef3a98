//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by model construction, constraint evaluation, solving and
/// simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// Vehicle kind string not recognized.
    #[error("unknown vehicle kind `{0}`")]
    UnknownKind(String),

    /// A required model parameter is missing.
    #[error("vehicle kind `{kind}` requires parameter `{name}`")]
    MissingParam { kind: String, name: String },

    /// A model parameter that must be positive is not.
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositiveParam { name: String, value: f64 },

    /// Vector or matrix dimensions do not match the declared models.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    /// State outside the admissible domain of a vehicle model
    /// (e.g. car steering angle at the tan singularity).
    #[error("inadmissible state for vehicle {vehicle}: {detail}")]
    InadmissibleState { vehicle: usize, detail: String },

    /// Constraint geometry is singular (e.g. coincident vehicles in a
    /// visibility constraint).
    #[error("degenerate geometry in constraint `{constraint}`: {detail}")]
    DegenerateGeometry { constraint: String, detail: String },

    /// The stacked equality system has no solution.
    #[error("equality system infeasible (residual {residual:.3e})")]
    InfeasibleSystem { residual: f64 },

    /// The virtual-input program has no solution inside the input box.
    #[error("no feasible virtual input within bounds")]
    NoFeasibleVirtualInput,

    /// The stacked control-field matrix lost column rank.
    #[error("control fields rank-deficient for vehicle {vehicle}")]
    RankDeficientFields { vehicle: usize },

    /// The leader-follower edge set is not a directed tree.
    #[error("coordination graph is not a tree: {0}")]
    NotATree(String),

    /// A follower's local differential-algebraic system is infeasible.
    #[error("follower {vehicle} has no feasible motion")]
    InfeasibleFollower { vehicle: usize },

    /// Equality projection failed to converge.
    #[error("equality projection diverged (residual {residual:.3e})")]
    ProjectionDiverged { residual: f64 },

    /// The scenario's initial state violates its constraints.
    #[error("initial state infeasible: {0}")]
    InitialStateInfeasible(String),

    /// No builtin scenario with this name.
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    /// Scenario document malformed.
    #[error("schema error at {path}: {detail}")]
    SchemaError { path: String, detail: String },

    /// Time-expression source malformed.
    #[error("parse error at byte {offset}: expected {expected}")]
    ParseError { offset: usize, expected: String },

    /// Time-expression evaluation hit a domain guard
    /// (tan pole, sqrt of a negative, division by zero).
    #[error("expression evaluation failed at t={t}: {detail}")]
    EvalError { t: f64, detail: String },

    /// An error raised during simulation, annotated with the time it
    /// occurred.
    #[error("at t={t:.6}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the simulation time at which it occurred.
    pub fn at_time(self, t: f64) -> Self {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

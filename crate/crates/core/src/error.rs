use thiserror::Error;

use crate::model::Leg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("Euler pitch {pitch} rad is within {margin} rad of the representation singularity")]
    EulerSingularity { pitch: f64, margin: f64 },
    #[error("joint {joint} of leg {leg} at {value} rad is outside its limit of +/-{limit} rad")]
    JointLimit { leg: Leg, joint: usize, value: f64, limit: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid model parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaitError {
    #[error("invalid gait configuration: {0}")]
    InvalidConfig(String),
    #[error("leg {leg} needs a swing at t = {crossing} s but cannot be scheduled inside the {horizon} s horizon")]
    InfeasibleSchedule { leg: Leg, crossing: f64, horizon: f64 },
    #[error("reference trajectory covers {covered} s but the horizon is {horizon} s")]
    ReferenceTooShort { covered: f64, horizon: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("mode schedule covers {schedule} s but the problem horizon is {horizon} s")]
    ScheduleMismatch { schedule: f64, horizon: f64 },
    #[error("invalid cost configuration: {0}")]
    InvalidCost(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gait(#[from] GaitError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("rollout diverged at t = {time} s (state norm {norm})")]
    Divergence { time: f64, norm: f64 },
    #[error("input Hessian at node {node} could not be regularised to positive definite")]
    Regularization { node: usize },
    #[error("policy covers [0, {covered}] s but the horizon is {horizon} s")]
    PolicyHorizon { covered: f64, horizon: f64 },
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ZMP is undefined without a loaded stance leg")]
    UndefinedZmp,
    #[error("support polygon needs at least one stance contact")]
    NoSupport,
    #[error("mean speed {speed} m/s is below the {floor} m/s floor for cost of transport")]
    SpeedTooLow { speed: f64, floor: f64 },
    #[error("window is empty")]
    EmptyWindow,
}

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("{file} has no `{column}` column")]
    MissingColumn { file: String, column: String },
    #[error("{file}, row {row}: cannot parse `{value}` in column `{column}`")]
    BadValue { file: String, row: usize, column: String, value: String },
    #[error("cannot draw {path}: {message}")]
    Draw { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("robot fell at t = {time} s: {reason}")]
    Fell { time: f64, reason: String },
    #[error("{failed} of {total} self-test checks failed")]
    Selftest { failed: usize, total: usize },
    #[error("self-test registry is empty")]
    EmptyRegistry,
}

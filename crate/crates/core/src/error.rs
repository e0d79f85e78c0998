use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("singular coupling matrix: 1 - Ca·Cw = {determinant:e}")]
    SingularCoupling { determinant: f64 },
    #[error("coupled system is not dissipative (eigenvalues {eigenvalues:?})")]
    NotDissipative { eigenvalues: [f64; 2] },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("linear solve broke down at time step {step}")]
    Numerical { step: usize },
    #[error("query out of range: {0}")]
    Range(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("non-finite value in {0}")]
    Numerical(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("coordinate out of range: {0}")]
    Range(String),
    #[error("invalid segment: {0}")]
    Segment(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid segmentation plan: {0}")]
    Plan(String),
    #[error("invalid optimizer options: {0}")]
    Options(String),
    #[error("line search found no Wolfe point after {evaluations} trials")]
    LineSearch { evaluations: usize },
    #[error("non-finite objective: {0}")]
    NonFinite(String),
    #[error("query out of range: {0}")]
    Range(String),
    #[error("invalid inversion setup: {0}")]
    Inversion(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Invalid run configuration, located by its field path.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

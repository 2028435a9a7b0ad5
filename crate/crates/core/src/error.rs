use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid problem setup: {0}")]
    InvalidSetup(String),

    #[error("point ({x:e}, {y:e}, {z:e}) lies outside the computational box")]
    OutOfDomain { x: f64, y: f64, z: f64 },

    #[error("particle {particle} support left the computational box at step {step}")]
    SupportLeftDomain { particle: usize, step: usize },

    #[error("field evaluation {distance:e} m from a source (floor {floor:e} m)")]
    SingularEvaluation { distance: f64, floor: f64 },

    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("control vector has length {got}, expected {expected}")]
    ControlLength { expected: usize, got: usize },

    #[error("state constraint violated at step {step} (margin {margin:e})")]
    Infeasible { step: usize, margin: f64 },

    #[error("search direction is not a descent direction (slope {slope:e})")]
    NotDescent { slope: f64 },

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailure { backtracks: usize },

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

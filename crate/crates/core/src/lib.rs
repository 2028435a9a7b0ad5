//! Optimal steering of a relativistic charged particle by the Dirichlet
//! boundary data of a magnetic scalar potential.
//!
//! Every numerical routine is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod linalg;
pub mod lw_fields;
pub mod objective;
pub mod optimizer;
pub mod poisson;
mod scalar;
pub mod scales;
pub mod smeared_charge;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3 = linalg::Vec3<f64>;
pub type Mat3 = linalg::Mat3<f64>;
pub type PhysicalConstants = kinematics::PhysicalConstants<f64>;
pub type SmearedCharge = smeared_charge::SmearedCharge<f64>;
pub type QuadratureRule = smeared_charge::QuadratureRule<f64>;
pub type FieldSample = lw_fields::FieldSample<f64>;
pub type HexMesh = poisson::HexMesh<f64>;
pub type ControlField = poisson::ControlField<f64>;
pub type StiffnessSystem = poisson::StiffnessSystem<f64>;
pub type ParticleState = dynamics::ParticleState<f64>;
pub type SetupParams = dynamics::SetupParams<f64>;
pub type ProblemSetup = dynamics::ProblemSetup<f64>;
pub type Trajectory = dynamics::Trajectory<f64>;
pub type Scales = scales::Scales<f64>;
pub type ObjectiveSpec = objective::ObjectiveSpec<f64>;
pub type Objective<'a> = objective::Objective<'a, f64>;
pub type OptimizerConfig = optimizer::OptimizerConfig<f64>;
pub type OptimizerState = optimizer::OptimizerState<f64>;
pub type SteeringProblem<'a> = optimizer::SteeringProblem<'a, f64>;

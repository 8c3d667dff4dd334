//! Differential equation solving by residual minimization.
//!
//! A boundary problem (an operator `L u = f` plus conditions `b u = g`) is
//! discretized on a uniform grid. Derivatives are replaced by composed
//! finite-difference stencils, and the parameters of a field approximation
//! (a tanh multilayer perceptron, or one value per grid node) are optimized
//! until the combined interior/boundary residual norm stops improving. Networks
//! train with Adam; grid fields can also use Levenberg-Marquardt.
//!
//! The numeric core is generic over the scalar type: stencils accept any
//! [`num_traits::Num`] type (exact rationals included), field approximations
//! and the training loop accept any [`Real`]. The aliases at the crate root
//! fix the scalar to `f64`, which is what the problem definitions and the
//! on-disk cache use.

pub mod approx;
pub mod cache;
pub mod expr;
pub mod fdiff;
pub mod mesh;
pub mod operators;
pub mod problems;
pub mod residual;
pub mod scalar;
pub mod train;

pub use scalar::Real;

pub use approx::{Architecture, FieldApprox};
pub use expr::Expr;
pub use mesh::{Domain, Grid};
pub use operators::{BoundaryCondition, BoundaryProblem, DifferentialOperator, Norm, Term};
pub use train::{LossValue, StopCriterion, TrainConfig};

/// Stencil with `f64` weights.
pub type Stencil = fdiff::Stencil<f64>;
/// Multilayer perceptron field in double precision.
pub type MlpField = approx::MlpField<f64>;
/// Multilayer perceptron field in single precision.
pub type MlpField32 = approx::MlpField<f32>;
/// Grid-node value field in double precision.
pub type GridField = approx::GridField<f64>;
/// Adam state in double precision.
pub type OptimizerState = train::OptimizerState<f64>;
/// Residual plan in double precision.
pub type ResidualPlan = residual::ResidualPlan<f64>;

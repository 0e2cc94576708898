//! Entropy-regularized optimal stopping of a real option.
//!
//! The state is a geometric Brownian motion `X` together with the remaining
//! mass `Y` of a randomized stopping rule. Mass is spent by a reflection
//! policy that keeps `(X, Y)` below a boundary `y = g(x)`.

// `!(a < b)` is how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod boundary;
pub mod learner;
pub mod model;
pub mod numerics;
pub mod policy_iteration;
pub mod scalar;
pub mod simulator;

pub use analytic::{ClosedFormSolution, StoppingSolution};
pub use boundary::{Boundary, Interpolation, PolicyValue};
pub use model::{Grid, Model, ModelParams};
pub use scalar::Real;
pub use simulator::{Policy, SimConfig};

pub type ModelParams64 = ModelParams<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type Grid64 = Grid<f64>;
pub type ClosedForm64 = ClosedFormSolution<f64>;
pub type ClosedForm32 = ClosedFormSolution<f32>;
pub type Boundary64 = Boundary<f64>;
pub type Boundary32 = Boundary<f32>;
pub type PolicyValue64 = PolicyValue<f64>;

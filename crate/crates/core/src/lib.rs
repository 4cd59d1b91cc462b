//! Real-time nonlinear model predictive control.
//!
//! The pipeline follows the usual direct multiple shooting structure:
//! [`integrator`] discretises the dynamics, [`shooting`] linearises the NLP
//! into a stage-structured QP, [`condensing`] optionally eliminates the
//! states, [`qp`] solves the subproblem and [`sqp`] globalises the iteration
//! (line search or real-time iteration). [`sim`] closes the loop around a
//! simulated plant.

pub mod ad;
pub mod benchmarks;
pub mod condensing;
pub mod config;
pub mod integrator;
pub mod model;
pub mod qp;
pub mod shooting;
pub mod sim;
pub mod sqp;

pub use ad::{Scalar, Tangent};
pub use model::{Dims, ModelError, ModelShape, OcpModel, OcpProblem};

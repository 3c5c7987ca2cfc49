//! Learning distributed V-formation controllers.
//!
//! The crate covers the whole pipeline: flock dynamics and the V-formation
//! cost, a centralized adaptive-horizon MPC teacher and its distributed
//! counterpart, a neural controller trained by imitation, counterexample
//! guided retraining, statistical model checking, and executable
//! configurations on which symmetric distributed controllers are known to
//! fail.

pub mod cegkr;
pub mod controller;
pub mod cost;
pub mod error;
pub mod flock;
pub mod geometry;
pub mod mpc;
pub mod nn;
pub mod pso;
pub mod scenario;
pub mod seed;
pub mod smc;
pub mod trajectory;

pub use controller::{Controller, Simulator, StepContext};
pub use cost::{CostBreakdown, CostParameters};
pub use error::{Error, Result};
pub use flock::{DynamicsParameters, FlockState, JointAction, LocalView};
pub use geometry::{Interval, Vec2};
pub use trajectory::Trajectory;

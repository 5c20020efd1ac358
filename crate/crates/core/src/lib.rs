//! Continuous-jumping control stack for a small quadruped.
//!
//! A pronking contact schedule drives a Raibert swing controller and an
//! acceleration-based stance controller; an optional learned residual is
//! added to the stance command; a force-distribution whole-body controller
//! turns the result into joint impedance commands for a single-rigid-body
//! simulator. The residual policy is trained with Augmented Random Search.

pub mod config;
pub mod env;
pub mod estimator;
pub mod gait;
pub mod io;
pub mod kinematics;
pub mod policy;
pub mod qp;
pub mod sim;
pub mod stance;
pub mod swing;
pub mod trainer;
pub mod wbc;

pub use config::Config;

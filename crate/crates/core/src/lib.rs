//! Six-degree-of-freedom lunar lander simulation with a stabilized seeker.
//!
//! The [`env::Environment`] type ties the physics, seeker and reward models
//! into an episodic interface for policy optimization and evaluation.

pub mod config;
pub mod dynamics;
pub mod env;
pub mod guidance;
pub mod math;
pub mod propulsion;
pub mod rewards;
pub mod seeding;
pub mod seeker;

pub use config::{Bounds, EpisodeConfig, InitialConditions, RewardParams, Scenario};
pub use dynamics::{LanderState, VehicleParams};
pub use env::{EpisodeMode, Environment, LandingStart, Segment, StepInfo, StepResult, TerminalState, Termination};
pub use math::{Euler321, Quaternion};
pub use seeding::derive_seed;

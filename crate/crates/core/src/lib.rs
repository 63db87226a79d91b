//! Teacher-student policy distillation when the student cannot see the
//! context the teacher acts on.
//!
//! The crate ships three small search tasks with built-in state aliasing, an
//! exact teacher planner, an exact oracle for the best context-blind student,
//! and four training routes: behaviour cloning, DAgger, CritiQ (query the
//! teacher only where a discriminator flags the student as off-distribution)
//! and ReTRy (policy gradient with resets to teacher recovery states).

pub mod belief;
pub mod cmdp;
pub mod env;
pub mod error;
pub mod harness;
pub mod il;
pub mod metrics;
pub mod rl;
pub mod rng;
pub mod store;
pub mod teacher;

pub use cmdp::{ContextualMdp, Observation, Policy, PrivilegedState, Trajectory};
pub use env::{make_env, EnvConfig};
pub use error::{Error, Result};
pub use rng::{RngStream, SeedTree};

//! Cycle-by-cycle joint traffic demand estimation for signalized
//! intersections from sparse connected-vehicle (CV) trajectories.
//!
//! Demand — vehicles whose free-flow arrival falls in a cycle — differs from
//! volume whenever residual queues carry over between cycles. This crate
//! estimates per-phase, per-cycle demand in real time from the queued CVs
//! observed during the cycle, jointly across all phases of the intersection:
//!
//! - [`estimators::wmle`] — per-phase weighted maximum likelihood;
//! - [`estimators::jomle`] — joint estimation with historical share means;
//! - [`estimators::jomap`] — joint maximum a posteriori with a Gaussian prior
//!   on the phase shares built from historical CV counts.
//!
//! A seeded synthetic intersection ([`sim`]) provides ground truth for the
//! evaluation harness ([`sweep`]), which reproduces penetration-rate
//! experiments at desk scale.
//!
//! See the `examples/` directory for one runnable example per capability:
//!
//! ```bash
//! cargo run --release -p jomap --example simulate_and_estimate
//! cargo run --release -p jomap --example penetration_sweep
//! ```

pub mod arrival_profile;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod initial_queue;
pub mod metrics;
pub mod pipeline;
pub mod prior;
pub mod sim;
pub mod sweep;
pub mod trajectory;

pub use error::{Error, Result};

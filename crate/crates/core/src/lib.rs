//! Energy-aware resource allocation for sample-driven federated learning
//! over wireless networks: the radio and energy model, convergence bounds,
//! constrained action mapping, small neural approximators, off-policy
//! agents and the experiment harness.

pub mod agents;
pub mod approximator;
pub mod constraints;
pub mod convergence;
pub mod error;
pub mod harness;
pub mod presets;
pub mod wireless;

pub use error::{Error, Result};

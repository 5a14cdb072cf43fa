//! Rideshare duopoly simulator over a temporal multi origin-destination graph.
//!
//! Two platforms (`U` and `L`) set per-edge rates and commissions every step.
//! Drivers self-allocate between the platforms per node, passengers pick a
//! platform or public transit per edge, and the resulting trips move both
//! populations around the graph. Each platform is driven by its own PPO agent
//! that only sees the shared market state, never the competitor's prices.
//!
//! Module map:
//!
//! - [`market`]: graph, configuration, state types and the observation encoding
//! - [`passenger`]: exact per-edge passenger best response (simplex QP)
//! - [`driver`]: candidate-perturbation search for the driver allocation
//! - [`dynamics`]: flows, platform profits and the population update
//! - [`env`]: one full market transition given both platforms' prices
//! - [`ppo`]: MLP, tanh-squashed Gaussian policy, GAE and the clipped update
//! - [`harness`]: episodes, experiments, metrics, logs, plots and audits
//! - [`oracle`]: brute-force reference checks used by tests and the CLI

pub mod driver;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod market;
pub mod matrix;
pub mod oracle;
pub mod passenger;
pub mod ppo;

pub use error::{Error, Result};
pub use matrix::SquareMatrix;

//! Episodes, training runs, metrics, plots and log audits.

pub mod audit;
pub mod episode;
pub mod experiment;
pub mod metrics;
pub mod plot;

pub use episode::{run_episode, EpisodeLog, EpisodeOutput, StepRecord};
pub use experiment::{run_experiment, run_seed, ExperimentConfig, MarketKind, SeedReport};
pub use metrics::{collusion_metrics, ema, CollusionSummary, MarketOutcome, MetricsRow};

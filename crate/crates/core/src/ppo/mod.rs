//! Decentralized continuous-action PPO.
//!
//! Each platform owns an [`Agent`]: its own actor-critic parameters, optimizer
//! state, random stream and trajectory buffer. Nothing in this module takes
//! two agents at once; the only coupling between the platforms is the market
//! they both observe.

pub mod agent;
pub mod buffer;
pub mod gae;
pub mod mlp;
pub mod optim;
pub mod policy;
pub mod update;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agent::{Agent, AgentCheckpoint, PolicyCheckpoint};
pub use buffer::TrajectoryBuffer;
pub use policy::{map_action, ActOutput, Policy};
pub use update::{ppo_update, UpdateStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyperparams {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Gradient norm limit, applied to the actor and critic blocks separately.
    pub grad_clip_norm: f64,
    pub hidden_sizes: Vec<usize>,
    /// Rewards are `profit · dt / reward_scale`.
    pub reward_scale: f64,
    pub init_log_std: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            update_epochs: 10,
            minibatch_size: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip_norm: 0.5,
            hidden_sizes: vec![64, 64],
            reward_scale: 100.0,
            init_log_std: 0.0,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be >= 1");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be >= 0");
        }
        if !(self.value_coef > 0.0) {
            return bad("value_coef must be > 0");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        if !(self.reward_scale > 0.0) {
            return bad("reward_scale must be > 0");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        Ok(())
    }
}

/// Per-step reward from instantaneous profit: the discretized running-profit
/// integrand, rescaled.
pub fn compute_reward(profit: f64, dt: f64, reward_scale: f64) -> f64 {
    profit * dt / reward_scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        assert_eq!(compute_reward(0.0, 0.01, 100.0), 0.0);
        assert!((compute_reward(5625.0, 0.01, 100.0) - 0.5625).abs() < 1e-15);
        assert_eq!(compute_reward(1234.5, 0.01, 1.0), 1234.5 * 0.01);
    }

    #[test]
    fn defaults_validate_and_parse_partially() {
        PpoHyperparams::default().validate().unwrap();
        let hp: PpoHyperparams = serde_json::from_str(r#"{"learning_rate": 1e-3}"#).unwrap();
        assert_eq!(hp.learning_rate, 1e-3);
        assert_eq!(hp.hidden_sizes, vec![64, 64]);
        let mut bad = PpoHyperparams::default();
        bad.gamma = 0.0;
        assert!(bad.validate().is_err());
    }
}

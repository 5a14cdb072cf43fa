use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::policy::ActOutput;

/// One agent's rollout: per-step observation, pre-squash action, log-prob,
/// value estimate and reward, plus the bootstrap value after the last step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryBuffer {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub observations: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminal_value: f64,
}

impl TrajectoryBuffer {
    pub fn new(obs_dim: usize, action_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            observations: Vec::with_capacity(capacity * obs_dim),
            pre_squash: Vec::with_capacity(capacity * action_dim),
            log_probs: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            terminal_value: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: &[f64], act: &ActOutput, reward: f64) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(act.pre_squash.len(), self.action_dim);
        self.observations.extend_from_slice(obs);
        self.pre_squash.extend_from_slice(&act.pre_squash);
        self.log_probs.push(act.log_prob);
        self.values.push(act.value);
        self.rewards.push(reward);
    }

    pub fn observation(&self, t: usize) -> &[f64] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let ok = self.observations.len() == n * self.obs_dim
            && self.pre_squash.len() == n * self.action_dim
            && self.log_probs.len() == n
            && self.values.len() == n;
        if !ok {
            return Err(Error::Usage("trajectory buffer sequences disagree in length".into()));
        }
        Ok(())
    }
}

//! One platform's learner: policy, optimizer and private random stream.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Platform;
use crate::ppo::buffer::TrajectoryBuffer;
use crate::ppo::optim::Adam;
use crate::ppo::policy::{ActOutput, Policy};
use crate::ppo::update::{ppo_update, UpdateStats};
use crate::ppo::PpoHyperparams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Random stream ids derived from a run seed. The environment, each agent's
/// sampling and each agent's initialization draw from separate streams of the
/// same seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const ENV_STREAM: u64 = 0;

fn act_stream(p: Platform) -> u64 {
    match p {
        Platform::U => 1,
        Platform::L => 2,
    }
}

fn init_stream(p: Platform) -> u64 {
    match p {
        Platform::U => 3,
        Platform::L => 4,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub platform: Platform,
    pub policy: Policy,
    pub optimizer: Adam,
    pub hyperparams: PpoHyperparams,
    rng: ChaCha8Rng,
}

/// Frozen policy parameters for evaluation or sharing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub platform: Platform,
    pub hyperparams: PpoHyperparams,
    pub policy: Policy,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub platform: Platform,
    pub hyperparams: PpoHyperparams,
    pub policy: Policy,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(
        platform: Platform,
        obs_dim: usize,
        action_dim: usize,
        hyperparams: PpoHyperparams,
        seed: u64,
    ) -> Result<Self> {
        hyperparams.validate()?;
        let mut init = stream_rng(seed, init_stream(platform));
        let policy = Policy::new(
            obs_dim,
            action_dim,
            &hyperparams.hidden_sizes,
            hyperparams.init_log_std,
            &mut init,
        );
        let optimizer = Adam::new(policy.n_params(), hyperparams.learning_rate);
        Ok(Self {
            platform,
            policy,
            optimizer,
            hyperparams,
            rng: stream_rng(seed, act_stream(platform)),
        })
    }

    pub fn act(&mut self, obs: &[f64]) -> Result<ActOutput> {
        self.policy.act(obs, &mut self.rng)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        self.policy.value(obs)
    }

    pub fn update(&mut self, buffer: &TrajectoryBuffer) -> Result<UpdateStats> {
        ppo_update(
            &mut self.policy,
            &mut self.optimizer,
            buffer,
            &self.hyperparams,
            &mut self.rng,
        )
    }

    pub fn policy_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            version: CHECKPOINT_VERSION,
            platform: self.platform,
            hyperparams: self.hyperparams.clone(),
            policy: self.policy.clone(),
        }
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            version: CHECKPOINT_VERSION,
            platform: self.platform,
            hyperparams: self.hyperparams.clone(),
            policy: self.policy.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn from_checkpoint(ck: AgentCheckpoint) -> Result<Self> {
        check_version(ck.version)?;
        ck.hyperparams.validate()?;
        if ck.optimizer.n_params() != ck.policy.n_params() {
            return Err(Error::Config("checkpoint optimizer does not match policy".into()));
        }
        Ok(Self {
            platform: ck.platform,
            policy: ck.policy,
            optimizer: ck.optimizer,
            hyperparams: ck.hyperparams,
            rng: ck.rng,
        })
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {v} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    Ok(())
}

impl PolicyCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        check_version(ck.version)?;
        Ok(ck)
    }
}

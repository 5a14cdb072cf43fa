//! Clipped-surrogate loss, its exact gradient, and the minibatch update loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::buffer::TrajectoryBuffer;
use crate::ppo::gae::{gae, normalize};
use crate::ppo::optim::Adam;
use crate::ppo::policy::{squashed_log_prob, Policy};
use crate::ppo::PpoHyperparams;

/// Samples gathered for one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub observations: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn gather(
        buffer: &TrajectoryBuffer,
        advantages: &[f64],
        returns: &[f64],
        indices: &[usize],
    ) -> Self {
        let (od, ad) = (buffer.obs_dim, buffer.action_dim);
        let mut b = Batch {
            len: indices.len(),
            observations: Vec::with_capacity(indices.len() * od),
            pre_squash: Vec::with_capacity(indices.len() * ad),
            old_log_probs: Vec::with_capacity(indices.len()),
            advantages: Vec::with_capacity(indices.len()),
            returns: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            b.observations.extend_from_slice(&buffer.observations[i * od..(i + 1) * od]);
            b.pre_squash.extend_from_slice(&buffer.pre_squash[i * ad..(i + 1) * ad]);
            b.old_log_probs.push(buffer.log_probs[i]);
            b.advantages.push(advantages[i]);
            b.returns.push(returns[i]);
        }
        b
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    /// `−mean(min(ρA, clip(ρ)A))`.
    pub policy_loss: f64,
    pub entropy: f64,
    /// `value_coef · mean((V − R)²)`.
    pub value_loss: f64,
    pub total: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

fn evaluate(
    policy: &Policy,
    batch: &Batch,
    hp: &PpoHyperparams,
    grad: Option<&mut [f64]>,
) -> Result<LossParts> {
    let b = batch.len;
    if b == 0 {
        return Err(Error::Usage("empty minibatch".into()));
    }
    let ad = policy.action_dim();
    let bf = b as f64;
    let eps = hp.clip_epsilon;

    let actor_tape = policy.actor.forward_batch(&batch.observations, b)?;
    let critic_tape = policy.critic.forward_batch(&batch.observations, b)?;
    let means = actor_tape.output();
    let values = critic_tape.output();

    let inv_var: Vec<f64> = policy.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let mut d_mean = vec![0.0; b * ad];
    let mut d_log_std = vec![-hp.entropy_coef; ad];
    let mut d_value = vec![0.0; b];

    let mut surrogate = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    let mut value_err = 0.0;
    for i in 0..b {
        let z = &batch.pre_squash[i * ad..(i + 1) * ad];
        let mu = &means[i * ad..(i + 1) * ad];
        let lp = squashed_log_prob(z, mu, &policy.log_std);
        let log_ratio = lp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        surrogate += unclipped.min(clipped_obj);
        ratio_sum += ratio;
        kl += -log_ratio;
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        if unclipped <= clipped_obj {
            let d_lp = -unclipped / bf;
            for k in 0..ad {
                let diff = z[k] - mu[k];
                d_mean[i * ad + k] = d_lp * diff * inv_var[k];
                d_log_std[k] += d_lp * (diff * diff * inv_var[k] - 1.0);
            }
        }
        let err = values[i] - batch.returns[i];
        value_err += err * err;
        d_value[i] = 2.0 * hp.value_coef * err / bf;
    }

    let entropy = policy.entropy();
    let policy_loss = -surrogate / bf;
    let value_loss = hp.value_coef * value_err / bf;
    let parts = LossParts {
        policy_loss,
        entropy,
        value_loss,
        total: policy_loss - hp.entropy_coef * entropy + value_loss,
        mean_ratio: ratio_sum / bf,
        clip_fraction: clipped as f64 / bf,
        approx_kl: kl / bf,
    };
    if !parts.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {parts:?}")));
    }

    if let Some(grad) = grad {
        assert_eq!(grad.len(), policy.n_params());
        grad.iter_mut().for_each(|g| *g = 0.0);
        let na = policy.actor.n_params();
        let (actor_grad, rest) = grad.split_at_mut(na);
        let (std_grad, critic_grad) = rest.split_at_mut(ad);
        policy.actor.backward(&actor_tape, &d_mean, actor_grad);
        std_grad.copy_from_slice(&d_log_std);
        policy.critic.backward(&critic_tape, &d_value, critic_grad);
    }
    Ok(parts)
}

/// Total loss `policy − c_ent · H + value` on `batch`.
pub fn ppo_loss(policy: &Policy, batch: &Batch, hp: &PpoHyperparams) -> Result<LossParts> {
    evaluate(policy, batch, hp, None)
}

/// Loss and its exact gradient in [`Policy::flatten`] order.
pub fn ppo_loss_and_grad(
    policy: &Policy,
    batch: &Batch,
    hp: &PpoHyperparams,
) -> Result<(LossParts, Vec<f64>)> {
    let mut grad = vec![0.0; policy.n_params()];
    let parts = evaluate(policy, batch, hp, Some(&mut grad))?;
    Ok((parts, grad))
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Averages over every minibatch step of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub steps: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    /// Undiscounted sum of rewards in the buffer.
    pub episode_return: f64,
}

/// Runs `update_epochs` passes of shuffled minibatch steps over `buffer`.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    optimizer: &mut Adam,
    buffer: &TrajectoryBuffer,
    hp: &PpoHyperparams,
    rng: &mut R,
) -> Result<UpdateStats> {
    buffer.check()?;
    if buffer.obs_dim != policy.obs_dim() || buffer.action_dim != policy.action_dim() {
        return Err(Error::Usage("buffer shape does not match policy".into()));
    }
    let (raw_adv, returns) = gae(
        &buffer.rewards,
        &buffer.values,
        buffer.terminal_value,
        hp.gamma,
        hp.gae_lambda,
    );
    let advantages = normalize(&raw_adv);

    let mut stats = UpdateStats {
        episode_return: buffer.rewards.iter().sum(),
        ..Default::default()
    };
    let n_actor = policy.n_actor_params();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut params = policy.flatten();
    for _ in 0..hp.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hp.minibatch_size) {
            let batch = Batch::gather(buffer, &advantages, &returns, chunk);
            let (parts, mut grad) = ppo_loss_and_grad(policy, &batch, hp)?;
            let (actor_grad, critic_grad) = grad.split_at_mut(n_actor);
            stats.actor_grad_norm += clip_grad_norm(actor_grad, hp.grad_clip_norm);
            stats.critic_grad_norm += clip_grad_norm(critic_grad, hp.grad_clip_norm);
            optimizer.update(&mut params, &grad);
            policy.load_flat(&params);
            if !policy.is_finite() {
                return Err(Error::Numerical("parameters became non-finite".into()));
            }
            stats.steps += 1;
            stats.policy_loss += parts.policy_loss;
            stats.value_loss += parts.value_loss;
            stats.entropy += parts.entropy;
            stats.mean_ratio += parts.mean_ratio;
            stats.clip_fraction += parts.clip_fraction;
            stats.approx_kl += parts.approx_kl;
        }
    }
    if stats.steps > 0 {
        let s = stats.steps as f64;
        stats.policy_loss /= s;
        stats.value_loss /= s;
        stats.entropy /= s;
        stats.mean_ratio /= s;
        stats.clip_fraction /= s;
        stats.approx_kl /= s;
        stats.actor_grad_norm /= s;
        stats.critic_grad_norm /= s;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::policy::ActOutput;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_hp() -> PpoHyperparams {
        PpoHyperparams {
            hidden_sizes: vec![8, 8],
            minibatch_size: 16,
            update_epochs: 2,
            ..Default::default()
        }
    }

    fn rollout(policy: &Policy, n: usize, rng: &mut ChaCha8Rng) -> TrajectoryBuffer {
        let mut buf = TrajectoryBuffer::new(policy.obs_dim(), policy.action_dim(), n);
        for _ in 0..n {
            let obs: Vec<f64> = (0..policy.obs_dim()).map(|_| rng.random::<f64>()).collect();
            let act = policy.act(&obs, rng).unwrap();
            let reward = act.action[0] + 0.1 * rng.random::<f64>();
            buf.push(&obs, &act, reward);
        }
        buf.terminal_value = 0.0;
        buf
    }

    #[test]
    fn ratio_is_exactly_one_at_collection_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = Policy::new(14, 4, &[64, 64], 0.0, &mut rng);
        let buf = rollout(&policy, 64, &mut rng);
        let idx: Vec<usize> = (0..64).collect();
        let zeros = vec![0.0; 64];
        let batch = Batch::gather(&buf, &vec![1.0; 64], &zeros, &idx);
        let tape = policy.actor.forward_batch(&batch.observations, 64).unwrap();
        for i in 0..64 {
            let lp = squashed_log_prob(
                &batch.pre_squash[i * 4..(i + 1) * 4],
                &tape.output()[i * 4..(i + 1) * 4],
                &policy.log_std,
            );
            assert_eq!((lp - batch.old_log_probs[i]).exp(), 1.0);
        }
        let parts = ppo_loss(&policy, &batch, &small_hp()).unwrap();
        assert_eq!(parts.mean_ratio, 1.0);
        assert_eq!(parts.clip_fraction, 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn ratio_identity_holds_for_any_seed(seed in 0u64..1_000_000, log_std in -2.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let policy = Policy::new(14, 4, &[16, 16], log_std, &mut rng);
            let buf = rollout(&policy, 40, &mut rng);
            let idx: Vec<usize> = (0..40).collect();
            let batch = Batch::gather(&buf, &vec![1.0; 40], &vec![0.0; 40], &idx);
            let parts = ppo_loss(&policy, &batch, &small_hp()).unwrap();
            proptest::prop_assert!((parts.mean_ratio - 1.0).abs() <= 1e-10);
            proptest::prop_assert_eq!(parts.clip_fraction, 0.0);
            proptest::prop_assert!(parts.approx_kl.abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_epochs_leave_policy_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut policy = Policy::new(5, 2, &[8], 0.0, &mut rng);
        let before = policy.clone();
        let buf = rollout(&policy, 32, &mut rng);
        let hp = PpoHyperparams {
            update_epochs: 0,
            ..small_hp()
        };
        let mut opt = Adam::new(policy.n_params(), hp.learning_rate);
        let stats = ppo_update(&mut policy, &mut opt, &buf, &hp, &mut rng).unwrap();
        assert_eq!(stats.steps, 0);
        assert_eq!(policy, before);
    }

    #[test]
    fn clipped_surrogate_never_exceeds_unclipped() {
        for (ratio, adv) in [(1.5, 2.0), (1.21, 0.3), (0.5, -1.0), (0.7, 1.0), (1.3, -1.0)] {
            let eps: f64 = 0.2;
            let unclipped = ratio * adv;
            let clipped = f64::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
            assert!(unclipped.min(clipped) <= unclipped);
            if adv > 0.0 && ratio > 1.0 + eps {
                assert!(unclipped.min(clipped) < unclipped);
            }
        }
    }

    #[test]
    fn positive_advantage_direction_gains_mean() {
        // Constant observation; samples with z_0 above the mean get positive
        // advantage, the others negative. One update must raise mean_0.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut policy = Policy::new(3, 2, &[8], 0.0, &mut rng);
        let obs = [0.2, -0.1, 0.4];
        let mean_before = policy.actor.forward(&obs).unwrap();
        let mut buf = TrajectoryBuffer::new(3, 2, 256);
        for _ in 0..256 {
            let act: ActOutput = policy.act(&obs, &mut rng).unwrap();
            let reward = if act.pre_squash[0] > mean_before[0] { 1.0 } else { -1.0 };
            buf.push(&obs, &act, reward);
        }
        let hp = PpoHyperparams {
            gamma: 0.5,
            gae_lambda: 0.0,
            update_epochs: 1,
            minibatch_size: 256,
            learning_rate: 1e-2,
            ..small_hp()
        };
        let mut opt = Adam::new(policy.n_params(), hp.learning_rate);
        ppo_update(&mut policy, &mut opt, &buf, &hp, &mut rng).unwrap();
        let mean_after = policy.actor.forward(&obs).unwrap();
        assert!(mean_after[0] > mean_before[0], "{mean_before:?} -> {mean_after:?}");
    }

    #[test]
    fn update_is_reproducible() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut policy = Policy::new(5, 2, &[8], 0.0, &mut rng);
            let buf = rollout(&policy, 64, &mut rng);
            let hp = small_hp();
            let mut opt = Adam::new(policy.n_params(), hp.learning_rate);
            ppo_update(&mut policy, &mut opt, &buf, &hp, &mut rng).unwrap();
            policy
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_grad_norm_scales() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = [0.1, 0.1];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, [0.1, 0.1]);
    }
}

//! Actor-critic parameters and the tanh-squashed Gaussian policy.
//!
//! The actor outputs the mean of a diagonal Gaussian over a pre-squash
//! vector `z`; the emitted action is `tanh(z) ∈ (−1, 1)^dim`. Log-densities
//! include the change-of-variables term `−Σ log(1 − tanh²(z))`.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::PlatformPrices;
use crate::matrix::SquareMatrix;
use crate::ppo::mlp::Mlp;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub actor: Mlp,
    /// State-independent log standard deviation of the pre-squash Gaussian.
    pub log_std: Vec<f64>,
    pub critic: Mlp,
}

/// One sampled action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActOutput {
    /// Gaussian sample before squashing.
    pub pre_squash: Vec<f64>,
    /// `tanh(pre_squash)`.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![obs_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        Self {
            actor: Mlp::new(&actor_sizes, 0.01, rng),
            log_std: vec![init_log_std; action_dim],
            critic: Mlp::new(&critic_sizes, 1.0, rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Actor parameters, log-std and critic parameters, in that order.
    pub fn n_params(&self) -> usize {
        self.n_actor_params() + self.critic.n_params()
    }

    /// Length of the actor block (network plus log-std) in the flat layout.
    pub fn n_actor_params(&self) -> usize {
        self.actor.n_params() + self.log_std.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.actor.flatten();
        v.extend_from_slice(&self.log_std);
        v.extend(self.critic.flatten());
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let na = self.actor.n_params();
        let ns = self.log_std.len();
        self.actor.load_flat(&flat[..na]);
        self.log_std.copy_from_slice(&flat[na..na + ns]);
        self.critic.load_flat(&flat[na + ns..]);
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.log_std.iter().all(|x| x.is_finite())
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        let v = self.critic.forward(obs)?[0];
        if !v.is_finite() {
            return Err(Error::Numerical("critic produced a non-finite value".into()));
        }
        Ok(v)
    }

    /// Samples an action for `obs`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<ActOutput> {
        if obs.len() != self.obs_dim() {
            return Err(Error::Usage(format!(
                "observation has length {}, policy expects {}",
                obs.len(),
                self.obs_dim()
            )));
        }
        let mean = self.actor.forward(obs)?;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical("actor produced a non-finite mean".into()));
        }
        let value = self.value(obs)?;
        let pre_squash: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_prob = squashed_log_prob(&pre_squash, &mean, &self.log_std);
        let action = pre_squash.iter().map(|z| z.tanh()).collect();
        Ok(ActOutput {
            pre_squash,
            action,
            log_prob,
            value,
        })
    }

    /// Differential entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
    }
}

/// `log(1 − tanh²(z))`, stable for large `|z|`.
pub fn log_one_minus_tanh_sq(z: f64) -> f64 {
    let x = -2.0 * z;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (LN_2 - z - softplus)
}

/// Log-density of the diagonal Gaussian at `z`.
pub fn gaussian_log_prob(z: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&z, &m), &ls)| {
            let u = (z - m) * (-ls).exp();
            -0.5 * u * u - ls - HALF_LN_2PI
        })
        .sum()
}

/// Log-density of `tanh(z)` when `z` is Gaussian.
pub fn squashed_log_prob(z: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    gaussian_log_prob(z, mean, log_std) - z.iter().map(|&z| log_one_minus_tanh_sq(z)).sum::<f64>()
}

/// Maps a squashed action to one platform's prices. Layout: off-diagonal
/// rates in row-major order, then commissions in the same order.
pub fn map_action(raw: &[f64], n_nodes: usize, price_min: f64, price_max: f64) -> Result<PlatformPrices> {
    let m = n_nodes * n_nodes - n_nodes;
    if raw.len() != 2 * m {
        return Err(Error::Usage(format!(
            "action has length {}, expected {}",
            raw.len(),
            2 * m
        )));
    }
    let scale = |x: f64| (price_min + (x + 1.0) * 0.5 * (price_max - price_min)).clamp(price_min, price_max);
    let mut rate = SquareMatrix::zeros(n_nodes);
    let mut commission = SquareMatrix::zeros(n_nodes);
    rate.set_off_diagonal_values(&raw[..m].iter().map(|&x| scale(x)).collect::<Vec<_>>());
    commission.set_off_diagonal_values(&raw[m..].iter().map(|&x| scale(x)).collect::<Vec<_>>());
    Ok(PlatformPrices { rate, commission })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn half_ln_2pi_constant() {
        assert!((HALF_LN_2PI - 0.5 * (2.0 * PI).ln()).abs() < 1e-16);
    }

    #[test]
    fn log_one_minus_tanh_sq_matches_direct() {
        for z in [-3.0, -0.5, 0.0, 0.1, 1.7, 4.0] {
            let direct = (1.0 - f64::tanh(z).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(z) - direct).abs() < 1e-12, "{z}");
        }
        assert!(log_one_minus_tanh_sq(400.0).is_finite());
        assert!(log_one_minus_tanh_sq(-400.0).is_finite());
    }

    #[test]
    fn map_action_bounds() {
        let p = map_action(&[-1.0, 1.0, 0.0, 0.0], 2, 5.0, 20.0).unwrap();
        assert_eq!(p.rate[(0, 1)], 5.0);
        assert_eq!(p.rate[(1, 0)], 20.0);
        assert_eq!(p.commission[(0, 1)], 12.5);
        assert_eq!(p.commission[(1, 0)], 12.5);
        assert_eq!(p.rate[(0, 0)], 0.0);
        assert!(map_action(&[0.0; 3], 2, 5.0, 20.0).is_err());
    }

    #[test]
    fn zero_noise_limit_is_deterministic_tanh_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut policy = Policy::new(14, 4, &[16, 16], 0.0, &mut rng);
        policy.log_std = vec![-60.0; 4];
        let obs: Vec<f64> = (0..14).map(|i| i as f64 / 14.0).collect();
        let mean = policy.actor.forward(&obs).unwrap();
        let out = policy.act(&obs, &mut rng).unwrap();
        for (a, m) in out.action.iter().zip(&mean) {
            assert!((a - m.tanh()).abs() < 1e-15);
        }
        assert!(out.log_prob.is_finite());
    }

    #[test]
    fn same_seed_same_action() {
        let policy = Policy::new(14, 4, &[16], 0.0, &mut ChaCha8Rng::seed_from_u64(2));
        let obs = vec![0.25; 14];
        let a = policy.act(&obs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = policy.act(&obs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_observation_length() {
        let policy = Policy::new(14, 4, &[16], 0.0, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(matches!(
            policy.act(&[0.0; 3], &mut ChaCha8Rng::seed_from_u64(3)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn non_finite_output_is_numerical_error() {
        let mut policy = Policy::new(2, 2, &[4], 0.0, &mut ChaCha8Rng::seed_from_u64(2));
        policy.actor.layers[0].bias[0] = f64::NAN;
        assert!(matches!(
            policy.act(&[0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(3)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        // Monte-Carlo over uniform a ∈ (−1, 1): ∫ p(a) da ≈ 2 · mean p(a_k).
        let (mean, log_std) = (0.4, -0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let a: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let z = a.atanh();
            acc += squashed_log_prob(&[z], &[mean], &[log_std]).exp();
        }
        let integral = 2.0 * acc / n as f64;
        assert!((integral - 1.0).abs() < 1e-2, "{integral}");
    }

    #[test]
    fn sampled_log_prob_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = Policy::new(3, 2, &[8], -0.5, &mut rng);
        let obs = [0.1, 0.2, 0.3];
        let out = policy.act(&obs, &mut rng).unwrap();
        let mean = policy.actor.forward(&obs).unwrap();
        let mut lp = 0.0;
        for k in 0..2 {
            let s = policy.log_std[k].exp();
            let z = out.pre_squash[k];
            lp += -0.5 * ((z - mean[k]) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln();
            lp -= (1.0 - z.tanh().powi(2)).ln();
        }
        assert!((out.log_prob - lp).abs() < 1e-10);
    }
}

//! Generalized advantage estimation.

/// Returns raw advantages and value targets.
///
/// `δ_t = r_t + γ V_{t+1} − V_t`, `A_t = δ_t + γ λ A_{t+1}`, with
/// `V_T = terminal_value` bootstrapping the truncated episode.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    terminal_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values must align");
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    let mut next_value = terminal_value;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts and scales to zero mean, unit variance (population std + 1e-8).
pub fn normalize(advantages: &[f64]) -> Vec<f64> {
    if advantages.is_empty() {
        return Vec::new();
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    advantages.iter().map(|a| (a - mean) / std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        for (g, l) in [(0.99, 0.95), (0.5, 0.0), (1.0, 1.0)] {
            let (adv, ret) = gae(&[1.0], &[0.0], 0.0, g, l);
            assert_eq!(adv, vec![1.0]);
            assert_eq!(ret, vec![1.0]);
        }
    }

    #[test]
    fn two_step_hand_recursion() {
        let (adv, _) = gae(&[1.0, 1.0], &[0.0, 0.0], 0.0, 0.5, 1.0);
        assert_eq!(adv, vec![1.5, 1.0]);
    }

    #[test]
    fn perfect_critic_has_zero_residuals() {
        let gamma = 0.9;
        let rewards = [1.0, -2.0, 0.5, 3.0];
        let terminal = 4.0;
        let mut values = vec![0.0; 4];
        let mut acc = terminal;
        for t in (0..4).rev() {
            acc = rewards[t] + gamma * acc;
            values[t] = acc;
        }
        let (adv, ret) = gae(&rewards, &values, terminal, gamma, 0.7);
        for (a, (r, v)) in adv.iter().zip(ret.iter().zip(&values)) {
            assert!(a.abs() < 1e-12);
            assert!((r - v).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_moments() {
        let a = normalize(&[1.0, 2.0, 3.0, 10.0]);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
        assert_eq!(normalize(&[5.0]), vec![0.0]);
        assert!(normalize(&[]).is_empty());
    }
}

//! Passenger best response on a single edge.
//!
//! Passengers on edge `(i, j)` split between U, L and transit to minimize
//!
//! ```text
//! p_u (d r_u + λ_i p_u / a_u) + p_l (d r_l + λ_i p_l / a_l) + p_o (d r_o + λ_i p_o)
//! ```
//!
//! over the probability simplex. This is a separable strictly convex QP with a
//! single equality constraint, solved exactly by water-filling on the KKT
//! multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Populations;

/// Platforms with availability below this are unusable on that edge.
pub const AVAILABILITY_FLOOR: f64 = 1e-9;
/// Lower bound on the wait multiplier so every curvature stays positive.
pub const LAMBDA_FLOOR: f64 = 1e-6;
/// Driver-count floor used when forming the passenger/driver ratio.
pub const DRIVER_FLOOR: f64 = 1e-6;

/// Node wait-cost multiplier `λ · Π^P / max(Π^D, ε)`.
pub fn wait_multiplier(populations: &Populations, node: usize, base: f64, floor: f64) -> f64 {
    let passengers = populations.passengers[node].max(0.0);
    let drivers = populations.drivers[node].max(floor);
    base * passengers / drivers
}

/// Minimizes `Σ_k (b_k p_k + q_k p_k²)` over the probability simplex.
///
/// With multiplier `μ`, stationarity gives `p_k = max(0, (μ − b_k) / 2q_k)`.
/// Coordinates enter the active set in order of increasing `b_k`; for an
/// active prefix the simplex constraint fixes `μ` in closed form, and the
/// first prefix whose `μ` does not reach the next breakpoint is optimal.
pub fn simplex_quadratic_argmin(linear_costs: &[f64], curvatures: &[f64]) -> Result<Vec<f64>> {
    let k = linear_costs.len();
    if k == 0 || curvatures.len() != k {
        return Err(Error::Usage(format!(
            "need matching non-empty cost vectors, got {} and {}",
            k,
            curvatures.len()
        )));
    }
    if let Some(q) = curvatures.iter().find(|q| !(**q > 0.0 && q.is_finite())) {
        return Err(Error::Domain(format!("curvature must be > 0, got {q}")));
    }
    if let Some(b) = linear_costs.iter().find(|b| !b.is_finite()) {
        return Err(Error::Domain(format!("linear cost must be finite, got {b}")));
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| linear_costs[a].total_cmp(&linear_costs[b]));

    let mut inv_sum = 0.0;
    let mut weighted_sum = 0.0;
    let mut mu = 0.0;
    for (m, &idx) in order.iter().enumerate() {
        let w = 0.5 / curvatures[idx];
        inv_sum += w;
        weighted_sum += w * linear_costs[idx];
        mu = (1.0 + weighted_sum) / inv_sum;
        match order.get(m + 1) {
            Some(&next) if mu > linear_costs[next] => continue,
            _ => break,
        }
    }

    let mut p: Vec<f64> = linear_costs
        .iter()
        .zip(curvatures)
        .map(|(&b, &q)| ((mu - b) / (2.0 * q)).max(0.0))
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Largest violation of the KKT conditions of [`simplex_quadratic_argmin`]
/// at `p`: multiplier spread over active coordinates, complementary slackness
/// on inactive ones, feasibility.
pub fn kkt_residual(linear_costs: &[f64], curvatures: &[f64], p: &[f64]) -> f64 {
    let marginal: Vec<f64> = linear_costs
        .iter()
        .zip(curvatures)
        .zip(p)
        .map(|((&b, &q), &x)| b + 2.0 * q * x)
        .collect();
    let active: Vec<f64> = marginal
        .iter()
        .zip(p)
        .filter(|(_, &x)| x > 0.0)
        .map(|(&g, _)| g)
        .collect();
    let mut residual = (p.iter().sum::<f64>() - 1.0).abs();
    residual = p.iter().fold(residual, |r, &x| r.max(-x));
    if active.is_empty() {
        return f64::INFINITY;
    }
    let mu = active.iter().sum::<f64>() / active.len() as f64;
    for (&g, &x) in marginal.iter().zip(p) {
        if x > 0.0 {
            residual = residual.max((g - mu).abs());
        } else {
            residual = residual.max(mu - g);
        }
    }
    residual
}

/// Inputs of one passenger node `P_ij(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMarket {
    pub distance: f64,
    pub rate_u: f64,
    pub rate_l: f64,
    pub rate_o: f64,
    pub a_u: f64,
    pub a_l: f64,
    /// Node wait-cost multiplier `λ_i(t)`.
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeResponse {
    pub p_u: f64,
    pub p_l: f64,
    pub p_o: f64,
}

impl EdgeResponse {
    pub fn sum(&self) -> f64 {
        self.p_u + self.p_l + self.p_o
    }
}

impl EdgeMarket {
    /// Linear costs and curvatures of the QP actually solved, after flooring.
    /// Excluded platforms are `None`.
    pub fn effective_problem(&self, availability_floor: f64) -> [Option<(f64, f64)>; 3] {
        let lambda = self.lambda.max(LAMBDA_FLOOR);
        let d = self.distance;
        let platform = |rate: f64, a: f64| {
            (a >= availability_floor).then(|| (d * rate, lambda / a))
        };
        [
            platform(self.rate_u, self.a_u),
            platform(self.rate_l, self.a_l),
            Some((d * self.rate_o, lambda)),
        ]
    }

    /// Passenger cost of `resp` under the floored problem; excluded platforms
    /// contribute nothing when their share is zero.
    pub fn cost(&self, resp: &EdgeResponse, availability_floor: f64) -> f64 {
        let problem = self.effective_problem(availability_floor);
        [resp.p_u, resp.p_l, resp.p_o]
            .iter()
            .zip(problem)
            .map(|(&p, term)| match term {
                Some((b, q)) => b * p + q * p * p,
                None if p == 0.0 => 0.0,
                None => f64::INFINITY,
            })
            .sum()
    }
}

/// Exact minimizer of the edge's passenger cost.
pub fn edge_best_response(m: &EdgeMarket, availability_floor: f64) -> Result<EdgeResponse> {
    let problem = m.effective_problem(availability_floor);
    let mut linear = Vec::with_capacity(3);
    let mut curv = Vec::with_capacity(3);
    let mut slots = Vec::with_capacity(3);
    for (slot, term) in problem.iter().enumerate() {
        if let Some((b, q)) = term {
            linear.push(*b);
            curv.push(*q);
            slots.push(slot);
        }
    }
    let solved = simplex_quadratic_argmin(&linear, &curv)?;
    let mut p = [0.0; 3];
    for (&slot, x) in slots.iter().zip(solved) {
        p[slot] = x;
    }
    Ok(EdgeResponse {
        p_u: p[0],
        p_l: p[1],
        p_o: p[2],
    })
}

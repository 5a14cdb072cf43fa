//! Driver self-allocation by random candidate search.
//!
//! Each step the drivers perturb the current U-availability of every node by
//! an independent `Uniform(−δa, +δa)` draw, clip to `[0, 1]` and assign the rest
//! to L. Each candidate is scored by the summed driver profit under the
//! passengers' best response, and the best one is adopted. A small `δa` makes
//! the supply side slow to follow price changes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{AllocationState, OdGraph, PassengerShares, Populations, PriceSchedule, SimConfig};
use crate::matrix::edges;
use crate::passenger::{
    edge_best_response, wait_multiplier, EdgeMarket, AVAILABILITY_FLOOR, DRIVER_FLOOR,
};

/// A total-covering driver allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverCandidate {
    pub a_u: Vec<f64>,
    pub a_l: Vec<f64>,
}

impl DriverCandidate {
    pub fn from_u(a_u: Vec<f64>) -> Self {
        let a_l = a_u.iter().map(|a| 1.0 - a).collect();
        Self { a_u, a_l }
    }

    pub fn from_allocation(alloc: &AllocationState) -> Self {
        Self {
            a_u: alloc.a_u.clone(),
            a_l: alloc.a_l.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub candidate: DriverCandidate,
    pub shares: PassengerShares,
    pub driver_profit: f64,
}

impl CandidateEvaluation {
    pub fn into_allocation(self) -> AllocationState {
        AllocationState {
            a_u: self.candidate.a_u,
            a_l: self.candidate.a_l,
            shares: self.shares,
        }
    }
}

pub fn sample_candidates<R: Rng + ?Sized>(
    current: &AllocationState,
    delta_a: f64,
    n_candidates: usize,
    rng: &mut R,
) -> Vec<DriverCandidate> {
    (0..n_candidates)
        .map(|_| {
            let a_u = current
                .a_u
                .iter()
                .map(|&a| {
                    let delta = (2.0 * rng.random::<f64>() - 1.0) * delta_a;
                    (a + delta).clamp(0.0, 1.0)
                })
                .collect();
            DriverCandidate::from_u(a_u)
        })
        .collect()
}

/// Passenger responses on every edge given driver availabilities.
pub fn passenger_responses(
    a_u: &[f64],
    a_l: &[f64],
    populations: &Populations,
    prices: &PriceSchedule,
    graph: &OdGraph,
    config: &SimConfig,
) -> Result<PassengerShares> {
    let n = graph.n_nodes();
    let lambdas: Vec<f64> = (0..n)
        .map(|i| wait_multiplier(populations, i, config.base_wait, DRIVER_FLOOR))
        .collect();
    let mut shares = PassengerShares::zeros(n);
    for e @ (i, _) in edges(n) {
        let market = EdgeMarket {
            distance: graph.distance[e],
            rate_u: prices.u.rate[e],
            rate_l: prices.l.rate[e],
            rate_o: config.transit_rate,
            a_u: a_u[i],
            a_l: a_l[i],
            lambda: lambdas[i],
        };
        let r = edge_best_response(&market, AVAILABILITY_FLOOR)?;
        shares.u[e] = r.p_u;
        shares.l[e] = r.p_l;
        shares.o[e] = r.p_o;
    }
    Ok(shares)
}

/// Summed driver profit `Σ_i Σ_j d_ij [p_u (c_u − g) + p_l (c_l − g)]`.
pub fn driver_profit(
    shares: &PassengerShares,
    prices: &PriceSchedule,
    graph: &OdGraph,
    gas_cost: f64,
) -> f64 {
    edges(graph.n_nodes())
        .map(|e| {
            graph.distance[e]
                * (shares.u[e] * (prices.u.commission[e] - gas_cost)
                    + shares.l[e] * (prices.l.commission[e] - gas_cost))
        })
        .sum()
}

pub fn evaluate_candidate(
    candidate: &DriverCandidate,
    populations: &Populations,
    prices: &PriceSchedule,
    graph: &OdGraph,
    config: &SimConfig,
) -> Result<CandidateEvaluation> {
    let shares = passenger_responses(
        &candidate.a_u,
        &candidate.a_l,
        populations,
        prices,
        graph,
        config,
    )?;
    let driver_profit = driver_profit(&shares, prices, graph, config.gas_cost);
    Ok(CandidateEvaluation {
        candidate: candidate.clone(),
        shares,
        driver_profit,
    })
}

/// Index of the most profitable evaluation; the lowest index wins ties.
pub fn select_allocation(candidates: &[CandidateEvaluation]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        match best {
            Some((_, p)) if c.driver_profit <= p => {}
            _ => best = Some((i, c.driver_profit)),
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Usage("cannot select from an empty candidate list".into()))
}

/// One full driver search step: sample, evaluate, keep the best.
pub fn search_allocation<R: Rng + ?Sized>(
    current: &AllocationState,
    populations: &Populations,
    prices: &PriceSchedule,
    graph: &OdGraph,
    config: &SimConfig,
    rng: &mut R,
) -> Result<CandidateEvaluation> {
    let mut candidates = Vec::with_capacity(config.n_candidates + 1);
    if config.include_incumbent {
        candidates.push(DriverCandidate::from_allocation(current));
    }
    candidates.extend(sample_candidates(
        current,
        config.delta_a,
        config.n_candidates,
        rng,
    ));
    let mut evaluated = candidates
        .iter()
        .map(|c| evaluate_candidate(c, populations, prices, graph, config))
        .collect::<Result<Vec<_>>>()?;
    let best = select_allocation(&evaluated)?;
    Ok(evaluated.swap_remove(best))
}

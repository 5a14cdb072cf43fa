//! Re-derivation of logged episodes and metrics from first principles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::passenger_responses;
use crate::dynamics;
use crate::error::{Error, Result};
use crate::harness::episode::EpisodeLog;
use crate::harness::experiment::episode_path;
use crate::harness::metrics::{ema, read_metrics, EpochMetrics};
use crate::market::{AllocationState, OdGraph, SimConfig};
use crate::matrix::{edges, SquareMatrix};
use crate::ppo::compute_reward;

/// Largest absolute discrepancy per quantity between a log and its replay.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub shares: f64,
    pub flows: f64,
    /// Relative to `max(1, |profit|)`.
    pub profits: f64,
    pub rewards: f64,
    pub populations: f64,
    /// Mismatch between a step's next populations and the following step's
    /// starting populations.
    pub chain: f64,
    pub total_clamped: f64,
}

impl ReplayReport {
    pub fn max_error(&self) -> f64 {
        [
            self.shares,
            self.flows,
            self.profits,
            self.rewards,
            self.populations,
            self.chain,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_error() <= tol
    }
}

fn max_diff(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
    edges(a.n())
        .map(|e| (a[e] - b[e]).abs())
        .fold(0.0, f64::max)
}

fn vec_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Recomputes passenger responses, flows, profits, rewards and the population
/// update of every step from the logged populations, prices and driver
/// allocation.
pub fn replay_episode(
    log: &EpisodeLog,
    graph: &OdGraph,
    sim: &SimConfig,
    reward_scale: f64,
) -> Result<ReplayReport> {
    let mut rep = ReplayReport {
        steps: log.steps.len(),
        ..Default::default()
    };
    for (k, s) in log.steps.iter().enumerate() {
        let a = &s.allocation;
        let shares = passenger_responses(&a.a_u, &a.a_l, &s.populations, &s.prices, graph, sim)?;
        rep.shares = rep
            .shares
            .max(max_diff(&shares.u, &a.shares.u))
            .max(max_diff(&shares.l, &a.shares.l))
            .max(max_diff(&shares.o, &a.shares.o));
        let alloc = AllocationState {
            a_u: a.a_u.clone(),
            a_l: a.a_l.clone(),
            shares,
        };
        let out = dynamics::step(&s.populations, &alloc, &s.prices, graph, sim.dt)?;
        rep.flows = rep
            .flows
            .max(max_diff(&out.flows.flow_u, &s.flows.flow_u))
            .max(max_diff(&out.flows.flow_l, &s.flows.flow_l))
            .max(max_diff(&out.flows.flow_o, &s.flows.flow_o));
        // Profits straight from the logged flows and prices.
        for (flow, prices, logged) in [
            (&s.flows.flow_u, &s.prices.u, s.profit_u),
            (&s.flows.flow_l, &s.prices.l, s.profit_l),
        ] {
            let direct: f64 = edges(graph.n_nodes())
                .map(|e| graph.distance[e] * flow[e] * (prices.rate[e] - prices.commission[e]))
                .sum();
            rep.profits = rep.profits.max((direct - logged).abs() / logged.abs().max(1.0));
        }
        rep.rewards = rep
            .rewards
            .max((compute_reward(s.profit_u, sim.dt, reward_scale) - s.reward_u).abs())
            .max((compute_reward(s.profit_l, sim.dt, reward_scale) - s.reward_l).abs());
        rep.populations = rep
            .populations
            .max(vec_diff(&out.new_populations.passengers, &s.next_populations.passengers))
            .max(vec_diff(&out.new_populations.drivers, &s.next_populations.drivers));
        if let Some(next) = log.steps.get(k + 1) {
            rep.chain = rep
                .chain
                .max(vec_diff(&s.next_populations.passengers, &next.populations.passengers))
                .max(vec_diff(&s.next_populations.drivers, &next.populations.drivers));
        }
        rep.total_clamped += s.clamped;
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsAudit {
    pub epochs: usize,
    pub episodes_checked: usize,
    /// Largest gap between a metrics row and the same row recomputed from
    /// its episode log.
    pub raw_error: f64,
    /// Largest gap between the EMA columns and the EMA of the raw columns.
    pub ema_error: f64,
}

/// Checks a seed directory's metrics CSV against its logged episodes and its
/// own raw columns.
pub fn audit_metrics(seed_dir: &Path, sim: &SimConfig, alpha: f64) -> Result<MetricsAudit> {
    let rows = read_metrics(&seed_dir.join("metrics.csv"))?;
    let mut audit = MetricsAudit {
        epochs: rows.len(),
        ..Default::default()
    };
    for (i, row) in rows.iter().enumerate() {
        if row.epoch != i {
            return Err(Error::Domain(format!("metrics row {i} has epoch {}", row.epoch)));
        }
        let path = episode_path(seed_dir, row.epoch);
        if !path.exists() {
            continue;
        }
        let log = EpisodeLog::load(&path)?;
        let m = EpochMetrics::from_log(&log, sim.gas_cost)?;
        let a = serde_json::to_value(m)?;
        let b = serde_json::to_value(row.raw())?;
        let err = a
            .as_object()
            .into_iter()
            .flatten()
            .filter_map(|(k, v)| Some((v.as_f64()? - b.get(k)?.as_f64()?).abs()))
            .fold(0.0, f64::max);
        audit.raw_error = audit.raw_error.max(err);
        audit.episodes_checked += 1;
    }
    type Pair = (fn(&crate::harness::metrics::MetricsRow) -> f64, fn(&crate::harness::metrics::MetricsRow) -> f64);
    let pairs: [Pair; 10] = [
        (|r| r.profit_u, |r| r.profit_u_ema),
        (|r| r.profit_l, |r| r.profit_l_ema),
        (|r| r.mean_r_u, |r| r.mean_r_u_ema),
        (|r| r.mean_c_u, |r| r.mean_c_u_ema),
        (|r| r.mean_r_l, |r| r.mean_r_l_ema),
        (|r| r.mean_c_l, |r| r.mean_c_l_ema),
        (|r| r.margin_u, |r| r.margin_u_ema),
        (|r| r.margin_l, |r| r.margin_l_ema),
        (|r| r.gap_cu_g, |r| r.gap_cu_g_ema),
        (|r| r.gap_cl_g, |r| r.gap_cl_g_ema),
    ];
    for (raw, smooth) in pairs {
        let expected = ema(&rows.iter().map(raw).collect::<Vec<_>>(), alpha);
        let got: Vec<f64> = rows.iter().map(smooth).collect();
        audit.ema_error = audit.ema_error.max(vec_diff(&expected, &got));
    }
    Ok(audit)
}

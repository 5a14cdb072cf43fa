//! One simultaneous-move episode and its per-step log.

use std::io::Write;
use std::path::Path;

use crate::dynamics::FlowSet;
use crate::env::MarketEnv;
use crate::error::{Error, Result};
use crate::market::{AllocationState, MarketState, Platform, Populations, PriceSchedule};
use crate::matrix::{edges, SquareMatrix};
use crate::ppo::{compute_reward, map_action, Agent, TrajectoryBuffer};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Populations before the step.
    pub populations: Populations,
    pub prices: PriceSchedule,
    /// Driver allocation chosen by the search, with the passenger responses.
    pub allocation: AllocationState,
    pub flows: FlowSet,
    pub profit_u: f64,
    pub profit_l: f64,
    pub reward_u: f64,
    pub reward_l: f64,
    pub clamped: f64,
    pub next_populations: Populations,
}

impl StepRecord {
    pub fn profit(&self, p: Platform) -> f64 {
        match p {
            Platform::U => self.profit_u,
            Platform::L => self.profit_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub epoch: usize,
    pub seed: u64,
    pub n_nodes: usize,
    pub steps: Vec<StepRecord>,
}

fn edge_tag(i: usize, j: usize) -> String {
    format!("{i}_{j}")
}

/// CSV header for an `n`-node episode log.
pub fn episode_header(n: usize) -> Vec<String> {
    let mut h = vec!["epoch".to_string(), "seed".into(), "step".into()];
    for prefix in ["pp", "pd", "a_u", "a_l"] {
        h.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    for name in [
        "r_u", "c_u", "r_l", "c_l", "p_u", "p_l", "p_o", "f_u", "f_l", "f_o",
    ] {
        h.extend(edges(n).map(|(i, j)| format!("{name}_{}", edge_tag(i, j))));
    }
    h.extend(
        ["profit_u", "profit_l", "reward_u", "reward_l", "clamped"]
            .iter()
            .map(|s| s.to_string()),
    );
    for prefix in ["pp_next", "pd_next"] {
        h.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    h
}

fn push_edges(row: &mut Vec<String>, m: &SquareMatrix) {
    row.extend(edges(m.n()).map(|e| m[e].to_string()));
}

impl EpisodeLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.n_nodes;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(episode_header(n))?;
        for s in &self.steps {
            let mut row = vec![self.epoch.to_string(), self.seed.to_string(), s.step.to_string()];
            for v in [
                &s.populations.passengers,
                &s.populations.drivers,
                &s.allocation.a_u,
                &s.allocation.a_l,
            ] {
                row.extend(v.iter().map(f64::to_string));
            }
            for m in [
                &s.prices.u.rate,
                &s.prices.u.commission,
                &s.prices.l.rate,
                &s.prices.l.commission,
                &s.allocation.shares.u,
                &s.allocation.shares.l,
                &s.allocation.shares.o,
                &s.flows.flow_u,
                &s.flows.flow_l,
                &s.flows.flow_o,
            ] {
                push_edges(&mut row, m);
            }
            for x in [s.profit_u, s.profit_l, s.reward_u, s.reward_l, s.clamped] {
                row.push(x.to_string());
            }
            for v in [&s.next_populations.passengers, &s.next_populations.drivers] {
                row.extend(v.iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a log written by [`EpisodeLog::write_csv`]. Available flows are
    /// not logged and come back as zeros.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let n = (0..).take_while(|i| header.contains(&format!("pp_{i}"))).count();
        if n < 2 || header != episode_header(n) {
            return Err(Error::Domain(format!(
                "{} does not have an episode-log header",
                path.display()
            )));
        }
        let mut log = EpisodeLog {
            epoch: 0,
            seed: 0,
            n_nodes: n,
            steps: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|e| Error::Domain(format!("bad number {x:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            let mut it = nums.into_iter();
            let mut take_vec = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
            let head = take_vec(3);
            log.epoch = head[0] as usize;
            log.seed = head[1] as u64;
            let step = head[2] as usize;
            let pp = take_vec(n);
            let pd = take_vec(n);
            let a_u = take_vec(n);
            let a_l = take_vec(n);
            let m = n * n - n;
            let mut mats: Vec<SquareMatrix> = (0..10)
                .map(|_| {
                    let mut s = SquareMatrix::zeros(n);
                    s.set_off_diagonal_values(&take_vec(m));
                    s
                })
                .collect();
            let tail = take_vec(5);
            let pp_next = take_vec(n);
            let pd_next = take_vec(n);
            let mut next = || mats.remove(0);
            let prices = PriceSchedule {
                u: crate::market::PlatformPrices {
                    rate: next(),
                    commission: next(),
                },
                l: crate::market::PlatformPrices {
                    rate: next(),
                    commission: next(),
                },
            };
            let shares = crate::market::PassengerShares {
                u: next(),
                l: next(),
                o: next(),
            };
            let mut flows = FlowSet::zeros(n);
            flows.flow_u = next();
            flows.flow_l = next();
            flows.flow_o = next();
            log.steps.push(StepRecord {
                step,
                populations: Populations {
                    passengers: pp,
                    drivers: pd,
                },
                prices,
                allocation: AllocationState { a_u, a_l, shares },
                flows,
                profit_u: tail[0],
                profit_l: tail[1],
                reward_u: tail[2],
                reward_l: tail[3],
                clamped: tail[4],
                next_populations: Populations {
                    passengers: pp_next,
                    drivers: pd_next,
                },
            });
        }
        Ok(log)
    }
}

/// Result of one episode: the log, each agent's buffer and the final state.
#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub log: EpisodeLog,
    pub buffer_u: TrajectoryBuffer,
    pub buffer_l: TrajectoryBuffer,
    pub final_state: MarketState,
}

/// Plays `env.config.episode_len` steps from `state`.
///
/// Both agents act on the same pre-step observation. Each agent's buffer ends
/// with its own critic's value of the final state as bootstrap, since the
/// episode is truncated rather than terminated.
pub fn run_episode<R: Rng + ?Sized>(
    env: &MarketEnv,
    mut state: MarketState,
    agent_u: &mut Agent,
    agent_l: &mut Agent,
    env_rng: &mut R,
    epoch: usize,
    seed: u64,
) -> Result<EpisodeOutput> {
    let cfg = &env.config;
    let n = env.n_nodes();
    let encoder = env.encoder();
    let obs_dim = encoder.len();
    let act_dim = agent_u.policy.action_dim();
    let len = cfg.episode_len;
    let mut buffer_u = TrajectoryBuffer::new(obs_dim, act_dim, len);
    let mut buffer_l = TrajectoryBuffer::new(obs_dim, act_dim, len);
    let mut steps = Vec::with_capacity(len);

    for t in 0..len {
        let obs = encoder.encode(&state);
        let act_u = agent_u.act(&obs)?;
        let act_l = agent_l.act(&obs)?;
        let prices = PriceSchedule {
            u: map_action(&act_u.action, n, cfg.price_min, cfg.price_max)?,
            l: map_action(&act_l.action, n, cfg.price_min, cfg.price_max)?,
        };
        let tr = env.step(&state, &prices, env_rng).map_err(|e| {
            log::error!("epoch {epoch} seed {seed}: step {t} failed: {e}");
            e
        })?;
        let reward_u = compute_reward(tr.outcome.profit_u, cfg.dt, agent_u.hyperparams.reward_scale);
        let reward_l = compute_reward(tr.outcome.profit_l, cfg.dt, agent_l.hyperparams.reward_scale);
        buffer_u.push(&obs, &act_u, reward_u);
        buffer_l.push(&obs, &act_l, reward_l);
        steps.push(StepRecord {
            step: t,
            populations: state.populations.clone(),
            prices,
            allocation: tr.next_state.allocation.clone(),
            flows: tr.outcome.flows,
            profit_u: tr.outcome.profit_u,
            profit_l: tr.outcome.profit_l,
            reward_u,
            reward_l,
            clamped: tr.outcome.clamped,
            next_populations: tr.next_state.populations.clone(),
        });
        state = tr.next_state;
    }

    let final_obs = encoder.encode(&state);
    buffer_u.terminal_value = agent_u.value(&final_obs)?;
    buffer_l.terminal_value = agent_l.value(&final_obs)?;
    Ok(EpisodeOutput {
        log: EpisodeLog {
            epoch,
            seed,
            n_nodes: n,
            steps,
        },
        buffer_u,
        buffer_l,
        final_state: state,
    })
}

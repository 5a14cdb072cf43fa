//! Brute-force reference checks shared by the test suites and the CLI.
//!
//! Every check here recomputes a quantity by a different route from the
//! production code: exhaustive grids for the two optimization layers, central
//! finite differences for the learner's gradients, and long rollouts for
//! population conservation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::driver::{evaluate_candidate, search_allocation, DriverCandidate};
use crate::env::MarketEnv;
use crate::error::Result;
use crate::harness::episode::run_episode;
use crate::market::{action_len, init_state, OdGraph, Platform, PlatformPrices, PriceSchedule, SimConfig};
use crate::matrix::{edges, SquareMatrix};
use crate::passenger::{edge_best_response, kkt_residual, EdgeMarket, EdgeResponse, AVAILABILITY_FLOOR};
use crate::ppo::agent::stream_rng;
use crate::ppo::update::{ppo_loss, ppo_loss_and_grad, Batch};
use crate::ppo::{Agent, Policy, PpoHyperparams, TrajectoryBuffer};

/// A random edge market with a mix of interior, corner and excluded-platform
/// cases.
pub fn random_edge_market<R: Rng + ?Sized>(rng: &mut R) -> EdgeMarket {
    let a_u = match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random::<f64>(),
    };
    EdgeMarket {
        distance: rng.random_range(0.5..10.0),
        rate_u: rng.random_range(5.0..20.0),
        rate_l: rng.random_range(5.0..20.0),
        rate_o: rng.random_range(5.0..20.0),
        a_u,
        a_l: 1.0 - a_u,
        lambda: 10f64.powf(rng.random_range(-1.0..2.0)),
    }
}

/// Best point of the step-`h` simplex grid under the edge's passenger cost.
/// Grid points that give an excluded platform positive share are skipped.
pub fn simplex_grid_best(m: &EdgeMarket, h: f64) -> (f64, EdgeResponse) {
    let k = (1.0 / h).round() as usize;
    let mut best = (f64::INFINITY, EdgeResponse { p_u: 0.0, p_l: 0.0, p_o: 1.0 });
    for i in 0..=k {
        for j in 0..=(k - i) {
            let p = EdgeResponse {
                p_u: i as f64 / k as f64,
                p_l: j as f64 / k as f64,
                p_o: (k - i - j) as f64 / k as f64,
            };
            let c = m.cost(&p, AVAILABILITY_FLOOR);
            if c < best.0 {
                best = (c, p);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpReport {
    pub instances: usize,
    /// Largest `solver cost − grid best cost`; at most the tolerance passes.
    pub worst_gap: f64,
    pub worst_kkt: f64,
    pub worst_simplex_error: f64,
}

impl QpReport {
    pub fn passes(&self, gap_tol: f64, kkt_tol: f64) -> bool {
        self.worst_gap <= gap_tol && self.worst_kkt <= kkt_tol && self.worst_simplex_error <= 1e-12
    }
}

pub fn qp_suite(instances: usize, grid_step: f64, seed: u64) -> Result<QpReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = QpReport {
        instances,
        worst_gap: f64::NEG_INFINITY,
        worst_kkt: 0.0,
        worst_simplex_error: 0.0,
    };
    for _ in 0..instances {
        let m = random_edge_market(&mut rng);
        let resp = edge_best_response(&m, AVAILABILITY_FLOOR)?;
        let (grid_cost, _) = simplex_grid_best(&m, grid_step);
        rep.worst_gap = rep.worst_gap.max(m.cost(&resp, AVAILABILITY_FLOOR) - grid_cost);
        let (mut b, mut q, mut p) = (vec![], vec![], vec![]);
        for (term, x) in m.effective_problem(AVAILABILITY_FLOOR).iter().zip([resp.p_u, resp.p_l, resp.p_o]) {
            if let Some((bk, qk)) = term {
                b.push(*bk);
                q.push(*qk);
                p.push(x);
            }
        }
        rep.worst_kkt = rep.worst_kkt.max(kkt_residual(&b, &q, &p));
        rep.worst_simplex_error = rep.worst_simplex_error.max((resp.sum() - 1.0).abs());
    }
    Ok(rep)
}

/// Prices drawn uniformly within the configured bounds on every edge.
pub fn random_prices<R: Rng + ?Sized>(n: usize, config: &SimConfig, rng: &mut R) -> PriceSchedule {
    let mut draw = || {
        let mut m = SquareMatrix::zeros(n);
        for e in edges(n) {
            m[e] = rng.random_range(config.price_min..=config.price_max);
        }
        m
    };
    PriceSchedule {
        u: PlatformPrices { rate: draw(), commission: draw() },
        l: PlatformPrices { rate: draw(), commission: draw() },
    }
}

/// Exhaustive search over U-availabilities on the step-`h` grid in every node.
pub fn driver_grid_best(
    populations: &crate::market::Populations,
    prices: &PriceSchedule,
    graph: &OdGraph,
    config: &SimConfig,
    h: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = graph.n_nodes();
    let k = (1.0 / h).round() as usize;
    let mut idx = vec![0usize; n];
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    loop {
        let a_u: Vec<f64> = idx.iter().map(|&i| i as f64 / k as f64).collect();
        let eval = evaluate_candidate(&DriverCandidate::from_u(a_u.clone()), populations, prices, graph, config)?;
        if eval.driver_profit > best.0 {
            best = (eval.driver_profit, a_u);
        }
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] <= k {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverReport {
    pub instances: usize,
    /// Instances where the search reached the required share of the grid best.
    pub attained: usize,
    pub attained_fraction: f64,
    pub required_share: f64,
    /// Smallest `search profit / grid profit` over instances with a positive
    /// grid best.
    pub worst_ratio: f64,
    /// Median, 90th percentile and maximum of `(grid − search) / |grid|`.
    pub shortfall_quantiles: [f64; 3],
}

/// Search profit counts as attaining `share` of the grid best `g` when it is
/// at least `g − (1 − share)·|g|`, which is the ratio test for positive `g`.
pub fn attains(search: f64, grid: f64, share: f64) -> bool {
    search >= grid - (1.0 - share) * grid.abs()
}

/// Runs one search step from a fresh random allocation against the grid
/// oracle at random prices.
pub fn driver_suite(
    graph: &OdGraph,
    config: &SimConfig,
    instances: usize,
    grid_step: f64,
    share: f64,
    seed: u64,
) -> Result<DriverReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n_nodes();
    let mut rep = DriverReport {
        instances,
        attained: 0,
        attained_fraction: 0.0,
        required_share: share,
        worst_ratio: f64::INFINITY,
        shortfall_quantiles: [0.0; 3],
    };
    let mut shortfall = Vec::with_capacity(instances);
    for _ in 0..instances {
        let state = init_state(config, graph, &mut rng)?;
        let prices = random_prices(n, config, &mut rng);
        let (grid, _) = driver_grid_best(&state.populations, &prices, graph, config, grid_step)?;
        let found = search_allocation(&state.allocation, &state.populations, &prices, graph, config, &mut rng)?;
        if attains(found.driver_profit, grid, share) {
            rep.attained += 1;
        }
        if grid > 0.0 {
            rep.worst_ratio = rep.worst_ratio.min(found.driver_profit / grid);
        }
        shortfall.push((grid - found.driver_profit) / grid.abs().max(f64::MIN_POSITIVE));
    }
    shortfall.sort_by(f64::total_cmp);
    if let Some(&max) = shortfall.last() {
        let q = |f: f64| shortfall[((shortfall.len() - 1) as f64 * f).round() as usize];
        rep.shortfall_quantiles = [q(0.5), q(0.9), max];
    }
    rep.attained_fraction = rep.attained as f64 / instances.max(1) as f64;
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the actor
    /// block (network and log-std).
    pub actor_rel_error: f64,
    pub critic_rel_error: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares the analytic loss gradient with central differences of step `h`
/// on one random instance. The parameters are perturbed after collection so
/// that ratios differ from 1 and some samples fall in the clipped region.
pub fn gradient_check(seed: u64, hidden: &[usize], batch: usize, h: f64) -> Result<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs_dim, act_dim) = (14, action_len(2));
    let hp = PpoHyperparams {
        hidden_sizes: hidden.to_vec(),
        ..Default::default()
    };
    let mut policy = Policy::new(obs_dim, act_dim, hidden, rng.random_range(-0.5..0.0), &mut rng);
    let mut buf = TrajectoryBuffer::new(obs_dim, act_dim, batch);
    for _ in 0..batch {
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random::<f64>()).collect();
        let act = policy.act(&obs, &mut rng)?;
        buf.push(&obs, &act, 0.0);
    }
    let mut flat = policy.flatten();
    for x in flat.iter_mut() {
        *x += 0.05 * rng.sample::<f64, _>(StandardNormal);
    }
    policy.load_flat(&flat);
    let advantages: Vec<f64> = (0..batch).map(|_| rng.sample(StandardNormal)).collect();
    let returns: Vec<f64> = (0..batch).map(|_| rng.sample(StandardNormal)).collect();
    let idx: Vec<usize> = (0..batch).collect();
    let b = Batch::gather(&buf, &advantages, &returns, &idx);

    let (parts, analytic) = ppo_loss_and_grad(&policy, &b, &hp)?;
    let mut numeric = vec![0.0; flat.len()];
    let mut probe = policy.clone();
    for k in 0..flat.len() {
        let mut p = flat.clone();
        p[k] = flat[k] + h;
        probe.load_flat(&p);
        let up = ppo_loss(&probe, &b, &hp)?.total;
        p[k] = flat[k] - h;
        probe.load_flat(&p);
        let down = ppo_loss(&probe, &b, &hp)?.total;
        numeric[k] = (up - down) / (2.0 * h);
    }
    let na = policy.n_actor_params();
    Ok(GradientCheck {
        actor_rel_error: rel_error(&analytic[..na], &numeric[..na]),
        critic_rel_error: rel_error(&analytic[na..], &numeric[na..]),
        mean_ratio: parts.mean_ratio,
        clip_fraction: parts.clip_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub checks: Vec<GradientCheck>,
    pub worst_rel_error: f64,
}

pub fn gradient_suite(instances: usize, seed: u64) -> Result<GradientReport> {
    let shapes: [&[usize]; 3] = [&[16, 16], &[8], &[12, 10]];
    let checks = (0..instances)
        .map(|i| gradient_check(seed + i as u64, shapes[i % shapes.len()], 32, 1e-5))
        .collect::<Result<Vec<_>>>()?;
    let worst_rel_error = checks
        .iter()
        .map(|c| c.actor_rel_error.max(c.critic_rel_error))
        .fold(0.0, f64::max);
    Ok(GradientReport { checks, worst_rel_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub steps: usize,
    pub passenger_rel_error: f64,
    pub driver_rel_error: f64,
    pub clamped: f64,
    pub clamp_events: usize,
}

/// One full episode with freshly initialized agents for `seed`.
pub fn conservation_run(graph: &OdGraph, config: &SimConfig, seed: u64) -> Result<ConservationReport> {
    let env = MarketEnv::new(graph.clone(), config.clone())?;
    let obs = env.encoder().len();
    let act = action_len(env.n_nodes());
    let hp = PpoHyperparams::default();
    let mut u = Agent::new(Platform::U, obs, act, hp.clone(), seed)?;
    let mut l = Agent::new(Platform::L, obs, act, hp, seed)?;
    let mut rng = stream_rng(seed, 0);
    let state = env.reset(&mut rng)?;
    let (p0, d0) = (state.populations.total_passengers(), state.populations.total_drivers());
    let out = run_episode(&env, state, &mut u, &mut l, &mut rng, 0, seed)?;
    let fin = &out.final_state.populations;
    Ok(ConservationReport {
        steps: out.log.steps.len(),
        passenger_rel_error: (fin.total_passengers() - p0).abs() / p0,
        driver_rel_error: (fin.total_drivers() - d0).abs() / d0,
        clamped: out.log.steps.iter().map(|s| s.clamped).sum(),
        clamp_events: out.log.steps.iter().filter(|s| s.clamped > 0.0).count(),
    })
}

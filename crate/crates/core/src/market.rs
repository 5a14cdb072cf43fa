//! Market geometry, configuration and state.
//!
//! The observation handed to both pricing agents is
//!
//! ```text
//! [Π^P (N), Π^D (N), a_u (N), a_l (N), p_u (N²−N), p_l (N²−N), p_o (N²−N)]
//! ```
//!
//! with population entries divided by the initial total passenger and driver
//! counts respectively, and share matrices flattened over off-diagonal edges
//! in row-major order.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{edges, SquareMatrix};

/// Tolerance used by [`validate`].
pub const STATE_TOLERANCE: f64 = 1e-9;

const INIT_AVAILABILITY_MEAN: f64 = 0.5;
const INIT_SHARE_MEAN: f64 = 1.0 / 3.0;
/// Standard deviation of the initial allocation draws (variance 0.01).
const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Platform {
    U,
    L,
}

impl Platform {
    pub const BOTH: [Platform; 2] = [Platform::U, Platform::L];

    pub fn label(self) -> &'static str {
        match self {
            Platform::U => "u",
            Platform::L => "l",
        }
    }

    pub fn other(self) -> Platform {
        match self {
            Platform::U => Platform::L,
            Platform::L => Platform::U,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Fully connected origin-destination graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdGraph {
    /// `e_ij`: fraction of node-`i` passengers per unit time heading to `j`.
    #[serde(alias = "od")]
    pub demand_fraction: SquareMatrix,
    /// `d_ij` in miles; may be asymmetric.
    #[serde(alias = "d")]
    pub distance: SquareMatrix,
}

impl OdGraph {
    pub fn new(demand_fraction: SquareMatrix, distance: SquareMatrix) -> Result<Self> {
        let g = Self {
            demand_fraction,
            distance,
        };
        g.validate()?;
        Ok(g)
    }

    /// The two-node graph used throughout the experiments.
    pub fn two_node_example() -> Self {
        Self {
            demand_fraction: SquareMatrix::from_rows(vec![vec![0.0, 0.9], vec![0.2, 0.0]])
                .expect("square"),
            distance: SquareMatrix::from_rows(vec![vec![0.0, 5.0], vec![2.0, 0.0]])
                .expect("square"),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.demand_fraction.n()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::Config("graph must have at least one node".into()));
        }
        if self.distance.n() != n {
            return Err(Error::Config(format!(
                "distance matrix is {}x{}, demand matrix is {n}x{n}",
                self.distance.n(),
                self.distance.n()
            )));
        }
        for i in 0..n {
            if self.demand_fraction[(i, i)] != 0.0 || self.distance[(i, i)] != 0.0 {
                return Err(Error::Config(format!("self-edge ({i},{i}) must be zero")));
            }
            let row = self.demand_fraction.row_sum(i);
            if row > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "demand fractions out of node {i} sum to {row} > 1"
                )));
            }
        }
        for (i, j) in edges(n) {
            let e = self.demand_fraction[(i, j)];
            let d = self.distance[(i, j)];
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("e[{i}][{j}] = {e} outside [0,1]")));
            }
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("d[{i}][{j}] = {d} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Market and training-loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Driver cost per mile.
    #[serde(alias = "g")]
    pub gas_cost: f64,
    /// Base wait-cost multiplier λ.
    #[serde(alias = "lambda")]
    pub base_wait: f64,
    /// Public transit price per mile.
    #[serde(alias = "r_o")]
    pub transit_rate: f64,
    pub price_min: f64,
    pub price_max: f64,
    pub dt: f64,
    pub episode_len: usize,
    pub epochs: usize,
    /// Candidate driver allocations evaluated per step.
    #[serde(alias = "a_n")]
    pub n_candidates: usize,
    /// Perturbation half-width of the driver search.
    pub delta_a: f64,
    pub init_driver_pop: Vec<f64>,
    pub init_passenger_pop: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Also evaluate the current allocation alongside the sampled candidates.
    #[serde(default)]
    pub include_incumbent: bool,
    /// Carry populations over between episodes instead of resetting them.
    #[serde(default)]
    pub persist_populations: bool,
}

impl SimConfig {
    pub fn two_node_example(delta_a: f64) -> Self {
        Self {
            gas_cost: 5.0,
            base_wait: 2.0,
            transit_rate: 10.0,
            price_min: 5.0,
            price_max: 20.0,
            dt: 0.01,
            episode_len: 2048,
            epochs: 500,
            n_candidates: 10,
            delta_a,
            init_driver_pop: vec![500.0, 1000.0],
            init_passenger_pop: vec![2000.0, 3000.0],
            seeds: vec![0, 1, 2],
            include_incumbent: false,
            persist_populations: false,
        }
    }

    pub fn price_range(&self) -> f64 {
        self.price_max - self.price_min
    }

    pub fn validate(&self, graph: &OdGraph) -> Result<()> {
        let n = graph.n_nodes();
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.price_min > 0.0 && self.price_min <= self.price_max) {
            return bad(format!(
                "need 0 < price_min <= price_max, got [{}, {}]",
                self.price_min, self.price_max
            ));
        }
        if !(self.gas_cost >= 0.0) {
            return bad(format!("gas_cost must be >= 0, got {}", self.gas_cost));
        }
        if !(self.base_wait >= 0.0) {
            return bad(format!("base_wait must be >= 0, got {}", self.base_wait));
        }
        if !(self.transit_rate >= 0.0) {
            return bad(format!("transit_rate must be >= 0, got {}", self.transit_rate));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if self.n_candidates < 1 {
            return bad("n_candidates must be >= 1".into());
        }
        if self.episode_len < 1 {
            return bad("episode_len must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.delta_a) {
            return bad(format!("delta_a must lie in [0,1], got {}", self.delta_a));
        }
        for (name, pop) in [
            ("init_driver_pop", &self.init_driver_pop),
            ("init_passenger_pop", &self.init_passenger_pop),
        ] {
            if pop.len() != n {
                return bad(format!("{name} has {} entries, graph has {n} nodes", pop.len()));
            }
            if let Some(x) = pop.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
                return bad(format!("{name} entries must be > 0, found {x}"));
            }
        }
        Ok(())
    }
}

/// Head counts per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub passengers: Vec<f64>,
    pub drivers: Vec<f64>,
}

impl Populations {
    pub fn total_passengers(&self) -> f64 {
        self.passengers.iter().sum()
    }

    pub fn total_drivers(&self) -> f64 {
        self.drivers.iter().sum()
    }
}

/// Per-edge passenger split between U, L and transit. Diagonals stay 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassengerShares {
    pub u: SquareMatrix,
    pub l: SquareMatrix,
    pub o: SquareMatrix,
}

impl PassengerShares {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: SquareMatrix::zeros(n),
            l: SquareMatrix::zeros(n),
            o: SquareMatrix::zeros(n),
        }
    }

    pub fn platform(&self, p: Platform) -> &SquareMatrix {
        match p {
            Platform::U => &self.u,
            Platform::L => &self.l,
        }
    }
}

/// Driver availabilities per node and passenger shares per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationState {
    pub a_u: Vec<f64>,
    pub a_l: Vec<f64>,
    pub shares: PassengerShares,
}

impl AllocationState {
    pub fn n_nodes(&self) -> usize {
        self.a_u.len()
    }

    pub fn availability(&self, p: Platform) -> &[f64] {
        match p {
            Platform::U => &self.a_u,
            Platform::L => &self.a_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub populations: Populations,
    pub allocation: AllocationState,
    pub step_index: usize,
}

/// One platform's rate and commission per edge, in currency per mile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformPrices {
    pub rate: SquareMatrix,
    pub commission: SquareMatrix,
}

impl PlatformPrices {
    pub fn uniform(n: usize, rate: f64, commission: f64) -> Self {
        Self {
            rate: SquareMatrix::off_diagonal(n, rate),
            commission: SquareMatrix::off_diagonal(n, commission),
        }
    }

    pub fn margin(&self) -> SquareMatrix {
        self.rate.zip_map(&self.commission, |r, c| r - c)
    }
}

/// Joint action of both platforms for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub u: PlatformPrices,
    pub l: PlatformPrices,
}

impl PriceSchedule {
    pub fn platform(&self, p: Platform) -> &PlatformPrices {
        match p {
            Platform::U => &self.u,
            Platform::L => &self.l,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.u.rate.n()
    }

    /// Checks every off-diagonal price against `[price_min, price_max]`.
    pub fn check_bounds(&self, config: &SimConfig) -> Result<()> {
        for p in Platform::BOTH {
            let prices = self.platform(p);
            for (name, m) in [("rate", &prices.rate), ("commission", &prices.commission)] {
                for e in edges(m.n()) {
                    let x = m[e];
                    if !(x >= config.price_min && x <= config.price_max) {
                        return Err(Error::Domain(format!(
                            "{p} {name} on edge {e:?} = {x} outside [{}, {}]",
                            config.price_min, config.price_max
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Random initial state: configured populations, allocations drawn around
/// their symmetric values.
pub fn init_state<R: Rng + ?Sized>(
    config: &SimConfig,
    graph: &OdGraph,
    rng: &mut R,
) -> Result<MarketState> {
    init_state_with(config, graph, |mean, std| {
        let z: f64 = rng.sample(StandardNormal);
        mean + std * z
    })
}

/// [`init_state`] with an explicit Gaussian source `draw(mean, std)`.
pub fn init_state_with(
    config: &SimConfig,
    graph: &OdGraph,
    mut draw: impl FnMut(f64, f64) -> f64,
) -> Result<MarketState> {
    graph.validate()?;
    config.validate(graph)?;
    let n = graph.n_nodes();

    let a_u: Vec<f64> = (0..n)
        .map(|_| draw(INIT_AVAILABILITY_MEAN, INIT_STD).clamp(0.0, 1.0))
        .collect();
    let a_l = a_u.iter().map(|a| 1.0 - a).collect();

    let mut shares = PassengerShares::zeros(n);
    for e in edges(n) {
        let mut p = [0.0; 3];
        for x in &mut p {
            *x = draw(INIT_SHARE_MEAN, INIT_STD).clamp(0.0, 1.0);
        }
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|x| *x /= total);
        } else {
            p = [INIT_SHARE_MEAN; 3];
        }
        shares.u[e] = p[0];
        shares.l[e] = p[1];
        shares.o[e] = p[2];
    }

    Ok(MarketState {
        populations: Populations {
            passengers: config.init_passenger_pop.clone(),
            drivers: config.init_driver_pop.clone(),
        },
        allocation: AllocationState { a_u, a_l, shares },
        step_index: 0,
    })
}

pub fn observation_len(n: usize) -> usize {
    3 * n * n + n
}

pub fn action_len(n: usize) -> usize {
    2 * n * n - 2 * n
}

/// Flattens market states into agent observations and back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationEncoder {
    pub n_nodes: usize,
    pub passenger_scale: f64,
    pub driver_scale: f64,
}

impl ObservationEncoder {
    pub fn new(config: &SimConfig) -> Self {
        Self {
            n_nodes: config.init_passenger_pop.len(),
            passenger_scale: config.init_passenger_pop.iter().sum(),
            driver_scale: config.init_driver_pop.iter().sum(),
        }
    }

    pub fn len(&self) -> usize {
        observation_len(self.n_nodes)
    }

    pub fn is_empty(&self) -> bool {
        self.n_nodes == 0
    }

    pub fn encode(&self, state: &MarketState) -> Vec<f64> {
        let pops = &state.populations;
        let alloc = &state.allocation;
        let mut v = Vec::with_capacity(self.len());
        v.extend(pops.passengers.iter().map(|x| x / self.passenger_scale));
        v.extend(pops.drivers.iter().map(|x| x / self.driver_scale));
        v.extend_from_slice(&alloc.a_u);
        v.extend_from_slice(&alloc.a_l);
        v.extend(alloc.shares.u.off_diagonal_values());
        v.extend(alloc.shares.l.off_diagonal_values());
        v.extend(alloc.shares.o.off_diagonal_values());
        v
    }

    /// Inverse of [`encode`](Self::encode); the step index is not encoded.
    pub fn decode(&self, obs: &[f64]) -> Result<(Populations, AllocationState)> {
        if obs.len() != self.len() {
            return Err(Error::Usage(format!(
                "observation has length {}, expected {}",
                obs.len(),
                self.len()
            )));
        }
        let n = self.n_nodes;
        let m = n * n - n;
        let (pass, rest) = obs.split_at(n);
        let (drv, rest) = rest.split_at(n);
        let (a_u, rest) = rest.split_at(n);
        let (a_l, rest) = rest.split_at(n);
        let (pu, rest) = rest.split_at(m);
        let (pl, po) = rest.split_at(m);
        let mut shares = PassengerShares::zeros(n);
        shares.u.set_off_diagonal_values(pu);
        shares.l.set_off_diagonal_values(pl);
        shares.o.set_off_diagonal_values(po);
        Ok((
            Populations {
                passengers: pass.iter().map(|x| x * self.passenger_scale).collect(),
                drivers: drv.iter().map(|x| x * self.driver_scale).collect(),
            },
            AllocationState {
                a_u: a_u.to_vec(),
                a_l: a_l.to_vec(),
                shares,
            },
        ))
    }
}

/// Convenience wrapper around [`ObservationEncoder::encode`].
pub fn state_vector(state: &MarketState, config: &SimConfig) -> Vec<f64> {
    ObservationEncoder::new(config).encode(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Passengers,
    Drivers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    U,
    L,
    Transit,
}

/// A broken state invariant, with where it broke and by how much.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite { what: &'static str },
    ShapeMismatch { what: &'static str, len: usize, expected: usize },
    NegativePopulation { side: Side, node: usize, magnitude: f64 },
    AvailabilityRange { platform: Platform, node: usize, value: f64 },
    TotalCovering { node: usize, magnitude: f64 },
    ShareRange { mode: Mode, edge: (usize, usize), value: f64 },
    Simplex { edge: (usize, usize), magnitude: f64 },
    DiagonalShare { node: usize, magnitude: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Violation::ShapeMismatch { what, len, expected } => {
                write!(f, "{what} has length {len}, expected {expected}")
            }
            Violation::NegativePopulation { side, node, magnitude } => {
                write!(f, "{side:?} at node {node} negative by {magnitude:e}")
            }
            Violation::AvailabilityRange { platform, node, value } => {
                write!(f, "a_{platform}[{node}] = {value} outside [0,1]")
            }
            Violation::TotalCovering { node, magnitude } => {
                write!(f, "a_u + a_l at node {node} off by {magnitude:e}")
            }
            Violation::ShareRange { mode, edge, value } => {
                write!(f, "{mode:?} share on edge {edge:?} = {value} outside [0,1]")
            }
            Violation::Simplex { edge, magnitude } => {
                write!(f, "shares on edge {edge:?} sum off by {magnitude:e}")
            }
            Violation::DiagonalShare { node, magnitude } => {
                write!(f, "self-edge ({node},{node}) share {magnitude:e} != 0")
            }
        }
    }
}

/// Returns every invariant the state violates beyond [`STATE_TOLERANCE`].
pub fn validate(state: &MarketState) -> std::result::Result<(), Vec<Violation>> {
    let tol = STATE_TOLERANCE;
    let mut out = Vec::new();
    let pops = &state.populations;
    let alloc = &state.allocation;
    let n = alloc.a_u.len();

    for (what, len) in [
        ("a_l", alloc.a_l.len()),
        ("passengers", pops.passengers.len()),
        ("drivers", pops.drivers.len()),
        ("p_u", alloc.shares.u.n()),
        ("p_l", alloc.shares.l.n()),
        ("p_o", alloc.shares.o.n()),
    ] {
        if len != n {
            out.push(Violation::ShapeMismatch { what, len, expected: n });
        }
    }
    if !out.is_empty() {
        return Err(out);
    }

    for (side, v) in [(Side::Passengers, &pops.passengers), (Side::Drivers, &pops.drivers)] {
        for (node, &x) in v.iter().enumerate() {
            if !x.is_finite() {
                out.push(Violation::NonFinite { what: "populations" });
            } else if x < -tol {
                out.push(Violation::NegativePopulation { side, node, magnitude: -x });
            }
        }
    }

    for node in 0..n {
        let (u, l) = (alloc.a_u[node], alloc.a_l[node]);
        if !(u.is_finite() && l.is_finite()) {
            out.push(Violation::NonFinite { what: "availability" });
            continue;
        }
        for (platform, a) in [(Platform::U, u), (Platform::L, l)] {
            if a < -tol || a > 1.0 + tol {
                out.push(Violation::AvailabilityRange { platform, node, value: a });
            }
        }
        let gap = (u + l - 1.0).abs();
        if gap > tol {
            out.push(Violation::TotalCovering { node, magnitude: gap });
        }
        let diag = alloc.shares.u[(node, node)].abs()
            + alloc.shares.l[(node, node)].abs()
            + alloc.shares.o[(node, node)].abs();
        if diag > tol {
            out.push(Violation::DiagonalShare { node, magnitude: diag });
        }
    }

    for edge in edges(n) {
        let p = [
            (Mode::U, alloc.shares.u[edge]),
            (Mode::L, alloc.shares.l[edge]),
            (Mode::Transit, alloc.shares.o[edge]),
        ];
        if p.iter().any(|(_, x)| !x.is_finite()) {
            out.push(Violation::NonFinite { what: "passenger shares" });
            continue;
        }
        for (mode, value) in p {
            if value < -tol || value > 1.0 + tol {
                out.push(Violation::ShareRange { mode, edge, value });
            }
        }
        let gap = (p.iter().map(|(_, x)| x).sum::<f64>() - 1.0).abs();
        if gap > tol {
            out.push(Violation::Simplex { edge, magnitude: gap });
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example() -> (SimConfig, OdGraph) {
        (SimConfig::two_node_example(1.0), OdGraph::two_node_example())
    }

    #[test]
    fn init_uses_configured_populations() {
        let (cfg, g) = example();
        let s = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(s.populations.drivers, vec![500.0, 1000.0]);
        assert_eq!(s.populations.passengers, vec![2000.0, 3000.0]);
        assert_eq!(s.step_index, 0);
    }

    #[test]
    fn mean_draws_give_symmetric_allocation() {
        let (cfg, g) = example();
        let s = init_state_with(&cfg, &g, |mean, _| mean).unwrap();
        assert_eq!(s.allocation.a_u, vec![0.5, 0.5]);
        assert_eq!(s.allocation.a_l, vec![0.5, 0.5]);
        for e in edges(2) {
            for m in [&s.allocation.shares.u, &s.allocation.shares.l, &s.allocation.shares.o] {
                assert!((m[e] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn init_is_valid_over_many_seeds() {
        let (cfg, g) = example();
        for seed in 0..1000 {
            let s = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(validate(&s), Ok(()), "seed {seed}");
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let (cfg, g) = example();
        let a = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (mut cfg, g) = example();
        cfg.price_min = 30.0;
        assert!(matches!(
            init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
        let (mut cfg, _) = example();
        cfg.init_driver_pop = vec![500.0, 0.0];
        assert!(cfg.validate(&g).is_err());
        let (mut cfg, _) = example();
        cfg.n_candidates = 0;
        assert!(cfg.validate(&g).is_err());
    }

    #[test]
    fn graph_row_sums_checked() {
        let bad = OdGraph::new(
            SquareMatrix::from_rows(vec![vec![0.0, 1.2], vec![0.2, 0.0]]).unwrap(),
            SquareMatrix::zeros(2),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn observation_lengths() {
        assert_eq!(observation_len(2), 14);
        assert_eq!(observation_len(1), 4);
        assert_eq!(observation_len(3), 30);
        assert_eq!(action_len(2), 4);

        let mut cfg = SimConfig::two_node_example(1.0);
        cfg.init_driver_pop = vec![10.0, 20.0, 30.0];
        cfg.init_passenger_pop = vec![10.0, 20.0, 30.0];
        let g = OdGraph::new(
            SquareMatrix::off_diagonal(3, 0.2),
            SquareMatrix::off_diagonal(3, 1.0),
        )
        .unwrap();
        let s = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let v = state_vector(&s, &cfg);
        assert_eq!(v.len(), 30);
        // p-segments are the last 3 × 6 entries
        let pu = &v[12..18];
        assert_eq!(pu, s.allocation.shares.u.off_diagonal_values().as_slice());
    }

    #[test]
    fn single_node_observation_has_no_edges() {
        let mut cfg = SimConfig::two_node_example(1.0);
        cfg.init_driver_pop = vec![10.0];
        cfg.init_passenger_pop = vec![40.0];
        let g = OdGraph::new(SquareMatrix::zeros(1), SquareMatrix::zeros(1)).unwrap();
        let s = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let v = state_vector(&s, &cfg);
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 1.0);
    }

    #[test]
    fn populations_normalized_by_initial_totals() {
        let (cfg, g) = example();
        let s = init_state_with(&cfg, &g, |m, _| m).unwrap();
        let v = state_vector(&s, &cfg);
        assert_eq!(&v[..4], &[0.4, 0.6, 500.0 / 1500.0, 1000.0 / 1500.0]);
    }

    #[test]
    fn fresh_state_validates() {
        let (cfg, g) = example();
        let s = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(validate(&s).is_ok());
    }

    #[test]
    fn simplex_violation_located() {
        let (cfg, g) = example();
        let mut s = init_state_with(&cfg, &g, |m, _| m).unwrap();
        s.allocation.shares.u[(0, 1)] = 1.5;
        let v = validate(&s).unwrap_err();
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::Simplex { edge: (0, 1), .. })));
        assert!(v
            .iter()
            .all(|x| !matches!(x, Violation::Simplex { edge: (1, 0), .. })));
    }

    #[test]
    fn total_covering_violation_magnitude() {
        let (cfg, g) = example();
        let mut s = init_state_with(&cfg, &g, |m, _| m).unwrap();
        s.allocation.a_u[0] = 0.6;
        s.allocation.a_l[0] = 0.6;
        let v = validate(&s).unwrap_err();
        assert_eq!(v.len(), 1);
        match v[0] {
            Violation::TotalCovering { node, magnitude } => {
                assert_eq!(node, 0);
                assert!((magnitude - 0.2).abs() < 1e-12);
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_json_accepts_short_keys() {
        let json = r#"{"g":5,"lambda":2,"r_o":10,"price_min":5,"price_max":20,"dt":0.01,
            "episode_len":2048,"epochs":500,"a_n":10,"delta_a":1.0,
            "init_driver_pop":[500,1000],"init_passenger_pop":[2000,3000]}"#;
        let cfg: SimConfig = serde_json::from_str(json).unwrap();
        let mut expected = SimConfig::two_node_example(1.0);
        expected.seeds.clear();
        assert_eq!(cfg, expected);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_roundtrip(seed in any::<u64>(), scale in 0.1f64..10.0) {
                let (cfg, g) = example();
                let mut s = init_state(&cfg, &g, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                s.populations.passengers.iter_mut().for_each(|x| *x *= scale);
                let enc = ObservationEncoder::new(&cfg);
                let (pops, alloc) = enc.decode(&enc.encode(&s)).unwrap();
                for (a, b) in pops.passengers.iter().zip(&s.populations.passengers) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
                for (a, b) in pops.drivers.iter().zip(&s.populations.drivers) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
                prop_assert_eq!(alloc, s.allocation);
            }
        }
    }
}

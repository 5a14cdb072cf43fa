//! Trip flows, platform profits and the forward-Euler population update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{AllocationState, OdGraph, Platform, Populations, PriceSchedule};
use crate::matrix::{edges, SquareMatrix};

/// Clamped mass beyond this fraction of the total population is an error.
pub const CLAMP_LIMIT_FRACTION: f64 = 1e-6;

/// Available (`avail_*`) and realized (`flow_*`) flows per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSet {
    pub avail_p_u: SquareMatrix,
    pub avail_p_l: SquareMatrix,
    pub avail_p_o: SquareMatrix,
    pub avail_d_u: SquareMatrix,
    pub avail_d_l: SquareMatrix,
    pub flow_u: SquareMatrix,
    pub flow_l: SquareMatrix,
    pub flow_o: SquareMatrix,
}

impl FlowSet {
    pub fn zeros(n: usize) -> Self {
        let z = SquareMatrix::zeros(n);
        Self {
            avail_p_u: z.clone(),
            avail_p_l: z.clone(),
            avail_p_o: z.clone(),
            avail_d_u: z.clone(),
            avail_d_l: z.clone(),
            flow_u: z.clone(),
            flow_l: z.clone(),
            flow_o: z,
        }
    }

    pub fn flow(&self, p: Platform) -> &SquareMatrix {
        match p {
            Platform::U => &self.flow_u,
            Platform::L => &self.flow_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub flows: FlowSet,
    pub profit_u: f64,
    pub profit_l: f64,
    pub new_populations: Populations,
    /// Total mass clamped back to zero in the population update.
    pub clamped: f64,
}

/// `P̂ = Π^P_i e_ij p_ij` and `D̂ = Π^D_i e_ij a_i`; realized flows left at zero.
pub fn available_flows(
    populations: &Populations,
    allocation: &AllocationState,
    graph: &OdGraph,
) -> FlowSet {
    let n = graph.n_nodes();
    let mut f = FlowSet::zeros(n);
    for e @ (i, _) in edges(n) {
        let pass = populations.passengers[i] * graph.demand_fraction[e];
        let drv = populations.drivers[i] * graph.demand_fraction[e];
        f.avail_p_u[e] = pass * allocation.shares.u[e];
        f.avail_p_l[e] = pass * allocation.shares.l[e];
        f.avail_p_o[e] = pass * allocation.shares.o[e];
        f.avail_d_u[e] = drv * allocation.a_u[i];
        f.avail_d_l[e] = drv * allocation.a_l[i];
    }
    f
}

/// Transit carries everyone who wants it; platforms carry the smaller of
/// waiting passengers and available drivers.
pub fn realized_flows(mut flows: FlowSet) -> FlowSet {
    flows.flow_o = flows.avail_p_o.clone();
    flows.flow_u = flows.avail_p_u.zip_map(&flows.avail_d_u, f64::min);
    flows.flow_l = flows.avail_p_l.zip_map(&flows.avail_d_l, f64::min);
    flows
}

/// Instantaneous profit `Σ d_ij F_ij (r_ij − c_ij)` for U and L.
pub fn platform_profit(flows: &FlowSet, prices: &PriceSchedule, graph: &OdGraph) -> (f64, f64) {
    let profit = |p: Platform| {
        let flow = flows.flow(p);
        let pr = prices.platform(p);
        edges(graph.n_nodes())
            .map(|e| graph.distance[e] * flow[e] * (pr.rate[e] - pr.commission[e]))
            .sum::<f64>()
    };
    (profit(Platform::U), profit(Platform::L))
}

/// Forward-Euler step of the population ODEs. Returns the new populations and
/// the total mass clamped at zero.
pub fn step_populations(
    populations: &Populations,
    flows: &FlowSet,
    dt: f64,
) -> Result<(Populations, f64)> {
    let n = populations.passengers.len();
    let mut passengers = populations.passengers.clone();
    let mut drivers = populations.drivers.clone();
    for (i, j) in edges(n) {
        let platform = flows.flow_u[(i, j)] + flows.flow_l[(i, j)];
        let all = platform + flows.flow_o[(i, j)];
        passengers[j] += dt * all;
        passengers[i] -= dt * all;
        drivers[j] += dt * platform;
        drivers[i] -= dt * platform;
    }

    let mut clamped = 0.0;
    for x in passengers.iter_mut().chain(drivers.iter_mut()) {
        if *x < 0.0 {
            clamped += -*x;
            *x = 0.0;
        }
    }
    if clamped > 0.0 {
        let total = populations.total_passengers() + populations.total_drivers();
        let limit = CLAMP_LIMIT_FRACTION * total;
        log::warn!("population update clamped {clamped:e} below zero");
        if clamped > limit {
            return Err(Error::Instability { clamped, limit });
        }
    }
    Ok((Populations { passengers, drivers }, clamped))
}

/// Flows, profits and population update for one step with the given
/// (already best-responded) allocation.
pub fn step(
    populations: &Populations,
    allocation: &AllocationState,
    prices: &PriceSchedule,
    graph: &OdGraph,
    dt: f64,
) -> Result<StepOutcome> {
    let flows = realized_flows(available_flows(populations, allocation, graph));
    let (profit_u, profit_l) = platform_profit(&flows, prices, graph);
    let (new_populations, clamped) = step_populations(populations, &flows, dt)?;
    Ok(StepOutcome {
        flows,
        profit_u,
        profit_l,
        new_populations,
        clamped,
    })
}

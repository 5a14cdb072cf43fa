//! One market transition: driver search, passenger response, flows, profits
//! and the population update, given both platforms' prices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{search_allocation, CandidateEvaluation};
use crate::dynamics::{self, StepOutcome};
use crate::error::Result;
use crate::market::{init_state, MarketState, ObservationEncoder, OdGraph, PriceSchedule, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub selected: CandidateEvaluation,
    pub outcome: StepOutcome,
    pub next_state: MarketState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketEnv {
    pub graph: OdGraph,
    pub config: SimConfig,
}

impl MarketEnv {
    pub fn new(graph: OdGraph, config: SimConfig) -> Result<Self> {
        graph.validate()?;
        config.validate(&graph)?;
        Ok(Self { graph, config })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn encoder(&self) -> ObservationEncoder {
        ObservationEncoder::new(&self.config)
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MarketState> {
        init_state(&self.config, &self.graph, rng)
    }

    /// Advances `state` by one step under `prices`.
    ///
    /// Drivers re-allocate around the current allocation, passengers best
    /// respond, and the realized flows move both populations.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &MarketState,
        prices: &PriceSchedule,
        rng: &mut R,
    ) -> Result<Transition> {
        prices.check_bounds(&self.config)?;
        let selected = search_allocation(
            &state.allocation,
            &state.populations,
            prices,
            &self.graph,
            &self.config,
            rng,
        )?;
        let allocation = selected.clone().into_allocation();
        let outcome = dynamics::step(
            &state.populations,
            &allocation,
            prices,
            &self.graph,
            self.config.dt,
        )?;
        let next_state = MarketState {
            populations: outcome.new_populations.clone(),
            allocation,
            step_index: state.step_index + 1,
        };
        Ok(Transition {
            selected,
            outcome,
            next_state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{validate, PlatformPrices};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_prices_conserve_and_stay_valid() {
        let env = MarketEnv::new(OdGraph::two_node_example(), SimConfig::two_node_example(1.0))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = env.reset(&mut rng).unwrap();
        let prices = PriceSchedule {
            u: PlatformPrices::uniform(2, 12.0, 9.0),
            l: PlatformPrices::uniform(2, 11.0, 10.0),
        };
        for _ in 0..2048 {
            let t = env.step(&state, &prices, &mut rng).unwrap();
            assert_eq!(t.outcome.clamped, 0.0);
            state = t.next_state;
        }
        assert_eq!(state.step_index, 2048);
        assert!(validate(&state).is_ok());
        assert!((state.populations.total_passengers() - 5000.0).abs() < 5000.0 * 1e-9);
        assert!((state.populations.total_drivers() - 1500.0).abs() < 1500.0 * 1e-9);
    }

    #[test]
    fn out_of_bounds_prices_rejected() {
        let env = MarketEnv::new(OdGraph::two_node_example(), SimConfig::two_node_example(1.0))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = env.reset(&mut rng).unwrap();
        let prices = PriceSchedule {
            u: PlatformPrices::uniform(2, 25.0, 9.0),
            l: PlatformPrices::uniform(2, 11.0, 10.0),
        };
        assert!(env.step(&state, &prices, &mut rng).is_err());
    }
}

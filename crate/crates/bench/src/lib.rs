//! Fixtures for the criterion benches: the first planning cycle of a
//! bundled scenario.

use ibr_core::ibr::{InteractionTable, ProgressContext};
use ibr_core::predictor::AgentObservation;
use ibr_core::proposer::generate_proposals;
use ibr_core::scenario_io::resolve_scenario;
use ibr_core::simulator::{find_leaders, World};
use ibr_core::{GameState, PlannerConfig, Result, Scenario, WeightedBundle};

pub struct CycleFixture {
    pub scenario: Scenario,
    pub cfg: PlannerConfig,
    /// Ego proposals first, then one prediction per agent.
    pub bundles: Vec<WeightedBundle>,
    pub progress: ProgressContext,
}

impl CycleFixture {
    pub fn load(name: &str) -> Result<Self> {
        let scenario = resolve_scenario(name)?.to_scenario()?;
        let cfg = PlannerConfig::default();
        let world = World::new(&scenario)?.snapshot();
        let leaders = find_leaders(&world, &scenario.map);
        let proposals = generate_proposals(&world.ego, world.t, world.ego_footprint, &scenario.map, &leaders, &cfg.proposals)?;
        let predictor = cfg.predictor.build();
        let mut bundles = vec![proposals.bundle];
        for a in &world.agents {
            let obs = AgentObservation::from_current(a.id.clone(), a.footprint, a.state, world.t)?;
            bundles.push(predictor.predict(&obs, &scenario.map)?);
        }
        let progress = ProgressContext::new(scenario.target_lane().centerline.clone(), &bundles[0].trajectories);
        Ok(Self {
            scenario,
            cfg,
            bundles,
            progress,
        })
    }

    pub fn table(&self) -> Result<InteractionTable> {
        InteractionTable::build(&self.bundles, Some(&self.progress), &self.cfg.reward, &self.cfg.comfort)
    }

    pub fn game(&self) -> Result<GameState> {
        let mut gains = vec![self.cfg.confidence.ego_confidence];
        gains.resize(self.bundles.len(), 1.0);
        GameState::from_bundles(&self.bundles, self.table()?, self.cfg.reward, gains, self.cfg.order)
    }
}

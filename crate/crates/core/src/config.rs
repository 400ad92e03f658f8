//! Planner configuration shared by the simulator and the CLI.

use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceConfig;
use crate::error::{Error, Result};
use crate::ibr::{ComfortLimits, RewardWeights, UpdateOrder};
use crate::predictor::{ConstantVelocityPredictor, Predictor, ScriptedPredictor};
use crate::proposer::ProposalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Cv,
    #[default]
    Scripted,
}

impl PredictorKind {
    pub fn build(&self) -> Box<dyn Predictor> {
        match self {
            PredictorKind::Cv => Box::new(ConstantVelocityPredictor),
            PredictorKind::Scripted => Box::new(ScriptedPredictor::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub iterations: usize,
    pub reward: RewardWeights,
    pub comfort: ComfortLimits,
    /// When off, every agent updates with `c = 1` and posteriors are frozen.
    pub confidence_enabled: bool,
    pub confidence: ConfidenceConfig,
    pub order: UpdateOrder,
    pub predictor: PredictorKind,
    pub proposals: ProposalConfig,
    /// Deceleration of the fallback plan (m/s², positive).
    pub emergency_decel: f64,
    /// Cycles between replans; 1 replans every step.
    pub replan_every: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            reward: RewardWeights::default(),
            comfort: ComfortLimits::default(),
            confidence_enabled: true,
            confidence: ConfidenceConfig::default(),
            order: UpdateOrder::EgoFirst,
            predictor: PredictorKind::Scripted,
            proposals: ProposalConfig::default(),
            emergency_decel: 4.0,
            replan_every: 1,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.confidence.validate()?;
        self.proposals.validate()?;
        if !(self.emergency_decel > 0.0) {
            return Err(Error::invalid("emergency_decel must be > 0"));
        }
        if self.replan_every == 0 {
            return Err(Error::invalid("replan_every must be >= 1"));
        }
        let c = &self.comfort;
        if !(c.max_lon_accel > 0.0 && c.max_lat_accel > 0.0 && c.max_jerk > 0.0) {
            return Err(Error::invalid("comfort limits must be > 0"));
        }
        Ok(())
    }
}

//! Game-theoretic re-weighting of candidate trajectories.
//!
//! Each agent (the ego at index 0, then surrounding traffic) carries a fixed
//! set of candidate trajectories with a probability distribution over them.
//! [`ibr`] re-weights those distributions by iterated best response, with
//! each agent's update scaled by a Bayesian [`confidence`] that the game
//! explains its motion better than the raw predictor. The closed-loop
//! [`simulator`] replans at 10 Hz and [`metrics`] scores the result.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod ibr;
pub mod map;
pub mod metrics;
pub mod predictor;
pub mod proposer;
pub mod scenario_io;
pub mod simulator;
pub mod trajectory;

pub use confidence::{ConfidenceConfig, ConfidenceState};
pub use config::{PlannerConfig, PredictorKind};
pub use dynamics::{IdmParams, LeaderTrack};
pub use error::{Error, Result};
pub use geometry::{Footprint, OrientedBox, Pose, Vec2};
pub use ibr::{ComfortLimits, GameState, InteractionTable, RewardWeights, UpdateOrder};
pub use map::{LaneSpec, RoadMap};
pub use metrics::MetricsReport;
pub use proposer::ProposalConfig;
pub use scenario_io::{ResultsFile, ScenarioFile};
pub use simulator::{Scenario, SimTrace};
pub use trajectory::{Distribution, State, Trajectory, WeightedBundle};

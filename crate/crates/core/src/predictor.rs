//! Per-agent motion predictors producing weighted trajectory bundles.
//!
//! Two implementations ship: a single-mode constant-velocity extrapolation
//! and a scripted multimodal predictor whose modes are simple maneuvers. Both
//! emit 4 s at 10 Hz starting at the observed pose.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Footprint};
use crate::map::RoadMap;
use crate::trajectory::{validate_probabilities, State, Trajectory, WeightedBundle};

pub const PREDICTION_HORIZON: f64 = 4.0;
pub const PREDICTION_DT: f64 = 0.1;
/// Scripted modes are generated at this step and upsampled to
/// [`PREDICTION_DT`].
pub const COARSE_DT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    pub id: String,
    pub footprint: Footprint,
    /// Past states, ending at `current`.
    pub history: Trajectory,
    pub current: State,
}

impl AgentObservation {
    pub fn new(id: impl Into<String>, footprint: Footprint, history: Trajectory) -> Result<Self> {
        history.validate()?;
        let current = *history.last();
        Ok(Self {
            id: id.into(),
            footprint,
            history,
            current,
        })
    }

    /// Observation with a two-state constant-velocity history ending at
    /// `current` at time `t`.
    pub fn from_current(id: impl Into<String>, footprint: Footprint, current: State, t: f64) -> Result<Self> {
        let d = current.pose().direction();
        let dt = PREDICTION_DT;
        let prev = State {
            x: current.x - d[0] * current.speed * dt,
            y: current.y - d[1] * current.speed * dt,
            ..current
        };
        Self::new(id, footprint, Trajectory::new(t - dt, dt, vec![prev, current])?)
    }

    pub fn time(&self) -> f64 {
        self.history.end_time()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Maneuver {
    KeepSpeed,
    /// Constant deceleration (m/s², positive) until standstill.
    Brake { rate: f64 },
    /// Constant acceleration (m/s²).
    Accelerate { rate: f64 },
    /// Lateral shift (m, left positive) completed over the horizon with the
    /// same smoothstep profile as proposal lane changes.
    LaneShift { lateral: f64 },
}

impl Maneuver {
    fn validate(&self) -> Result<()> {
        match *self {
            Maneuver::Brake { rate } | Maneuver::Accelerate { rate } if !(rate >= 0.0 && rate.is_finite()) => {
                Err(Error::invalid(format!("maneuver rate must be >= 0, got {rate}")))
            }
            Maneuver::LaneShift { lateral } if !lateral.is_finite() => Err(Error::invalid("lane shift must be finite")),
            _ => Ok(()),
        }
    }

    /// Distance travelled along the heading and speed at time `t` from `v0`.
    fn longitudinal(&self, v0: f64, t: f64) -> (f64, f64) {
        match *self {
            Maneuver::KeepSpeed | Maneuver::LaneShift { .. } => (v0 * t, v0),
            Maneuver::Accelerate { rate } => (v0 * t + 0.5 * rate * t * t, v0 + rate * t),
            Maneuver::Brake { rate } => {
                if rate <= 0.0 {
                    return (v0 * t, v0);
                }
                let t_stop = v0 / rate;
                if t < t_stop {
                    (v0 * t - 0.5 * rate * t * t, v0 - rate * t)
                } else {
                    (0.5 * v0 * v0 / rate, 0.0)
                }
            }
        }
    }

    /// State `t` seconds after `start`, moving along the start heading.
    pub fn state_after(&self, start: &State, t: f64, shift_duration: f64) -> State {
        let (s, v) = self.longitudinal(start.speed, t);
        let (d, d_rate) = match *self {
            Maneuver::LaneShift { lateral } => {
                let u = (t / shift_duration).clamp(0.0, 1.0);
                let blend = u * u * (3.0 - 2.0 * u);
                let slope = if u < 1.0 { 6.0 * u * (1.0 - u) / shift_duration } else { 0.0 };
                (lateral * blend, lateral * slope)
            }
            _ => (0.0, 0.0),
        };
        let (sh, ch) = start.heading.sin_cos();
        let heading = if d_rate != 0.0 && v > 0.0 {
            normalize_angle(start.heading + d_rate.atan2(v))
        } else {
            start.heading
        };
        State {
            x: start.x + ch * s - sh * d,
            y: start.y + sh * s + ch * d,
            heading,
            speed: v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub maneuver: Maneuver,
    pub prob: f64,
}

/// The five-mode script used when a scenario does not provide one.
pub fn default_script() -> Vec<ScriptEntry> {
    let e = |maneuver, prob| ScriptEntry { maneuver, prob };
    vec![
        e(Maneuver::KeepSpeed, 0.4),
        e(Maneuver::Accelerate { rate: 1.0 }, 0.15),
        e(Maneuver::Brake { rate: 1.0 }, 0.2),
        e(Maneuver::Brake { rate: 2.5 }, 0.15),
        e(Maneuver::Brake { rate: 5.0 }, 0.1),
    ]
}

pub fn validate_script(script: &[ScriptEntry]) -> Result<()> {
    let probs: Vec<f64> = script.iter().map(|e| e.prob).collect();
    validate_probabilities(&probs)?;
    for e in script {
        e.maneuver.validate()?;
    }
    Ok(())
}

fn sample_maneuver(start: &State, t0: f64, m: &Maneuver, dt: f64) -> Result<Trajectory> {
    let n = (PREDICTION_HORIZON / dt).round() as usize;
    let mut states = Vec::with_capacity(n + 1);
    states.push(*start);
    for k in 1..=n {
        states.push(m.state_after(start, k as f64 * dt, PREDICTION_HORIZON));
    }
    Trajectory::new(t0, dt, states)
}

/// Straight-line extrapolation at the current heading and speed.
pub fn cv_predict(obs: &AgentObservation) -> Result<WeightedBundle> {
    let traj = sample_maneuver(&obs.current, obs.time(), &Maneuver::KeepSpeed, PREDICTION_DT)?;
    WeightedBundle::new(obs.id.clone(), obs.footprint, vec![traj], vec![1.0])
}

/// One mode per script entry, generated at 2 Hz and upsampled to 10 Hz.
pub fn scripted_predict(obs: &AgentObservation, script: &[ScriptEntry]) -> Result<WeightedBundle> {
    validate_script(script)?;
    let trajectories = script
        .iter()
        .map(|e| sample_maneuver(&obs.current, obs.time(), &e.maneuver, COARSE_DT)?.resample(PREDICTION_DT))
        .collect::<Result<Vec<_>>>()?;
    WeightedBundle::new(
        obs.id.clone(),
        obs.footprint,
        trajectories,
        script.iter().map(|e| e.prob).collect(),
    )
}

/// A motion predictor. Implementations must return a valid bundle whose
/// trajectories start at the observed pose.
pub trait Predictor: Send + Sync {
    fn predict(&self, obs: &AgentObservation, map: &RoadMap) -> Result<WeightedBundle>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocityPredictor;

impl Predictor for ConstantVelocityPredictor {
    fn predict(&self, obs: &AgentObservation, _map: &RoadMap) -> Result<WeightedBundle> {
        cv_predict(obs)
    }
}

/// Scripted predictor with optional per-agent scripts.
#[derive(Debug, Clone)]
pub struct ScriptedPredictor {
    pub default: Vec<ScriptEntry>,
    pub per_agent: BTreeMap<String, Vec<ScriptEntry>>,
}

impl Default for ScriptedPredictor {
    fn default() -> Self {
        Self {
            default: default_script(),
            per_agent: BTreeMap::new(),
        }
    }
}

impl Predictor for ScriptedPredictor {
    fn predict(&self, obs: &AgentObservation, _map: &RoadMap) -> Result<WeightedBundle> {
        let script = self.per_agent.get(&obs.id).unwrap_or(&self.default);
        scripted_predict(obs, script)
    }
}

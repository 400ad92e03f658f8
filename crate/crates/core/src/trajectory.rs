//! Fixed-rate trajectories and weighted trajectory bundles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, Footprint, Pose};

/// Relative slack used when checking that two time spans are commensurate.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl State {
    pub fn new(pose: Pose, speed: f64) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
            speed,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.x,
            y: self.y,
            heading: self.heading,
        }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite() && self.speed.is_finite()
    }
}

/// Uniformly sampled sequence of states starting at time `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<State>) -> Result<Self> {
        let traj = Self { t0, dt, states };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("trajectory dt must be > 0, got {}", self.dt)));
        }
        if !self.t0.is_finite() {
            return Err(Error::invalid("trajectory t0 must be finite"));
        }
        if self.states.len() < 2 {
            return Err(Error::invalid(format!(
                "trajectory needs at least 2 states, got {}",
                self.states.len()
            )));
        }
        if let Some(i) = self.states.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("trajectory state {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.states.len() - 1) as f64
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.duration()
    }

    pub fn first(&self) -> &State {
        &self.states[0]
    }

    pub fn last(&self) -> &State {
        &self.states[self.states.len() - 1]
    }

    /// State at absolute time `t`, linearly interpolated; heading follows the
    /// shortest arc.
    pub fn state_at(&self, t: f64) -> Result<State> {
        let end = self.end_time();
        let slack = TIME_EPS * self.dt.max(1.0);
        if t < self.t0 - slack || t > end + slack {
            return Err(Error::OutsideHorizon {
                t,
                start: self.t0,
                end,
            });
        }
        let u = ((t - self.t0) / self.dt).max(0.0);
        let i = (u.floor() as usize).min(self.states.len() - 1);
        let frac = u - i as f64;
        if i + 1 >= self.states.len() || frac <= 0.0 {
            return Ok(self.states[i]);
        }
        Ok(lerp_state(&self.states[i], &self.states[i + 1], frac))
    }

    /// Resamples to a new uniform step. The source span must be an integer
    /// multiple of `target_dt`, so both endpoints are kept exactly.
    pub fn resample(&self, target_dt: f64) -> Result<Trajectory> {
        if !(target_dt > 0.0 && target_dt.is_finite()) {
            return Err(Error::invalid(format!("target dt must be > 0, got {target_dt}")));
        }
        if (target_dt - self.dt).abs() <= TIME_EPS * self.dt {
            return Ok(self.clone());
        }
        let span = self.duration();
        let steps_f = span / target_dt;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-6 || steps < 1.0 {
            return Err(Error::invalid(format!(
                "span {span} s is not a multiple of target dt {target_dt} s"
            )));
        }
        let steps = steps as usize;
        let mut states = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let state = if k == steps {
                *self.last()
            } else {
                let u = k as f64 * target_dt / self.dt;
                let i = (u.floor() as usize).min(self.states.len() - 2);
                lerp_state(&self.states[i], &self.states[i + 1], u - i as f64)
            };
            states.push(state);
        }
        Ok(Trajectory {
            t0: self.t0,
            dt: target_dt,
            states,
        })
    }

    /// Checks that two trajectories share start time, step and length.
    pub fn check_aligned(&self, other: &Trajectory) -> Result<()> {
        if (self.dt - other.dt).abs() > TIME_EPS
            || (self.t0 - other.t0).abs() > TIME_EPS
            || self.states.len() != other.states.len()
        {
            return Err(Error::Misaligned(format!(
                "(t0={}, dt={}, n={}) vs (t0={}, dt={}, n={})",
                self.t0,
                self.dt,
                self.len(),
                other.t0,
                other.dt,
                other.len()
            )));
        }
        Ok(())
    }
}

fn lerp_state(a: &State, b: &State, f: f64) -> State {
    State {
        x: a.x + (b.x - a.x) * f,
        y: a.y + (b.y - a.y) * f,
        heading: crate::geometry::normalize_angle(a.heading + angle_diff(a.heading, b.heading) * f),
        speed: a.speed + (b.speed - a.speed) * f,
    }
}

/// A discrete probability distribution over an agent's trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn uniform(m: usize) -> Self {
        Self {
            probs: vec![1.0 / m as f64; m],
        }
    }

    /// Normalizes non-negative masses to a distribution.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid("distribution masses must be finite and non-negative"));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateDistribution);
        }
        Ok(Self {
            probs: masses.iter().map(|m| m / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// An agent's trajectory set with multiplicative weights and base
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedBundle {
    pub agent_id: String,
    pub footprint: Footprint,
    pub trajectories: Vec<Trajectory>,
    pub weights: Vec<f64>,
    pub base_probs: Vec<f64>,
}

impl WeightedBundle {
    /// Bundle with unit weights and the given base probabilities.
    pub fn new(
        agent_id: impl Into<String>,
        footprint: Footprint,
        trajectories: Vec<Trajectory>,
        base_probs: Vec<f64>,
    ) -> Result<Self> {
        let weights = vec![1.0; trajectories.len()];
        let bundle = Self {
            agent_id: agent_id.into(),
            footprint,
            trajectories,
            weights,
            base_probs,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Bundle with unit weights and uniform base probabilities.
    pub fn uniform(agent_id: impl Into<String>, footprint: Footprint, trajectories: Vec<Trajectory>) -> Result<Self> {
        let m = trajectories.len().max(1);
        Self::new(agent_id, footprint, trajectories, vec![1.0 / m as f64; m])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.trajectories.len();
        if m == 0 {
            return Err(Error::invalid(format!("bundle '{}' is empty", self.agent_id)));
        }
        if self.weights.len() != m || self.base_probs.len() != m {
            return Err(Error::invalid(format!(
                "bundle '{}' has {} trajectories, {} weights, {} base probabilities",
                self.agent_id,
                m,
                self.weights.len(),
                self.base_probs.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("bundle '{}' has a non-positive weight", self.agent_id)));
        }
        validate_probabilities(&self.base_probs)
            .map_err(|e| Error::invalid(format!("bundle '{}': {e}", self.agent_id)))?;
        self.footprint.validate()?;
        for t in &self.trajectories {
            t.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn current_distribution(&self) -> Result<Distribution> {
        current_distribution(&self.weights, &self.base_probs)
    }

    /// The trajectory with the highest current probability.
    pub fn most_likely(&self) -> Result<&Trajectory> {
        Ok(&self.trajectories[self.most_likely_index()?])
    }

    pub fn most_likely_index(&self) -> Result<usize> {
        Ok(self.current_distribution()?.argmax())
    }

    pub fn initial_distribution(&self) -> Result<Distribution> {
        Distribution::from_masses(&self.base_probs)
    }
}

/// `P(l) ∝ w(l) · P0(l)`, renormalized.
pub fn current_distribution(weights: &[f64], base_probs: &[f64]) -> Result<Distribution> {
    if weights.len() != base_probs.len() {
        return Err(Error::invalid("weights and base probabilities differ in length"));
    }
    let masses: Vec<f64> = weights.iter().zip(base_probs).map(|(w, p)| w * p).collect();
    Distribution::from_masses(&masses)
}

pub(crate) fn validate_probabilities(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("probabilities must be finite and non-negative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyTrace {
    pub values: Vec<f64>,
    /// Set when the first distribution has zero entropy; `values` then holds
    /// absolute entropies instead of ratios.
    pub degenerate_base: bool,
}

/// Entropy of each distribution relative to the first one.
pub fn relative_entropy_trace(history: &[Distribution]) -> EntropyTrace {
    let Some(first) = history.first() else {
        return EntropyTrace {
            values: Vec::new(),
            degenerate_base: false,
        };
    };
    let base = first.entropy();
    let degenerate = base <= 0.0;
    let values = history
        .iter()
        .map(|d| if degenerate { d.entropy() } else { d.entropy() / base })
        .collect();
    EntropyTrace {
        values,
        degenerate_base: degenerate,
    }
}

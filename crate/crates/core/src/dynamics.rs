//! Intelligent Driver Model with a constant safety margin.
//!
//! `dv/dt = a · [1 − (v/v₀)^δ − (s*/s)²]`, where `s*` is a fixed gap rather
//! than the velocity-dependent desired gap of the textbook model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gap floor used during rollouts; explicit Euler can step past a leader.
pub const MIN_GAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Maximum acceleration `a` (m/s²).
    pub a_max: f64,
    /// Desired speed `v₀` (m/s).
    pub v_target: f64,
    /// Constant safety margin `s*` (m).
    pub s_star: f64,
    /// Free-flow exponent `δ`.
    pub delta: f64,
    /// Braking limit applied to the law's output (m/s², positive).
    pub max_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 1.5,
            v_target: 10.0,
            s_star: 6.0,
            delta: 4.0,
            max_decel: 8.0,
        }
    }
}

impl IdmParams {
    pub fn with_target(mut self, v_target: f64) -> Self {
        self.v_target = v_target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a_max > 0.0
            && self.v_target >= 0.0
            && self.s_star > 0.0
            && self.delta > 0.0
            && self.max_decel > 0.0
            && self.a_max.is_finite()
            && self.v_target.is_finite()
            && self.s_star.is_finite()
            && self.delta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid IDM parameters {self:?}")))
        }
    }
}

/// Longitudinal acceleration for speed `v` and bumper gap `s` to the leader
/// (`f64::INFINITY` when there is none).
pub fn idm_accel(p: &IdmParams, v: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::invalid(format!("IDM gap must be > 0, got {s}")));
    }
    if !(v >= 0.0) {
        return Err(Error::invalid(format!("IDM speed must be >= 0, got {v}")));
    }
    let free = if p.v_target > 0.0 {
        (v / p.v_target).powf(p.delta)
    } else {
        // Zero desired speed: the free-flow term is saturated and the vehicle
        // only brakes for its leader.
        1.0
    };
    let interaction = if s.is_infinite() { 0.0 } else { (p.s_star / s).powi(2) };
    let accel = p.a_max * (1.0 - free - interaction);
    Ok(accel.max(-p.max_decel))
}

/// Arc-length positions and speeds of an IDM rollout, one entry per step
/// including the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalProfile {
    pub dt: f64,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl LongitudinalProfile {
    pub fn final_speed(&self) -> f64 {
        *self.speeds.last().expect("profile is never empty")
    }

    pub fn final_position(&self) -> f64 {
        *self.positions.last().expect("profile is never empty")
    }
}

/// A leader moving at constant speed; `gap0` is the initial bumper gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderTrack {
    pub gap0: f64,
    pub speed: f64,
}

impl LeaderTrack {
    /// Leader rear-bumper position in the follower's initial front-bumper
    /// frame.
    pub fn position(&self, t: f64) -> f64 {
        self.gap0 + self.speed * t
    }
}

/// Explicit-Euler integration of [`idm_accel`].
///
/// `leader_position(t)` gives the leader's rear bumper in the follower's
/// initial front-bumper frame, so the gap at time `t` is
/// `leader_position(t) − travelled`. Speeds are clamped at zero after every
/// step and the gap is floored at [`MIN_GAP`].
pub fn idm_rollout(
    p: &IdmParams,
    v0: f64,
    leader_position: Option<&dyn Fn(f64) -> f64>,
    horizon: f64,
    dt: f64,
) -> Result<LongitudinalProfile> {
    p.validate()?;
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::invalid(format!("invalid rollout horizon {horizon} / dt {dt}")));
    }
    let steps_f = horizon / dt;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-6 {
        return Err(Error::invalid(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    if !(v0 >= 0.0) {
        return Err(Error::invalid(format!("initial speed must be >= 0, got {v0}")));
    }
    let steps = steps as usize;
    let mut positions = Vec::with_capacity(steps + 1);
    let mut speeds = Vec::with_capacity(steps + 1);
    let (mut x, mut v) = (0.0_f64, v0);
    positions.push(x);
    speeds.push(v);
    for k in 0..steps {
        let t = k as f64 * dt;
        let gap = match leader_position {
            Some(f) => (f(t) - x).max(MIN_GAP),
            None => f64::INFINITY,
        };
        let a = idm_accel(p, v, gap)?;
        x += v * dt;
        v = (v + a * dt).max(0.0);
        positions.push(x);
        speeds.push(v);
    }
    Ok(LongitudinalProfile { dt, positions, speeds })
}

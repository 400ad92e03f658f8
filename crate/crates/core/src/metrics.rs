//! Closed-loop subscores and the composite scenario score.
//!
//! Multipliers (no at-fault collision, drivable area, driving direction,
//! making progress) gate a weighted mean of time-to-collision, progress,
//! speed-limit compliance and comfort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{first_contact_time, norm, sub, OrientedBox};
use crate::ibr::ComfortLimits;
use crate::map::RoadMap;
use crate::simulator::{Event, Scenario, SimTrace, WorldState};

pub const TTC_THRESHOLD: f64 = 0.95;
pub const MIN_PROGRESS_RATIO: f64 = 0.2;
/// Oncoming-lane distance (m) up to which driving direction is compliant.
pub const DDC_COMPLIANT: f64 = 2.0;
/// Oncoming-lane distance (m) beyond which the score drops to 0.
pub const DDC_VIOLATION: f64 = 6.0;
/// Window of the moving average applied before the comfort check.
pub const COMFORT_WINDOW: usize = 5;

const W_TTC: f64 = 5.0;
const W_EP: f64 = 5.0;
const W_SC: f64 = 4.0;
const W_COMFORT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nc: f64,
    pub dac: f64,
    pub ddc: f64,
    pub mp: f64,
    pub ttc: f64,
    pub ep: f64,
    pub sc: f64,
    pub comfort: f64,
    pub composite: f64,
    /// Minimum time to collision (s); `None` when no qualifying agent is
    /// ever on a collision course.
    pub min_ttc: Option<f64>,
    /// Ego progress (m) along the route's target lane.
    pub progress: f64,
}

/// `(nc·dac·ddc·mp) · (5·ttc + 5·ep + 4·sc + 2·comfort) / 16`.
#[allow(clippy::too_many_arguments)]
pub fn composite(nc: f64, dac: f64, ddc: f64, mp: f64, ttc: f64, ep: f64, sc: f64, comfort: f64) -> f64 {
    let weighted = (W_TTC * ttc + W_EP * ep + W_SC * sc + W_COMFORT * comfort) / (W_TTC + W_EP + W_SC + W_COMFORT);
    nc * dac * ddc * mp * weighted
}

impl MetricsReport {
    /// Report from subscores; `mp` follows from `ep`.
    pub fn from_subscores(nc: f64, dac: f64, ddc: f64, ttc: f64, ep: f64, sc: f64, comfort: f64) -> Self {
        let mp = if ep < MIN_PROGRESS_RATIO { 0.0 } else { 1.0 };
        Self {
            nc,
            dac,
            ddc,
            mp,
            ttc,
            ep,
            sc,
            comfort,
            composite: composite(nc, dac, ddc, mp, ttc, ep, sc, comfort),
            min_ttc: None,
            progress: 0.0,
        }
    }
}

fn velocity(s: &crate::trajectory::State) -> [f64; 2] {
    let (sin, cos) = s.heading.sin_cos();
    [s.speed * cos, s.speed * sin]
}

/// Constant-velocity time to first contact with each qualifying agent,
/// minimized over the trace. Agents qualify when their center is ahead of
/// the ego, or at any time while the ego is changing lanes.
pub fn min_ttc(steps: &[WorldState]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for w in steps {
        let ego_box = OrientedBox::new(w.ego.pose(), w.ego_footprint);
        let dir = w.ego.pose().direction();
        for a in &w.agents {
            let rel = sub([a.state.x, a.state.y], [w.ego.x, w.ego.y]);
            let ahead = rel[0] * dir[0] + rel[1] * dir[1] > 0.0;
            if !(ahead || w.ego_lane_changing) {
                continue;
            }
            let other = OrientedBox::new(a.state.pose(), a.footprint);
            if let Some(t) = first_contact_time(&ego_box, velocity(&w.ego), &other, velocity(&a.state)) {
                best = Some(best.map_or(t, |b: f64| b.min(t)));
            }
        }
    }
    best
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if values.len() < window {
        return values.to_vec();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// 1 when smoothed longitudinal/lateral acceleration and jerk of the
/// executed ego motion stay within limits.
pub fn comfort_score(steps: &[WorldState], dt: f64, limits: &ComfortLimits) -> f64 {
    let lon: Vec<f64> = steps.windows(2).map(|w| (w[1].ego.speed - w[0].ego.speed) / dt).collect();
    let lat: Vec<f64> = steps
        .windows(2)
        .map(|w| {
            let yaw_rate = crate::geometry::angle_diff(w[0].ego.heading, w[1].ego.heading) / dt;
            0.5 * (w[0].ego.speed + w[1].ego.speed) * yaw_rate
        })
        .collect();
    let lon = moving_average(&lon, COMFORT_WINDOW);
    let lat = moving_average(&lat, COMFORT_WINDOW);
    let jerk: Vec<f64> = lon.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let jerk = moving_average(&jerk, COMFORT_WINDOW);
    let ok = lon.iter().all(|a| a.abs() <= limits.max_lon_accel)
        && lat.iter().all(|a| a.abs() <= limits.max_lat_accel)
        && jerk.iter().all(|j| j.abs() <= limits.max_jerk);
    if ok {
        1.0
    } else {
        0.0
    }
}

/// 1 − mean fractional excess over the current lane's speed limit.
pub fn speed_compliance(steps: &[WorldState], map: &RoadMap) -> f64 {
    let mut total = 0.0;
    for w in steps {
        if let Some(lane) = map.lane_at([w.ego.x, w.ego.y]) {
            total += ((w.ego.speed - lane.speed_limit()) / lane.speed_limit()).max(0.0);
        }
    }
    (1.0 - total / steps.len() as f64).clamp(0.0, 1.0)
}

/// Distance driven with the ego center in oncoming lanes only.
pub fn oncoming_distance(steps: &[WorldState], map: &RoadMap) -> f64 {
    steps
        .windows(2)
        .filter(|w| {
            let p = [w[1].ego.x, w[1].ego.y];
            map.driving_lane_at(p).is_none() && map.lane_at(p).is_some_and(|l| l.is_oncoming())
        })
        .map(|w| norm(sub([w[1].ego.x, w[1].ego.y], [w[0].ego.x, w[0].ego.y])))
        .sum()
}

pub fn score_trace(trace: &SimTrace, scenario: &Scenario, limits: &ComfortLimits) -> Result<MetricsReport> {
    let steps = &trace.steps;
    if steps.len() < 2 {
        return Err(Error::invalid("cannot score a trace with fewer than two steps"));
    }
    let map = &scenario.map;

    let mut nc: f64 = 1.0;
    for e in &trace.events {
        if let Event::Collision { at_fault, .. } = e {
            nc = nc.min(if *at_fault { 0.0 } else { 0.5 });
        }
    }
    let dac = if steps.iter().all(|w| {
        OrientedBox::new(w.ego.pose(), w.ego_footprint)
            .corners()
            .iter()
            .all(|c| map.is_drivable(*c))
    }) {
        1.0
    } else {
        0.0
    };
    let oncoming = oncoming_distance(steps, map);
    let ddc = if oncoming <= DDC_COMPLIANT {
        1.0
    } else if oncoming <= DDC_VIOLATION {
        0.5
    } else {
        0.0
    };

    let target = &scenario.target_lane().centerline;
    let first = steps.first().unwrap().ego;
    let last = steps.last().unwrap().ego;
    let progress = (target.project([last.x, last.y]).s - target.project([first.x, first.y]).s).max(0.0);
    let ep = (progress / scenario.ego.expert_progress).clamp(0.0, 1.0);

    let min_ttc = min_ttc(steps);
    let ttc = if min_ttc.is_none_or(|t| t > TTC_THRESHOLD) { 1.0 } else { 0.0 };
    let sc = speed_compliance(steps, map);
    let comfort = comfort_score(steps, trace.dt, limits);

    Ok(MetricsReport {
        min_ttc,
        progress,
        ..MetricsReport::from_subscores(nc, dac, ddc, ttc, ep, sc, comfort)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Footprint, Pose};
    use crate::simulator::AgentSnapshot;
    use crate::trajectory::State;
    use proptest::prelude::*;

    #[test]
    fn composite_examples() {
        assert_eq!(composite(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(composite(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(composite(1.0, 1.0, 1.0, 1.0, 1.0, 0.8, 1.0, 1.0), 0.9375);
        let r = MetricsReport::from_subscores(1.0, 1.0, 1.0, 1.0, 0.1, 1.0, 1.0);
        assert_eq!(r.mp, 0.0);
        assert_eq!(r.composite, 0.0);
    }

    fn world(ego: State, agents: Vec<State>) -> WorldState {
        WorldState {
            step: 0,
            t: 0.0,
            ego,
            ego_footprint: Footprint::new(4.0, 2.0).unwrap(),
            agents: agents
                .into_iter()
                .enumerate()
                .map(|(i, s)| AgentSnapshot {
                    id: format!("a{i}"),
                    state: s,
                    footprint: Footprint::new(4.0, 2.0).unwrap(),
                })
                .collect(),
            ego_lane_changing: false,
        }
    }

    #[test]
    fn ttc_examples() {
        let ego = State::new(Pose::new(0.0, 0.0, 0.0), 10.0);
        let obstacle = State::new(Pose::new(20.0, 0.0, 0.0), 0.0);
        let t = min_ttc(&[world(ego, vec![obstacle])]).unwrap();
        assert!((t - 1.6).abs() < 1e-12);
        assert_eq!(min_ttc(&[world(ego, vec![])]), None);
        let follower = State::new(Pose::new(-10.0, 0.0, 0.0), 10.0);
        assert_eq!(min_ttc(&[world(ego, vec![follower])]), None);
    }

    proptest! {
        #[test]
        fn composite_is_bounded_and_monotone(
            mult in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0]), 4),
            graded in prop::collection::vec(0.0f64..=1.0, 4),
            which in 0usize..8,
            bump in 0.0f64..=1.0,
        ) {
            let mut v: Vec<f64> = mult.iter().chain(&graded).copied().collect();
            let c = |v: &[f64]| composite(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
            let base = c(&v);
            prop_assert!((0.0..=1.0).contains(&base));
            v[which] = (v[which] + bump).min(1.0);
            prop_assert!(c(&v) >= base);
        }
    }
}

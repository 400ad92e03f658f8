//! Ego proposal generation: lateral paths to the current and adjacent lanes,
//! each combined with IDM speed profiles for a set of target-speed fractions.
//!
//! Lateral paths are cubic Hermite curves in the (arc length → lateral
//! offset) frame of their target lane, with zero lateral slope at both ends.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{idm_rollout, IdmParams, LeaderTrack};
use crate::error::{Error, Result};
use crate::geometry::{angle_diff, Footprint, Pose};
use crate::map::{Frenet, Lane, Polyline, RoadMap};
use crate::trajectory::{State, Trajectory, WeightedBundle};

const PATH_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub speed_fractions: Vec<f64>,
    /// Longitudinal distances (m) over which a lane change completes.
    pub lateral_offsets: Vec<f64>,
    pub max_proposals: usize,
    pub horizon: f64,
    pub dt: f64,
    /// IDM shape parameters; `v_target` is replaced per proposal.
    pub idm: IdmParams,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            speed_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            lateral_offsets: vec![20.0, 30.0, 40.0],
            max_proposals: 128,
            horizon: 4.0,
            dt: 0.1,
            idm: IdmParams::default(),
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speed_fractions.is_empty() || self.lateral_offsets.is_empty() {
            return Err(Error::invalid("speed_fractions and lateral_offsets must be non-empty"));
        }
        if self.speed_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::invalid("speed fractions must lie in (0, 1]"));
        }
        if self.lateral_offsets.iter().any(|o| !(*o > 0.0)) {
            return Err(Error::invalid("lateral offsets must be > 0"));
        }
        if self.max_proposals == 0 {
            return Err(Error::invalid("max_proposals must be >= 1"));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::invalid("horizon and dt must be > 0"));
        }
        self.idm.validate()
    }

    fn merge_distance(&self) -> f64 {
        self.lateral_offsets.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PathKind {
    KeepLane,
    LaneChange { completion: f64 },
}

#[derive(Debug, Clone)]
pub struct LateralPath {
    pub target_lane: String,
    pub kind: PathKind,
    pub path: Polyline,
}

/// Largest lateral slope carried over from the ego heading.
const MAX_ENTRY_SLOPE: f64 = 0.5;

/// Cubic Hermite lateral offset over `u = s / merge`: starts at `d0` with
/// slope `m0` (per unit arc length) and ends flat at 0.
fn lateral_offset(d0: f64, m0: f64, merge: f64, u: f64) -> f64 {
    if u >= 1.0 {
        return 0.0;
    }
    let (u2, u3) = (u * u, u * u * u);
    (2.0 * u3 - 3.0 * u2 + 1.0) * d0 + (u3 - 2.0 * u2 + u) * merge * m0
}

fn path_to_lane(ego: &Pose, lane: &Lane, merge: f64, length: f64) -> Result<Polyline> {
    let start = lane.centerline.project(ego.position());
    let rel = angle_diff(lane.centerline.heading_at(start.s), ego.heading);
    let m0 = rel.tan().clamp(-MAX_ENTRY_SLOPE, MAX_ENTRY_SLOPE);
    let n = (length / PATH_STEP).ceil() as usize;
    let mut points = Vec::with_capacity(n + 1);
    points.push(ego.position());
    for k in 1..=n {
        let ds = k as f64 * PATH_STEP;
        let d = lateral_offset(start.d, m0, merge, ds / merge);
        points.push(lane.centerline.from_frenet(Frenet { s: start.s + ds, d }));
    }
    Polyline::new(points)
}

/// Lateral candidate paths from the ego pose. Empty when the ego is not on
/// any same-direction lane.
pub fn lateral_paths(ego: &Pose, speed: f64, map: &RoadMap, cfg: &ProposalConfig) -> Result<Vec<LateralPath>> {
    let Some(current) = map.driving_lane_at(ego.position()) else {
        return Ok(Vec::new());
    };
    let top_speed = speed.max(current.speed_limit());
    let length = top_speed * cfg.horizon + 0.5 * cfg.idm.a_max * cfg.horizon * cfg.horizon + 20.0;

    let mut paths = vec![LateralPath {
        target_lane: current.id().to_string(),
        kind: PathKind::KeepLane,
        path: path_to_lane(ego, current, cfg.merge_distance(), length)?,
    }];
    for lane in map.adjacent_driving_lanes(current) {
        // Lanes that end within the path are not lane-change targets.
        let remaining = lane.centerline.length() - lane.centerline.project(ego.position()).s;
        if remaining < length {
            continue;
        }
        for &completion in &cfg.lateral_offsets {
            paths.push(LateralPath {
                target_lane: lane.id().to_string(),
                kind: PathKind::LaneChange { completion },
                path: path_to_lane(ego, lane, completion, length.max(completion + 20.0))?,
            });
        }
    }
    Ok(paths)
}

/// Where a proposal came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalInfo {
    pub path_index: usize,
    pub fraction_index: usize,
    pub target_lane: String,
    #[serde(flatten)]
    pub kind: PathKind,
    pub target_speed: f64,
}

#[derive(Debug, Clone)]
pub struct ProposalSet {
    pub bundle: WeightedBundle,
    pub info: Vec<ProposalInfo>,
}

fn follow_path(path: &Polyline, ego: &State, positions: &[f64], speeds: &[f64], t0: f64, dt: f64) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(positions.len());
    states.push(*ego);
    for (s, v) in positions.iter().zip(speeds).skip(1) {
        let p = path.point_at(*s);
        states.push(State {
            x: p[0],
            y: p[1],
            heading: path.heading_at(*s),
            speed: *v,
        });
    }
    Trajectory::new(t0, dt, states)
}

fn same_states(a: &Trajectory, b: &Trajectory) -> bool {
    a.states.iter().zip(&b.states).all(|(x, y)| {
        (x.x - y.x).abs() < 1e-9 && (x.y - y.y).abs() < 1e-9 && (x.speed - y.speed).abs() < 1e-9
    })
}

/// One trajectory per (path, speed fraction), ordered by path index then
/// fraction index, deduplicated and capped at `max_proposals`.
///
/// `leaders` maps a target lane id to the leading vehicle identified at the
/// start of planning; it is held fixed for the whole rollout.
pub fn generate_proposals(
    ego: &State,
    t0: f64,
    footprint: Footprint,
    map: &RoadMap,
    leaders: &HashMap<String, LeaderTrack>,
    cfg: &ProposalConfig,
) -> Result<ProposalSet> {
    cfg.validate()?;
    let paths = lateral_paths(&ego.pose(), ego.speed, map, cfg)?;
    if paths.is_empty() {
        return Err(Error::NoProposals("ego is not on any drivable lane".into()));
    }
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut info = Vec::new();
    'outer: for (pi, lp) in paths.iter().enumerate() {
        let lane = map.lane(&lp.target_lane).expect("path lanes come from the map");
        let leader = leaders.get(&lp.target_lane).copied();
        let leader_fn = leader.map(|l| move |t: f64| l.position(t));
        for (fi, &frac) in cfg.speed_fractions.iter().enumerate() {
            let target = frac * lane.speed_limit();
            let params = cfg.idm.with_target(target);
            let profile = idm_rollout(
                &params,
                ego.speed,
                leader_fn.as_ref().map(|f| f as &dyn Fn(f64) -> f64),
                cfg.horizon,
                cfg.dt,
            )?;
            let traj = follow_path(&lp.path, ego, &profile.positions, &profile.speeds, t0, cfg.dt)?;
            if trajectories.iter().any(|t| same_states(t, &traj)) {
                continue;
            }
            trajectories.push(traj);
            info.push(ProposalInfo {
                path_index: pi,
                fraction_index: fi,
                target_lane: lp.target_lane.clone(),
                kind: lp.kind,
                target_speed: target,
            });
            if trajectories.len() == cfg.max_proposals {
                break 'outer;
            }
        }
    }
    let bundle = WeightedBundle::uniform("ego", footprint, trajectories)?;
    Ok(ProposalSet { bundle, info })
}

/// Straight-line constant-deceleration plan used when no proposal exists.
pub fn emergency_stop(ego: &State, t0: f64, decel: f64, horizon: f64, dt: f64) -> Result<Trajectory> {
    let n = (horizon / dt).round() as usize;
    let dir = ego.pose().direction();
    let mut states = Vec::with_capacity(n + 1);
    let (mut x, mut v) = (0.0, ego.speed);
    states.push(*ego);
    for _ in 0..n {
        x += v * dt;
        v = (v - decel * dt).max(0.0);
        states.push(State {
            x: ego.x + dir[0] * x,
            y: ego.y + dir[1] * x,
            heading: ego.heading,
            speed: v,
        });
    }
    Trajectory::new(t0, dt, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::LaneSpec;

    fn lane(id: &str, y: f64, left: Option<&str>, right: Option<&str>) -> LaneSpec {
        LaneSpec {
            id: id.into(),
            centerline: vec![[-50.0, y], [300.0, y]],
            speed_limit: 12.0,
            left: left.map(Into::into),
            right: right.map(Into::into),
            direction_sign: 1,
            width: 3.5,
        }
    }

    fn single() -> RoadMap {
        RoadMap::new(vec![lane("a", 0.0, None, None)]).unwrap()
    }

    fn double() -> RoadMap {
        RoadMap::new(vec![lane("a", 0.0, Some("b"), None), lane("b", 3.5, None, Some("a"))]).unwrap()
    }

    #[test]
    fn single_lane_gives_one_path_on_centerline() {
        let cfg = ProposalConfig::default();
        let paths = lateral_paths(&Pose::new(0.0, 0.0, 0.0), 10.0, &single(), &cfg).unwrap();
        assert_eq!(paths.len(), 1);
        for p in paths[0].path.points() {
            assert!(p[1].abs() < 1e-12);
            assert!(p[0] >= 0.0);
        }
    }

    #[test]
    fn lane_change_paths_end_on_target_centerline() {
        let cfg = ProposalConfig::default();
        let paths = lateral_paths(&Pose::new(0.0, 0.0, 0.0), 10.0, &double(), &cfg).unwrap();
        assert_eq!(paths.len(), 4);
        for lp in &paths[1..] {
            let PathKind::LaneChange { completion } = lp.kind else { panic!() };
            let end = lp.path.point_at(completion);
            assert!((end[1] - 3.5).abs() < 0.1);
            // C¹: no kink between consecutive segments.
            for s in [0.25 * completion, 0.5 * completion, completion] {
                let h0 = lp.path.heading_at(s - 0.6);
                let h1 = lp.path.heading_at(s + 0.6);
                assert!((h1 - h0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn displaced_ego_converges_to_centerline() {
        let cfg = ProposalConfig::default();
        let paths = lateral_paths(&Pose::new(0.0, 0.5, 0.0), 10.0, &single(), &cfg).unwrap();
        let p = &paths[0].path;
        assert_eq!(p.points()[0], [0.0, 0.5]);
        let lat: Vec<f64> = p.points().iter().map(|q| q[1].abs()).collect();
        for w in lat.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(p.point_at(25.0)[1].abs() < 1e-9);
    }

    #[test]
    fn lane_change_path_continues_ego_heading() {
        let map = double();
        let ego = Pose::new(0.0, 1.0, 0.1);
        let paths = lateral_paths(&ego, 10.0, &map, &ProposalConfig::default()).unwrap();
        let change = paths.iter().find(|p| p.target_lane == "b").unwrap();
        let h = change.path.heading_at(0.25);
        assert!((h - 0.1).abs() < 0.02, "initial heading {h}");
        let y: Vec<f64> = (0..=60).map(|k| change.path.point_at(k as f64 * 0.5)[1]).collect();
        assert!(y.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!((y.last().unwrap() - 3.5).abs() < 1e-9);
    }

    #[test]
    fn ending_lane_is_not_a_target() {
        let mut short = lane("b", 3.5, None, Some("a"));
        short.centerline = vec![[-50.0, 3.5], [60.0, 3.5]];
        let map = RoadMap::new(vec![lane("a", 0.0, Some("b"), None), short]).unwrap();
        let paths = lateral_paths(&Pose::new(0.0, 0.0, 0.0), 10.0, &map, &ProposalConfig::default()).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].target_lane, "a");
    }

    #[test]
    fn off_lane_ego_has_no_paths() {
        let cfg = ProposalConfig::default();
        let paths = lateral_paths(&Pose::new(0.0, 20.0, 0.0), 10.0, &single(), &cfg).unwrap();
        assert!(paths.is_empty());
        let ego = State::new(Pose::new(0.0, 20.0, 0.0), 5.0);
        assert!(matches!(
            generate_proposals(&ego, 0.0, Footprint::default(), &single(), &HashMap::new(), &cfg),
            Err(Error::NoProposals(_))
        ));
    }

    #[test]
    fn one_path_five_fractions() {
        let ego = State::new(Pose::new(0.0, 0.0, 0.0), 8.0);
        let set = generate_proposals(&ego, 0.0, Footprint::default(), &single(), &HashMap::new(), &ProposalConfig::default())
            .unwrap();
        assert_eq!(set.bundle.len(), 5);
        for p in &set.bundle.base_probs {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn four_paths_twenty_distinct_proposals() {
        let ego = State::new(Pose::new(0.0, 0.0, 0.0), 8.0);
        let set = generate_proposals(&ego, 0.0, Footprint::default(), &double(), &HashMap::new(), &ProposalConfig::default())
            .unwrap();
        assert_eq!(set.bundle.len(), 20);
        for (i, a) in set.bundle.trajectories.iter().enumerate() {
            for b in &set.bundle.trajectories[i + 1..] {
                assert!(!same_states(a, b));
            }
        }
        assert_eq!(set.info[0].kind, PathKind::KeepLane);
        assert_eq!(set.info[0].fraction_index, 0);
    }

    #[test]
    fn cap_keeps_lowest_indices() {
        let ego = State::new(Pose::new(0.0, 0.0, 0.0), 8.0);
        let cfg = ProposalConfig {
            max_proposals: 7,
            ..ProposalConfig::default()
        };
        let set = generate_proposals(&ego, 0.0, Footprint::default(), &double(), &HashMap::new(), &cfg).unwrap();
        assert_eq!(set.bundle.len(), 7);
        assert_eq!((set.info[6].path_index, set.info[6].fraction_index), (1, 1));
    }

    #[test]
    fn proposals_start_at_ego_and_respect_limit() {
        let ego = State::new(Pose::new(3.0, 0.3, 0.05), 0.0);
        let set = generate_proposals(&ego, 2.0, Footprint::default(), &double(), &HashMap::new(), &ProposalConfig::default())
            .unwrap();
        for t in &set.bundle.trajectories {
            assert_eq!(t.first(), &ego);
            assert_eq!(t.len(), 41);
            assert!(t.states.iter().all(|s| s.speed <= 12.0 + 1e-6));
        }
        let slow = set.bundle.trajectories[0].last().speed;
        let fast = set.bundle.trajectories[4].last().speed;
        assert!(fast > slow);
    }

    #[test]
    fn leader_slows_keep_lane_proposals() {
        let ego = State::new(Pose::new(0.0, 0.0, 0.0), 10.0);
        let mut leaders = HashMap::new();
        leaders.insert("a".to_string(), LeaderTrack { gap0: 15.0, speed: 0.0 });
        let cfg = ProposalConfig::default();
        let free = generate_proposals(&ego, 0.0, Footprint::default(), &single(), &HashMap::new(), &cfg).unwrap();
        let blocked = generate_proposals(&ego, 0.0, Footprint::default(), &single(), &leaders, &cfg).unwrap();
        assert!(blocked.bundle.trajectories[4].last().x < free.bundle.trajectories[4].last().x);
        assert!(blocked.bundle.trajectories[4].last().speed < free.bundle.trajectories[4].last().speed);
    }

    #[test]
    fn emergency_stop_decelerates_along_heading() {
        let ego = State::new(Pose::new(0.0, 0.0, 0.0), 4.0);
        let t = emergency_stop(&ego, 0.0, 4.0, 4.0, 0.1).unwrap();
        assert_eq!(t.last().speed, 0.0);
        assert!(t.states.iter().all(|s| s.y == 0.0));
    }
}

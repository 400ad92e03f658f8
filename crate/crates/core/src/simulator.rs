//! Closed-loop simulation: the ego replans every cycle while traffic agents
//! follow IDM, replay a recording, run a scripted maneuver, or follow the
//! game's prediction for them.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceState;
use crate::config::PlannerConfig;
use crate::dynamics::{idm_accel, IdmParams, LeaderTrack, MIN_GAP};
use crate::error::{Error, Result};
use crate::geometry::{boxes_collide, Footprint, OrientedBox};
use crate::ibr::{run_ibr, GameState, InteractionTable, ProgressContext};
use crate::map::{Frenet, Lane, RoadMap};
use crate::predictor::{AgentObservation, Maneuver, PREDICTION_DT, PREDICTION_HORIZON};
use crate::proposer::{emergency_stop, generate_proposals, PathKind, ProposalInfo};
use crate::trajectory::{argmax, relative_entropy_trace, Distribution, State, Trajectory, WeightedBundle};

/// Lateral distance (m) within which a vehicle counts as in an IDM agent's lane.
pub const LEADER_LATERAL: f64 = 2.0;

/// Lateral offset (m) from the nearest centerline above which the ego is
/// treated as between lanes.
pub const LANE_CENTER_TOLERANCE: f64 = 0.5;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Behavior {
    /// Car following along a lane centerline. Without `lane` the lane
    /// containing the initial position is used.
    Idm {
        #[serde(default)]
        params: IdmParams,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lane: Option<String>,
    },
    /// Non-reactive playback of a recording starting at t = 0.
    Replay { trajectory: Trajectory },
    /// Closed-form maneuver from the initial state.
    Scripted { maneuver: Maneuver },
    /// Follows the most likely trajectory the planner's game assigned to
    /// this agent in the previous cycle.
    Cooperative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgoSpec {
    pub state: State,
    pub footprint: Footprint,
    /// Lane ids from the start lane to the target lane.
    pub route: Vec<String>,
    /// Progress (m) along the target lane achieved by the reference driver.
    pub expert_progress: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: String,
    pub state: State,
    pub footprint: Footprint,
    pub behavior: Behavior,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub map: RoadMap,
    pub ego: EgoSpec,
    pub agents: Vec<AgentSpec>,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Last lane of the route.
    pub fn target_lane(&self) -> &Lane {
        let id = self.ego.route.last().expect("validated route is non-empty");
        self.map.lane(id).expect("validated route lanes exist")
    }

    /// Semantic checks. Errors carry the offending field path.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::validation("dt", "must be > 0"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::validation("duration", "must be > 0"));
        }
        let ratio = self.duration / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::validation(
                "duration",
                format!("{} is not a multiple of dt {}", self.duration, self.dt),
            ));
        }
        let ego = &self.ego;
        if ego.route.is_empty() {
            return Err(Error::validation("ego.route", "must name at least one lane"));
        }
        for (k, id) in ego.route.iter().enumerate() {
            if self.map.lane(id).is_none() {
                return Err(Error::validation(format!("ego.route[{k}]"), format!("unknown lane id '{id}'")));
            }
            if k > 0 && !self.map.are_adjacent(&ego.route[k - 1], id) {
                return Err(Error::validation(
                    format!("ego.route[{k}]"),
                    format!("lane '{id}' is not adjacent to '{}'", ego.route[k - 1]),
                ));
            }
        }
        if !(ego.expert_progress > 0.0) {
            return Err(Error::validation("ego.expert_progress", "must be > 0"));
        }
        check_state(&ego.state, "ego")?;
        ego.footprint
            .validate()
            .map_err(|e| Error::validation("ego.footprint", e.to_string()))?;
        for lane in self.map.lanes() {
            for (side, adj) in [("left", &lane.spec.left), ("right", &lane.spec.right)] {
                if let Some(id) = adj {
                    if self.map.lane(id).is_none() {
                        return Err(Error::validation(
                            format!("map.lanes[{}].{side}", lane.id()),
                            format!("unknown lane id '{id}'"),
                        ));
                    }
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (k, a) in self.agents.iter().enumerate() {
            let path = format!("agents[{k}]");
            if a.id == "ego" || !seen.insert(a.id.as_str()) {
                return Err(Error::validation(format!("{path}.id"), format!("duplicate agent id '{}'", a.id)));
            }
            check_state(&a.state, &path)?;
            a.footprint
                .validate()
                .map_err(|e| Error::validation(format!("{path}.footprint"), e.to_string()))?;
            match &a.behavior {
                Behavior::Idm { params, lane } => {
                    params
                        .validate()
                        .map_err(|e| Error::validation(format!("{path}.behavior.params"), e.to_string()))?;
                    match lane {
                        Some(id) if self.map.lane(id).is_none() => {
                            return Err(Error::validation(
                                format!("{path}.behavior.lane"),
                                format!("unknown lane id '{id}'"),
                            ))
                        }
                        None if self.map.lane_at([a.state.x, a.state.y]).is_none() => {
                            return Err(Error::validation(
                                format!("{path}.behavior"),
                                "IDM agent does not start on any lane",
                            ))
                        }
                        _ => {}
                    }
                }
                Behavior::Replay { trajectory } => {
                    trajectory
                        .validate()
                        .map_err(|e| Error::validation(format!("{path}.behavior.trajectory"), e.to_string()))?;
                    if trajectory.t0.abs() > TIME_EPS {
                        return Err(Error::validation(format!("{path}.behavior.trajectory.t0"), "must be 0"));
                    }
                }
                Behavior::Scripted { .. } | Behavior::Cooperative => {}
            }
        }
        Ok(())
    }
}

fn check_state(s: &State, path: &str) -> Result<()> {
    if !(s.x.is_finite() && s.y.is_finite() && s.heading.is_finite()) {
        return Err(Error::validation(format!("{path}.pose"), "must be finite"));
    }
    if !(s.speed >= 0.0 && s.speed.is_finite()) {
        return Err(Error::validation(format!("{path}.speed"), "must be finite and >= 0"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: String,
    pub state: State,
    pub footprint: Footprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: usize,
    pub t: f64,
    pub ego: State,
    pub ego_footprint: Footprint,
    pub agents: Vec<AgentSnapshot>,
    /// Set while the ego executes a lane change or is between lanes.
    pub ego_lane_changing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Event {
    /// Onset of contact between the ego and an agent.
    Collision { step: usize, agent: String, at_fault: bool },
    /// The ego footprint left the drivable area.
    OffRoad { step: usize },
    /// An agent ran out of lane or recording and was stopped.
    AgentFrozen { step: usize, agent: String },
    /// The planner produced no proposals and fell back to braking.
    Emergency { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDistribution {
    pub id: String,
    pub probs: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfidence {
    pub id: String,
    /// Bayesian posterior; stays at the prior when confidence is disabled.
    pub posterior: f64,
    /// Exponent scale actually used in the weight update.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub step: usize,
    pub t: f64,
    pub num_proposals: usize,
    /// Index of the committed proposal; `None` for the emergency plan.
    pub chosen: Option<usize>,
    pub chosen_info: Option<ProposalInfo>,
    pub plan: Trajectory,
    /// Final distributions, ego first.
    pub distributions: Vec<AgentDistribution>,
    pub confidences: Vec<AgentConfidence>,
    /// Ego entropy relative to iteration 0, one value per iteration.
    pub ego_entropy: Option<Vec<f64>>,
    /// Mean relative entropy over agents with more than one mode.
    pub agent_entropy: Option<Vec<f64>>,
    pub exp_clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scenario: String,
    pub dt: f64,
    /// One world state per step, including the initial one.
    pub steps: Vec<WorldState>,
    pub cycles: Vec<CycleRecord>,
    pub events: Vec<Event>,
}

impl SimTrace {
    pub fn emergency(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::Emergency { .. }))
    }

    pub fn agent_speeds(&self, id: &str) -> Vec<f64> {
        self.steps
            .iter()
            .filter_map(|w| w.agents.iter().find(|a| a.id == id).map(|a| a.state.speed))
            .collect()
    }

    /// Mean over cycles of the ego relative entropy per iteration.
    pub fn mean_ego_entropy(&self) -> Option<Vec<f64>> {
        mean_series(self.cycles.iter().filter_map(|c| c.ego_entropy.as_deref()))
    }

    pub fn mean_agent_entropy(&self) -> Option<Vec<f64>> {
        mean_series(self.cycles.iter().filter_map(|c| c.agent_entropy.as_deref()))
    }
}

fn mean_series<'a>(series: impl Iterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for s in series {
        if sum.is_empty() {
            sum = vec![0.0; s.len()];
        }
        if s.len() != sum.len() {
            continue;
        }
        for (a, v) in sum.iter_mut().zip(s) {
            *a += v;
        }
        count += 1;
    }
    (count > 0).then(|| sum.into_iter().map(|v| v / count as f64).collect())
}

#[derive(Debug, Clone)]
struct LaneTrack {
    lane: usize,
    s: f64,
    d: f64,
}

#[derive(Debug, Clone)]
struct AgentRuntime {
    spec: AgentSpec,
    state: State,
    track: Option<LaneTrack>,
    frozen: bool,
}

/// Mutable simulation state.
#[derive(Debug, Clone)]
pub struct World {
    pub step: usize,
    pub dt: f64,
    pub ego: State,
    pub ego_footprint: Footprint,
    agents: Vec<AgentRuntime>,
    ego_lane_changing: bool,
    ego_was_colliding: Vec<bool>,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let map = &scenario.map;
        let agents = scenario
            .agents
            .iter()
            .map(|a| {
                let track = match &a.behavior {
                    Behavior::Idm { lane, .. } => {
                        let pos = [a.state.x, a.state.y];
                        let lane = match lane {
                            Some(id) => map.lane(id),
                            None => map.lane_at(pos),
                        }
                        .ok_or_else(|| Error::invalid(format!("agent '{}' has no lane", a.id)))?;
                        let idx = map.lanes().iter().position(|l| l.id() == lane.id()).expect("lane from map");
                        let f = lane.centerline.project(pos);
                        Some(LaneTrack { lane: idx, s: f.s, d: f.d })
                    }
                    _ => None,
                };
                Ok(AgentRuntime {
                    spec: a.clone(),
                    state: a.state,
                    track,
                    frozen: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            step: 0,
            dt: scenario.dt,
            ego: scenario.ego.state,
            ego_footprint: scenario.ego.footprint,
            ego_was_colliding: vec![false; agents.len()],
            agents,
            ego_lane_changing: false,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn snapshot(&self) -> WorldState {
        WorldState {
            step: self.step,
            t: self.time(),
            ego: self.ego,
            ego_footprint: self.ego_footprint,
            agents: self
                .agents
                .iter()
                .map(|a| AgentSnapshot {
                    id: a.spec.id.clone(),
                    state: a.state,
                    footprint: a.spec.footprint,
                })
                .collect(),
            ego_lane_changing: self.ego_lane_changing,
        }
    }

    /// Advances every agent by one step, moves the ego to `ego_next`, and
    /// returns the events raised at the new step. `game_reps` holds the
    /// previous cycle's most likely game trajectory per agent id.
    pub fn step(&mut self, ego_next: State, game_reps: &BTreeMap<String, Trajectory>, map: &RoadMap) -> Vec<Event> {
        let dt = self.dt;
        let t_next = self.time() + dt;
        let next_step = self.step + 1;
        let mut events = Vec::new();

        // All IDM accelerations are evaluated against the world before the step.
        let accels: Vec<Option<f64>> = (0..self.agents.len()).map(|i| self.idm_accel_for(i, map)).collect();

        for (a, accel) in self.agents.iter_mut().zip(accels) {
            if a.frozen {
                continue;
            }
            let mut freeze = false;
            match &a.spec.behavior {
                Behavior::Idm { .. } => {
                    let track = a.track.as_mut().expect("IDM agents have a lane track");
                    let lane = &map.lanes()[track.lane];
                    let accel = accel.expect("IDM agents have an acceleration");
                    track.s += a.state.speed * dt;
                    let mut v = (a.state.speed + accel * dt).max(0.0);
                    let len = lane.centerline.length();
                    if track.s > len {
                        track.s = len;
                        v = 0.0;
                        freeze = true;
                    }
                    let p = lane.centerline.from_frenet(Frenet { s: track.s, d: track.d });
                    a.state = State {
                        x: p[0],
                        y: p[1],
                        heading: lane.centerline.heading_at(track.s),
                        speed: v,
                    };
                }
                Behavior::Replay { trajectory } => {
                    if t_next <= trajectory.end_time() + TIME_EPS {
                        a.state = trajectory.state_at(t_next.min(trajectory.end_time())).expect("checked horizon");
                    } else {
                        a.state = State {
                            speed: 0.0,
                            ..*trajectory.last()
                        };
                        freeze = true;
                    }
                }
                Behavior::Scripted { maneuver } => {
                    a.state = maneuver.state_after(&a.spec.state, t_next, PREDICTION_HORIZON);
                }
                Behavior::Cooperative => {
                    let followed = game_reps.get(&a.spec.id).and_then(|rep| rep.state_at(t_next).ok());
                    a.state = followed.unwrap_or_else(|| Maneuver::KeepSpeed.state_after(&a.state, dt, PREDICTION_HORIZON));
                }
            }
            if freeze {
                a.frozen = true;
                events.push(Event::AgentFrozen {
                    step: next_step,
                    agent: a.spec.id.clone(),
                });
            }
        }

        self.ego = ego_next;
        self.step = next_step;

        let ego_box = OrientedBox::new(self.ego.pose(), self.ego_footprint);
        let off_lane = ego_off_lane(&self.ego, map);
        for (k, a) in self.agents.iter().enumerate() {
            let other = OrientedBox::new(a.state.pose(), a.spec.footprint);
            let colliding = boxes_collide(&ego_box, &other);
            if colliding && !self.ego_was_colliding[k] {
                let at_fault = off_lane || boxes_collide(&ego_box.front_half(), &other);
                events.push(Event::Collision {
                    step: next_step,
                    agent: a.spec.id.clone(),
                    at_fault,
                });
            }
            self.ego_was_colliding[k] = colliding;
        }
        if ego_box.corners().iter().any(|c| !map.is_drivable(*c)) {
            events.push(Event::OffRoad { step: next_step });
        }
        events
    }

    fn idm_accel_for(&self, i: usize, map: &RoadMap) -> Option<f64> {
        let a = &self.agents[i];
        let Behavior::Idm { params, .. } = &a.spec.behavior else {
            return None;
        };
        if a.frozen {
            return Some(0.0);
        }
        let track = a.track.as_ref()?;
        let lane = &map.lanes()[track.lane];
        let mut gap = f64::INFINITY;
        let mut consider = |state: &State, fp: &Footprint| {
            let f = lane.centerline.project([state.x, state.y]);
            if f.d.abs() <= LEADER_LATERAL && f.s > track.s {
                let g = f.s - track.s - 0.5 * (a.spec.footprint.length + fp.length);
                gap = gap.min(g.max(MIN_GAP));
            }
        };
        consider(&self.ego, &self.ego_footprint);
        for (j, other) in self.agents.iter().enumerate() {
            if j != i {
                consider(&other.state, &other.spec.footprint);
            }
        }
        Some(idm_accel(params, a.state.speed, gap).expect("gap floored and speed clamped"))
    }
}

/// True when the ego center is farther than [`LANE_CENTER_TOLERANCE`] from
/// every same-direction centerline.
pub fn ego_off_lane(ego: &State, map: &RoadMap) -> bool {
    map.lanes()
        .iter()
        .filter(|l| !l.is_oncoming())
        .all(|l| !l.corridor_contains([ego.x, ego.y]) || l.centerline.project([ego.x, ego.y]).d.abs() > LANE_CENTER_TOLERANCE)
}

/// Closest agent ahead of the ego in each same-direction lane.
pub fn find_leaders(world: &WorldState, map: &RoadMap) -> HashMap<String, LeaderTrack> {
    let mut leaders = HashMap::new();
    for lane in map.lanes().iter().filter(|l| !l.is_oncoming()) {
        let ego_s = lane.centerline.project([world.ego.x, world.ego.y]).s;
        let mut best: Option<(f64, LeaderTrack)> = None;
        for a in &world.agents {
            let pos = [a.state.x, a.state.y];
            if !lane.corridor_contains(pos) {
                continue;
            }
            let s = lane.centerline.project(pos).s;
            if s <= ego_s {
                continue;
            }
            let along = (a.state.heading - lane.centerline.heading_at(s)).cos();
            let track = LeaderTrack {
                gap0: s - ego_s - 0.5 * (world.ego_footprint.length + a.footprint.length),
                speed: (a.state.speed * along).max(0.0),
            };
            if best.is_none_or(|(bs, _)| s < bs) {
                best = Some((s, track));
            }
        }
        if let Some((_, track)) = best {
            leaders.insert(lane.id().to_string(), track);
        }
    }
    leaders
}

/// Outcome of one planning cycle.
struct Planned {
    record: CycleRecord,
    reps: BTreeMap<String, Trajectory>,
    emergency: Option<String>,
}

/// Per-run planner state carried across cycles.
struct Planner<'a> {
    scenario: &'a Scenario,
    cfg: &'a PlannerConfig,
    predictor: Box<dyn crate::predictor::Predictor>,
    confidence: Vec<ConfidenceState>,
}

impl Planner<'_> {
    fn plan(&mut self, world: &WorldState) -> Result<Planned> {
        let cfg = self.cfg;
        let map = &self.scenario.map;
        let t = world.t;

        let observations = world
            .agents
            .iter()
            .map(|a| AgentObservation::from_current(a.id.clone(), a.footprint, a.state, t))
            .collect::<Result<Vec<_>>>()?;
        let predictor = &self.predictor;
        let predictions = observations
            .par_iter()
            .map(|o| predictor.predict(o, map))
            .collect::<Result<Vec<WeightedBundle>>>()?;

        if cfg.confidence_enabled {
            for (c, a) in self.confidence.iter_mut().zip(&world.agents) {
                c.update(&a.state.pose(), t)?;
            }
        }
        let gains: Vec<f64> = self
            .confidence
            .iter()
            .map(|c| if cfg.confidence_enabled { c.confidence() } else { 1.0 })
            .collect();
        let confidences: Vec<AgentConfidence> = world
            .agents
            .iter()
            .zip(&self.confidence)
            .zip(&gains)
            .map(|((a, c), g)| AgentConfidence {
                id: a.id.clone(),
                posterior: c.confidence(),
                gain: *g,
            })
            .collect();

        let leaders = find_leaders(world, map);
        let proposals = match generate_proposals(&world.ego, t, world.ego_footprint, map, &leaders, &cfg.proposals) {
            Ok(p) => p,
            Err(Error::NoProposals(reason)) => {
                let plan = emergency_stop(&world.ego, t, cfg.emergency_decel, cfg.proposals.horizon, cfg.proposals.dt)?;
                let mut distributions = vec![AgentDistribution {
                    id: "ego".into(),
                    probs: Distribution::uniform(1),
                }];
                let mut reps = BTreeMap::new();
                for (b, c) in predictions.iter().zip(self.confidence.iter_mut()) {
                    let init = b.initial_distribution()?;
                    let rep = b.trajectories[init.argmax()].clone();
                    c.commit(rep.clone(), rep.clone());
                    reps.insert(b.agent_id.clone(), rep);
                    distributions.push(AgentDistribution {
                        id: b.agent_id.clone(),
                        probs: init,
                    });
                }
                return Ok(Planned {
                    record: CycleRecord {
                        step: world.step,
                        t,
                        num_proposals: 0,
                        chosen: None,
                        chosen_info: None,
                        plan,
                        distributions,
                        confidences,
                        ego_entropy: None,
                        agent_entropy: None,
                        exp_clamped: 0,
                    },
                    reps,
                    emergency: Some(reason),
                });
            }
            Err(e) => return Err(e),
        };

        let mut bundles = Vec::with_capacity(predictions.len() + 1);
        bundles.push(proposals.bundle);
        bundles.extend(predictions);
        let progress = ProgressContext::new(self.scenario.target_lane().centerline.clone(), &bundles[0].trajectories);
        let table = InteractionTable::build(&bundles, Some(&progress), &cfg.reward, &cfg.comfort)?;
        let mut all_gains = Vec::with_capacity(bundles.len());
        all_gains.push(cfg.confidence.ego_confidence);
        all_gains.extend(&gains);
        let game = GameState::from_bundles(&bundles, table, cfg.reward, all_gains, cfg.order)?;
        let (game, history) = run_ibr(game, cfg.iterations);

        let finals = game.distributions();
        let chosen = finals[0].argmax();
        let mut reps = BTreeMap::new();
        for (i, c) in self.confidence.iter_mut().enumerate() {
            let b = &bundles[i + 1];
            let game_rep = b.trajectories[finals[i + 1].argmax()].clone();
            let pred_rep = b.trajectories[argmax(&b.base_probs)].clone();
            c.commit(game_rep.clone(), pred_rep);
            reps.insert(b.agent_id.clone(), game_rep);
        }

        let relative = |i: usize| {
            let series: Vec<Distribution> = history.iter().map(|h| h[i].clone()).collect();
            let trace = relative_entropy_trace(&series);
            (!trace.degenerate_base).then_some(trace.values)
        };
        let ego_entropy = relative(0);
        let agent_traces: Vec<Vec<f64>> = (1..bundles.len()).filter_map(relative).collect();
        let agent_entropy = mean_series(agent_traces.iter().map(Vec::as_slice));

        Ok(Planned {
            record: CycleRecord {
                step: world.step,
                t,
                num_proposals: bundles[0].len(),
                chosen: Some(chosen),
                chosen_info: Some(proposals.info[chosen].clone()),
                plan: bundles[0].trajectories[chosen].clone(),
                distributions: bundles
                    .iter()
                    .zip(finals)
                    .map(|(b, d)| AgentDistribution {
                        id: b.agent_id.clone(),
                        probs: d,
                    })
                    .collect(),
                confidences,
                ego_entropy,
                agent_entropy,
                exp_clamped: game.diagnostics.exp_clamped,
            },
            reps,
            emergency: None,
        })
    }
}

fn lane_changing(ego: &State, info: Option<&ProposalInfo>, map: &RoadMap) -> bool {
    if ego_off_lane(ego, map) {
        return true;
    }
    match info {
        Some(ProposalInfo {
            kind: PathKind::LaneChange { .. },
            target_lane,
            ..
        }) => map
            .lane(target_lane)
            .is_some_and(|l| l.centerline.project([ego.x, ego.y]).d.abs() > LANE_CENTER_TOLERANCE),
        _ => false,
    }
}

/// Runs the scenario to completion with replanning every
/// `cfg.replan_every` steps.
pub fn run_closed_loop(scenario: &Scenario, cfg: &PlannerConfig) -> Result<SimTrace> {
    cfg.validate()?;
    scenario.validate()?;
    if (scenario.dt - cfg.proposals.dt).abs() > TIME_EPS || (scenario.dt - PREDICTION_DT).abs() > TIME_EPS {
        return Err(Error::invalid(format!(
            "scenario dt {} must equal the planning step {}",
            scenario.dt, PREDICTION_DT
        )));
    }
    let mut planner = Planner {
        scenario,
        cfg,
        predictor: cfg.predictor.build(),
        confidence: scenario
            .agents
            .iter()
            .map(|_| ConfidenceState::from_config(&cfg.confidence))
            .collect::<Result<_>>()?,
    };
    let map = &scenario.map;
    let mut world = World::new(scenario)?;
    let mut steps = Vec::with_capacity(scenario.steps() + 1);
    let mut cycles = Vec::new();
    let mut events = Vec::new();
    let mut reps = BTreeMap::new();
    let mut plan: Option<(Trajectory, Option<ProposalInfo>, usize)> = None;

    for k in 0..scenario.steps() {
        let stale = plan.as_ref().is_none_or(|(p, _, idx)| idx + 1 >= p.len());
        if k % cfg.replan_every == 0 || stale {
            let planned = planner.plan(&world.snapshot())?;
            if let Some(reason) = planned.emergency {
                events.push(Event::Emergency { step: k, reason });
            }
            reps = planned.reps;
            plan = Some((
                planned.record.plan.clone(),
                planned.record.chosen_info.clone(),
                0,
            ));
            cycles.push(planned.record);
        }
        let (traj, info, idx) = plan.as_mut().expect("plan exists after replanning");
        world.ego_lane_changing = lane_changing(&world.ego, info.as_ref(), map);
        steps.push(world.snapshot());
        let next = traj.states[*idx + 1];
        *idx += 1;
        events.extend(world.step(next, &reps, map));
    }
    world.ego_lane_changing = lane_changing(&world.ego, plan.as_ref().and_then(|p| p.1.as_ref()), map);
    steps.push(world.snapshot());

    Ok(SimTrace {
        scenario: scenario.name.clone(),
        dt: scenario.dt,
        steps,
        cycles,
        events,
    })
}

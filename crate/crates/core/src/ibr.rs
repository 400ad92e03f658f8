//! Iterative best response over fixed trajectory sets.
//!
//! Every agent keeps its candidate trajectories and only re-weights them.
//! Pairwise interaction scores, ego progress and ego comfort are computed
//! once into an [`InteractionTable`]; a sweep then visits the agents in
//! update order and applies `w ← w · exp(c · R)` to each trajectory, where
//! `R` is the interaction term (a weighted mean over each opponent's
//! trajectories) plus the ego-only progress and comfort terms. Agents updated
//! earlier in a sweep are seen by later agents with their fresh weights.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boxes_collide, within_clearance, Footprint, OrientedBox};
use crate::map::Polyline;
use crate::trajectory::{current_distribution, Distribution, Trajectory, WeightedBundle};

/// Exponent clamp for the multiplicative update.
pub const EXP_CLAMP: f64 = 50.0;

/// Profile-count limit for exhaustive pure-strategy enumeration.
pub const ORACLE_LIMIT: u128 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Collision penalty.
    pub u_c: f64,
    /// Proximity penalty.
    pub u_d: f64,
    /// Edge clearance (m) below which two trajectories are "too close".
    pub proximity_threshold: f64,
    /// Longitudinal progress weight.
    pub alpha: f64,
    /// Lateral progress weight.
    pub beta: f64,
    pub w_p: f64,
    pub w_c: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            u_c: -1.5,
            u_d: -1.5,
            proximity_threshold: 1.0,
            alpha: 0.19,
            beta: 0.1,
            w_p: 0.9,
            w_c: 0.15,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.u_c <= self.u_d
            && self.u_d <= 0.0
            && self.proximity_threshold > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.w_p >= 0.0
            && self.w_c >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid reward weights {self:?}")))
        }
    }

    /// Upper bound of any trajectory's reward.
    pub fn max_reward(&self) -> f64 {
        self.w_p * (self.alpha + self.beta) + self.w_c
    }
}

/// Kinematic limits for the binary comfort score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComfortLimits {
    pub max_lon_accel: f64,
    pub max_lat_accel: f64,
    pub max_jerk: f64,
}

impl Default for ComfortLimits {
    fn default() -> Self {
        Self {
            max_lon_accel: 2.4,
            max_lat_accel: 4.9,
            max_jerk: 4.13,
        }
    }
}

/// Interaction score between two time-aligned trajectories: `u_c` on any
/// overlap, else `u_d` when the clearance drops below the threshold, else 0.
pub fn pair_score(ti: &Trajectory, fi: Footprint, tj: &Trajectory, fj: Footprint, cfg: &RewardWeights) -> Result<f64> {
    ti.check_aligned(tj)?;
    let mut close = false;
    for (a, b) in ti.states.iter().zip(&tj.states) {
        let ba = OrientedBox::new(a.pose(), fi);
        let bb = OrientedBox::new(b.pose(), fj);
        if boxes_collide(&ba, &bb) {
            return Ok(cfg.u_c);
        }
        if !close && within_clearance(&ba, &bb, cfg.proximity_threshold) {
            close = true;
        }
    }
    Ok(if close { cfg.u_d } else { 0.0 })
}

/// Normalization context for ego progress: displacements are measured in
/// the frame of the route's target lane and divided by the bundle maxima.
#[derive(Debug, Clone)]
pub struct ProgressContext {
    reference: Polyline,
    max_lon: f64,
    max_lat: f64,
}

impl ProgressContext {
    pub fn new(reference: Polyline, ego_trajectories: &[Trajectory]) -> Self {
        let mut ctx = Self {
            reference,
            max_lon: 0.0,
            max_lat: 0.0,
        };
        for t in ego_trajectories {
            let (lon, lat) = ctx.displacements(t);
            ctx.max_lon = ctx.max_lon.max(lon);
            ctx.max_lat = ctx.max_lat.max(lat);
        }
        ctx
    }

    /// Forward displacement along the reference, and reduction of the
    /// lateral distance to it. Both are floored at zero.
    pub fn displacements(&self, t: &Trajectory) -> (f64, f64) {
        let a = self.reference.project([t.first().x, t.first().y]);
        let b = self.reference.project([t.last().x, t.last().y]);
        ((b.s - a.s).max(0.0), (a.d.abs() - b.d.abs()).max(0.0))
    }
}

/// `α · lon/lon_max + β · lat/lat_max`, each ratio clamped to [0, 1].
pub fn progress_reward(t: &Trajectory, ctx: &ProgressContext, cfg: &RewardWeights) -> f64 {
    let (lon, lat) = ctx.displacements(t);
    let ratio = |v: f64, max: f64| if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
    cfg.alpha * ratio(lon, ctx.max_lon) + cfg.beta * ratio(lat, ctx.max_lat)
}

/// 1 if finite-difference longitudinal acceleration and jerk stay within
/// limits over the whole trajectory, else 0.
pub fn comfort_reward(t: &Trajectory, limits: &ComfortLimits) -> f64 {
    let accels: Vec<f64> = t.states.windows(2).map(|w| (w[1].speed - w[0].speed) / t.dt).collect();
    let accel_ok = accels.iter().all(|a| a.abs() <= limits.max_lon_accel);
    let jerk_ok = accels.windows(2).all(|w| ((w[1] - w[0]) / t.dt).abs() <= limits.max_jerk);
    if accel_ok && jerk_ok {
        1.0
    } else {
        0.0
    }
}

/// Precomputed interaction scores for every cross-agent trajectory pair,
/// plus ego progress and comfort scores. Agent 0 is the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTable {
    sizes: Vec<usize>,
    /// Row-major `sizes[i] × sizes[j]` matrices for `i < j`.
    pairs: BTreeMap<(usize, usize), Vec<f64>>,
    ego_progress: Vec<f64>,
    ego_comfort: Vec<f64>,
}

impl InteractionTable {
    pub fn from_parts(
        sizes: Vec<usize>,
        pairs: BTreeMap<(usize, usize), Vec<f64>>,
        ego_progress: Vec<f64>,
        ego_comfort: Vec<f64>,
    ) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::invalid("every agent needs at least one trajectory"));
        }
        let n = sizes.len();
        for i in 0..n {
            for j in i + 1..n {
                let m = pairs
                    .get(&(i, j))
                    .ok_or_else(|| Error::invalid(format!("missing interaction matrix for pair ({i}, {j})")))?;
                if m.len() != sizes[i] * sizes[j] {
                    return Err(Error::invalid(format!(
                        "pair ({i}, {j}) matrix has {} entries, expected {}",
                        m.len(),
                        sizes[i] * sizes[j]
                    )));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("pair ({i}, {j}) has non-finite entries")));
                }
            }
        }
        if pairs.keys().any(|&(i, j)| i >= j || j >= n) {
            return Err(Error::invalid("interaction matrices must be keyed by (i, j) with i < j < N"));
        }
        if ego_progress.len() != sizes[0] || ego_comfort.len() != sizes[0] {
            return Err(Error::invalid("ego progress/comfort vectors must match the ego trajectory count"));
        }
        Ok(Self {
            sizes,
            pairs,
            ego_progress,
            ego_comfort,
        })
    }

    /// Evaluates all pair scores (in parallel) and the ego-only terms.
    pub fn build(
        bundles: &[WeightedBundle],
        progress: Option<&ProgressContext>,
        cfg: &RewardWeights,
        limits: &ComfortLimits,
    ) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::invalid("no bundles"));
        }
        let n = bundles.len();
        let keys: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let matrices = keys
            .par_iter()
            .map(|&(i, j)| {
                let (bi, bj) = (&bundles[i], &bundles[j]);
                bi.trajectories
                    .par_iter()
                    .map(|ti| {
                        bj.trajectories
                            .iter()
                            .map(|tj| pair_score(ti, bi.footprint, tj, bj.footprint, cfg))
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()
                    .map(|rows| ((i, j), rows.concat()))
            })
            .collect::<Result<Vec<_>>>()?;
        let ego = &bundles[0];
        let ego_progress = ego
            .trajectories
            .iter()
            .map(|t| progress.map_or(0.0, |ctx| progress_reward(t, ctx, cfg)))
            .collect();
        let ego_comfort = ego.trajectories.iter().map(|t| comfort_reward(t, limits)).collect();
        Self::from_parts(
            bundles.iter().map(WeightedBundle::len).collect(),
            matrices.into_iter().collect(),
            ego_progress,
            ego_comfort,
        )
    }

    pub fn num_agents(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Score of agent `i`'s trajectory `l` against agent `j`'s trajectory `m`.
    pub fn psi(&self, i: usize, l: usize, j: usize, m: usize) -> f64 {
        if i < j {
            self.pairs[&(i, j)][l * self.sizes[j] + m]
        } else {
            self.pairs[&(j, i)][m * self.sizes[i] + l]
        }
    }

    pub fn ego_progress(&self) -> &[f64] {
        &self.ego_progress
    }

    pub fn ego_comfort(&self) -> &[f64] {
        &self.ego_comfort
    }

    /// Progress and comfort contribution; non-zero for the ego only.
    pub fn own_terms(&self, i: usize, l: usize, cfg: &RewardWeights) -> f64 {
        if i == 0 {
            cfg.w_p * self.ego_progress[l] + cfg.w_c * self.ego_comfort[l]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    #[default]
    EgoFirst,
    EgoLast,
}

impl UpdateOrder {
    pub fn sequence(&self, n: usize) -> Vec<usize> {
        match self {
            UpdateOrder::EgoFirst => (0..n).collect(),
            UpdateOrder::EgoLast => (1..n).chain(std::iter::once(0)).collect(),
        }
    }
}

/// Counters for numerical safeguards triggered during sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub exp_clamped: usize,
    pub weights_floored: usize,
}

#[derive(Debug, Clone)]
pub struct GameState {
    pub agent_ids: Vec<String>,
    pub base_probs: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub table: InteractionTable,
    pub cfg: RewardWeights,
    pub confidences: Vec<f64>,
    pub order: UpdateOrder,
    pub iteration: usize,
    pub diagnostics: SweepDiagnostics,
}

impl GameState {
    /// State from bundles (ego first) and their precomputed table.
    pub fn from_bundles(
        bundles: &[WeightedBundle],
        table: InteractionTable,
        cfg: RewardWeights,
        confidences: Vec<f64>,
        order: UpdateOrder,
    ) -> Result<Self> {
        for b in bundles {
            b.validate()?;
        }
        Self::new(
            bundles.iter().map(|b| b.agent_id.clone()).collect(),
            bundles.iter().map(|b| b.base_probs.clone()).collect(),
            bundles.iter().map(|b| b.weights.clone()).collect(),
            table,
            cfg,
            confidences,
            order,
        )
    }

    pub fn new(
        agent_ids: Vec<String>,
        base_probs: Vec<Vec<f64>>,
        weights: Vec<Vec<f64>>,
        table: InteractionTable,
        cfg: RewardWeights,
        confidences: Vec<f64>,
        order: UpdateOrder,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = table.num_agents();
        if agent_ids.len() != n || base_probs.len() != n || weights.len() != n || confidences.len() != n {
            return Err(Error::invalid(format!(
                "game has {n} agents in its table but {} ids, {} base distributions, {} weight vectors, {} confidences",
                agent_ids.len(),
                base_probs.len(),
                weights.len(),
                confidences.len()
            )));
        }
        for i in 0..n {
            let m = table.sizes()[i];
            if base_probs[i].len() != m || weights[i].len() != m {
                return Err(Error::invalid(format!("agent {i} vectors do not match its {m} trajectories")));
            }
            crate::trajectory::validate_probabilities(&base_probs[i])?;
            if weights[i].iter().any(|w| !(*w > 0.0)) {
                return Err(Error::invalid(format!("agent {i} has non-positive weights")));
            }
            if !(confidences[i] >= 0.0 && confidences[i].is_finite()) {
                return Err(Error::invalid(format!("agent {i} confidence must be finite and >= 0")));
            }
        }
        Ok(Self {
            agent_ids,
            base_probs,
            weights,
            table,
            cfg,
            confidences,
            order,
            iteration: 0,
            diagnostics: SweepDiagnostics::default(),
        })
    }

    pub fn num_agents(&self) -> usize {
        self.weights.len()
    }

    /// Reward of agent `i`'s trajectory `l` under the current weights.
    pub fn total_reward(&self, i: usize, l: usize) -> Result<f64> {
        let n = self.num_agents();
        if i >= n || l >= self.table.sizes()[i] {
            return Err(Error::Index(format!("agent {i}, trajectory {l}")));
        }
        Ok(self.reward_unchecked(i, l))
    }

    fn reward_unchecked(&self, i: usize, l: usize) -> f64 {
        let mut distance = 0.0;
        for (j, wj) in self.weights.iter().enumerate() {
            if j == i {
                continue;
            }
            let weighted: f64 = wj.iter().enumerate().map(|(m, w)| self.table.psi(i, l, j, m) * w).sum();
            distance += weighted / wj.len() as f64;
        }
        distance + self.table.own_terms(i, l, &self.cfg)
    }

    pub fn rewards(&self, i: usize) -> Vec<f64> {
        (0..self.table.sizes()[i]).map(|l| self.reward_unchecked(i, l)).collect()
    }

    /// One Gauss-Seidel sweep in update order.
    pub fn sweep(&mut self) {
        for i in self.order.sequence(self.num_agents()) {
            let c = self.confidences[i];
            if c == 0.0 {
                continue;
            }
            let rewards = self.rewards(i);
            let mut diag = self.diagnostics;
            let w = &mut self.weights[i];
            for (wl, r) in w.iter_mut().zip(&rewards) {
                let mut arg = c * r;
                if arg.abs() > EXP_CLAMP {
                    arg = arg.clamp(-EXP_CLAMP, EXP_CLAMP);
                    diag.exp_clamped += 1;
                }
                *wl *= arg.exp();
            }
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            for wl in w.iter_mut() {
                *wl /= mean;
                if !(*wl >= f64::MIN_POSITIVE) {
                    *wl = f64::MIN_POSITIVE;
                    diag.weights_floored += 1;
                }
            }
            self.diagnostics = diag;
        }
        self.iteration += 1;
    }

    pub fn distribution(&self, i: usize) -> Distribution {
        current_distribution(&self.weights[i], &self.base_probs[i]).expect("weights and base probabilities are valid")
    }

    pub fn distributions(&self) -> Vec<Distribution> {
        (0..self.num_agents()).map(|i| self.distribution(i)).collect()
    }

    /// Most likely trajectory index of every agent.
    pub fn profile(&self) -> Vec<usize> {
        (0..self.num_agents()).map(|i| self.distribution(i).argmax()).collect()
    }

    /// Writes the weights back into bundles of the same shape.
    pub fn apply_to(&self, bundles: &mut [WeightedBundle]) {
        for (b, w) in bundles.iter_mut().zip(&self.weights) {
            b.weights.clone_from(w);
        }
    }
}

/// Returns `f(state)` after one sweep, leaving the input untouched.
pub fn ibr_sweep(state: &GameState) -> GameState {
    let mut next = state.clone();
    next.sweep();
    next
}

/// Per-iteration distributions: `history[k][i]` is agent `i` after `k` sweeps.
pub type IbrHistory = Vec<Vec<Distribution>>;

pub fn run_ibr(mut state: GameState, iterations: usize) -> (GameState, IbrHistory) {
    let mut history = Vec::with_capacity(iterations + 1);
    history.push(state.distributions());
    for _ in 0..iterations {
        state.sweep();
        history.push(state.distributions());
    }
    (state, history)
}

/// Payoff of agent `i` when every agent plays the pure strategy in `profile`.
pub fn pure_payoff(table: &InteractionTable, cfg: &RewardWeights, profile: &[usize], i: usize) -> f64 {
    let l = profile[i];
    let distance: f64 = (0..table.num_agents())
        .filter(|&j| j != i)
        .map(|j| table.psi(i, l, j, profile[j]))
        .sum();
    distance + table.own_terms(i, l, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub agent: usize,
    pub from: usize,
    pub to: usize,
    pub gain: f64,
}

/// Result of checking a pure profile for profitable unilateral deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub profile: Vec<usize>,
    pub payoffs: Vec<f64>,
    /// The largest profitable deviation, if any exceeds `epsilon`.
    pub violation: Option<Deviation>,
}

impl Certificate {
    pub fn is_equilibrium(&self) -> bool {
        self.violation.is_none()
    }
}

fn profile_count(table: &InteractionTable) -> u128 {
    table.sizes().iter().fold(1u128, |acc, &m| acc.saturating_mul(m as u128))
}

fn check_size(table: &InteractionTable) -> Result<()> {
    let profiles = profile_count(table);
    if profiles > ORACLE_LIMIT {
        return Err(Error::GameTooLarge {
            profiles,
            limit: ORACLE_LIMIT,
        });
    }
    Ok(())
}

/// Checks whether any agent gains more than `epsilon` by deviating
/// unilaterally from `profile`.
pub fn nash_oracle(table: &InteractionTable, cfg: &RewardWeights, profile: &[usize], epsilon: f64) -> Result<Certificate> {
    check_size(table)?;
    if profile.len() != table.num_agents() || profile.iter().zip(table.sizes()).any(|(l, m)| l >= m) {
        return Err(Error::Index(format!("profile {profile:?} does not fit sizes {:?}", table.sizes())));
    }
    let payoffs: Vec<f64> = (0..profile.len()).map(|i| pure_payoff(table, cfg, profile, i)).collect();
    let mut violation: Option<Deviation> = None;
    let mut trial = profile.to_vec();
    for i in 0..profile.len() {
        for alt in 0..table.sizes()[i] {
            if alt == profile[i] {
                continue;
            }
            trial[i] = alt;
            let gain = pure_payoff(table, cfg, &trial, i) - payoffs[i];
            if gain > epsilon && violation.as_ref().is_none_or(|v| gain > v.gain) {
                violation = Some(Deviation {
                    agent: i,
                    from: profile[i],
                    to: alt,
                    gain,
                });
            }
        }
        trial[i] = profile[i];
    }
    Ok(Certificate {
        profile: profile.to_vec(),
        payoffs,
        violation,
    })
}

/// All pure-strategy Nash equilibria, in lexicographic profile order.
pub fn pure_equilibria(table: &InteractionTable, cfg: &RewardWeights, epsilon: f64) -> Result<Vec<Vec<usize>>> {
    check_size(table)?;
    let sizes = table.sizes();
    let mut profile = vec![0usize; sizes.len()];
    let mut found = Vec::new();
    loop {
        if nash_oracle(table, cfg, &profile, epsilon)?.is_equilibrium() {
            found.push(profile.clone());
        }
        // Odometer increment, last agent fastest.
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return Ok(found);
            }
            k -= 1;
            profile[k] += 1;
            if profile[k] < sizes[k] {
                break;
            }
            profile[k] = 0;
        }
    }
}

//! Recursive Bayesian confidence in the game-theoretic update.
//!
//! For each non-ego agent we track the posterior probability that the
//! re-weighted (IBR) distribution explains its observed motion better than
//! the raw predictor. Each cycle the newly observed pose is scored against
//! the most likely trajectory of both distributions from the previous cycle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::trajectory::Trajectory;

/// Posterior clamp.
pub const POSTERIOR_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceConfig {
    /// Isotropic likelihood standard deviation (m).
    pub sigma: f64,
    /// Initial posterior.
    pub prior: f64,
    /// Fixed exponent scale used for the ego's own update.
    pub ego_confidence: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            prior: 0.5,
            ego_confidence: 1.0,
        }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::invalid(format!("prior must be in (0, 1), got {}", self.prior)));
        }
        if !(self.ego_confidence >= 0.0 && self.ego_confidence.is_finite()) {
            return Err(Error::invalid("ego confidence must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    pub posterior: f64,
    pub sigma: f64,
    pub prior0: f64,
    pub last_biber_rep: Option<Trajectory>,
    pub last_pred_rep: Option<Trajectory>,
    /// Updates skipped because both likelihoods underflowed.
    pub underflows: usize,
}

impl ConfidenceState {
    pub fn new(prior0: f64, sigma: f64) -> Result<Self> {
        ConfidenceConfig {
            sigma,
            prior: prior0,
            ego_confidence: 1.0,
        }
        .validate()?;
        Ok(Self {
            posterior: clamp_posterior(prior0),
            sigma,
            prior0,
            last_biber_rep: None,
            last_pred_rep: None,
            underflows: 0,
        })
    }

    pub fn from_config(cfg: &ConfidenceConfig) -> Result<Self> {
        Self::new(cfg.prior, cfg.sigma)
    }

    /// Stores this cycle's representatives for the next update.
    pub fn commit(&mut self, biber_rep: Trajectory, pred_rep: Trajectory) {
        self.last_biber_rep = Some(biber_rep);
        self.last_pred_rep = Some(pred_rep);
    }

    /// Scores `obs` observed at time `t` against the stored representatives.
    /// Without representatives there is no evidence and nothing changes.
    pub fn update(&mut self, obs: &Pose, t: f64) -> Result<()> {
        let (Some(b), Some(p)) = (&self.last_biber_rep, &self.last_pred_rep) else {
            return Ok(());
        };
        let lb = likelihood(obs, b, t, self.sigma)?;
        let lp = likelihood(obs, p, t, self.sigma)?;
        match posterior_update(self.posterior, lb, lp) {
            Some(post) => self.posterior = post,
            None => self.underflows += 1,
        }
        Ok(())
    }

    pub fn confidence(&self) -> f64 {
        self.posterior
    }
}

fn clamp_posterior(p: f64) -> f64 {
    p.clamp(POSTERIOR_EPS, 1.0 - POSTERIOR_EPS)
}

/// Isotropic 2D Gaussian density of the observed position around the
/// representative's position at `t`.
pub fn likelihood(obs: &Pose, rep: &Trajectory, t: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let s = rep.state_at(t)?;
    let d2 = (obs.x - s.x).powi(2) + (obs.y - s.y).powi(2);
    let var = sigma * sigma;
    Ok((-d2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var))
}

/// One clamped Bayes step. `None` when both likelihoods are zero.
pub fn posterior_update(p: f64, lb: f64, lp: f64) -> Option<f64> {
    let num = lb * p;
    let den = num + lp * (1.0 - p);
    if den > 0.0 {
        Some(clamp_posterior(num / den))
    } else {
        None
    }
}

/// Functional form of [`ConfidenceState::update`].
pub fn bayes_update(state: &ConfidenceState, obs: &Pose, t: f64) -> Result<ConfidenceState> {
    let mut next = state.clone();
    next.update(obs, t)?;
    Ok(next)
}

pub fn confidence(state: &ConfidenceState) -> f64 {
    state.confidence()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::State;
    use proptest::prelude::*;

    fn line(x0: f64, v: f64) -> Trajectory {
        let states = (0..41).map(|k| State::new(Pose::new(x0 + v * 0.1 * k as f64, 0.0, 0.0), v)).collect();
        Trajectory::new(0.0, 0.1, states).unwrap()
    }

    #[test]
    fn likelihood_examples() {
        let rep = line(0.0, 0.0);
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 0.25);
        assert!((likelihood(&Pose::new(0.0, 0.0, 0.0), &rep, 1.0, 0.5).unwrap() - peak).abs() < 1e-12);
        let at_sigma = likelihood(&Pose::new(0.0, 0.5, 0.0), &rep, 1.0, 0.5).unwrap();
        assert!((at_sigma - peak * (-0.5f64).exp()).abs() < 1e-12);
        let one_m = likelihood(&Pose::new(1.0, 0.0, 0.0), &rep, 1.0, 0.5).unwrap();
        assert!((one_m - 0.08615).abs() < 1e-5);
        assert!(likelihood(&Pose::new(0.0, 0.0, 0.0), &rep, 4.5, 0.5).is_err());
    }

    #[test]
    fn bayes_examples() {
        assert_eq!(posterior_update(0.5, 1.0, 1.0), Some(0.5));
        assert!((posterior_update(0.5, 2.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(posterior_update(0.5, 1.0, 0.0), Some(1.0 - POSTERIOR_EPS));
        assert_eq!(posterior_update(0.5, 0.0, 0.0), None);
    }

    #[test]
    fn fresh_state_reports_prior() {
        let s = ConfidenceState::new(0.5, 0.5).unwrap();
        assert_eq!(confidence(&s), 0.5);
        assert!(ConfidenceState::new(0.5, 0.0).is_err());
        assert!(ConfidenceState::new(1.0, 0.5).is_err());
    }

    #[test]
    fn matching_observations_raise_confidence() {
        let mut s = ConfidenceState::new(0.5, 0.5).unwrap();
        let mut prev = s.confidence();
        for k in 1..10 {
            s.commit(line(0.0, 10.0), line(0.0, 12.0));
            let t = 0.1 * k as f64;
            s.update(&Pose::new(10.0 * t, 0.0, 0.0), t).unwrap();
            assert!(s.confidence() > prev || s.confidence() == 1.0 - POSTERIOR_EPS);
            prev = s.confidence();
        }
    }

    #[test]
    fn equidistant_observations_keep_prior() {
        let mut s = ConfidenceState::new(0.5, 0.5).unwrap();
        s.commit(line(0.0, 10.0), line(0.0, 12.0));
        for k in 1..20 {
            let t = 0.1 * k as f64;
            s.update(&Pose::new(11.0 * t, if k % 2 == 0 { 0.3 } else { -0.3 }, 0.0), t).unwrap();
        }
        assert!((s.confidence() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn both_underflow_is_flagged() {
        let mut s = ConfidenceState::new(0.5, 0.5).unwrap();
        s.commit(line(0.0, 0.0), line(0.0, 0.0));
        s.update(&Pose::new(1000.0, 0.0, 0.0), 0.1).unwrap();
        assert_eq!(s.confidence(), 0.5);
        assert_eq!(s.underflows, 1);
    }

    proptest! {
        #[test]
        fn posterior_stays_clamped_and_monotone(p in 0.001f64..0.999, lb in 0.0f64..10.0, lp in 0.0f64..10.0) {
            prop_assume!(lb + lp > 0.0);
            let p = clamp_posterior(p);
            let q = posterior_update(p, lb, lp).unwrap();
            prop_assert!((POSTERIOR_EPS..=1.0 - POSTERIOR_EPS).contains(&q));
            let unclamped = lb * p / (lb * p + lp * (1.0 - p));
            if lb > lp { prop_assert!(unclamped > p); }
            if lb < lp { prop_assert!(unclamped < p); }
            if lb == lp { prop_assert!((q - p).abs() < 1e-15); }
        }

        #[test]
        fn common_scale_is_irrelevant(p in 0.01f64..0.99, lb in 0.01f64..10.0, lp in 0.01f64..10.0, k in 0.001f64..1000.0) {
            let a = posterior_update(p, lb, lp).unwrap();
            let b = posterior_update(p, lb * k, lp * k).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

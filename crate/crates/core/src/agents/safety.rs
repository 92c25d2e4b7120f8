//! Safe action sets, projection onto them, and the Lagrange multiplier.

use serde::{Deserialize, Serialize};

use crate::bounds::LipschitzConstants;
use crate::env::{action_distance, Action, EpisodeLog};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SafeActionSet {
    /// Members in action order.
    pub members: Vec<Action>,
    /// Bound per action, aligned with the action set passed in.
    pub ell_values: Vec<f64>,
}

impl SafeActionSet {
    pub fn contains(&self, a: Action) -> bool {
        self.members.contains(&a)
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Actions with `ell(a) - L1 { L2 (T - t) + (L3 - 1) x_a } >= z`, where
/// `x_a = d_A(a, pi_sharp)`.
pub fn safe_action_set(
    t: usize,
    horizon: usize,
    actions: &[Action],
    ell: &[f64],
    pi_sharp: Action,
    c: &LipschitzConstants,
    z: f64,
) -> SafeActionSet {
    let remaining = horizon.saturating_sub(t) as f64;
    let members = actions
        .iter()
        .zip(ell)
        .filter(|(&a, &l)| {
            let x = action_distance(&a, &pi_sharp);
            l - c.l1 * (c.l2 * remaining + (c.l3 - 1.0) * x) >= z
        })
        .map(|(&a, _)| a)
        .collect();
    SafeActionSet {
        members,
        ell_values: ell.to_vec(),
    }
}

/// Projects `preferred` onto the safe set under the discrete action metric.
///
/// Returns `preferred` when safe, otherwise `pi_sharp` when safe, otherwise
/// the first member in action order. An empty set yields `pi_sharp` with the
/// fallback flag raised.
pub fn select_action(preferred: Action, set: &SafeActionSet, pi_sharp: Action) -> (Action, bool) {
    if set.contains(preferred) {
        (preferred, false)
    } else if set.contains(pi_sharp) {
        (pi_sharp, false)
    } else if let Some(&first) = set.members.first() {
        (first, false)
    } else {
        (pi_sharp, true)
    }
}

/// `min_t (ell_t - z)` over the executed steps.
pub fn episode_margin(log: &EpisodeLog, z: f64) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::domain("episode log is empty"));
    }
    Ok(log.trajectory.iter().map(|r| r.ell - z).fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: f64,
    pub kappa: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for LagrangeState {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            kappa: 1.0,
            lambda_min: 1e-3,
            lambda_max: 1e3,
        }
    }
}

impl LagrangeState {
    pub fn new(lambda: f64, kappa: f64, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min >= 0.0 && lambda_min <= lambda_max) || !lambda_max.is_finite() {
            return Err(Error::Config(format!(
                "invalid lambda bounds [{lambda_min}, {lambda_max}]"
            )));
        }
        if !(kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
        }
        if !(lambda_min..=lambda_max).contains(&lambda) {
            return Err(Error::Config(format!(
                "lambda {lambda} outside [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(Self {
            lambda,
            kappa,
            lambda_min,
            lambda_max,
        })
    }
}

/// `lambda * exp(-kappa * margin)`, clipped to the bounds. A positive margin
/// relaxes the penalty and a negative one tightens it.
pub fn update_multiplier(state: LagrangeState, margin: f64) -> LagrangeState {
    let raw = state.lambda * (-state.kappa * margin).exp();
    let lambda = if raw.is_nan() {
        state.lambda_max
    } else {
        raw.clamp(state.lambda_min, state.lambda_max)
    };
    LagrangeState { lambda, ..state }
}

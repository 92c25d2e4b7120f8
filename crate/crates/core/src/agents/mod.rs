//! LoBiSaRL and the four baseline agents.

mod linear;
mod planning;
mod safety;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{combined_lower, derive_constants, threshold_z, LipschitzConstants};
use crate::env::{action_distance, Action, Cell, EpisodeLog, FeatureMap, FeatureSpan, GridWorld, StepRecord};
use crate::error::{Error, Result};
use crate::glm::{fit_dataset_constrained, mu_inverse, ConfidenceParams, GlmEstimate, MleOptions, SafetyDataset};

pub use linear::{fit_least_squares, linear_baseline_bound};
pub use planning::{
    deviation_coefficient, plan_penalized, plan_penalized_masked, value_iteration, EmpiricalModel, Policy,
    TransitionModel, ValueFunctions,
};
pub use safety::{episode_margin, safe_action_set, select_action, update_multiplier, LagrangeState, SafeActionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentKind {
    Random,
    Unsafe,
    Linear,
    Instantaneous,
    LoBiSaRL,
}

impl AgentKind {
    /// Reporting order.
    pub const ALL: [AgentKind; 5] = [
        AgentKind::Random,
        AgentKind::Unsafe,
        AgentKind::Linear,
        AgentKind::Instantaneous,
        AgentKind::LoBiSaRL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Random => "Random",
            AgentKind::Unsafe => "Unsafe",
            AgentKind::Linear => "Linear",
            AgentKind::Instantaneous => "Instantaneous",
            AgentKind::LoBiSaRL => "LoBiSaRL",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn uses_glm(self) -> bool {
        matches!(self, AgentKind::Instantaneous | AgentKind::LoBiSaRL)
    }

    fn learns_safety(self) -> bool {
        self.uses_glm() || self == AgentKind::Linear
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown agent {s:?}")))
    }
}

/// Learning and safety settings shared by all agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Long-term failure probability `delta`.
    pub delta: f64,
    /// Confidence-set failure probability `Delta`.
    pub delta_cap: f64,
    pub sigma: f64,
    /// Confidence width used when `theoretical_beta` is off.
    pub beta: f64,
    /// Use the closed-form width from `sigma`, `xi` and `Delta` instead of `beta`.
    pub theoretical_beta: bool,
    pub ridge: f64,
    pub mle_tol: f64,
    pub mle_max_iter: usize,
    pub l_phi: f64,
    pub lambda_init: f64,
    pub kappa: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub known_dynamics: bool,
    /// Pseudo-counts behind the slip-template prior of the empirical model.
    pub prior_strength: f64,
    /// Largest feature component dropped by the reduced span coordinates.
    pub span_tolerance: f64,
    pub linear_ridge: f64,
    /// Probability threshold of the linear baseline.
    pub linear_threshold: f64,
    /// Restrict planning to pairs whose bound already clears the threshold.
    pub safe_planning: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            delta_cap: 0.05,
            sigma: 0.5,
            beta: 0.11,
            theoretical_beta: false,
            ridge: 1e-6,
            mle_tol: 1e-8,
            mle_max_iter: 100,
            l_phi: 0.13,
            lambda_init: 1.0,
            kappa: 1.0,
            lambda_min: 1e-3,
            lambda_max: 1e3,
            known_dynamics: false,
            prior_strength: 5.0,
            span_tolerance: 1e-6,
            linear_ridge: 1.0,
            linear_threshold: 0.5,
            safe_planning: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("delta", self.delta), ("delta_cap", self.delta_cap)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0,1), got {v}"));
            }
        }
        if !(self.sigma >= 0.0) || !(self.beta >= 0.0) {
            return bad("sigma and beta must be nonnegative".into());
        }
        if !(self.ridge >= 0.0) || !(self.linear_ridge > 0.0) {
            return bad("ridge must be nonnegative and linear_ridge positive".into());
        }
        if !(self.mle_tol > 0.0) || self.mle_max_iter == 0 {
            return bad("mle_tol must be positive and mle_max_iter at least 1".into());
        }
        if !(self.l_phi > 0.0) {
            return bad(format!("l_phi must be positive, got {}", self.l_phi));
        }
        if !(self.prior_strength > 0.0) || !(self.span_tolerance >= 0.0) {
            return bad("prior_strength must be positive and span_tolerance nonnegative".into());
        }
        if !(self.linear_threshold > 0.0 && self.linear_threshold < 1.0) {
            return bad(format!(
                "linear_threshold must lie in (0,1), got {}",
                self.linear_threshold
            ));
        }
        self.lagrange().map(|_| ())
    }

    pub fn lagrange(&self) -> Result<LagrangeState> {
        LagrangeState::new(self.lambda_init, self.kappa, self.lambda_min, self.lambda_max)
    }

    fn mle_options(&self) -> MleOptions {
        MleOptions {
            ridge: self.ridge,
            tol: self.mle_tol,
            max_iter: self.mle_max_iter,
        }
    }
}

/// Constants an agent derives from a world before learning starts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafetyConstants {
    pub lipschitz: LipschitzConstants,
    /// Long-term threshold with `mu(z)^T = 1 - delta`.
    pub z: f64,
    /// Single-step threshold with `mu(z) = 1 - delta`.
    pub z_instant: f64,
    pub beta: f64,
    /// Ground-truth predictor of the conservative pair at the start.
    pub f_sharp_start: f64,
}

impl SafetyConstants {
    pub fn for_world(world: &GridWorld, cfg: &AgentConfig) -> Result<Self> {
        let (d_bar, eta) = world.certify_dynamics_constants();
        let m = world.feature_dim();
        let lipschitz = derive_constants(cfg.l_phi, world.conservative_lipschitz(), eta, d_bar, m)?;
        let beta = if cfg.theoretical_beta {
            ConfidenceParams::for_dimension(m, cfg.sigma, cfg.delta_cap)?.beta
        } else {
            cfg.beta
        };
        Ok(Self {
            lipschitz,
            z: threshold_z(cfg.delta, world.horizon())?,
            z_instant: mu_inverse(1.0 - cfg.delta)?,
            beta,
            f_sharp_start: world.f_sharp_start(),
        })
    }
}

/// Mutable learning state of one agent on one world.
pub struct Agent {
    kind: AgentKind,
    cfg: AgentConfig,
    consts: SafetyConstants,
    features: Arc<FeatureMap>,
    span: Arc<FeatureSpan>,
    actions: Vec<Action>,
    /// Conservative action position per cell.
    sharp: Vec<usize>,
    known_model: Option<TransitionModel>,
    empirical: EmpiricalModel,
    dataset: SafetyDataset,
    estimate: Option<GlmEstimate>,
    /// Pessimistic predictor per pair index.
    lower: Vec<f64>,
    lagrange: LagrangeState,
    episodes: usize,
}

impl Agent {
    /// Creates an agent and seeds its safety data with `initial` samples.
    pub fn new(
        kind: AgentKind,
        world: &GridWorld,
        cfg: &AgentConfig,
        initial: &[(Cell, Action, bool)],
    ) -> Result<Self> {
        cfg.validate()?;
        let consts = SafetyConstants::for_world(world, cfg)?;
        let features = world.feature_map().clone();
        let actions = world.actions().to_vec();
        let sharp = (0..world.cell_count())
            .map(|i| {
                let a = world.conservative_policy(world.cell_at(i));
                actions
                    .iter()
                    .position(|&b| b == a)
                    .expect("conservative action is in the action set")
            })
            .collect();
        let truth = TransitionModel::from_world(world);
        let empirical = EmpiricalModel::new(truth.clone(), cfg.prior_strength)?;
        let span = features.span(cfg.span_tolerance);
        let dim = if kind.learns_safety() { span.rank() } else { 0 };
        let mut agent = Self {
            kind,
            cfg: cfg.clone(),
            consts,
            features,
            span,
            actions,
            sharp,
            known_model: cfg.known_dynamics.then_some(truth),
            empirical,
            dataset: SafetyDataset::new(dim),
            estimate: None,
            lower: Vec::new(),
            lagrange: cfg.lagrange()?,
            episodes: 0,
        };
        for &(s, a, label) in initial {
            agent.record_label(world.pair_index(s, a)?, label)?;
        }
        Ok(agent)
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn constants(&self) -> &SafetyConstants {
        &self.consts
    }

    pub fn lagrange(&self) -> LagrangeState {
        self.lagrange
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Number of safety observations collected so far.
    pub fn observations(&self) -> usize {
        self.dataset.len()
    }

    /// Current fitted safety model, if any.
    pub fn estimate(&self) -> Option<&GlmEstimate> {
        self.estimate.as_ref()
    }

    /// Pessimistic predictor per pair from the latest refit.
    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    /// Threshold the agent's own bound is compared with.
    pub fn threshold(&self) -> f64 {
        match self.kind {
            AgentKind::LoBiSaRL => self.consts.z,
            AgentKind::Instantaneous => self.consts.z_instant,
            AgentKind::Linear => self.cfg.linear_threshold,
            AgentKind::Random | AgentKind::Unsafe => f64::NAN,
        }
    }

    fn record_label(&mut self, pair: usize, label: bool) -> Result<()> {
        if self.kind.learns_safety() {
            let coord = self.span.coords().column(pair);
            self.dataset.push_keyed(pair as u64, coord.as_slice(), label)?;
        }
        Ok(())
    }

    /// Refits the safety model and recomputes the per-pair lower bounds.
    fn refit(&mut self) -> Result<()> {
        let radius = (self.features.dim() as f64).sqrt();
        let (estimate, width) = match self.kind {
            AgentKind::Linear => (
                fit_least_squares(&self.dataset, self.cfg.linear_ridge)?,
                self.consts.beta,
            ),
            _ => {
                let warm = self.estimate.as_ref().map(|e| (e.weights(), e.penalty()));
                let est = fit_dataset_constrained(&self.dataset, &self.cfg.mle_options(), radius, warm)?;
                (est, self.consts.beta)
            }
        };
        let coords = self.span.coords();
        let pred = coords.tr_mul(estimate.weights());
        self.lower = if width == 0.0 {
            pred.iter().copied().collect()
        } else {
            let norms = estimate.weighted_norms(coords)?;
            pred.iter().zip(norms).map(|(p, n)| p - width * n).collect()
        };
        self.estimate = Some(estimate);
        Ok(())
    }

    fn planning_model(&self) -> TransitionModel {
        match &self.known_model {
            Some(m) => m.clone(),
            None => self.empirical.estimate(),
        }
    }

    fn plan(&self, world: &GridWorld) -> Result<Option<Policy>> {
        let horizon = world.horizon();
        let model = self.planning_model();
        let reward = world.reward_table();
        let k = self.actions.len();
        let c = &self.consts.lipschitz;
        match self.kind {
            AgentKind::Random => Ok(None),
            AgentKind::Unsafe => value_iteration(&model, reward, horizon).map(|r| Some(r.1)),
            AgentKind::Instantaneous | AgentKind::Linear => {
                let threshold = self.threshold();
                let safe = self.cfg.safe_planning;
                plan_penalized_masked(&model, reward, 0.0, &self.sharp, c, horizon, |_, s, a| {
                    !safe || self.lower[s * k + a] >= threshold
                })
                .map(Some)
            }
            AgentKind::LoBiSaRL => {
                let z = self.consts.z;
                let safe = self.cfg.safe_planning;
                plan_penalized_masked(
                    &model,
                    reward,
                    self.lagrange.lambda,
                    &self.sharp,
                    c,
                    horizon,
                    |t, s, a| {
                        let x = if a == self.sharp[s] { 0.0 } else { 1.0 };
                        let remaining = (horizon - t) as f64;
                        !safe || self.lower[s * k + a] - c.l1 * (c.l2 * remaining + (c.l3 - 1.0) * x) >= z
                    },
                )
                .map(Some)
            }
        }
    }

    /// Bound and safe set for LoBiSaRL at step `t` given past deviations.
    fn lobisarl_set(&self, t: usize, horizon: usize, cell: usize, past: f64) -> SafeActionSet {
        let c = &self.consts.lipschitz;
        let k = self.actions.len();
        let sharp = self.actions[self.sharp[cell]];
        let ell: Vec<f64> = self
            .actions
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let x = action_distance(&a, &sharp);
                let lip = self.consts.f_sharp_start - c.l1 * (c.l2 * t as f64 + c.l3 * past + x);
                combined_lower(self.lower[cell * k + j], lip)
            })
            .collect();
        let mut set = safe_action_set(t, horizon, &self.actions, &ell, sharp, c, self.consts.z);
        if t == 1 {
            // The schedule fixes x_1 = 0.
            set.members.retain(|&a| a == sharp);
        }
        set
    }

    /// Runs one episode: refit, plan, roll out, learn.
    pub fn run_episode<R: Rng + ?Sized>(&mut self, world: &GridWorld, rng: &mut R) -> Result<EpisodeLog> {
        if self.kind.learns_safety() {
            self.refit()?;
        }
        let policy = self.plan(world)?;
        let horizon = world.horizon();
        let k = self.actions.len();
        let mut log = EpisodeLog::new();
        let mut s = world.start();
        let mut past = 0.0;
        for t in 1..=horizon {
            let cell = world.cell_index(s);
            let sharp = self.actions[self.sharp[cell]];
            let preferred = match (&policy, self.kind) {
                (Some(p), _) => self.actions[p.action(t, cell)],
                (None, _) => self.actions[rng.random_range(0..k)],
            };
            let (action, ell, fallback) = match self.kind {
                AgentKind::Random | AgentKind::Unsafe => (preferred, f64::NAN, false),
                AgentKind::Instantaneous | AgentKind::Linear => {
                    let ell = self.lower[cell * k..(cell + 1) * k].to_vec();
                    let threshold = self.threshold();
                    let members = self
                        .actions
                        .iter()
                        .zip(&ell)
                        .filter(|(_, &l)| l >= threshold)
                        .map(|(&a, _)| a)
                        .collect();
                    let set = SafeActionSet {
                        members,
                        ell_values: ell,
                    };
                    let (a, fb) = select_action(preferred, &set, sharp);
                    let pos = self.actions.iter().position(|&b| b == a).expect("action in set");
                    (a, set.ell_values[pos], fb)
                }
                AgentKind::LoBiSaRL => {
                    let set = self.lobisarl_set(t, horizon, cell, past);
                    let (a, fb) = select_action(preferred, &set, sharp);
                    let pos = self.actions.iter().position(|&b| b == a).expect("action in set");
                    (a, set.ell_values[pos], fb)
                }
            };
            let x = action_distance(&action, &sharp);
            let outcome = world.step(s, action, rng)?;
            let pair = world.pair_index(s, action)?;
            log.push(StepRecord {
                t,
                state: s,
                action,
                reward: outcome.reward,
                safety_label: outcome.safety_label,
                ell,
                x_t: x,
                fallback,
            })?;
            self.record_label(pair, outcome.safety_label)?;
            let pos = pair % k;
            self.empirical.observe(cell, pos, world.cell_index(outcome.next_state));
            past += x;
            s = outcome.next_state;
        }
        if self.kind == AgentKind::LoBiSaRL {
            let margin = episode_margin(&log, self.consts.z)?;
            self.lagrange = update_multiplier(self.lagrange, margin);
        }
        self.episodes += 1;
        Ok(log)
    }

    /// Smallest `ell - threshold` over an episode; NaN for agents without a bound.
    pub fn margin(&self, log: &EpisodeLog) -> Result<f64> {
        match self.kind {
            AgentKind::Random | AgentKind::Unsafe => Ok(f64::NAN),
            _ => episode_margin(log, self.threshold()),
        }
    }

    /// Weights of the current safety model lifted to the full feature space.
    pub fn full_weights(&self) -> Option<DVector<f64>> {
        let est = self.estimate.as_ref()?;
        let lifted = self.span.lift(est.weights().as_slice());
        Some(DVector::from_vec(lifted))
    }
}

/// Runs one episode of `agent` on `world`.
pub fn run_agent_episode<R: Rng + ?Sized>(agent: &mut Agent, world: &GridWorld, rng: &mut R) -> Result<EpisodeLog> {
    agent.run_episode(world, rng)
}

//! Seeded grid-world CMDP: slip dynamics, Bernoulli safety labels, the
//! conservative policy and constant certificates.

mod features;
mod generate;
mod io;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::MetricSpec;
use crate::error::{Error, Result};
use crate::glm::{mu, FeatureVector, SafetyObservation};

pub use features::{FeatureMap, FeatureParams, FeatureSpan, PairDomain};
pub use generate::{GenerationConfig, Generator};
pub use io::{read_world, write_world, WorldFile};

/// Grid actions in their fixed tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Right,
    Down,
    Left,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Right, Action::Down, Action::Left, Action::Stay];
    pub const COMPASS: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    /// Cell displacement `(dx, dy)`; `Up` increases `y`.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Action::Up => (0, 1),
            Action::Right => (1, 0),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Stay => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Right => "right",
            Action::Down => "down",
            Action::Left => "left",
            Action::Stay => "stay",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Manhattan distance in cell units.
pub fn state_distance(a: &Cell, b: &Cell) -> f64 {
    (a.x.abs_diff(b.x) + a.y.abs_diff(b.y)) as f64
}

/// Discrete metric: 0 for equal actions, 1 otherwise.
pub fn action_distance(a: &Action, b: &Action) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

pub fn grid_metrics() -> MetricSpec<Cell, Action> {
    MetricSpec {
        state: state_distance,
        action: action_distance,
    }
}

/// Result of one environment transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: Cell,
    pub reward: f64,
    /// `true` when the executed pair was observed safe.
    pub safety_label: bool,
    pub was_slip: bool,
}

/// One executed step of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state: Cell,
    pub action: Action,
    pub reward: f64,
    pub safety_label: bool,
    /// Pessimistic bound recorded for the executed pair.
    pub ell: f64,
    pub x_t: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub trajectory: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a step; timestamps must strictly increase.
    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.trajectory.last() {
            if record.t <= last.t {
                return Err(Error::domain(format!(
                    "step {} does not follow step {}",
                    record.t, last.t
                )));
            }
        }
        self.trajectory.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.trajectory.iter().map(|r| r.reward).sum()
    }

    pub fn unsafe_count(&self) -> usize {
        self.trajectory.iter().filter(|r| !r.safety_label).count()
    }

    pub fn fallback_count(&self) -> usize {
        self.trajectory.iter().filter(|r| r.fallback).count()
    }
}

/// A generated grid-world instance. Immutable after construction.
#[derive(Clone, Debug)]
pub struct GridWorld {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) walls: Vec<bool>,
    pub(crate) reward: Vec<f64>,
    pub(crate) w_star: Vec<f64>,
    pub(crate) slip: f64,
    pub(crate) stay_slips: bool,
    pub(crate) s1: Cell,
    pub(crate) horizon: usize,
    pub(crate) seed: u64,
    pub(crate) rejections: usize,
    pub(crate) features: Arc<FeatureMap>,
    pub(crate) f_star: Vec<f64>,
}

impl GridWorld {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        features: Arc<FeatureMap>,
        walls: Vec<bool>,
        reward: Vec<f64>,
        w_star: Vec<f64>,
        slip: f64,
        stay_slips: bool,
        s1: Cell,
        horizon: usize,
        seed: u64,
        rejections: usize,
    ) -> Result<Self> {
        let (width, height) = (features.width(), features.height());
        let pairs = features.pair_count();
        if walls.len() != width * height || reward.len() != pairs || w_star.len() != features.dim() {
            return Err(Error::Config(
                "world arrays do not match the grid and feature sizes".into(),
            ));
        }
        if !(slip > 0.0 && slip <= 1.0) {
            return Err(Error::Config(format!("slip must lie in (0,1], got {slip}")));
        }
        if s1.x >= width || s1.y >= height || walls[s1.y * width + s1.x] {
            return Err(Error::Config(format!("start cell {s1} is outside the grid or a wall")));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if reward.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("rewards must lie in [0,1]".into()));
        }
        let f_star = (0..pairs)
            .map(|i| features.row(i).iter().zip(&w_star).map(|(a, b)| a * b).sum())
            .collect();
        Ok(Self {
            width,
            height,
            walls,
            reward,
            w_star,
            slip,
            stay_slips,
            s1,
            horizon,
            seed,
            rejections,
            features,
            f_star,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn stay_slips(&self) -> bool {
        self.stay_slips
    }

    pub fn start(&self) -> Cell {
        self.s1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of candidate instances discarded during generation.
    pub fn rejections(&self) -> usize {
        self.rejections
    }

    pub fn actions(&self) -> &[Action] {
        self.features.actions()
    }

    pub fn stay_enabled(&self) -> bool {
        self.actions().contains(&Action::Stay)
    }

    pub fn feature_map(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn w_star(&self) -> &[f64] {
        &self.w_star
    }

    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls[self.cell_index(c)]
    }

    pub fn action_position(&self, a: Action) -> Option<usize> {
        self.actions().iter().position(|&b| b == a)
    }

    pub fn pair_index(&self, s: Cell, a: Action) -> Result<usize> {
        self.features.pair_index(s, a)
    }

    pub fn features(&self, s: Cell, a: Action) -> Result<FeatureVector> {
        self.features.features(s, a)
    }

    pub fn reward(&self, s: Cell, a: Action) -> Result<f64> {
        Ok(self.reward[self.pair_index(s, a)?])
    }

    /// Rewards indexed by pair index.
    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    /// Ground-truth linear predictor `<phi(s,a), w_star>`.
    pub fn f_star(&self, s: Cell, a: Action) -> Result<f64> {
        Ok(self.f_star[self.pair_index(s, a)?])
    }

    /// Ground-truth predictor indexed by pair index.
    pub fn f_star_table(&self) -> &[f64] {
        &self.f_star
    }

    /// Predictor of the conservative action at the start cell.
    pub fn f_sharp_start(&self) -> f64 {
        let a = self.conservative_policy(self.s1);
        self.f_star[self.features.pair_index(self.s1, a).expect("start cell is in bounds")]
    }

    fn check_pair(&self, s: Cell, a: Action) -> Result<()> {
        if !self.in_bounds(s) {
            return Err(Error::domain(format!(
                "cell {s} outside the {}x{} grid",
                self.width, self.height
            )));
        }
        if self.action_position(a).is_none() {
            return Err(Error::domain(format!("action {a} is not in the action set")));
        }
        Ok(())
    }

    /// Cell reached by attempting `direction` from `s`; walls and the
    /// boundary absorb the move.
    pub fn attempt(&self, s: Cell, direction: Action) -> Cell {
        let (dx, dy) = direction.offset();
        let nx = s.x as i64 + dx;
        let ny = s.y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            return s;
        }
        let next = Cell::new(nx as usize, ny as usize);
        if self.is_wall(next) {
            s
        } else {
            next
        }
    }

    /// Directions taken by slip moves under `a`.
    fn residual_directions(&self, a: Action) -> Vec<Action> {
        match a {
            Action::Stay if !self.stay_slips => Vec::new(),
            Action::Stay => Action::COMPASS.to_vec(),
            _ => Action::COMPASS.iter().copied().filter(|&d| d != a).collect(),
        }
    }

    /// Outcome distribution of `(s, a)` as `(direction, probability)` pairs
    /// before wall absorption.
    fn outcome_directions(&self, a: Action) -> Vec<(Action, f64, bool)> {
        let residual = self.residual_directions(a);
        if residual.is_empty() {
            return vec![(a, 1.0, false)];
        }
        let each = (1.0 - self.slip) / residual.len() as f64;
        let mut out = vec![(a, self.slip, false)];
        out.extend(residual.into_iter().map(|d| (d, each, true)));
        out
    }

    /// Exact next-state distribution, merged over equal cells and sorted by
    /// cell index. Zero-probability outcomes are dropped.
    pub fn transition_support(&self, s: Cell, a: Action) -> Result<Vec<(Cell, f64)>> {
        self.check_pair(s, a)?;
        let mut out: Vec<(Cell, f64)> = Vec::with_capacity(5);
        for (d, p, _) in self.outcome_directions(a) {
            if p <= 0.0 {
                continue;
            }
            let next = self.attempt(s, d);
            match out.iter_mut().find(|(c, _)| *c == next) {
                Some(entry) => entry.1 += p,
                None => out.push((next, p)),
            }
        }
        out.sort_by_key(|(c, _)| self.cell_index(*c));
        Ok(out)
    }

    /// Samples one transition and its safety label.
    pub fn step<R: Rng + ?Sized>(&self, s: Cell, a: Action, rng: &mut R) -> Result<StepOutcome> {
        self.check_pair(s, a)?;
        let outcomes = self.outcome_directions(a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = outcomes[0];
        for &o in &outcomes {
            acc += o.1;
            if u < acc {
                chosen = o;
                break;
            }
        }
        let idx = self.pair_index(s, a)?;
        let label = rng.random::<f64>() < mu(self.f_star[idx]);
        Ok(StepOutcome {
            next_state: self.attempt(s, chosen.0),
            reward: self.reward[idx],
            safety_label: label,
            was_slip: chosen.2,
        })
    }

    /// Expected Manhattan displacement of `(s, a)`.
    pub fn expected_displacement(&self, s: Cell, a: Action) -> f64 {
        self.outcome_directions(a)
            .into_iter()
            .map(|(d, p, _)| p * state_distance(&s, &self.attempt(s, d)))
            .sum()
    }

    /// `stay` when available; otherwise the action with the smallest
    /// expected displacement, ties broken by action order.
    pub fn conservative_policy(&self, s: Cell) -> Action {
        if self.stay_enabled() {
            return Action::Stay;
        }
        let mut best = self.actions()[0];
        let mut best_d = f64::INFINITY;
        for &a in self.actions() {
            let d = self.expected_displacement(s, a);
            if d < best_d - 1e-12 {
                best = a;
                best_d = d;
            }
        }
        best
    }

    /// Lipschitz constant of the conservative policy over adjacent open
    /// cells: the largest `d_A(pi(s), pi(s'))` with `d_S(s, s') = 1`.
    pub fn conservative_lipschitz(&self) -> f64 {
        let mut best = 0.0f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let s = Cell::new(x, y);
                if self.is_wall(s) {
                    continue;
                }
                let a = self.conservative_policy(s);
                for n in [Cell::new(x + 1, y), Cell::new(x, y + 1)] {
                    if self.in_bounds(n) && !self.is_wall(n) {
                        best = best.max(action_distance(&a, &self.conservative_policy(n)));
                    }
                }
            }
        }
        best
    }

    fn max_support_displacement(&self, s: Cell, a: Action) -> f64 {
        self.outcome_directions(a)
            .into_iter()
            .filter(|o| o.1 > 0.0)
            .map(|(d, _, _)| state_distance(&s, &self.attempt(s, d)))
            .fold(0.0, f64::max)
    }

    /// Exhaustive `(d_bar, eta)`: the largest one-step displacement under
    /// the conservative policy, and the largest excess displacement of any
    /// other action per unit of action distance (0 when no other action
    /// exists).
    pub fn certify_dynamics_constants(&self) -> (f64, f64) {
        let open: Vec<Cell> = (0..self.cell_count())
            .map(|i| self.cell_at(i))
            .filter(|&c| !self.is_wall(c))
            .collect();
        let d_bar = open
            .iter()
            .map(|&s| self.max_support_displacement(s, self.conservative_policy(s)))
            .fold(0.0, f64::max);
        let mut eta = 0.0f64;
        for &s in &open {
            let sharp = self.conservative_policy(s);
            for &a in self.actions() {
                if a == sharp {
                    continue;
                }
                let excess = self.max_support_displacement(s, a) - d_bar;
                eta = eta.max(excess / action_distance(&a, &sharp));
            }
        }
        (d_bar, eta)
    }

    /// Worst violation of `d_S(s, s') <= d_bar + eta * d_A(a, pi(s))` over
    /// every open cell, action and supported successor. Nonpositive means
    /// the inequality holds everywhere.
    pub fn dynamics_certificate_slack(&self, d_bar: f64, eta: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.cell_count() {
            let s = self.cell_at(i);
            if self.is_wall(s) {
                continue;
            }
            let sharp = self.conservative_policy(s);
            for &a in self.actions() {
                let bound = d_bar + eta * action_distance(&a, &sharp);
                for (next, _) in self.transition_support(s, a).expect("valid pair") {
                    worst = worst.max(state_distance(&s, &next) - bound);
                }
            }
        }
        worst
    }

    /// Runs the conservative policy from the start for `n` steps and
    /// returns each visited pair with its sampled label.
    pub fn conservative_rollout<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(Cell, Action, bool)>> {
        if n == 0 {
            return Err(Error::domain("initial sample count must be at least 1"));
        }
        let mut s = self.s1;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let a = self.conservative_policy(s);
            let o = self.step(s, a, rng)?;
            out.push((s, a, o.safety_label));
            s = o.next_state;
        }
        Ok(out)
    }

    /// Initial safety observations from a conservative rollout.
    pub fn initial_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<SafetyObservation>> {
        self.conservative_rollout(n, rng)?
            .into_iter()
            .map(|(s, a, label)| {
                Ok(SafetyObservation {
                    features: self.features(s, a)?,
                    label,
                })
            })
            .collect()
    }
}

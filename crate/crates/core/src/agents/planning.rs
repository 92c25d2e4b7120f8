//! Finite-horizon planning on tabular transition models.

use crate::bounds::LipschitzConstants;
use crate::env::GridWorld;
use crate::error::{Error, Result};

/// Sparse transition model; row `s * actions + a` lists `(next_state, probability)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel {
    states: usize,
    actions: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

const ROW_TOLERANCE: f64 = 1e-9;

impl TransitionModel {
    pub fn new(states: usize, actions: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != states * actions {
            return Err(Error::domain(format!(
                "model has {} rows, expected {}",
                rows.len(),
                states * actions
            )));
        }
        Ok(Self { states, actions, rows })
    }

    /// The exact dynamics of a world.
    pub fn from_world(world: &GridWorld) -> Self {
        let states = world.cell_count();
        let actions = world.actions().len();
        let mut rows = Vec::with_capacity(states * actions);
        for i in 0..states {
            let s = world.cell_at(i);
            for &a in world.actions() {
                let support = world.transition_support(s, a).expect("every cell and action is valid");
                rows.push(support.into_iter().map(|(c, p)| (world.cell_index(c), p)).collect());
            }
        }
        Self { states, actions, rows }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[s * self.actions + a]
    }

    /// Every row is a probability distribution over valid states.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            let total: f64 = row.iter().map(|e| e.1).sum();
            if (total - 1.0).abs() > ROW_TOLERANCE || row.iter().any(|e| e.1 < 0.0 || e.0 >= self.states) {
                return Err(Error::domain(format!(
                    "row for state {} action {} is not a distribution (sum {total})",
                    i / self.actions,
                    i % self.actions
                )));
            }
        }
        Ok(())
    }
}

/// Laplace-smoothed empirical dynamics: counts plus `prior_strength`
/// pseudo-observations spread according to a template model.
#[derive(Clone, Debug)]
pub struct EmpiricalModel {
    template: TransitionModel,
    prior_strength: f64,
    counts: Vec<Vec<(usize, f64)>>,
}

impl EmpiricalModel {
    pub fn new(template: TransitionModel, prior_strength: f64) -> Result<Self> {
        template.validate()?;
        if !(prior_strength > 0.0) {
            return Err(Error::domain("prior strength must be positive"));
        }
        let n = template.rows.len();
        Ok(Self {
            template,
            prior_strength,
            counts: vec![Vec::new(); n],
        })
    }

    pub fn observe(&mut self, s: usize, a: usize, next: usize) {
        let row = &mut self.counts[s * self.template.actions + a];
        match row.iter_mut().find(|e| e.0 == next) {
            Some(e) => e.1 += 1.0,
            None => row.push((next, 1.0)),
        }
    }

    pub fn visits(&self, s: usize, a: usize) -> f64 {
        self.counts[s * self.template.actions + a].iter().map(|e| e.1).sum()
    }

    /// Posterior-mean model.
    pub fn estimate(&self) -> TransitionModel {
        let alpha = self.prior_strength;
        let rows = self
            .template
            .rows
            .iter()
            .zip(&self.counts)
            .map(|(prior, counts)| {
                let n: f64 = counts.iter().map(|e| e.1).sum();
                let denom = n + alpha;
                let mut row: Vec<(usize, f64)> = prior.iter().map(|&(j, p)| (j, alpha * p / denom)).collect();
                for &(j, c) in counts {
                    match row.iter_mut().find(|e| e.0 == j) {
                        Some(e) => e.1 += c / denom,
                        None => row.push((j, c / denom)),
                    }
                }
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();
        TransitionModel {
            states: self.template.states,
            actions: self.template.actions,
            rows,
        }
    }
}

/// Optimal finite-horizon values; step `t` is stored at index `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunctions {
    /// `v[t][s]` for `t = 1..=T+1`, with `v[T] = 0`.
    pub v: Vec<Vec<f64>>,
    /// `q[t][s * |A| + a]` for `t = 1..=T`.
    pub q: Vec<Vec<f64>>,
}

/// Deterministic time-indexed policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    states: usize,
    /// `choice[t - 1][s]` is an action position.
    choice: Vec<Vec<usize>>,
}

impl Policy {
    pub fn horizon(&self) -> usize {
        self.choice.len()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// Action position chosen at step `t` (1-based) in state `s`.
    pub fn action(&self, t: usize, s: usize) -> usize {
        self.choice[t - 1][s]
    }
}

/// Backward induction maximizing `reward - cost`, restricted to allowed
/// pairs. Ties go to the lowest action position. A state with no allowed
/// action takes value `-inf` and position 0.
pub(crate) fn backward_induction(
    model: &TransitionModel,
    reward: &[f64],
    horizon: usize,
    cost: impl Fn(usize, usize, usize) -> f64,
    allowed: impl Fn(usize, usize, usize) -> bool,
) -> Result<(ValueFunctions, Policy)> {
    model.validate()?;
    let (ns, na) = (model.states, model.actions);
    if reward.len() != ns * na {
        return Err(Error::domain(format!(
            "reward has {} entries, expected {}",
            reward.len(),
            ns * na
        )));
    }
    let mut v = vec![vec![0.0; ns]; horizon + 1];
    let mut q = vec![vec![f64::NEG_INFINITY; ns * na]; horizon];
    let mut choice = vec![vec![0usize; ns]; horizon];
    for t in (1..=horizon).rev() {
        let (head, tail) = v.split_at_mut(t);
        let next = &tail[0];
        let cur = &mut head[t - 1];
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                if !allowed(t, s, a) {
                    continue;
                }
                let i = s * na + a;
                let expect: f64 = model.rows[i].iter().map(|&(j, p)| p * next[j]).sum();
                let value = reward[i] - cost(t, s, a) + expect;
                q[t - 1][i] = value;
                if value > best {
                    best = value;
                    best_a = a;
                }
            }
            cur[s] = best;
            choice[t - 1][s] = best_a;
        }
    }
    Ok((ValueFunctions { v, q }, Policy { states: ns, choice }))
}

/// Exact finite-horizon values and the greedy policy.
pub fn value_iteration(model: &TransitionModel, reward: &[f64], horizon: usize) -> Result<(ValueFunctions, Policy)> {
    backward_induction(model, reward, horizon, |_, _, _| 0.0, |_, _, _| true)
}

/// Per-step deviation coefficients of the penalized objective
/// `-x_t + L3 X_t^{T-1} + x_T` for a plan starting at step `start`:
/// `L3 - 1` at `start`, `L3` strictly between, `1` at `T`, and `0` when
/// `start = T`.
pub fn deviation_coefficient(tau: usize, start: usize, horizon: usize, c: &LipschitzConstants) -> f64 {
    if tau == horizon {
        if start == horizon {
            0.0
        } else {
            1.0
        }
    } else if tau == start {
        c.l3 - 1.0
    } else {
        c.l3
    }
}

/// Plans against `reward - lambda * coefficient(t) * d_A(a, pi_sharp(s))`
/// from step 1, optionally restricted to allowed pairs. `pi_sharp[s]` is
/// an action position.
pub fn plan_penalized(
    model: &TransitionModel,
    reward: &[f64],
    lambda: f64,
    pi_sharp: &[usize],
    c: &LipschitzConstants,
    horizon: usize,
) -> Result<Policy> {
    plan_penalized_masked(model, reward, lambda, pi_sharp, c, horizon, |_, _, _| true)
}

/// [`plan_penalized`] with a mask; the conservative action is always allowed.
pub fn plan_penalized_masked(
    model: &TransitionModel,
    reward: &[f64],
    lambda: f64,
    pi_sharp: &[usize],
    c: &LipschitzConstants,
    horizon: usize,
    allowed: impl Fn(usize, usize, usize) -> bool,
) -> Result<Policy> {
    if !(lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if pi_sharp.len() != model.states {
        return Err(Error::domain("conservative policy must cover every state"));
    }
    let cost = |t: usize, s: usize, a: usize| {
        if a == pi_sharp[s] || lambda == 0.0 {
            0.0
        } else {
            lambda * deviation_coefficient(t, 1, horizon, c)
        }
    };
    let allowed = |t: usize, s: usize, a: usize| a == pi_sharp[s] || allowed(t, s, a);
    backward_induction(model, reward, horizon, cost, allowed).map(|r| r.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::derive_constants;

    /// Deterministic chain of `n` cells with actions (left, stay, right)
    /// and reward only for staying in the last cell.
    fn chain(n: usize) -> (TransitionModel, Vec<f64>) {
        let mut rows = Vec::new();
        let mut reward = Vec::new();
        for s in 0..n {
            for a in 0..3 {
                let next = match a {
                    0 => s.saturating_sub(1),
                    1 => s,
                    _ => (s + 1).min(n - 1),
                };
                rows.push(vec![(next, 1.0)]);
                reward.push(if s == n - 1 && a == 1 { 1.0 } else { 0.0 });
            }
        }
        (TransitionModel::new(n, 3, rows).unwrap(), reward)
    }

    /// Best total over all action sequences from `s`, with a per-step cost.
    fn brute(
        model: &TransitionModel,
        reward: &[f64],
        s: usize,
        t: usize,
        horizon: usize,
        cost: &dyn Fn(usize, usize, usize) -> f64,
    ) -> f64 {
        if t > horizon {
            return 0.0;
        }
        (0..model.actions)
            .map(|a| {
                let i = s * model.actions + a;
                let next = model.rows[i][0].0;
                reward[i] - cost(t, s, a) + brute(model, reward, next, t + 1, horizon, cost)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn constants() -> LipschitzConstants {
        derive_constants(0.1, 0.0, 1.0, 0.0, 4).unwrap()
    }

    #[test]
    fn two_state_chain_matches_enumeration() {
        let (model, reward) = chain(2);
        let (vf, _) = value_iteration(&model, &reward, 3).unwrap();
        for s in 0..2 {
            assert_eq!(vf.v[0][s], brute(&model, &reward, s, 1, 3, &|_, _, _| 0.0));
        }
        assert_eq!(vf.v[0][1], 3.0);
        assert_eq!(vf.v[0][0], 2.0);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let (model, _) = chain(4);
        let (vf, _) = value_iteration(&model, &[0.0; 12], 5).unwrap();
        assert!(vf.v.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_horizon_is_myopic() {
        let (model, _) = chain(3);
        let reward: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let (vf, _) = value_iteration(&model, &reward, 1).unwrap();
        for s in 0..3 {
            let best = reward[s * 3..s * 3 + 3]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(vf.v[0][s], best);
        }
    }

    #[test]
    fn non_stochastic_rows_are_rejected() {
        let model = TransitionModel::new(1, 1, vec![vec![(0, 0.5)]]).unwrap();
        assert!(value_iteration(&model, &[0.0], 2).is_err());
    }

    #[test]
    fn zero_lambda_matches_greedy() {
        let (model, reward) = chain(5);
        let (_, greedy) = value_iteration(&model, &reward, 6).unwrap();
        let plan = plan_penalized(&model, &reward, 0.0, &[1; 5], &constants(), 6).unwrap();
        assert_eq!(plan, greedy);
    }

    #[test]
    fn huge_lambda_follows_conservative_policy() {
        let (model, reward) = chain(5);
        let plan = plan_penalized(&model, &reward, 1e6, &[1; 5], &constants(), 6).unwrap();
        for t in 1..=6 {
            for s in 0..5 {
                assert_eq!(plan.action(t, s), 1);
            }
        }
    }

    #[test]
    fn three_cell_corridor_matches_enumeration() {
        let (model, reward) = chain(3);
        let c = constants();
        let horizon = 5;
        for lambda in [0.0, 0.1, 0.2, 0.3, 0.5, 1.0] {
            let cost = |t: usize, _s: usize, a: usize| {
                if a == 1 {
                    0.0
                } else {
                    lambda * deviation_coefficient(t, 1, horizon, &c)
                }
            };
            let plan = plan_penalized(&model, &reward, lambda, &[1; 3], &c, horizon).unwrap();
            // Value of the planned policy from cell 0 equals the brute-force optimum.
            let (mut s, mut total) = (0usize, 0.0);
            for t in 1..=horizon {
                let a = plan.action(t, s);
                total += reward[s * 3 + a] - cost(t, s, a);
                s = model.row(s, a)[0].0;
            }
            let best = brute(&model, &reward, 0, 1, horizon, &cost);
            assert!((total - best).abs() < 1e-12, "lambda {lambda}: {total} vs {best}");
        }
    }

    #[test]
    fn deviation_count_is_monotone_in_lambda() {
        let (model, reward) = chain(4);
        let c = constants();
        let mut last = usize::MAX;
        for k in 0..40 {
            let lambda = 0.01 * 1.3f64.powi(k);
            let plan = plan_penalized(&model, &reward, lambda, &[1; 4], &c, 8).unwrap();
            let (mut s, mut deviations) = (0usize, 0);
            for t in 1..=8 {
                let a = plan.action(t, s);
                deviations += usize::from(a != 1);
                s = model.row(s, a)[0].0;
            }
            assert!(deviations <= last);
            last = deviations;
        }
    }

    #[test]
    fn coefficients_follow_the_objective() {
        let c = constants();
        assert_eq!(deviation_coefficient(1, 1, 5, &c), c.l3 - 1.0);
        assert_eq!(deviation_coefficient(3, 1, 5, &c), c.l3);
        assert_eq!(deviation_coefficient(5, 1, 5, &c), 1.0);
        assert_eq!(deviation_coefficient(5, 5, 5, &c), 0.0);
    }

    #[test]
    fn empirical_model_moves_from_prior_to_counts() {
        let (template, _) = chain(3);
        let mut emp = EmpiricalModel::new(template, 1.0).unwrap();
        assert_eq!(emp.estimate().row(1, 2), &[(2, 1.0)]);
        for _ in 0..3 {
            emp.observe(1, 2, 0);
        }
        let est = emp.estimate();
        est.validate().unwrap();
        assert_eq!(est.row(1, 2), &[(0, 0.75), (2, 0.25)]);
        assert_eq!(emp.visits(1, 2), 3.0);
    }
}

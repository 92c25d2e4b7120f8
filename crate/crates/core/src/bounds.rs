//! Lipschitz deviation budgets and the pessimistic safety bounds built on them.
//!
//! Time indices are 1-based throughout: a schedule of horizon `T` holds the
//! budgets `x_1..x_T`, and `partial_sum(t1, t2)` is `x_{t1} + ... + x_{t2}`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::glm::mu_inverse;

/// Value standing in for an uncomputable GLM bound, so that `max` falls back
/// to the Lipschitz side.
pub const GLM_SENTINEL: f64 = f64::MIN;

/// Smallest per-step safety probability accepted by [`threshold_z`].
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Lipschitz constants of the feature map, conservative policy and dynamics,
/// together with the derived constants used by every bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzConstants {
    pub l_phi: f64,
    pub l_sharp: f64,
    pub eta: f64,
    pub d_bar: f64,
    pub m: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

/// Fills `L1 = sqrt(m) L_phi`, `L2 = (L_sharp + 1) d_bar`, `L3 = 2 + eta (L_sharp + 1)`.
pub fn derive_constants(l_phi: f64, l_sharp: f64, eta: f64, d_bar: f64, m: usize) -> Result<LipschitzConstants> {
    for (name, v) in [("L_phi", l_phi), ("L_sharp", l_sharp), ("eta", eta), ("d_bar", d_bar)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::domain(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    if l_phi <= 0.0 {
        return Err(Error::domain("L_phi must be positive"));
    }
    if m == 0 {
        return Err(Error::domain("m must be at least 1"));
    }
    let l_bar = l_sharp + 1.0;
    Ok(LipschitzConstants {
        l_phi,
        l_sharp,
        eta,
        d_bar,
        m,
        l1: (m as f64).sqrt() * l_phi,
        l2: l_bar * d_bar,
        l3: 2.0 + eta * l_bar,
    })
}

/// Per-step budgets on the divergence from the conservative policy.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationSchedule {
    budgets: Vec<f64>,
}

impl DeviationSchedule {
    /// Budgets `x_1..x_T`; all must be nonnegative and `x_1` must be zero.
    pub fn new(budgets: Vec<f64>) -> Result<Self> {
        if budgets.is_empty() {
            return Err(Error::domain("schedule horizon must be at least 1"));
        }
        if let Some(bad) = budgets.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::domain(format!(
                "budgets must be finite and nonnegative, got {bad}"
            )));
        }
        if budgets[0] != 0.0 {
            return Err(Error::domain("the first budget must be zero"));
        }
        Ok(Self { budgets })
    }

    /// The all-zero schedule (follow the conservative policy throughout).
    pub fn conservative(horizon: usize) -> Result<Self> {
        Self::new(vec![0.0; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.budgets.len()
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    /// `x_t` for `1 <= t <= T`.
    pub fn budget(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.budgets[t - 1])
    }

    /// `sum_{tau = t1}^{t2} x_tau`, zero for an empty range. Indices outside
    /// `1..=T` contribute nothing.
    pub fn partial_sum(&self, t1: usize, t2: usize) -> f64 {
        let lo = t1.max(1);
        let hi = t2.min(self.horizon());
        if lo > hi {
            return 0.0;
        }
        self.budgets[lo - 1..hi].iter().sum()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon() {
            return Err(Error::domain(format!("time step {t} outside 1..={}", self.horizon())));
        }
        Ok(())
    }
}

/// A state metric and an action metric; the joint metric is their sum.
#[derive(Clone, Copy)]
pub struct MetricSpec<S, A> {
    pub state: fn(&S, &S) -> f64,
    pub action: fn(&A, &A) -> f64,
}

impl<S, A> MetricSpec<S, A> {
    pub fn joint(&self, a: (&S, &A), b: (&S, &A)) -> f64 {
        (self.state)(a.0, b.0) + (self.action)(a.1, b.1)
    }
}

/// Worst-case drop of the safety predictor from step `t` to the horizon:
/// `L1 { L2 (T - t) + (L3 - 1) x_t + L3 X_{t+1}^{T-1} + x_T }`, and zero at `t = T`.
pub fn future_gap(t: usize, schedule: &DeviationSchedule, c: &LipschitzConstants) -> Result<f64> {
    schedule.check_t(t)?;
    let horizon = schedule.horizon();
    if t == horizon {
        return Ok(0.0);
    }
    let remaining = (horizon - t) as f64;
    let x_t = schedule.budgets[t - 1];
    let x_last = schedule.budgets[horizon - 1];
    let middle = schedule.partial_sum(t + 1, horizon - 1);
    Ok(c.l1 * (c.l2 * remaining + (c.l3 - 1.0) * x_t + c.l3 * middle + x_last))
}

/// Lipschitz lower bound `f_sharp(s1) - L1 { L2 t + L3 X_1^{t-1} + x_t }`.
pub fn lower_lipschitz(t: usize, f_sharp_s1: f64, schedule: &DeviationSchedule, c: &LipschitzConstants) -> Result<f64> {
    schedule.check_t(t)?;
    let past = schedule.partial_sum(1, t - 1);
    let x_t = schedule.budgets[t - 1];
    Ok(f_sharp_s1 - c.l1 * (c.l2 * t as f64 + c.l3 * past + x_t))
}

/// Combined pessimistic bound: the larger of the two lower bounds.
pub fn combined_lower(l_glm: f64, l_lip: f64) -> f64 {
    l_glm.max(l_lip)
}

/// `ell - F(t, x_{t:T}) >= z`.
pub fn long_term_condition(
    ell: f64,
    t: usize,
    schedule: &DeviationSchedule,
    c: &LipschitzConstants,
    z: f64,
) -> Result<bool> {
    Ok(ell - future_gap(t, schedule, c)? >= z)
}

/// Threshold `z` whose per-step safety probability `mu(z)` satisfies
/// `mu(z)^T = 1 - delta`.
pub fn threshold_z(delta: f64, horizon: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0,1), got {delta}")));
    }
    if horizon == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    let p = (1.0 - delta).powf(1.0 / horizon as f64);
    if p < PROBABILITY_FLOOR {
        return Err(Error::domain(format!(
            "per-step safety probability {p:e} is below the floor {PROBABILITY_FLOOR:e}"
        )));
    }
    mu_inverse(p)
}

/// A finite set of points carrying feature vectors and pairwise distances.
pub trait FeatureDomain {
    fn point_count(&self) -> usize;
    fn point_features(&self, i: usize) -> &[f64];
    /// Joint distance `d_SA` between points `i` and `j`.
    fn point_distance(&self, i: usize, j: usize) -> f64;
}

/// Largest observed ratio `||phi_i - phi_j|| / d(i, j)` over pairs at positive
/// distance. With `sample_count >= n^2` every pair is enumerated, which makes
/// the value exact for a finite domain; otherwise `sample_count` random pairs
/// are drawn.
pub fn certify_feature_lipschitz<D: FeatureDomain + ?Sized, R: Rng + ?Sized>(
    domain: &D,
    sample_count: usize,
    rng: &mut R,
) -> f64 {
    let n = domain.point_count();
    if n < 2 {
        return 0.0;
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| domain.point_features(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut best = 0.0f64;
    let consider = |i: usize, j: usize, best: &mut f64| {
        let d = domain.point_distance(i, j);
        if !(d > 0.0) {
            return;
        }
        // ||phi_i - phi_j|| <= ||phi_i|| + ||phi_j||, so distant pairs can be skipped exactly.
        if (norms[i] + norms[j]) / d <= *best {
            return;
        }
        let diff: f64 = domain
            .point_features(i)
            .iter()
            .zip(domain.point_features(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        *best = best.max(diff / d);
    };
    if (sample_count as u128) >= (n as u128) * (n as u128) {
        for i in 0..n {
            for j in (i + 1)..n {
                consider(i, j, &mut best);
            }
        }
    } else {
        for _ in 0..sample_count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            consider(i, j, &mut best);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example_constants() -> LipschitzConstants {
        derive_constants(1.0, 1.0, 0.0, 0.1, 4).unwrap()
    }

    #[test]
    fn derive_constants_examples() {
        let c = example_constants();
        assert_relative_eq!(c.l1, 2.0);
        assert_relative_eq!(c.l2, 0.2);
        assert_relative_eq!(c.l3, 2.0);

        let c = derive_constants(1.0, 0.0, 0.0, 0.0, 1).unwrap();
        assert_eq!((c.l1, c.l2, c.l3), (1.0, 0.0, 2.0));

        let c = derive_constants(0.5, 1.0, 1.0, 1.0, 9).unwrap();
        assert_relative_eq!(c.l1, 1.5);
        assert_relative_eq!(c.l2, 2.0);
        assert_relative_eq!(c.l3, 4.0);

        assert!(derive_constants(1.0, -1.0, 0.0, 0.0, 1).is_err());
        assert!(derive_constants(0.0, 0.0, 0.0, 0.0, 1).is_err());
        assert!(derive_constants(1.0, 0.0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn schedule_invariants() {
        assert!(DeviationSchedule::new(vec![]).is_err());
        assert!(DeviationSchedule::new(vec![0.5, 0.0]).is_err());
        assert!(DeviationSchedule::new(vec![0.0, -0.1]).is_err());
        let s = DeviationSchedule::new(vec![0.0, 0.5, 0.3, 0.1]).unwrap();
        assert_relative_eq!(s.partial_sum(2, 3), 0.8);
        assert_eq!(s.partial_sum(3, 2), 0.0);
        assert_eq!(s.partial_sum(5, 9), 0.0);
    }

    #[test]
    fn future_gap_examples() {
        let c = example_constants();
        let zero = DeviationSchedule::conservative(4).unwrap();
        assert_relative_eq!(future_gap(1, &zero, &c).unwrap(), c.l1 * c.l2 * 3.0);
        assert_eq!(future_gap(4, &zero, &c).unwrap(), 0.0);

        let s = DeviationSchedule::new(vec![0.0, 0.5, 0.3, 0.1]).unwrap();
        assert_relative_eq!(future_gap(2, &s, &c).unwrap(), 3.2, epsilon = 1e-12);
        assert_eq!(future_gap(4, &s, &c).unwrap(), 0.0);
        assert!(future_gap(0, &s, &c).is_err());
        assert!(future_gap(5, &s, &c).is_err());
    }

    #[test]
    fn lower_lipschitz_examples() {
        let c = example_constants();
        let s = DeviationSchedule::new(vec![0.0, 0.5, 0.1, 0.7]).unwrap();
        assert_relative_eq!(lower_lipschitz(1, 5.0, &s, &c).unwrap(), 5.0 - c.l1 * c.l2);
        assert_relative_eq!(lower_lipschitz(3, 5.0, &s, &c).unwrap(), 1.6, epsilon = 1e-12);

        let zero = DeviationSchedule::conservative(6).unwrap();
        let values: Vec<f64> = (1..=6).map(|t| lower_lipschitz(t, 5.0, &zero, &c).unwrap()).collect();
        for (t, v) in values.iter().enumerate() {
            assert_relative_eq!(*v, 5.0 - c.l1 * c.l2 * (t + 1) as f64, epsilon = 1e-12);
        }
        assert!(lower_lipschitz(7, 5.0, &zero, &c).is_err());
    }

    #[test]
    fn combined_lower_examples() {
        assert_eq!(combined_lower(-5.0, -2.0), -2.0);
        assert_eq!(combined_lower(3.0, 3.0), 3.0);
        assert_eq!(combined_lower(GLM_SENTINEL, -1.0), -1.0);
    }

    #[test]
    fn long_term_condition_examples() {
        let c = example_constants();
        let z = 1.5;
        let zero = DeviationSchedule::conservative(4).unwrap();
        assert!(long_term_condition(z, 4, &zero, &c, z).unwrap());
        assert!(!long_term_condition(z, 2, &zero, &c, z).unwrap());
        let s = DeviationSchedule::new(vec![0.0, 0.5, 0.3, 0.1]).unwrap();
        assert!(long_term_condition(3.2 + z, 2, &s, &c, z).unwrap());
        assert!(!long_term_condition(3.1 + z, 2, &s, &c, z).unwrap());
    }

    #[test]
    fn threshold_examples() {
        assert_relative_eq!(threshold_z(0.05, 1).unwrap(), 2.944_438_979, epsilon = 1e-8);
        assert_relative_eq!(threshold_z(0.05, 50).unwrap(), 6.881_7, epsilon = 1e-4);
        assert!(threshold_z(1.0 - 1e-15, 1).is_err());
        assert!(threshold_z(0.0, 10).is_err());
        assert!(threshold_z(0.1, 0).is_err());
    }

    struct Points {
        feats: Vec<Vec<f64>>,
        pos: Vec<f64>,
    }

    impl FeatureDomain for Points {
        fn point_count(&self) -> usize {
            self.feats.len()
        }
        fn point_features(&self, i: usize) -> &[f64] {
            &self.feats[i]
        }
        fn point_distance(&self, i: usize, j: usize) -> f64 {
            (self.pos[i] - self.pos[j]).abs()
        }
    }

    #[test]
    fn certify_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let constant = Points {
            feats: vec![vec![0.5, 0.5]; 4],
            pos: vec![0.0, 1.0, 2.0, 3.0],
        };
        assert_eq!(certify_feature_lipschitz(&constant, 16, &mut rng), 0.0);
        let single = Points {
            feats: vec![vec![1.0]],
            pos: vec![0.0],
        };
        assert_eq!(certify_feature_lipschitz(&single, 1, &mut rng), 0.0);
        let line = Points {
            feats: vec![vec![0.0], vec![0.25], vec![1.0]],
            pos: vec![0.0, 1.0, 2.0],
        };
        assert_relative_eq!(certify_feature_lipschitz(&line, 9, &mut rng), 0.75);
    }

    proptest! {
        #[test]
        fn future_gap_monotone_in_budgets(
            xs in prop::collection::vec(0.0f64..2.0, 2..10),
            bump in 0.0f64..1.0,
            idx in 1usize..10,
            t in 1usize..10,
        ) {
            let mut budgets = xs.clone();
            budgets[0] = 0.0;
            let horizon = budgets.len();
            let t = 1 + (t - 1) % horizon;
            let idx = idx % horizon;
            let c = derive_constants(0.3, 1.0, 0.5, 0.2, 16).unwrap();
            let base = DeviationSchedule::new(budgets.clone()).unwrap();
            if idx > 0 { budgets[idx] += bump; }
            let raised = DeviationSchedule::new(budgets).unwrap();
            prop_assert!(future_gap(t, &raised, &c).unwrap() >= future_gap(t, &base, &c).unwrap());
            prop_assert!(lower_lipschitz(t, 3.0, &raised, &c).unwrap() <= lower_lipschitz(t, 3.0, &base, &c).unwrap());
            if t < horizon {
                prop_assert!(lower_lipschitz(t + 1, 3.0, &base, &c).unwrap() <= lower_lipschitz(t, 3.0, &base, &c).unwrap());
            }
        }

        #[test]
        fn future_gap_grows_with_remaining_steps(t in 1usize..20, horizon in 1usize..20) {
            prop_assume!(t < horizon);
            let c = derive_constants(0.3, 1.0, 0.5, 0.2, 16).unwrap();
            let s = DeviationSchedule::conservative(horizon).unwrap();
            prop_assert!(future_gap(t, &s, &c).unwrap() >= future_gap(t + 1, &s, &c).unwrap());
        }

        #[test]
        fn combined_dominates_inputs(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let v = combined_lower(a, b);
            prop_assert!(v >= a && v >= b);
        }
    }
}

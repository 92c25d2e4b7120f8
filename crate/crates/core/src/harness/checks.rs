//! Numerical property suites shared by `selftest`, `certify` and the acceptance tests.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{
    certify_feature_lipschitz, combined_lower, derive_constants, future_gap, long_term_condition, lower_lipschitz,
    threshold_z, DeviationSchedule, LipschitzConstants,
};
use crate::env::{action_distance, state_distance, Action, Cell, GridWorld, PairDomain};
use crate::error::{Error, Result};
use crate::glm::{fit_dataset, mu, ConfidenceParams, MleOptions, SafetyDataset};

/// Outcome of one property suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Three-sigma lower limit for a binomial success rate `p` over `n` trials.
pub fn binomial_floor(p: f64, n: usize) -> f64 {
    p - 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

fn exact_options() -> MleOptions {
    MleOptions {
        ridge: 0.0,
        tol: 1e-12,
        max_iter: 200,
    }
}

/// One-dimensional dataset with three positives out of four at `phi = 1`,
/// whose maximum-likelihood weight is `ln 3`.
pub fn mle_closed_form() -> Result<f64> {
    let mut data = SafetyDataset::new(1);
    for (i, label) in [true, true, true, false].into_iter().enumerate() {
        data.push_keyed(i as u64, &[1.0], label)?;
    }
    Ok(fit_dataset(&data, &exact_options(), None)?.weights()[0])
}

fn negative_log_likelihood(rows: &[([f64; 2], bool)], w: (f64, f64)) -> f64 {
    rows.iter()
        .map(|(x, y)| {
            let f = x[0] * w.0 + x[1] * w.1;
            // -log mu(f) = log(1 + e^{-f}); -log(1 - mu(f)) = log(1 + e^{f}).
            let s = if *y { -f } else { f };
            if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            }
        })
        .sum()
}

/// Minimizer of the negative log-likelihood over the lattice of spacing
/// `1e-3` on `[-4, 4]^2`.
///
/// The objective is convex, so a coarse exhaustive scan followed by
/// exhaustive scans of shrinking windows reaches the lattice minimizer while
/// every visited point stays on the lattice.
pub fn grid_search_mle(rows: &[([f64; 2], bool)]) -> (f64, f64) {
    const LIMIT: i64 = 4000;
    let mut center = (0i64, 0i64);
    let mut radius = LIMIT;
    for step in [50i64, 5, 1] {
        let mut best = (f64::INFINITY, center);
        let lo = |c: i64| (c - radius).max(-LIMIT);
        let hi = |c: i64| (c + radius).min(LIMIT);
        let mut i = lo(center.0);
        while i <= hi(center.0) {
            let mut j = lo(center.1);
            while j <= hi(center.1) {
                let v = negative_log_likelihood(rows, (i as f64 * 1e-3, j as f64 * 1e-3));
                if v < best.0 {
                    best = (v, (i, j));
                }
                j += step;
            }
            i += step;
        }
        center = best.1;
        radius = 2 * step;
    }
    (center.0 as f64 * 1e-3, center.1 as f64 * 1e-3)
}

/// Compares the Newton solver with [`grid_search_mle`] on random two-dimensional
/// datasets of 20 samples. Datasets whose lattice minimizer sits on the
/// boundary (separable or nearly so) are redrawn.
pub fn mle_grid_agreement(datasets: usize, tolerance: f64, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut done, mut redrawn) = (0.0f64, 0, 0);
    while done < datasets {
        let w = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let rows: Vec<([f64; 2], bool)> = (0..20)
            .map(|_| {
                let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let label = rng.random::<f64>() < mu(x[0] * w.0 + x[1] * w.1);
                (x, label)
            })
            .collect();
        let grid = grid_search_mle(&rows);
        if grid.0.abs() >= 4.0 - 1e-9 || grid.1.abs() >= 4.0 - 1e-9 {
            redrawn += 1;
            continue;
        }
        let mut data = SafetyDataset::new(2);
        for (i, (x, y)) in rows.iter().enumerate() {
            data.push_keyed(i as u64, x, *y)?;
        }
        let fit = fit_dataset(&data, &exact_options(), None)?;
        let err = (fit.weights()[0] - grid.0).abs().max((fit.weights()[1] - grid.1).abs());
        worst = worst.max(err);
        done += 1;
    }
    Ok(CheckOutcome::new(
        "mle grid search",
        worst <= tolerance,
        format!(
            "{datasets} datasets ({redrawn} redrawn), worst coordinate gap {worst:.2e} (tolerance {tolerance:.0e})"
        ),
    ))
}

fn unit_ball_point<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 && n <= 1.0 {
            return v;
        }
    }
}

/// Fraction of synthetic instances whose confidence interval
/// `|<phi, w_hat> - f*(phi)| <= beta ||phi||_{W^-1}` holds at every probe;
/// passes when it reaches `min_rate`.
pub fn confidence_coverage(
    instances: usize,
    m: usize,
    samples: usize,
    delta_cap: f64,
    min_rate: f64,
    seed: u64,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ConfidenceParams::for_dimension(m, 0.5, delta_cap)?;
    let radius = (m as f64).sqrt();
    let opts = MleOptions::default();
    let mut covered = 0;
    for _ in 0..instances {
        let dir = unit_ball_point(&mut rng, m);
        let scale = radius * rng.random::<f64>() / dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w_star = DVector::from_iterator(m, dir.iter().map(|v| v * scale));
        let mut data = SafetyDataset::new(m);
        for i in 0..samples {
            let phi = unit_ball_point(&mut rng, m);
            let f = DVector::from_column_slice(&phi).dot(&w_star);
            data.push_keyed(i as u64, &phi, rng.random::<f64>() < mu(f))?;
        }
        let est = fit_dataset(&data, &opts, None)?;
        let mut ok = true;
        for _ in 0..20 {
            let phi = unit_ball_point(&mut rng, m);
            let truth = DVector::from_column_slice(&phi).dot(&w_star);
            let width = params.beta * est.weighted_norm_of(&phi)?;
            ok &= (est.predict(&phi) - truth).abs() <= width;
        }
        covered += ok as usize;
    }
    let rate = covered as f64 / instances as f64;
    Ok(CheckOutcome::new(
        "confidence coverage",
        rate >= min_rate,
        format!(
            "{covered}/{instances} instances covered ({rate:.3}; required {min_rate}, beta {:.2})",
            params.beta
        ),
    ))
}

/// Constants of `world` under the configured feature Lipschitz constant.
pub fn world_constants(world: &GridWorld, l_phi: f64) -> Result<LipschitzConstants> {
    let (d_bar, eta) = world.certify_dynamics_constants();
    derive_constants(l_phi, world.conservative_lipschitz(), eta, d_bar, world.feature_dim())
}

/// Random 0/1 deviation budgets with `x_1 = 0`.
fn random_schedule<R: Rng + ?Sized>(rng: &mut R, horizon: usize, p: f64) -> Result<DeviationSchedule> {
    let budgets = (0..horizon)
        .map(|t| if t > 0 && rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    DeviationSchedule::new(budgets)
}

/// Action respecting budget `x` at `s`: the conservative action when `x = 0`,
/// otherwise any action.
fn scheduled_action<R: Rng + ?Sized>(world: &GridWorld, s: Cell, x: f64, rng: &mut R) -> Action {
    if x < 1.0 {
        world.conservative_policy(s)
    } else {
        let actions = world.actions();
        actions[rng.random_range(0..actions.len())]
    }
}

struct Rollout {
    pairs: Vec<(Cell, Action)>,
    labels: Vec<bool>,
    schedule: DeviationSchedule,
}

fn rollout<R: Rng + ?Sized>(world: &GridWorld, p: f64, rng: &mut R) -> Result<Rollout> {
    let schedule = random_schedule(rng, world.horizon(), p)?;
    let mut s = world.start();
    let mut pairs = Vec::with_capacity(world.horizon());
    let mut labels = Vec::with_capacity(world.horizon());
    for &x in schedule.budgets() {
        let a = scheduled_action(world, s, x, rng);
        let o = world.step(s, a, rng)?;
        pairs.push((s, a));
        labels.push(o.safety_label);
        s = o.next_state;
    }
    Ok(Rollout {
        pairs,
        labels,
        schedule,
    })
}

fn require_worlds(worlds: &[GridWorld]) -> Result<()> {
    if worlds.is_empty() {
        return Err(Error::domain("property checks need at least one world"));
    }
    Ok(())
}

/// `|f*(s_T, a_T) - f*(s_t, a_t)| <= F(t, x_{t:T})` at every step of
/// `trajectories` rollouts spread over `worlds`.
pub fn rollout_gap_bound(worlds: &[GridWorld], l_phi: f64, trajectories: usize, seed: u64) -> Result<CheckOutcome> {
    require_worlds(worlds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let consts: Vec<LipschitzConstants> = worlds
        .iter()
        .map(|w| world_constants(w, l_phi))
        .collect::<Result<_>>()?;
    let (mut checked, mut violations, mut ratio) = (0usize, 0usize, 0.0f64);
    for k in 0..trajectories {
        let (world, c) = (&worlds[k % worlds.len()], &consts[k % worlds.len()]);
        let r = rollout(world, 0.3, &mut rng)?;
        let horizon = world.horizon();
        let (s_end, a_end) = r.pairs[horizon - 1];
        let f_end = world.f_star(s_end, a_end)?;
        for t in 1..=horizon {
            let (s, a) = r.pairs[t - 1];
            let bound = future_gap(t, &r.schedule, c)?;
            let gap = (f_end - world.f_star(s, a)?).abs();
            if bound > 0.0 {
                ratio = ratio.max(gap / bound);
            }
            violations += (gap > bound + 1e-9) as usize;
            checked += 1;
        }
    }
    Ok(CheckOutcome::new(
        "rollout gap bound",
        violations == 0,
        format!("{violations} violations over {checked} (trajectory, t) pairs; largest gap/bound {ratio:.3}"),
    ))
}

/// `||phi(s', a') - phi(s, a)|| <= L_phi {(1 + L_sharp) d_S(s, s') + x + x'}` on sampled transitions.
pub fn step_drift_bound(worlds: &[GridWorld], l_phi: f64, transitions: usize, seed: u64) -> Result<CheckOutcome> {
    require_worlds(worlds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut violations, mut ratio) = (0usize, 0.0f64);
    let sharp_lipschitz: Vec<f64> = worlds.iter().map(|w| w.conservative_lipschitz()).collect();
    for k in 0..transitions {
        let world = &worlds[k % worlds.len()];
        let l_sharp = sharp_lipschitz[k % worlds.len()];
        let s = loop {
            let c = world.cell_at(rng.random_range(0..world.cell_count()));
            if !world.is_wall(c) {
                break c;
            }
        };
        let actions = world.actions();
        let a = actions[rng.random_range(0..actions.len())];
        let next = world.step(s, a, &mut rng)?.next_state;
        let b = actions[rng.random_range(0..actions.len())];
        let x = action_distance(&a, &world.conservative_policy(s));
        let x_next = action_distance(&b, &world.conservative_policy(next));
        let phi = world.features(s, a)?;
        let phi_next = world.features(next, b)?;
        let drift = (phi_next.as_vector() - phi.as_vector()).norm();
        let bound = l_phi * ((1.0 + l_sharp) * state_distance(&s, &next) + x + x_next);
        if bound > 0.0 {
            ratio = ratio.max(drift / bound);
        }
        violations += (drift > bound + 1e-12) as usize;
    }
    Ok(CheckOutcome::new(
        "step drift bound",
        violations == 0,
        format!("{violations} violations over {transitions} transitions; largest drift/bound {ratio:.3}"),
    ))
}

/// Safe-episode frequency over rollouts where the long-term condition held at
/// every executed step, with the exact predictor as the GLM-side bound.
pub fn long_term_safety(
    worlds: &[GridWorld],
    l_phi: f64,
    delta: f64,
    rollouts: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    require_worlds(worlds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = worlds[0].horizon();
    let z = threshold_z(delta, horizon)?;
    let consts: Vec<LipschitzConstants> = worlds
        .iter()
        .map(|w| world_constants(w, l_phi))
        .collect::<Result<_>>()?;
    let (mut qualified, mut safe, mut attempts) = (0usize, 0usize, 0usize);
    let cap = rollouts.saturating_mul(50);
    while qualified < rollouts && attempts < cap {
        let k = attempts % worlds.len();
        attempts += 1;
        let (world, c) = (&worlds[k], &consts[k]);
        let r = rollout(world, 0.05, &mut rng)?;
        let mut holds = true;
        for t in 1..=world.horizon() {
            let (s, a) = r.pairs[t - 1];
            let ell = combined_lower(
                world.f_star(s, a)?,
                lower_lipschitz(t, world.f_sharp_start(), &r.schedule, c)?,
            );
            if !long_term_condition(ell, t, &r.schedule, c, z)? {
                holds = false;
                break;
            }
        }
        if holds {
            qualified += 1;
            safe += r.labels.iter().all(|&g| g) as usize;
        }
    }
    if qualified < rollouts {
        return Ok(CheckOutcome::new(
            "long-term safety",
            false,
            format!("only {qualified} of {attempts} rollouts satisfied the condition throughout"),
        ));
    }
    let rate = safe as f64 / qualified as f64;
    let floor = binomial_floor(1.0 - delta, qualified);
    Ok(CheckOutcome::new(
        "long-term safety",
        rate >= floor,
        format!("{safe}/{qualified} fully safe episodes ({rate:.3}; floor {floor:.3} at delta {delta}, z {z:.3}; {attempts} rollouts drawn)"),
    ))
}

/// Exhaustive and statistical certificates of one world.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorldCertificate {
    pub seed: u64,
    pub max_feature_norm: f64,
    pub l_phi_empirical: f64,
    pub l_phi_configured: f64,
    pub l_sharp: f64,
    pub d_bar: f64,
    pub eta: f64,
    /// Largest excess of a one-step displacement over its certified bound.
    pub dynamics_excess: f64,
    pub slip_frequency: f64,
    pub slip: f64,
    pub slip_trials: usize,
    pub w_star_norm: f64,
}

impl WorldCertificate {
    pub fn checks(&self) -> Vec<CheckOutcome> {
        vec![
            CheckOutcome::new(
                "feature norm",
                self.max_feature_norm <= 1.0,
                format!("max ||phi|| = {:.15}", self.max_feature_norm),
            ),
            CheckOutcome::new(
                "feature lipschitz",
                self.l_phi_empirical <= self.l_phi_configured,
                format!(
                    "empirical {:.6} <= configured {}",
                    self.l_phi_empirical, self.l_phi_configured
                ),
            ),
            CheckOutcome::new(
                "dynamics certificate",
                self.dynamics_excess <= 0.0,
                format!(
                    "d_bar {} eta {} L_sharp {}; worst excess {}",
                    self.d_bar, self.eta, self.l_sharp, self.dynamics_excess
                ),
            ),
            CheckOutcome::new(
                "slip frequency",
                (self.slip_frequency - self.slip).abs() <= 0.01,
                format!(
                    "{:.4} over {} trials (target {} +- 0.01)",
                    self.slip_frequency, self.slip_trials, self.slip
                ),
            ),
        ]
    }
}

/// Open cell whose four neighbors are open and in bounds, if any.
fn interior_cell(world: &GridWorld) -> Option<Cell> {
    (0..world.cell_count()).map(|i| world.cell_at(i)).find(|&c| {
        !world.is_wall(c)
            && Action::COMPASS.iter().all(|&d| {
                let n = world.attempt(c, d);
                n != c
            })
    })
}

/// Fraction of `trials` steps from an interior cell that land on the intended neighbor.
pub fn slip_frequency(world: &GridWorld, trials: usize, seed: u64) -> Result<f64> {
    let s = interior_cell(world).ok_or_else(|| Error::domain("no interior cell to measure slip on"))?;
    let intended = world.attempt(s, Action::Right);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        hits += (world.step(s, Action::Right, &mut rng)?.next_state == intended) as usize;
    }
    Ok(hits as f64 / trials as f64)
}

/// Exhaustive feature and dynamics certificates plus a slip-frequency estimate.
pub fn certify_world(world: &GridWorld, l_phi: f64, slip_trials: usize, seed: u64) -> Result<WorldCertificate> {
    let map = world.feature_map();
    let max_feature_norm = (0..map.pair_count())
        .map(|i| map.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let domain = PairDomain { map };
    let n = map.pair_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l_phi_empirical = certify_feature_lipschitz(&domain, n * n, &mut rng);
    let (d_bar, eta) = world.certify_dynamics_constants();
    Ok(WorldCertificate {
        seed: world.seed(),
        max_feature_norm,
        l_phi_empirical,
        l_phi_configured: l_phi,
        l_sharp: world.conservative_lipschitz(),
        d_bar,
        eta,
        dynamics_excess: world.dynamics_certificate_slack(d_bar, eta),
        slip_frequency: slip_frequency(world, slip_trials, seed)?,
        slip: world.slip(),
        slip_trials,
        w_star_norm: world.w_star().iter().map(|v| v * v).sum::<f64>().sqrt(),
    })
}

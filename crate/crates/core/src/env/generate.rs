use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Action, Cell, FeatureMap, FeatureParams, GridWorld};
use crate::bounds::{derive_constants, long_term_condition, threshold_z, DeviationSchedule};
use crate::error::{Error, Result};
use crate::glm::mu;

/// Parameters of the random grid-world generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    /// Probability of moving in the intended direction.
    pub slip: f64,
    pub stay_enabled: bool,
    /// Whether `stay` itself slips into a compass move.
    pub stay_slips: bool,
    pub features: FeatureParams,
    pub wall_density: f64,
    /// Width of the squared-exponential reward bump, in cells.
    pub reward_width: f64,
    pub reward_noise: f64,
    /// Hazards including the one at the reward center.
    pub hazard_count: usize,
    pub hazard_strength: f64,
    /// Weight of the hazard at the reward center.
    pub reward_hazard_strength: f64,
    /// Negative weight spread uniformly over every cell.
    pub background: f64,
    /// Spacing of the safe corridor's kernel centers, in cells.
    pub corridor_spacing: f64,
    pub approach_min: f64,
    pub approach_max: f64,
    /// Minimum distance from random hazards to the corridor.
    pub hazard_clearance: f64,
    /// Smallest accepted predictor value of the conservative pair at the start.
    pub start_margin: f64,
    /// Smallest accepted safety probability of the conservative pair at the start.
    pub start_probability: f64,
    pub delta: f64,
    /// Feature Lipschitz constant assumed by the feasibility check.
    pub l_phi: f64,
    pub max_retries: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            width: 20,
            height: 20,
            horizon: 50,
            slip: 0.8,
            stay_enabled: true,
            stay_slips: false,
            features: FeatureParams::default(),
            wall_density: 0.05,
            reward_width: 4.0,
            reward_noise: 0.05,
            hazard_count: 3,
            hazard_strength: 2.0,
            reward_hazard_strength: 8.0,
            background: 0.005,
            corridor_spacing: 2.0,
            approach_min: 4.0,
            approach_max: 7.0,
            hazard_clearance: 6.0,
            start_margin: 10.0,
            start_probability: 0.999,
            delta: 0.05,
            l_phi: 0.13,
            max_retries: 1000,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 2 || self.height < 2 {
            return bad(format!("grid must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if !(self.slip > 0.0 && self.slip <= 1.0) {
            return bad(format!("slip must lie in (0,1], got {}", self.slip));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.wall_density) {
            return bad(format!("wall density must lie in [0,1), got {}", self.wall_density));
        }
        if !(self.reward_width > 0.0) || !(0.0..=1.0).contains(&self.reward_noise) {
            return bad("reward width must be positive and noise in [0,1]".into());
        }
        if !(self.corridor_spacing > 0.0) || self.approach_min < 0.0 || self.approach_max < self.approach_min {
            return bad("corridor spacing must be positive and 0 <= approach_min <= approach_max".into());
        }
        if !(self.hazard_strength >= 0.0)
            || !(self.reward_hazard_strength >= 0.0)
            || !(self.background >= 0.0)
            || !(self.hazard_clearance >= 0.0)
        {
            return bad("hazard strengths, background and clearance must be nonnegative".into());
        }
        if !(self.start_probability > 0.0 && self.start_probability < 1.0) {
            return bad(format!(
                "start probability must lie in (0,1), got {}",
                self.start_probability
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0,1), got {}", self.delta));
        }
        if !(self.l_phi > 0.0) {
            return bad(format!("l_phi must be positive, got {}", self.l_phi));
        }
        if self.max_retries == 0 {
            return bad("max_retries must be at least 1".into());
        }
        self.features.validate()
    }

    pub fn actions(&self) -> &'static [Action] {
        if self.stay_enabled {
            &Action::ALL
        } else {
            &Action::COMPASS
        }
    }
}

/// Builds worlds for many seeds over one shared feature map.
pub struct Generator {
    config: GenerationConfig,
    features: Arc<FeatureMap>,
}

/// Linearly spaced points from `a` to `b` at most `spacing` apart, both ends included.
fn segment(a: (f64, f64), b: (f64, f64), spacing: f64) -> Vec<(f64, f64)> {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let n = ((len / spacing).ceil() as usize).max(1);
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
        })
        .collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl Generator {
    pub fn new(config: GenerationConfig) -> Result<Self> {
        config.validate()?;
        let features = Arc::new(FeatureMap::new(
            config.width,
            config.height,
            config.actions(),
            config.features,
        )?);
        Ok(Self { config, features })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn feature_map(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    fn start(&self) -> Cell {
        Cell::new(0, 0)
    }

    /// Deterministic in `seed`. Candidates failing connectivity or the
    /// start-feasibility requirements are discarded and counted.
    pub fn generate(&self, seed: u64) -> Result<GridWorld> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = threshold_z(cfg.delta, cfg.horizon)?;
        let schedule = DeviationSchedule::conservative(cfg.horizon)?;
        let mut last_reason = String::new();
        for attempt in 0..cfg.max_retries {
            let world = self.candidate(seed, attempt, &mut rng)?;
            let Some(world) = world else {
                last_reason = "walls disconnect the grid".into();
                continue;
            };
            let f_sharp = world.f_sharp_start();
            if f_sharp < cfg.start_margin || mu(f_sharp) < cfg.start_probability {
                last_reason = format!("start predictor {f_sharp:.3} below the required margin");
                continue;
            }
            let (d_bar, eta) = world.certify_dynamics_constants();
            let c = derive_constants(
                cfg.l_phi,
                world.conservative_lipschitz(),
                eta,
                d_bar,
                world.feature_dim(),
            )?;
            // Lipschitz bound at t = 1 with x_1 = 0.
            let ell = f_sharp - c.l1 * c.l2;
            if !long_term_condition(ell, 1, &schedule, &c, z)? {
                last_reason = format!("start bound {ell:.3} fails the long-term condition at z = {z:.3}");
                continue;
            }
            return Ok(world);
        }
        Err(Error::Generation {
            seed,
            attempts: cfg.max_retries,
            reason: last_reason,
        })
    }

    fn candidate(&self, seed: u64, rejections: usize, rng: &mut ChaCha8Rng) -> Result<Option<GridWorld>> {
        let cfg = &self.config;
        let (w, h) = (cfg.width, cfg.height);
        let s1 = self.start();
        let far = (0.75 * (w + h) as f64 / 2.0).ceil() as usize;
        let far_cells: Vec<Cell> = (0..h)
            .flat_map(|y| (0..w).map(move |x| Cell::new(x, y)))
            .filter(|c| c.x.abs_diff(s1.x) + c.y.abs_diff(s1.y) >= far)
            .collect();
        let rc = if far_cells.is_empty() {
            Cell::new(w - 1, h - 1)
        } else {
            far_cells[rng.random_range(0..far_cells.len())]
        };

        let mut walls = vec![false; w * h];
        for (i, wall) in walls.iter_mut().enumerate() {
            let c = Cell::new(i % w, i / w);
            let draw: f64 = rng.random();
            *wall = c != s1 && c != rc && draw < cfg.wall_density;
        }

        let w_star = self.safety_weights(rc, rng)?;

        let rcf = (rc.x as f64, rc.y as f64);
        let k = cfg.actions().len();
        let mut reward = vec![0.0; w * h * k];
        for (i, r) in reward.iter_mut().enumerate() {
            let cell = i / k;
            let c = ((cell % w) as f64, (cell / w) as f64);
            let bump = (-dist(c, rcf).powi(2) / (2.0 * cfg.reward_width * cfg.reward_width)).exp();
            let noise: f64 = rng.random();
            *r = if walls[cell] {
                0.0
            } else {
                (bump + cfg.reward_noise * noise).clamp(0.0, 1.0)
            };
        }

        if !connected(&walls, w, h, s1) {
            return Ok(None);
        }
        GridWorld::assemble(
            self.features.clone(),
            walls,
            reward,
            w_star,
            cfg.slip,
            cfg.stay_slips,
            s1,
            cfg.horizon,
            seed,
            rejections,
        )
        .map(Some)
    }

    /// True safety weights: a kernel combination of feature vectors with
    /// positive mass along an L-shaped corridor from the start toward the
    /// reward, negative mass at the reward center and at random hazards away
    /// from the corridor, rescaled to norm just below `sqrt(m)`.
    fn safety_weights(&self, rc: Cell, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let (xmax, ymax) = ((cfg.width - 1) as f64, (cfg.height - 1) as f64);
        let s1 = self.start();
        let s1f = (s1.x as f64, s1.y as f64);
        let rcf = (rc.x as f64, rc.y as f64);

        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let reach = if cfg.approach_max > cfg.approach_min {
            rng.random_range(cfg.approach_min..cfg.approach_max)
        } else {
            cfg.approach_min
        };
        let q = (
            (rcf.0 + reach * angle.cos()).clamp(0.0, xmax),
            (rcf.1 + reach * angle.sin()).clamp(0.0, ymax),
        );
        let corner = if rng.random::<f64>() < 0.5 {
            (s1f.0, q.1)
        } else {
            (q.0, s1f.1)
        };
        let mut corridor = segment(s1f, corner, cfg.corridor_spacing);
        corridor.extend(segment(corner, q, cfg.corridor_spacing));

        let mut centers: Vec<((f64, f64), f64)> = corridor.iter().map(|&p| (p, 1.0)).collect();
        if cfg.hazard_count > 0 {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            centers.push(((rcf.0 + nx, rcf.1 + ny), -cfg.reward_hazard_strength));
        }
        for _ in 1..cfg.hazard_count {
            let mut p = (0.0, 0.0);
            for _ in 0..200 {
                p = (rng.random_range(0.0..=xmax), rng.random_range(0.0..=ymax));
                if corridor.iter().all(|&c| dist(c, p) >= cfg.hazard_clearance) {
                    break;
                }
            }
            centers.push((p, -cfg.hazard_strength));
        }

        if cfg.background > 0.0 {
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    centers.push(((x as f64, y as f64), -cfg.background));
                }
            }
        }

        let m = self.features.dim();
        let mut wv = vec![0.0; m];
        for (p, c) in centers {
            for (acc, v) in wv.iter_mut().zip(self.features.at_point(p.0, p.1)?) {
                *acc += c * v;
            }
        }
        let norm = wv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::domain("safety weight construction produced a zero vector"));
        }
        let scale = (m as f64).sqrt() / norm * (1.0 - 1e-12);
        Ok(wv.into_iter().map(|v| v * scale).collect())
    }
}

/// Every open cell is reachable from `start` by compass moves.
fn connected(walls: &[bool], w: usize, h: usize, start: Cell) -> bool {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([start]);
    seen[start.y * w + start.x] = true;
    let mut count = 1;
    while let Some(c) = queue.pop_front() {
        for a in Action::COMPASS {
            let (dx, dy) = a.offset();
            let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let i = ny as usize * w + nx as usize;
            if !walls[i] && !seen[i] {
                seen[i] = true;
                count += 1;
                queue.push_back(Cell::new(nx as usize, ny as usize));
            }
        }
    }
    count == walls.iter().filter(|w| !**w).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenerationConfig {
        GenerationConfig {
            width: 8,
            height: 8,
            horizon: 10,
            features: FeatureParams {
                anchors_x: 6,
                anchors_y: 6,
                bandwidth: 2.0,
                lookahead: 0.5,
            },
            start_margin: 3.0,
            start_probability: 0.95,
            reward_hazard_strength: 2.0,
            background: 0.0,
            delta: 0.3,
            l_phi: 0.5,
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let g = Generator::new(small_config()).unwrap();
        let a = g.generate(11).unwrap();
        let b = g.generate(11).unwrap();
        assert_eq!(a.walls, b.walls);
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.w_star, b.w_star);
        assert_eq!(a.rejections, b.rejections);
    }

    #[test]
    fn generated_world_satisfies_invariants() {
        let g = Generator::new(small_config()).unwrap();
        let world = g.generate(5).unwrap();
        let m = world.feature_dim() as f64;
        let wn = world.w_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(wn <= m.sqrt());
        assert!(mu(world.f_sharp_start()) >= 0.95);
        assert!(!world.is_wall(world.start()));
        assert!(world.reward.iter().all(|r| (0.0..=1.0).contains(r)));
        assert!(connected(&world.walls, world.width, world.height, world.start()));
    }

    #[test]
    fn unattainable_feasibility_is_reported() {
        let cfg = GenerationConfig {
            start_margin: 1e9,
            max_retries: 3,
            ..small_config()
        };
        let g = Generator::new(cfg).unwrap();
        match g.generate(1) {
            Err(Error::Generation { seed, attempts, .. }) => {
                assert_eq!(seed, 1);
                assert_eq!(attempts, 3);
            }
            other => panic!("expected a generation error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        for cfg in [
            GenerationConfig {
                width: 1,
                ..small_config()
            },
            GenerationConfig {
                slip: 0.0,
                ..small_config()
            },
            GenerationConfig {
                slip: 1.5,
                ..small_config()
            },
        ] {
            assert!(Generator::new(cfg).is_err());
        }
    }

    #[test]
    fn connectivity_detects_enclosed_cells() {
        // A wall column splits a 3x3 grid.
        let walls = vec![false, true, false, false, true, false, false, true, false];
        assert!(!connected(&walls, 3, 3, Cell::new(0, 0)));
        assert!(connected(&[false; 9], 3, 3, Cell::new(0, 0)));
    }
}

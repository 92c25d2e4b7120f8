//! JSON world files.
//!
//! Schema (all keys required):
//! - `format`: always `"lobisarl-world"`; `version`: 1
//! - `seed`, `width`, `height`, `horizon`, `rejections`
//! - `slip`, `stay_enabled`, `stay_slips`, `start`: `{x, y}`
//! - `features`: `{anchors_x, anchors_y, bandwidth, lookahead}`
//! - `walls`: one string per row, `y = 0` first, `#` for a wall and `.` otherwise
//! - `reward`: pair-major rewards, pair index `(y * width + x) * |A| + action`
//! - `w_star`: true safety weights

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Action, Cell, FeatureMap, FeatureParams, GridWorld};
use crate::error::{Error, Result};

const FORMAT: &str = "lobisarl-world";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    pub rejections: usize,
    pub slip: f64,
    pub stay_enabled: bool,
    pub stay_slips: bool,
    pub start: Cell,
    pub features: FeatureParams,
    pub walls: Vec<String>,
    pub reward: Vec<f64>,
    pub w_star: Vec<f64>,
}

impl WorldFile {
    pub fn from_world(g: &GridWorld) -> Self {
        let walls = (0..g.height)
            .map(|y| {
                (0..g.width)
                    .map(|x| if g.walls[y * g.width + x] { '#' } else { '.' })
                    .collect()
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed: g.seed,
            width: g.width,
            height: g.height,
            horizon: g.horizon,
            rejections: g.rejections,
            slip: g.slip,
            stay_enabled: g.stay_enabled(),
            stay_slips: g.stay_slips,
            start: g.s1,
            features: g.features.params(),
            walls,
            reward: g.reward.clone(),
            w_star: g.w_star.clone(),
        }
    }

    /// Rebuilds the world, reusing `features` when it matches.
    pub fn into_world(self, features: Option<Arc<FeatureMap>>) -> Result<GridWorld> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported world format {:?} version {}",
                self.format, self.version
            )));
        }
        if self.walls.len() != self.height || self.walls.iter().any(|r| r.chars().count() != self.width) {
            return Err(Error::Config("wall bitmap does not match the grid size".into()));
        }
        let mut walls = Vec::with_capacity(self.width * self.height);
        for row in &self.walls {
            for ch in row.chars() {
                walls.push(match ch {
                    '#' => true,
                    '.' => false,
                    other => return Err(Error::Config(format!("unexpected wall character {other:?}"))),
                });
            }
        }
        let actions: &[Action] = if self.stay_enabled {
            &Action::ALL
        } else {
            &Action::COMPASS
        };
        let map = match features {
            Some(map)
                if map.width() == self.width
                    && map.height() == self.height
                    && map.actions() == actions
                    && map.params() == self.features =>
            {
                map
            }
            _ => Arc::new(FeatureMap::new(self.width, self.height, actions, self.features)?),
        };
        GridWorld::assemble(
            map,
            walls,
            self.reward,
            self.w_star,
            self.slip,
            self.stay_slips,
            self.start,
            self.horizon,
            self.seed,
            self.rejections,
        )
    }
}

impl GridWorld {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&WorldFile::from_world(self)).expect("world files always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorldFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        file.into_world(None)
    }
}

pub fn write_world(g: &GridWorld, path: &Path) -> Result<()> {
    fs::write(path, g.to_json() + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_world(path: &Path) -> Result<GridWorld> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: WorldFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.into_world(None)
}

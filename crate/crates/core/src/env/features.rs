use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Action, Cell};
use crate::bounds::FeatureDomain;
use crate::error::{Error, Result};
use crate::glm::FeatureVector;

/// Radial-basis feature construction.
///
/// Anchors sit on an `anchors_x x anchors_y` lattice spanning the grid. The
/// feature vector of `(s, a)` is the unit-normalized vector of Gaussian
/// activations at the point `s + lookahead * offset(a)`, a point part-way
/// toward the intended next cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub anchors_x: usize,
    pub anchors_y: usize,
    pub bandwidth: f64,
    pub lookahead: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            anchors_x: 16,
            anchors_y: 16,
            bandwidth: 5.4,
            lookahead: 0.5,
        }
    }
}

impl FeatureParams {
    pub fn dim(&self) -> usize {
        self.anchors_x * self.anchors_y
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors_x == 0 || self.anchors_y == 0 {
            return Err(Error::Config("anchor counts must be at least 1".into()));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(0.0..=1.0).contains(&self.lookahead) {
            return Err(Error::Config(format!(
                "lookahead must lie in [0,1], got {}",
                self.lookahead
            )));
        }
        Ok(())
    }
}

/// Precomputed features for every state-action pair of a grid.
///
/// Pair `(s, a)` has index `cell_index(s) * |A| + position(a)`.
#[derive(Debug)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    actions: Vec<Action>,
    params: FeatureParams,
    anchors: Vec<(f64, f64)>,
    table: Vec<f64>,
    spans: Mutex<Vec<(f64, Arc<FeatureSpan>)>>,
}

/// Shrinks normalized vectors so rounding can never push a norm above one.
const NORM_SHRINK: f64 = 1.0 + 1e-12;

fn lattice(count: usize, extent: usize) -> Vec<f64> {
    if count == 1 {
        return vec![(extent as f64 - 1.0) / 2.0];
    }
    let step = (extent as f64 - 1.0) / (count as f64 - 1.0);
    (0..count).map(|i| i as f64 * step).collect()
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, actions: &[Action], params: FeatureParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 || actions.is_empty() {
            return Err(Error::Config("feature map needs a nonempty grid and action set".into()));
        }
        let xs = lattice(params.anchors_x, width);
        let ys = lattice(params.anchors_y, height);
        let anchors: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        let mut map = Self {
            width,
            height,
            actions: actions.to_vec(),
            params,
            anchors,
            table: Vec::new(),
            spans: Mutex::new(Vec::new()),
        };
        let m = map.dim();
        let mut table = Vec::with_capacity(width * height * actions.len() * m);
        for y in 0..height {
            for x in 0..width {
                for &a in actions {
                    let (dx, dy) = a.offset();
                    let px = x as f64 + params.lookahead * dx as f64;
                    let py = y as f64 + params.lookahead * dy as f64;
                    table.extend(map.at_point(px, py)?);
                }
            }
        }
        map.table = table;
        Ok(map)
    }

    pub fn params(&self) -> FeatureParams {
        self.params
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Feature dimension `m`.
    pub fn dim(&self) -> usize {
        self.anchors.len()
    }

    pub fn pair_count(&self) -> usize {
        self.width * self.height * self.actions.len()
    }

    pub fn pair_index(&self, cell: Cell, action: Action) -> Result<usize> {
        if cell.x >= self.width || cell.y >= self.height {
            return Err(Error::domain(format!("cell {cell} outside the grid")));
        }
        let pos = self
            .actions
            .iter()
            .position(|&a| a == action)
            .ok_or_else(|| Error::domain(format!("action {action} is not in the action set")))?;
        Ok((cell.y * self.width + cell.x) * self.actions.len() + pos)
    }

    /// Feature row of a pair index.
    pub fn row(&self, index: usize) -> &[f64] {
        let m = self.dim();
        &self.table[index * m..(index + 1) * m]
    }

    pub fn features(&self, cell: Cell, action: Action) -> Result<FeatureVector> {
        let idx = self.pair_index(cell, action)?;
        FeatureVector::new(self.row(idx).to_vec())
    }

    /// Normalized activations at an arbitrary point of the plane.
    pub fn at_point(&self, px: f64, py: f64) -> Result<Vec<f64>> {
        let inv = 1.0 / (2.0 * self.params.bandwidth * self.params.bandwidth);
        let v: Vec<f64> = self
            .anchors
            .iter()
            .map(|&(ax, ay)| (-((px - ax).powi(2) + (py - ay).powi(2)) * inv).exp())
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::domain(format!(
                "point ({px}, {py}) has no anchor support at bandwidth {}",
                self.params.bandwidth
            )));
        }
        let scale = 1.0 / (norm * NORM_SHRINK);
        Ok(v.into_iter().map(|x| x * scale).collect())
    }

    /// Orthonormal coordinates for the span of all feature rows, computed
    /// once per tolerance and shared.
    pub fn span(&self, tolerance: f64) -> Arc<FeatureSpan> {
        let mut spans = self.spans.lock().expect("span cache lock");
        if let Some((_, span)) = spans.iter().find(|(t, _)| *t == tolerance) {
            return span.clone();
        }
        let span = Arc::new(FeatureSpan::new(self, tolerance));
        spans.push((tolerance, span.clone()));
        span
    }
}

/// An orthonormal basis `U` (m x r) of the numerical span of the feature
/// table, and the coordinates `U^T phi` of every pair.
///
/// Inner products with any weight vector in the span are preserved exactly,
/// so a GLM fitted in these coordinates is the GLM restricted to the span.
#[derive(Debug)]
pub struct FeatureSpan {
    basis: DMatrix<f64>,
    coords: DMatrix<f64>,
    max_residual: f64,
}

impl FeatureSpan {
    /// Largest dropped component tolerated for any feature row.
    pub const DEFAULT_TOLERANCE: f64 = 1e-6;

    pub fn new(map: &FeatureMap, tolerance: f64) -> Self {
        let n = map.pair_count();
        let m = map.dim();
        let table = DMatrix::from_row_slice(n, m, &map.table);
        let gram = table.tr_mul(&table);
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let full = DMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])]);
        let coords_full = full.tr_mul(&table.transpose());

        // tail[k][i] = squared norm of pair i outside the first k basis vectors.
        let mut tail = vec![0.0; n];
        let mut max_tail = vec![0.0; m + 1];
        for k in (0..m).rev() {
            for (i, t) in tail.iter_mut().enumerate() {
                *t += coords_full[(k, i)] * coords_full[(k, i)];
            }
            max_tail[k] = tail.iter().cloned().fold(0.0, f64::max).sqrt();
        }
        let rank = (1..=m).find(|&r| max_tail[r] <= tolerance).unwrap_or(m);
        Self {
            basis: full.columns(0, rank).into_owned(),
            coords: coords_full.rows(0, rank).into_owned(),
            max_residual: max_tail[rank],
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Largest norm of the part of a feature row outside the span.
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// Coordinates of every pair, one column per pair index.
    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn coord(&self, index: usize) -> Vec<f64> {
        self.coords.column(index).iter().cloned().collect()
    }

    /// Lifts span coordinates back to the full feature space.
    pub fn lift(&self, reduced: &[f64]) -> Vec<f64> {
        let v = &self.basis * nalgebra::DVector::from_column_slice(reduced);
        v.as_slice().to_vec()
    }
}

/// The pairs of a grid viewed as a metric space under `d_S + d_A`.
pub struct PairDomain<'a> {
    pub map: &'a FeatureMap,
}

impl FeatureDomain for PairDomain<'_> {
    fn point_count(&self) -> usize {
        self.map.pair_count()
    }

    fn point_features(&self, i: usize) -> &[f64] {
        self.map.row(i)
    }

    fn point_distance(&self, i: usize, j: usize) -> f64 {
        let k = self.map.actions.len();
        let (ci, cj) = (i / k, j / k);
        let (xi, yi) = (ci % self.map.width, ci / self.map.width);
        let (xj, yj) = (cj % self.map.width, cj / self.map.width);
        let ds = xi.abs_diff(xj) + yi.abs_diff(yj);
        let da = usize::from(i % k != j % k);
        (ds + da) as f64
    }
}

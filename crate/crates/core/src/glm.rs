//! Logistic generalized-linear safety model.
//!
//! The safety label of a state-action pair is Bernoulli with mean
//! `mu(<phi, w*>)`. This module fits `w*` by (optionally norm-constrained)
//! maximum likelihood and turns the design matrix into confidence widths.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Slack allowed when checking the unit-norm cap of a feature vector.
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-9;

/// Relative pivot size below which a Cholesky factor is treated as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// Logistic link `exp(x) / (1 + exp(x))`, evaluated without overflow.
pub fn mu(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic link, `mu(x) * (1 - mu(x))`.
pub fn mu_dot(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Inverse of the logistic link (the logit).
pub fn mu_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("mu_inverse requires p in (0,1), got {p}")));
    }
    Ok(p.ln() - (-p).ln_1p())
}

/// `log(1 + exp(x))` without overflow or cancellation.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Smallest link slope over predictors with magnitude at most `weight_radius`.
///
/// For the logistic link the slope is symmetric and decreasing in `|x|`, so
/// the infimum is attained on the boundary.
pub fn xi_floor(m: usize, weight_radius: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("xi_floor requires m >= 1"));
    }
    if !(weight_radius >= 0.0) || !weight_radius.is_finite() {
        return Err(Error::domain(format!(
            "xi_floor requires a finite nonnegative radius, got {weight_radius}"
        )));
    }
    Ok(mu_dot(weight_radius))
}

/// Confidence width `(3 sigma / xi) * sqrt(log(3 / Delta))`.
pub fn beta(sigma: f64, xi: f64, delta_cap: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("sigma must be nonnegative, got {sigma}")));
    }
    if !(xi > 0.0) {
        return Err(Error::domain(format!("xi must be positive, got {xi}")));
    }
    if !(delta_cap > 0.0 && delta_cap < 1.0) {
        return Err(Error::domain(format!("Delta must lie in (0,1), got {delta_cap}")));
    }
    Ok(3.0 * sigma / xi * (3.0 / delta_cap).ln().sqrt())
}

/// Parameters of the GLM confidence set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceParams {
    pub sigma: f64,
    pub xi: f64,
    pub delta_cap: f64,
    pub beta: f64,
}

impl ConfidenceParams {
    pub fn new(sigma: f64, xi: f64, delta_cap: f64) -> Result<Self> {
        let beta = beta(sigma, xi, delta_cap)?;
        Ok(Self {
            sigma,
            xi,
            delta_cap,
            beta,
        })
    }

    /// Parameters for an `m`-dimensional model whose weights lie within
    /// distance one of the ball of radius `sqrt(m)`.
    pub fn for_dimension(m: usize, sigma: f64, delta_cap: f64) -> Result<Self> {
        let xi = xi_floor(m, (m as f64).sqrt() + 1.0)?;
        Self::new(sigma, xi, delta_cap)
    }
}

/// A feature vector `phi(s, a)` with Euclidean norm at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: DVector<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("feature vector must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature vector has non-finite entries"));
        }
        let norm = values.norm();
        if norm > 1.0 + FEATURE_NORM_TOLERANCE {
            return Err(Error::domain(format!("feature norm {norm} exceeds 1")));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn dot(&self, w: &DVector<f64>) -> f64 {
        self.values.dot(w)
    }
}

/// One binary safety observation; `label == true` means the pair was safe.
#[derive(Clone, Debug, PartialEq)]
pub struct SafetyObservation {
    pub features: FeatureVector,
    pub label: bool,
}

/// Observations aggregated by distinct feature vector.
///
/// Repeated visits to the same pair only bump a count, which keeps Newton
/// iterations proportional to the number of distinct pairs.
#[derive(Clone, Debug)]
pub struct SafetyDataset {
    dim: usize,
    rows: Vec<f64>,
    counts: Vec<f64>,
    positives: Vec<f64>,
    keys: HashMap<u64, usize>,
    total: usize,
}

impl SafetyDataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            counts: Vec::new(),
            positives: Vec::new(),
            keys: HashMap::new(),
            total: 0,
        }
    }

    pub fn from_observations(dim: usize, data: &[SafetyObservation]) -> Result<Self> {
        let mut set = Self::new(dim);
        for obs in data {
            set.push(obs)?;
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of observations (not distinct rows).
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct_rows(&self) -> usize {
        self.counts.len()
    }

    /// Appends an observation as its own row.
    pub fn push(&mut self, obs: &SafetyObservation) -> Result<()> {
        self.check_dim(obs.features.as_slice())?;
        self.new_row(obs.features.as_slice(), obs.label);
        Ok(())
    }

    /// Appends an observation, merging it with earlier ones carrying `key`.
    ///
    /// The caller guarantees that equal keys mean equal features.
    pub fn push_keyed(&mut self, key: u64, features: &[f64], label: bool) -> Result<()> {
        self.check_dim(features)?;
        match self.keys.get(&key) {
            Some(&row) => {
                self.counts[row] += 1.0;
                if label {
                    self.positives[row] += 1.0;
                }
                self.total += 1;
            }
            None => {
                self.keys.insert(key, self.counts.len());
                self.new_row(features, label);
            }
        }
        Ok(())
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::domain(format!(
                "feature dimension {} does not match dataset dimension {}",
                features.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn new_row(&mut self, features: &[f64], label: bool) {
        self.rows.extend_from_slice(features);
        self.counts.push(1.0);
        self.positives.push(if label { 1.0 } else { 0.0 });
        self.total += 1;
    }

    fn design_rows(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.counts.len(), self.dim, &self.rows)
    }

    /// `sum_i phi_i phi_i^T + ridge * I`.
    pub fn design_matrix(&self, ridge: f64) -> DMatrix<f64> {
        let x = self.design_rows();
        let mut scaled = x.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.counts[i];
        }
        let mut w = x.tr_mul(&scaled);
        for i in 0..self.dim {
            w[(i, i)] += ridge;
        }
        w
    }

    /// `sum_i y_i phi_i` over all observations.
    pub fn label_moment(&self) -> DVector<f64> {
        self.design_rows().tr_mul(&DVector::from_column_slice(&self.positives))
    }

    /// Per-row observation counts and positive-label counts.
    pub fn counts(&self) -> (&[f64], &[f64]) {
        (&self.counts, &self.positives)
    }
}

/// Solver settings for maximum likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleOptions {
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// A fitted safety model: weights, design matrix and its factorization.
#[derive(Clone, Debug)]
pub struct GlmEstimate {
    weights: DVector<f64>,
    design_matrix: DMatrix<f64>,
    sample_count: usize,
    ridge: f64,
    penalty: f64,
    iterations: usize,
    residual: f64,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl GlmEstimate {
    /// Builds an estimate from explicit parts; the design matrix must be
    /// square, symmetric and match the weight dimension.
    pub fn from_parts(
        weights: DVector<f64>,
        design_matrix: DMatrix<f64>,
        sample_count: usize,
        ridge: f64,
    ) -> Result<Self> {
        let m = weights.len();
        if design_matrix.nrows() != m || design_matrix.ncols() != m {
            return Err(Error::domain(format!(
                "design matrix is {}x{}, expected {m}x{m}",
                design_matrix.nrows(),
                design_matrix.ncols()
            )));
        }
        if !(ridge >= 0.0) {
            return Err(Error::domain("ridge must be nonnegative"));
        }
        let factor = factorize(&design_matrix);
        Ok(Self {
            weights,
            design_matrix,
            sample_count,
            ridge,
            penalty: ridge,
            iterations: 0,
            residual: 0.0,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.design_matrix
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Likelihood penalty at the returned solution. Equals the ridge unless a
    /// weight-norm constraint was active, in which case it is the multiplier
    /// that enforces it.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Gradient norm of the penalized negative log-likelihood at the solution.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn is_invertible(&self) -> bool {
        self.factor.is_some()
    }

    /// Linear predictor `<phi, w_hat>`.
    pub fn predict(&self, phi: &[f64]) -> f64 {
        phi.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum()
    }

    /// `sqrt(phi^T W^{-1} phi)` through the Cholesky factor.
    pub fn weighted_norm_of(&self, phi: &[f64]) -> Result<f64> {
        let factor = self.factor()?;
        if phi.len() != self.dim() {
            return Err(Error::domain("feature dimension mismatch"));
        }
        let mut y = DVector::from_column_slice(phi);
        factor.l_dirty().solve_lower_triangular_mut(&mut y);
        Ok(y.norm())
    }

    /// Weighted norms of every column of `columns` (one feature vector per column).
    pub fn weighted_norms(&self, columns: &DMatrix<f64>) -> Result<Vec<f64>> {
        let factor = self.factor()?;
        if columns.nrows() != self.dim() {
            return Err(Error::domain("feature dimension mismatch"));
        }
        let mut y = columns.clone();
        factor.l_dirty().solve_lower_triangular_mut(&mut y);
        Ok(y.column_iter().map(|c| c.norm()).collect())
    }

    fn factor(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.factor.as_ref().ok_or_else(|| {
            Error::Singular(format!(
                "design matrix is not invertible (n = {}, ridge = {})",
                self.sample_count, self.ridge
            ))
        })
    }
}

fn factorize(w: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if w.nrows() == 0 {
        return None;
    }
    let scale = (0..w.nrows()).map(|i| w[(i, i)].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let chol = Cholesky::new(w.clone())?;
    let l = chol.l_dirty();
    let min_pivot = (0..w.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= SINGULAR_PIVOT * scale {
        return None;
    }
    Some(chol)
}

/// `sqrt(phi^T W_n^{-1} phi)`.
pub fn weighted_norm(phi: &FeatureVector, est: &GlmEstimate) -> Result<f64> {
    est.weighted_norm_of(phi.as_slice())
}

/// Pessimistic predictor `<phi, w_hat> - beta * ||phi||_{W^{-1}}`.
pub fn lower_glm(phi: &FeatureVector, est: &GlmEstimate, beta: f64) -> Result<f64> {
    Ok(est.predict(phi.as_slice()) - beta * weighted_norm(phi, est)?)
}

/// Maximum-likelihood fit of the logistic model to raw observations.
pub fn fit_mle(dim: usize, data: &[SafetyObservation], opts: &MleOptions) -> Result<GlmEstimate> {
    let set = SafetyDataset::from_observations(dim, data)?;
    fit_dataset(&set, opts, None)
}

/// Maximum-likelihood fit on an aggregated dataset, optionally warm-started.
pub fn fit_dataset(data: &SafetyDataset, opts: &MleOptions, warm_start: Option<&DVector<f64>>) -> Result<GlmEstimate> {
    check_options(data, opts)?;
    let problem = Problem::new(data);
    let start = initial_point(data.dim(), warm_start)?;
    let sol = problem.newton(start, opts.ridge, opts.tol, opts.max_iter)?;
    if opts.ridge == 0.0 && problem.separates(&sol.weights) {
        return Err(Error::Convergence {
            iterations: sol.iterations,
            residual: sol.residual,
            weights: sol.weights.as_slice().to_vec(),
        });
    }
    Ok(finish(data, opts, sol, opts.ridge))
}

/// Maximum-likelihood fit restricted to the ball `||w|| <= radius`.
///
/// The constrained optimum solves the ridge-penalized problem for the
/// smallest penalty (at least `opts.ridge`) whose solution lies in the ball,
/// so the search runs over the log-penalty with warm-started Newton solves.
/// `warm_start` supplies the weights and penalty of an earlier fit.
pub fn fit_dataset_constrained(
    data: &SafetyDataset,
    opts: &MleOptions,
    radius: f64,
    warm_start: Option<(&DVector<f64>, f64)>,
) -> Result<GlmEstimate> {
    if !(radius > 0.0) {
        return Err(Error::domain(format!("weight radius must be positive, got {radius}")));
    }
    check_options(data, opts)?;
    let problem = Problem::new(data);
    let start = initial_point(data.dim(), warm_start.map(|w| w.0))?;

    // Penalty exp(t), clamped below at the ridge; t_min stands for the ridge itself.
    let t_min = opts.ridge.max(1e-12).ln();
    let penalty = |t: f64| if t <= t_min { opts.ridge } else { t.exp() };
    let solve = |w: DVector<f64>, t: f64| problem.newton(w, penalty(t), opts.tol, opts.max_iter);
    // g(t) = log ||w(t)|| - log radius is nonincreasing in t.
    let target = radius.ln();
    let gap = |s: &Solution| s.weights.norm().ln() - target;
    const STEP: f64 = 2.0;

    let t0 = match warm_start {
        Some((_, p)) if p > 0.0 && p.is_finite() => p.ln().max(t_min),
        _ => (data.len().max(1) as f64).ln().max(t_min),
    };
    let first = solve(start, t0)?;
    let (mut lo, mut hi, mut inside);
    if gap(&first) <= 0.0 {
        // Inside: relax the penalty until the ball constraint binds.
        let mut t = t0;
        let mut g = gap(&first);
        inside = first;
        loop {
            if t <= t_min {
                return Ok(finish(data, opts, inside, opts.ridge));
            }
            let t_next = (t - STEP).max(t_min);
            let s = solve(inside.weights.clone(), t_next)?;
            let g_next = gap(&s);
            if g_next > 0.0 {
                lo = (t_next, g_next);
                hi = (t, g);
                break;
            }
            t = t_next;
            g = g_next;
            inside = s;
        }
    } else {
        // Outside: tighten until the solution enters the ball.
        let mut t = t0;
        let mut g = gap(&first);
        let mut cur = first;
        loop {
            let t_next = t + STEP;
            if t_next > 80.0 {
                return Err(Error::domain("weight constraint cannot be met"));
            }
            let s = solve(cur.weights.clone(), t_next)?;
            let g_next = gap(&s);
            if g_next <= 0.0 {
                lo = (t, g);
                hi = (t_next, g_next);
                inside = s;
                break;
            }
            t = t_next;
            g = g_next;
            cur = s;
        }
    }

    // Illinois regula falsi; accept solutions just inside the ball.
    let accept = (1.0 - 1e-3_f64).ln();
    let mut side = 0i8;
    for _ in 0..60 {
        if hi.1 >= accept || hi.0 - lo.0 < 1e-9 {
            break;
        }
        let t_new = (lo.0 * hi.1 - hi.0 * lo.1) / (hi.1 - lo.1);
        let t_new = if t_new.is_finite() && t_new > lo.0 && t_new < hi.0 {
            t_new
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let s = solve(inside.weights.clone(), t_new)?;
        let g = gap(&s);
        if g <= 0.0 {
            hi = (t_new, g);
            inside = s;
            if side == -1 {
                lo.1 *= 0.5;
            }
            side = -1;
        } else {
            lo = (t_new, g);
            if side == 1 {
                hi.1 *= 0.5;
            }
            side = 1;
        }
    }
    Ok(finish(data, opts, inside, penalty(hi.0)))
}

fn check_options(data: &SafetyDataset, opts: &MleOptions) -> Result<()> {
    if data.dim() == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    if !(opts.ridge >= 0.0) || !opts.ridge.is_finite() {
        return Err(Error::domain("ridge must be finite and nonnegative"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if data.is_empty() && opts.ridge == 0.0 {
        return Err(Error::domain("empty data requires a positive ridge"));
    }
    Ok(())
}

fn initial_point(dim: usize, warm_start: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    match warm_start {
        Some(w) if w.len() == dim => Ok(w.clone()),
        Some(w) => Err(Error::domain(format!(
            "warm start has dimension {}, expected {dim}",
            w.len()
        ))),
        None => Ok(DVector::zeros(dim)),
    }
}

fn finish(data: &SafetyDataset, opts: &MleOptions, sol: Solution, penalty: f64) -> GlmEstimate {
    let design_matrix = data.design_matrix(opts.ridge);
    let factor = factorize(&design_matrix);
    GlmEstimate {
        weights: sol.weights,
        design_matrix,
        sample_count: data.len(),
        ridge: opts.ridge,
        penalty,
        iterations: sol.iterations,
        residual: sol.residual,
        factor,
    }
}

struct Solution {
    weights: DVector<f64>,
    iterations: usize,
    residual: f64,
}

struct Problem<'a> {
    x: DMatrix<f64>,
    counts: &'a [f64],
    positives: &'a [f64],
}

impl<'a> Problem<'a> {
    fn new(data: &'a SafetyDataset) -> Self {
        Self {
            x: data.design_rows(),
            counts: &data.counts,
            positives: &data.positives,
        }
    }

    fn objective(&self, w: &DVector<f64>, penalty: f64) -> f64 {
        let f = &self.x * w;
        let nll: f64 = f
            .iter()
            .zip(self.counts.iter().zip(self.positives))
            .map(|(&fi, (&c, &p))| c * softplus(fi) - p * fi)
            .sum();
        nll + 0.5 * penalty * w.norm_squared()
    }

    fn gradient(&self, w: &DVector<f64>, f: &DVector<f64>, penalty: f64) -> DVector<f64> {
        let r = DVector::from_iterator(
            f.len(),
            f.iter()
                .zip(self.counts.iter().zip(self.positives))
                .map(|(&fi, (&c, &p))| c * mu(fi) - p),
        );
        self.x.tr_mul(&r) + w * penalty
    }

    fn hessian(&self, f: &DVector<f64>, penalty: f64) -> DMatrix<f64> {
        let mut xs = self.x.clone();
        for (i, mut row) in xs.row_iter_mut().enumerate() {
            row *= (self.counts[i] * mu_dot(f[i])).sqrt();
        }
        let mut h = xs.tr_mul(&xs);
        for i in 0..h.nrows() {
            h[(i, i)] += penalty;
        }
        h
    }

    /// Damped Newton with step halving on the penalized negative log-likelihood.
    fn newton(&self, mut w: DVector<f64>, penalty: f64, tol: f64, max_iter: usize) -> Result<Solution> {
        let mut value = self.objective(&w, penalty);
        for iter in 0..=max_iter {
            let f = &self.x * &w;
            let grad = self.gradient(&w, &f, penalty);
            let residual = grad.norm();
            if residual <= tol {
                return Ok(Solution {
                    weights: w,
                    iterations: iter,
                    residual,
                });
            }
            if iter == max_iter {
                return Err(Error::Convergence {
                    iterations: iter,
                    residual,
                    weights: w.as_slice().to_vec(),
                });
            }
            let direction = solve_spd(self.hessian(&f, penalty), &grad).ok_or_else(|| Error::Convergence {
                iterations: iter,
                residual,
                weights: w.as_slice().to_vec(),
            })?;
            let slope = grad.dot(&direction);
            // Once the predicted decrease is below the objective's rounding
            // level, Armijo cannot see progress; the full step is then taken
            // when it shrinks the gradient.
            if slope <= 1e-10 * value.abs().max(1.0) {
                let candidate = &w - &direction;
                let f_c = &self.x * &candidate;
                if self.gradient(&candidate, &f_c, penalty).norm() < residual {
                    value = self.objective(&candidate, penalty);
                    w = candidate;
                    continue;
                }
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let candidate = &w - &direction * step;
                let v = self.objective(&candidate, penalty);
                if v < value - 1e-4 * step * slope {
                    w = candidate;
                    value = v;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(Error::Convergence {
                    iterations: iter + 1,
                    residual,
                    weights: w.as_slice().to_vec(),
                });
            }
        }
        unreachable!("loop returns by max_iter")
    }

    /// True when every observation lies strictly on its label's side of the
    /// hyperplane, in which case no finite unpenalized maximizer exists.
    fn separates(&self, w: &DVector<f64>) -> bool {
        let f = &self.x * w;
        f.iter()
            .zip(self.counts.iter().zip(self.positives))
            .all(|(&fi, (&c, &p))| (p == c && fi > 0.0) || (p == 0.0 && fi < 0.0))
    }
}

/// Solves `h d = g` for symmetric positive semidefinite `h`, adding a small
/// diagonal shift when the matrix is numerically singular.
fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = Cholesky::new(h.clone()) {
        return Some(chol.solve(g));
    }
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut shift = 1e-12 * scale;
    for _ in 0..12 {
        let mut shifted = h.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Some(chol.solve(g));
        }
        shift *= 10.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn obs(v: &[f64], label: bool) -> SafetyObservation {
        SafetyObservation {
            features: FeatureVector::new(v.to_vec()).unwrap(),
            label,
        }
    }

    #[test]
    fn link_examples() {
        assert_eq!(mu(0.0), 0.5);
        assert_relative_eq!(mu(3f64.ln()), 0.75, epsilon = 1e-15);
        let tail = mu(-50.0);
        assert!(tail > 0.0 && tail < 1e-20);
        assert_eq!(mu(800.0), 1.0);
        assert!(mu(-800.0) >= 0.0);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(mu_inverse(0.5).unwrap(), 0.0);
        assert_relative_eq!(mu_inverse(0.75).unwrap(), 3f64.ln(), epsilon = 1e-14);
        assert!(matches!(mu_inverse(1.0), Err(Error::Domain(_))));
        assert!(matches!(mu_inverse(0.0), Err(Error::Domain(_))));
        assert!(mu_inverse(f64::NAN).is_err());
    }

    #[test]
    fn xi_floor_examples() {
        assert_eq!(xi_floor(1, 0.0).unwrap(), 0.25);
        assert_relative_eq!(xi_floor(4, 2.0).unwrap(), 0.104_993_585_4, epsilon = 1e-9);
        assert_relative_eq!(xi_floor(4, 3.0).unwrap(), 0.045_176_659_5, epsilon = 1e-9);
        assert!(xi_floor(4, -1.0).is_err());
        assert!(xi_floor(0, 1.0).is_err());
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta(0.0, 0.3, 0.05).unwrap(), 0.0);
        assert_relative_eq!(beta(0.5, 0.25, 0.05).unwrap(), 12.140_69, epsilon = 1e-4);
        assert_relative_eq!(
            beta(0.5, 0.25, 0.5).unwrap(),
            6.0 * 6.0_f64.ln().sqrt(),
            epsilon = 1e-12
        );
        assert!(beta(0.5, 0.0, 0.05).is_err());
        assert!(beta(0.5, 0.25, 1.0).is_err());
        let p = ConfidenceParams::new(0.5, 0.25, 0.05).unwrap();
        assert_eq!(p.beta, beta(0.5, 0.25, 0.05).unwrap());
    }

    #[test]
    fn feature_vector_rejects_long_vectors() {
        assert!(FeatureVector::new(vec![0.6, 0.8]).is_ok());
        assert!(FeatureVector::new(vec![1.0, 0.1]).is_err());
        assert!(FeatureVector::new(vec![]).is_err());
    }

    #[test]
    fn one_dimensional_closed_form() {
        let mut data = vec![obs(&[1.0], true); 3];
        data.push(obs(&[1.0], false));
        let opts = MleOptions {
            ridge: 0.0,
            ..Default::default()
        };
        let est = fit_mle(1, &data, &opts).unwrap();
        assert!((est.weights()[0] - 3f64.ln()).abs() < 1e-9);
        assert!(est.residual() <= 1e-8);
        assert_eq!(est.sample_count(), 4);
    }

    #[test]
    fn empty_data_with_ridge_gives_zero() {
        let opts = MleOptions {
            ridge: 1.0,
            ..Default::default()
        };
        let est = fit_mle(3, &[], &opts).unwrap();
        assert!(est.weights().iter().all(|&w| w == 0.0));
        assert_eq!(est.design_matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn empty_data_without_ridge_is_rejected() {
        let opts = MleOptions {
            ridge: 0.0,
            ..Default::default()
        };
        assert!(fit_mle(2, &[], &opts).is_err());
    }

    #[test]
    fn separable_data_without_ridge_diverges() {
        let data = vec![obs(&[1.0], true), obs(&[-1.0], false)];
        let opts = MleOptions {
            ridge: 0.0,
            ..Default::default()
        };
        assert!(matches!(fit_mle(1, &data, &opts), Err(Error::Convergence { .. })));
    }

    #[test]
    fn max_iter_exhaustion_reports_last_iterate() {
        let mut data = vec![obs(&[1.0], true); 3];
        data.push(obs(&[1.0], false));
        let opts = MleOptions {
            ridge: 0.0,
            tol: 1e-8,
            max_iter: 1,
        };
        match fit_mle(1, &data, &opts) {
            Err(Error::Convergence {
                iterations, weights, ..
            }) => {
                assert_eq!(iterations, 1);
                assert_eq!(weights.len(), 1);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn weighted_norm_examples() {
        let est = GlmEstimate::from_parts(DVector::zeros(2), DMatrix::identity(2, 2), 0, 1.0).unwrap();
        let phi = FeatureVector::new(vec![0.6, 0.8]).unwrap();
        assert_relative_eq!(weighted_norm(&phi, &est).unwrap(), 1.0, epsilon = 1e-15);

        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let est = GlmEstimate::from_parts(DVector::zeros(2), w, 0, 0.0).unwrap();
        let phi = FeatureVector::new(vec![1.0, 0.0]).unwrap();
        assert_relative_eq!(weighted_norm(&phi, &est).unwrap(), 0.5, epsilon = 1e-15);

        let est = GlmEstimate::from_parts(DVector::zeros(2), DMatrix::zeros(2, 2), 0, 0.0).unwrap();
        assert!(matches!(weighted_norm(&phi, &est), Err(Error::Singular(_))));
    }

    #[test]
    fn rank_deficient_design_is_singular() {
        let data = vec![obs(&[0.6, 0.8], true), obs(&[0.6, 0.8], false)];
        let set = SafetyDataset::from_observations(2, &data).unwrap();
        let est = GlmEstimate::from_parts(DVector::zeros(2), set.design_matrix(0.0), 2, 0.0).unwrap();
        assert!(!est.is_invertible());
    }

    #[test]
    fn lower_glm_examples() {
        let est = GlmEstimate::from_parts(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2), 0, 1.0).unwrap();
        let phi = FeatureVector::new(vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(lower_glm(&phi, &est, 0.0).unwrap(), 0.5);

        let est = GlmEstimate::from_parts(DVector::zeros(1), DMatrix::identity(1, 1), 0, 1.0).unwrap();
        let phi = FeatureVector::new(vec![1.0]).unwrap();
        assert_relative_eq!(lower_glm(&phi, &est, 2.0).unwrap(), -2.0);

        let est = GlmEstimate::from_parts(DVector::zeros(1), DMatrix::zeros(1, 1), 0, 0.0).unwrap();
        assert!(matches!(lower_glm(&phi, &est, 2.0), Err(Error::Singular(_))));
    }

    #[test]
    fn keyed_rows_match_unaggregated_fit() {
        let pts = [[0.3, 0.1], [-0.2, 0.5], [0.7, -0.4]];
        let labels = [true, false, true, true, false, true];
        let mut raw = Vec::new();
        let mut keyed = SafetyDataset::new(2);
        for (i, &label) in labels.iter().enumerate() {
            let p = pts[i % 3];
            raw.push(obs(&p, label));
            keyed.push_keyed((i % 3) as u64, &p, label).unwrap();
        }
        assert_eq!(keyed.distinct_rows(), 3);
        assert_eq!(keyed.len(), 6);
        let opts = MleOptions::default();
        let a = fit_mle(2, &raw, &opts).unwrap();
        let b = fit_dataset(&keyed, &opts, None).unwrap();
        assert!((a.weights() - b.weights()).norm() < 1e-7);
        assert!((a.design_matrix() - b.design_matrix()).norm() < 1e-12);
    }

    #[test]
    fn constrained_fit_respects_radius() {
        let mut set = SafetyDataset::new(2);
        for i in 0..40 {
            set.push_keyed(i % 2, if i % 2 == 0 { &[0.9, 0.1] } else { &[0.2, 0.9] }, true)
                .unwrap();
        }
        let opts = MleOptions::default();
        let free = fit_dataset(&set, &opts, None).unwrap();
        assert!(free.weights().norm() > 2.0);
        let est = fit_dataset_constrained(&set, &opts, 2.0, None).unwrap();
        let norm = est.weights().norm();
        assert!((2.0 * (1.0 - 2e-3)..=2.0).contains(&norm), "norm {norm}");
        assert!(est.penalty() > opts.ridge);
        assert!(est.residual() <= opts.tol);
        // Inactive constraint leaves the fit untouched.
        let mut mixed = SafetyDataset::new(2);
        for i in 0..40u64 {
            let phi: &[f64] = if i % 2 == 0 { &[0.9, 0.1] } else { &[0.2, 0.9] };
            mixed.push_keyed(i % 2, phi, i % 5 != 0).unwrap();
        }
        let free = fit_dataset(&mixed, &opts, None).unwrap();
        let loose = fit_dataset_constrained(&mixed, &opts, 1e6, None).unwrap();
        assert_eq!(loose.penalty(), opts.ridge);
        assert!((loose.weights() - free.weights()).norm() < 1e-8);
    }

    proptest! {
        #[test]
        fn mu_is_monotone(a in -40.0f64..40.0, b in -40.0f64..40.0) {
            prop_assume!(a < b - 1e-9);
            prop_assert!(mu(a) <= mu(b));
            // Above ~36 the logistic rounds to exactly 1.
            if b < 30.0 {
                prop_assert!(mu(a) < mu(b));
            }
        }

        #[test]
        fn inverse_round_trips(x in -12.0f64..12.0) {
            prop_assert!((mu_inverse(mu(x)).unwrap() - x).abs() <= 1e-9);
        }

        #[test]
        fn mu_of_inverse_round_trips(p in 1e-6f64..(1.0 - 1e-6)) {
            prop_assert!((mu(mu_inverse(p).unwrap()) - p).abs() <= 1e-12);
        }

        #[test]
        fn duplicated_observation_never_widens(
            pts in prop::collection::vec((-0.7f64..0.7, -0.7f64..0.7, any::<bool>()), 1..12),
            probe in (-0.7f64..0.7, -0.7f64..0.7),
            dup in 0usize..12,
        ) {
            let data: Vec<_> = pts.iter().map(|&(a, b, l)| obs(&[a, b], l)).collect();
            let opts = MleOptions { ridge: 1e-3, ..Default::default() };
            let before = fit_mle(2, &data, &opts).unwrap();
            let mut more = data.clone();
            more.push(data[dup % data.len()].clone());
            let after = fit_mle(2, &more, &opts).unwrap();
            let phi = FeatureVector::new(vec![probe.0, probe.1]).unwrap();
            let a = weighted_norm(&phi, &before).unwrap();
            let b = weighted_norm(&phi, &after).unwrap();
            prop_assert!(b <= a * (1.0 + 1e-12));
            prop_assert!(after.residual() <= opts.tol);
        }
    }
}

//! Linear-model safety baseline: ridge least squares on binary labels.

use crate::error::Result;
use crate::glm::{GlmEstimate, SafetyDataset};

/// Ridge least-squares fit `(sum phi phi^T + ridge I)^{-1} sum y phi`,
/// packaged as an estimate so it shares the weighted-norm machinery.
pub fn fit_least_squares(data: &SafetyDataset, ridge: f64) -> Result<GlmEstimate> {
    let w = data.design_matrix(ridge);
    let b = data.label_moment();
    let weights = match w.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => {
            w.clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| crate::error::Error::Singular(e.to_string()))?
                * b
        }
    };
    GlmEstimate::from_parts(weights, w, data.len(), ridge)
}

/// `<phi, w_ls> - width * ||phi||_{W^{-1}}`.
pub fn linear_baseline_bound(phi: &[f64], estimate: &GlmEstimate, width: f64) -> Result<f64> {
    let norm = if width == 0.0 {
        0.0
    } else {
        estimate.weighted_norm_of(phi)?
    };
    Ok(estimate.predict(phi) - width * norm)
}

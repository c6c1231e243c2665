use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{LossRecord, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Candidate positions, most representative first.
    pub ranked_indices: Vec<usize>,
    /// Row norms of `Q`, aligned with `ranked_indices`.
    pub scores: Vec<f64>,
    pub config: Option<ModelConfig>,
    pub final_losses: Option<LossRecord>,
}

impl SelectionResult {
    pub fn top(&self, m: usize) -> &[usize] {
        &self.ranked_indices[..m.min(self.ranked_indices.len())]
    }
}

/// Ranks samples by the ℓ2 norm of their row of `Q`, descending, ties to
/// the lower index.
pub fn rank(q: &Array2<f64>) -> SelectionResult {
    let norms: Vec<f64> = q
        .rows()
        .into_iter()
        .map(|r| r.iter().fold(0.0, |acc, v| acc + v * v).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    SelectionResult {
        scores: order.iter().map(|&i| norms[i]).collect(),
        ranked_indices: order,
        config: None,
        final_losses: None,
    }
}

//! k-nearest-neighbour prior graph.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("k = {k} out of range for n = {n} (need 1 <= k < n)")]
    KOutOfRange { k: usize, n: usize },
    #[error("cannot write edge list: {0}")]
    Io(#[from] std::io::Error),
}

/// Rescaling applied to the symmetric 0/1 prior before it is used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorNormalization {
    #[default]
    None,
    /// Each column sums to one.
    Column,
    /// `D^{-1/2} A D^{-1/2}`.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorGraph {
    /// Symmetrized `max(A, Aᵀ)`, optionally normalized.
    pub adjacency: Array2<f64>,
    /// Before symmetrization: column `j` holds ones at the `k` nearest
    /// neighbours of sample `j`.
    pub directed: Array2<f64>,
    pub k: usize,
}

/// Squared Euclidean distances between the columns of `x`.
fn pairwise_sq_dist(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.ncols();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for (a, b) in x.column(i).iter().zip(x.column(j).iter()) {
                s += (a - b) * (a - b);
            }
            dist[[i, j]] = s;
            dist[[j, i]] = s;
        }
    }
    dist
}

/// Exact kNN graph over the columns of `x` (`d × n`) under Euclidean
/// distance. Self is excluded; equal distances go to the lower index.
pub fn knn_graph(x: ArrayView2<f64>, k: usize) -> Result<PriorGraph, GraphError> {
    let n = x.ncols();
    if k == 0 || k >= n {
        return Err(GraphError::KOutOfRange { k, n });
    }
    let dist = pairwise_sq_dist(x);
    let mut directed = Array2::<f64>::zeros((n, n));
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for j in 0..n {
        order.clear();
        order.extend((0..n).filter(|&i| i != j));
        order.sort_by(|&a, &b| dist[[a, j]].total_cmp(&dist[[b, j]]).then(a.cmp(&b)));
        for &i in &order[..k] {
            directed[[i, j]] = 1.0;
        }
    }
    let mut adjacency = directed.clone();
    for i in 0..n {
        for j in 0..n {
            adjacency[[i, j]] = directed[[i, j]].max(directed[[j, i]]);
        }
    }
    Ok(PriorGraph {
        adjacency,
        directed,
        k,
    })
}

impl PriorGraph {
    pub fn normalized(&self, how: PriorNormalization) -> Array2<f64> {
        let a = &self.adjacency;
        let n = a.ncols();
        match how {
            PriorNormalization::None => a.clone(),
            PriorNormalization::Column => {
                let mut out = a.clone();
                for j in 0..n {
                    let s: f64 = a.column(j).sum();
                    if s > 0.0 {
                        out.column_mut(j).mapv_inplace(|v| v / s);
                    }
                }
                out
            }
            PriorNormalization::Symmetric => {
                let deg: Vec<f64> = (0..n).map(|j| a.column(j).sum()).collect();
                Array2::from_shape_fn((n, n), |(i, j)| {
                    let d = (deg[i] * deg[j]).sqrt();
                    if d > 0.0 {
                        a[[i, j]] / d
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    /// Undirected edges `i j` with `i < j`, one per line.
    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.adjacency.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[[i, j]] != 0.0 {
                    writeln!(out, "{i} {j}")?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

//! Reference selectors: random, K-Means nearest-to-centroid and
//! deterministic column sampling by leverage scores.
//!
//! Every selector produces a full ranking of the candidate pool; taking the
//! first `m` entries gives its selection at budget `m`.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{svd, LinalgError};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("budget {m} exceeds pool of {n}")]
    Budget { m: usize, n: usize },
    #[error("invalid selector parameter: {0}")]
    Param(String),
    #[error("SVD failed: {0}")]
    Svd(#[from] LinalgError),
    #[error("top-{rank} subspace is degenerate (singular value {sigma:e})")]
    Degenerate { rank: usize, sigma: f64 },
    #[error("unknown selector {0:?}")]
    Unknown(String),
}

pub type Result<T> = std::result::Result<T, SelectError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Random,
    Kmeans,
    Dcs,
    Allg,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 4] = [
        SelectorKind::Random,
        SelectorKind::Kmeans,
        SelectorKind::Dcs,
        SelectorKind::Allg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectorKind::Random => "random",
            SelectorKind::Kmeans => "kmeans",
            SelectorKind::Dcs => "dcs",
            SelectorKind::Allg => "allg",
        }
    }
}

impl std::fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SelectorKind {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self> {
        SelectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SelectError::Unknown(s.to_owned()))
    }
}

/// A selector and its settings, as named in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSpec {
    pub kind: SelectorKind,
    /// Clusters for `kmeans`.
    pub kmeans_k: usize,
    /// Subspace rank for `dcs`; `None` uses the number of classes when
    /// known, else 5.
    pub dcs_rank: Option<usize>,
    pub seed: u64,
}

impl Default for SelectorSpec {
    fn default() -> Self {
        Self {
            kind: SelectorKind::Random,
            kmeans_k: 5,
            dcs_rank: None,
            seed: 0,
        }
    }
}

impl SelectorSpec {
    pub fn new(kind: SelectorKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kmeans_k == 0 {
            return Err(SelectError::Param("kmeans_k must be at least 1".into()));
        }
        if self.dcs_rank == Some(0) {
            return Err(SelectError::Param("dcs_rank must be at least 1".into()));
        }
        Ok(())
    }

    /// Rank used by `dcs` on a `d × n` pool, clipped to `min(d, n)`.
    pub fn effective_dcs_rank(&self, d: usize, n: usize, n_classes: Option<usize>) -> usize {
        self.dcs_rank
            .unwrap_or_else(|| n_classes.filter(|&c| c > 0).unwrap_or(5))
            .min(d.min(n))
            .max(1)
    }
}

fn check_budget(m: usize, n: usize) -> Result<()> {
    if m > n {
        return Err(SelectError::Budget { m, n });
    }
    Ok(())
}

/// A uniformly random permutation of `0..n`.
pub fn rank_random(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx
}

pub fn select_random(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_budget(m, n)?;
    let mut r = rank_random(n, seed);
    r.truncate(m);
    Ok(r)
}

const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// `d × K`
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |s, (x, y)| s + (x - y) * (x - y))
}

fn nearest(x: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, col) in centroids.columns().into_iter().enumerate() {
        let d = sq_dist(x, col);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with farthest-point seeding: the first centre is a
/// seeded random sample, each further centre is the sample farthest from
/// the centres chosen so far (lowest index on ties). An emptied cluster is
/// re-seeded at the sample farthest from its current centre.
pub fn kmeans(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansFit> {
    let (d, n) = x.dim();
    if k == 0 || k > n {
        return Err(SelectError::Param(format!("K = {k} with {n} samples")));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = Array2::zeros((d, k));
    let first = rng.random_range(0..n);
    centroids.column_mut(0).assign(&x.column(first));
    let mut min_d: Vec<f64> = (0..n).map(|j| sq_dist(x.column(j), x.column(first))).collect();
    for c in 1..k {
        let far = argmax_first(&min_d);
        centroids.column_mut(c).assign(&x.column(far));
        for j in 0..n {
            min_d[j] = min_d[j].min(sq_dist(x.column(j), x.column(far)));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for j in 0..n {
            let (c, dj) = nearest(x.column(j), &centroids);
            if assignment[j] != c {
                assignment[j] = c;
                changed = true;
            }
            dist[j] = dj;
        }
        inertia.push(dist.iter().sum());
        if !changed && inertia.len() > 1 {
            break;
        }
        let mut sums = Array2::<f64>::zeros((d, k));
        let mut counts = vec![0usize; k];
        for j in 0..n {
            let c = assignment[j];
            counts[c] += 1;
            let mut col = sums.column_mut(c);
            col += &x.column(j);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.column(c) / counts[c] as f64;
                centroids.column_mut(c).assign(&mean);
            } else {
                let far = argmax_first(&dist);
                centroids.column_mut(c).assign(&x.column(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok(KMeansFit {
        centroids,
        assignment,
        inertia,
    })
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Orders samples by distance to their own centroid, taking one sample per
/// cluster per round (clusters in index order).
pub fn rank_kmeans(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let fit = kmeans(x, k, seed)?;
    let mut members: Vec<Vec<(f64, usize)>> = vec![Vec::new(); k];
    for (j, &c) in fit.assignment.iter().enumerate() {
        members[c].push((sq_dist(x.column(j), fit.centroids.column(c)), j));
    }
    for m in &mut members {
        m.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    let n = x.ncols();
    let mut out = Vec::with_capacity(n);
    let mut round = 0;
    while out.len() < n {
        for m in &members {
            if let Some(&(_, j)) = m.get(round) {
                out.push(j);
            }
        }
        round += 1;
    }
    Ok(out)
}

pub fn select_kmeans(x: ArrayView2<f64>, m: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_budget(m, x.ncols())?;
    let mut r = rank_kmeans(x, k, seed)?;
    r.truncate(m);
    Ok(r)
}

const SVD_TOL: f64 = 1e-10;

/// Leverage score of every column within the top-`rank` right singular
/// subspace: `Σ_{t<rank} V[j, t]²`.
pub fn leverage_scores(x: ArrayView2<f64>, rank: usize) -> Result<Vec<f64>> {
    let (d, n) = x.dim();
    if rank == 0 || rank > d.min(n) {
        return Err(SelectError::Param(format!(
            "rank {rank} not in 1..={}",
            d.min(n)
        )));
    }
    let dec = svd(x, SVD_TOL)?;
    let sigma = dec.s[rank - 1];
    if !(sigma > SVD_TOL * dec.s[0].max(f64::MIN_POSITIVE)) {
        return Err(SelectError::Degenerate { rank, sigma });
    }
    Ok((0..n)
        .map(|j| (0..rank).map(|t| dec.v[[j, t]].powi(2)).sum())
        .collect())
}

/// Columns by descending leverage score, ties to the lower index.
pub fn rank_dcs(x: ArrayView2<f64>, rank: usize) -> Result<Vec<usize>> {
    let scores = leverage_scores(x, rank)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}

pub fn select_dcs(x: ArrayView2<f64>, m: usize, rank: usize) -> Result<Vec<usize>> {
    check_budget(m, x.ncols())?;
    let mut r = rank_dcs(x, rank)?;
    r.truncate(m);
    Ok(r)
}

//! Evaluation protocol: split, let every selector rank the same candidate
//! pool, reveal labels for the top `m`, train classifiers and score them on
//! the held-out side.

mod classifiers;

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifiers::{
    accuracy, train_linear_svm, train_logreg, BinarySvm, ClassifierKind, LinearSvm, LogReg,
    LOGREG_GRAD_TOL, LOGREG_MAX_ITER, SVM_TOL,
};

use crate::baselines::{rank_dcs, rank_kmeans, rank_random, SelectError, SelectorKind, SelectorSpec};
use crate::data::{split, DataError, Dataset, SplitSpec, Standardizer};
use crate::model::{fit, rank, Autoencoder, ModelConfig, ModelError};
use crate::seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("budget {budget} exceeds candidate pool of {pool}")]
    Budget { budget: usize, pool: usize },
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Which features the classifiers see for the learned selector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    /// Standardized input features.
    #[default]
    Original,
    /// Encoder output of the trained model, applied to train and test alike.
    /// Other selectors keep the original features.
    Representation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub budgets: Vec<usize>,
    pub runs: usize,
    pub candidate_fraction: f64,
    pub classifiers: Vec<ClassifierKind>,
    pub seeds: Vec<u64>,
    pub feature_space: FeatureSpace,
    pub logreg_reg: f64,
    pub svm_c: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            budgets: (25..=225).step_by(25).collect(),
            runs: 5,
            candidate_fraction: 0.5,
            classifiers: ClassifierKind::ALL.to_vec(),
            seeds: (0..5).collect(),
            feature_space: FeatureSpace::Original,
            logreg_reg: 1e-4,
            svm_c: 100.0,
        }
    }
}

impl Protocol {
    /// `runs` consecutive seeds starting at `first`.
    pub fn with_seeds(mut self, first: u64, runs: usize) -> Self {
        self.runs = runs;
        self.seeds = (first..first + runs as u64).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EvalError::Protocol(m));
        if self.budgets.is_empty() {
            return bad("no budgets".into());
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) || self.budgets[0] == 0 {
            return bad(format!("budgets must be positive and ascending: {:?}", self.budgets));
        }
        if self.runs != self.seeds.len() {
            return bad(format!("runs = {} but {} seeds", self.runs, self.seeds.len()));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.classifiers.is_empty() {
            return bad("no classifiers".into());
        }
        if !(self.candidate_fraction > 0.0 && self.candidate_fraction < 1.0) {
            return bad(format!("candidate_fraction {} not in (0, 1)", self.candidate_fraction));
        }
        if !(self.logreg_reg >= 0.0 && self.svm_c > 0.0) {
            return bad("logreg_reg must be >= 0 and svm_c > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub selector: String,
    pub classifier: ClassifierKind,
    pub budget: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub selector: String,
    pub classifier: ClassifierKind,
    pub budget: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub selector: String,
    pub classifier: ClassifierKind,
    /// Mean accuracy per budget, in budget order.
    pub means: Vec<f64>,
    /// Mean over budgets.
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<Cell>,
}

type Key = (String, ClassifierKind);

impl EvalReport {
    /// Selector/classifier pairs in first-appearance order.
    fn keys(&self) -> Vec<Key> {
        let mut keys: Vec<Key> = Vec::new();
        for c in &self.cells {
            let k = (c.selector.clone(), c.classifier);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys
    }

    fn budgets(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.cells.iter().map(|c| c.budget).collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = Vec::new();
        for c in &self.cells {
            if !s.contains(&c.seed) {
                s.push(c.seed);
            }
        }
        s
    }

    /// Mean over seeds for every selector, classifier and budget.
    pub fn means(&self) -> Vec<MeanRow> {
        let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        let keys = self.keys();
        let budgets = self.budgets();
        for c in &self.cells {
            let ki = keys.iter().position(|k| k.0 == c.selector && k.1 == c.classifier).unwrap();
            let bi = budgets.binary_search(&c.budget).unwrap();
            let e = acc.entry((ki, bi)).or_insert((0.0, 0));
            e.0 += c.accuracy;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|((ki, bi), (s, n))| MeanRow {
                selector: keys[ki].0.clone(),
                classifier: keys[ki].1,
                budget: budgets[bi],
                mean: s / n as f64,
            })
            .collect()
    }

    pub fn mean(&self, selector: &str, classifier: ClassifierKind, budget: usize) -> Option<f64> {
        self.means()
            .into_iter()
            .find(|r| r.selector == selector && r.classifier == classifier && r.budget == budget)
            .map(|r| r.mean)
    }

    /// Mean of the per-budget means.
    pub fn grand_mean(&self, selector: &str, classifier: ClassifierKind) -> Option<f64> {
        self.summary()
            .rows
            .into_iter()
            .find(|r| r.selector == selector && r.classifier == classifier)
            .map(|r| r.average)
    }

    pub fn summary(&self) -> Summary {
        let budgets = self.budgets();
        let means = self.means();
        let rows = self
            .keys()
            .into_iter()
            .map(|(selector, classifier)| {
                let m: Vec<f64> = means
                    .iter()
                    .filter(|r| r.selector == selector && r.classifier == classifier)
                    .map(|r| r.mean)
                    .collect();
                let average = m.iter().sum::<f64>() / m.len() as f64;
                SummaryRow {
                    selector,
                    classifier,
                    means: m,
                    average,
                }
            })
            .collect();
        Summary {
            budgets,
            seeds: self.seeds(),
            rows,
        }
    }

    /// One line per run: `selector,classifier,budget,seed,accuracy`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "selector,classifier,budget,seed,accuracy")?;
        for c in &self.cells {
            writeln!(out, "{},{},{},{},{}", c.selector, c.classifier, c.budget, c.seed, c.accuracy)?;
        }
        Ok(())
    }

    /// One line per selector, classifier and budget with the mean accuracy.
    pub fn write_plot_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "selector,classifier,budget,mean_accuracy")?;
        for r in self.means() {
            writeln!(out, "{},{},{},{}", r.selector, r.classifier, r.budget, r.mean)?;
        }
        Ok(())
    }

    /// Wide table: one row per selector and classifier, one column per
    /// budget, then `Average`.
    pub fn write_table_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let s = self.summary();
        write!(out, "selector,classifier")?;
        for b in &s.budgets {
            write!(out, ",{b}")?;
        }
        writeln!(out, ",Average")?;
        for r in &s.rows {
            write!(out, "{},{}", r.selector, r.classifier)?;
            for m in &r.means {
                write!(out, ",{m}")?;
            }
            writeln!(out, ",{}", r.average)?;
        }
        Ok(())
    }
}

/// Full ranking of a pool, plus the trained encoder when the selector has
/// one.
#[derive(Debug, Clone)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub encoder: Option<Autoencoder>,
}

/// Ranks the columns of a standardized `d × n` pool. `run_seed` is the root
/// of this run's randomness; each selector draws from its own substream.
pub fn rank_pool(
    spec: &SelectorSpec,
    x: &Array2<f64>,
    n_classes: Option<usize>,
    model: &ModelConfig,
    run_seed: u64,
) -> Result<Ranking> {
    spec.validate()?;
    let (d, n) = x.dim();
    let own_seed = seed::indexed(run_seed, spec.kind.name(), spec.seed);
    let order = match spec.kind {
        SelectorKind::Random => rank_random(n, own_seed),
        SelectorKind::Kmeans => rank_kmeans(x.view(), spec.kmeans_k.min(n), own_seed)?,
        SelectorKind::Dcs => rank_dcs(x.view(), spec.effective_dcs_rank(d, n, n_classes))?,
        SelectorKind::Allg => {
            let cfg = ModelConfig {
                seed: own_seed,
                ..model.clone()
            };
            let out = fit(x, &cfg)?;
            return Ok(Ranking {
                order: rank(&out.params.q).ranked_indices,
                encoder: Some(out.params.autoencoder),
            });
        }
    };
    Ok(Ranking { order, encoder: None })
}

/// Label under which a selector appears in reports.
pub fn selector_label(spec: &SelectorSpec) -> String {
    spec.kind.name().to_owned()
}

fn score(
    kind: ClassifierKind,
    protocol: &Protocol,
    x_train: ArrayView2<f64>,
    y_train: &[usize],
    x_test: ArrayView2<f64>,
    y_test: &[usize],
) -> f64 {
    match kind {
        ClassifierKind::LinearSvm => train_linear_svm(x_train, y_train, x_test, y_test, protocol.svm_c),
        ClassifierKind::LogisticRegression => {
            train_logreg(x_train, y_train, x_test, y_test, protocol.logreg_reg)
        }
    }
}

/// Split seed used for run `seed`; identical for every selector and model
/// configuration.
pub fn split_seed(seed: u64) -> u64 {
    seed::substream(seed, "split")
}

fn run_one(
    ds: &Dataset,
    selectors: &[(String, SelectorSpec)],
    protocol: &Protocol,
    model: &ModelConfig,
    run_seed: u64,
) -> Result<Vec<Cell>> {
    let sp = split(
        ds,
        &SplitSpec {
            candidate_fraction: protocol.candidate_fraction,
            seed: split_seed(run_seed),
        },
    )?;
    let pool = sp.candidate.n_samples();
    let max_budget = *protocol.budgets.last().expect("validated");
    if max_budget > pool {
        return Err(EvalError::Budget {
            budget: max_budget,
            pool,
        });
    }
    let scaler = Standardizer::fit(&sp.candidate.features);
    let x_pool = scaler.transform(&sp.candidate.features);
    let x_test = scaler.transform(&sp.test.features);
    let y_pool = sp.candidate.labels.as_ref().expect("labeled");
    let y_test = sp.test.labels.as_ref().expect("labeled");
    let n_classes = Some(ds.n_classes());

    let mut cells = Vec::new();
    for (label, spec) in selectors {
        let ranking = rank_pool(spec, &x_pool, n_classes, model, run_seed)?;
        let (train_feats, test_feats) = match (&ranking.encoder, protocol.feature_space) {
            (Some(ae), FeatureSpace::Representation) => (
                ae.encode(&x_pool, model.latent_relu),
                ae.encode(&x_test, model.latent_relu),
            ),
            _ => (x_pool.clone(), x_test.clone()),
        };
        for &m in &protocol.budgets {
            let chosen = &ranking.order[..m];
            let xs = train_feats.select(Axis(1), chosen);
            let ys: Vec<usize> = chosen.iter().map(|&i| y_pool[i]).collect();
            for &kind in &protocol.classifiers {
                cells.push(Cell {
                    selector: label.clone(),
                    classifier: kind,
                    budget: m,
                    seed: run_seed,
                    accuracy: score(kind, protocol, xs.view(), &ys, test_feats.view(), y_test),
                });
            }
        }
    }
    Ok(cells)
}

/// Runs the protocol for every seed. Runs execute in parallel and are
/// merged in seed order, so the report does not depend on scheduling.
pub fn run_protocol(
    ds: &Dataset,
    selectors: &[SelectorSpec],
    protocol: &Protocol,
    model: &ModelConfig,
) -> Result<EvalReport> {
    let labeled: Vec<(String, SelectorSpec)> =
        selectors.iter().map(|s| (selector_label(s), s.clone())).collect();
    run_protocol_labeled(ds, &labeled, protocol, model)
}

/// As [`run_protocol`] with explicit report labels per selector.
pub fn run_protocol_labeled(
    ds: &Dataset,
    selectors: &[(String, SelectorSpec)],
    protocol: &Protocol,
    model: &ModelConfig,
) -> Result<EvalReport> {
    protocol.validate()?;
    ds.validate()?;
    if ds.labels.is_none() {
        return Err(EvalError::Data(DataError::Invalid(
            "evaluation needs a labeled dataset".into(),
        )));
    }
    if selectors.is_empty() {
        return Err(EvalError::Protocol("no selectors".into()));
    }
    let per_seed: Vec<Result<Vec<Cell>>> = protocol
        .seeds
        .par_iter()
        .map(|&s| run_one(ds, selectors, protocol, model, s))
        .collect();
    let mut cells = Vec::new();
    for r in per_seed {
        cells.extend(r?);
    }
    Ok(EvalReport { cells })
}

//! Dataset ingestion, standardization and candidate/test splitting.
//!
//! Internally features are stored `d × n`: one column per sample. CSV files
//! keep the usual one-sample-per-row layout and are transposed on load.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("split would leave the {0} side empty")]
    EmptySplit(&'static str),
    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d × n`, columns are samples.
    pub features: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub name: String,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            name: name.into(),
            feature_names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_samples(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|m| m + 1))
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features() < 1 || self.n_samples() < 2 {
            return Err(DataError::Invalid(format!(
                "need d >= 1 and n >= 2, got d={} n={}",
                self.n_features(),
                self.n_samples()
            )));
        }
        if let Some((idx, _)) = self
            .features
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(DataError::Invalid(format!(
                "non-finite value at feature {} of sample {}",
                idx / self.n_samples(),
                idx % self.n_samples()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.n_samples() {
                return Err(DataError::Invalid(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    self.n_samples()
                )));
            }
            let c = self.n_classes();
            let mut seen = vec![false; c];
            labels.iter().for_each(|&l| seen[l] = true);
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(DataError::Invalid(format!("class {missing} has no samples")));
            }
        }
        Ok(())
    }

    /// Sub-dataset made of the given sample indices, in that order. Labels
    /// keep their global ids, so a subset may have empty classes.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(1), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// How to read a delimited text file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: None,
            delimiter: ',',
            has_header: true,
        }
    }
}

/// Reads one sample per row. The label column is matched by header name or,
/// without a header, by zero-based position. Label values are mapped to
/// dense class ids in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter as u8)
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |source| DataError::Csv {
        path: path.to_owned(),
        source,
    };

    let header: Option<Vec<String>> = if opts.has_header {
        Some(
            reader
                .headers()
                .map_err(csv_err)?
                .iter()
                .map(str::to_owned)
                .collect(),
        )
    } else {
        None
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .unwrap_or(0);
    let data_row_offset = if opts.has_header { 2 } else { 1 };
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(DataError::Ragged {
                row: i + data_row_offset,
                expected: width,
                found: r.len(),
            });
        }
    }

    let label_idx = match &opts.label_column {
        None => None,
        Some(name) => {
            let by_header = header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name));
            let idx = by_header
                .or_else(|| {
                    if header.is_none() {
                        name.parse::<usize>().ok().filter(|&i| i < width)
                    } else {
                        None
                    }
                })
                .ok_or_else(|| DataError::MissingLabelColumn(name.clone()))?;
            Some(idx)
        }
    };

    let feature_cols: Vec<usize> = (0..width).filter(|&c| Some(c) != label_idx).collect();
    let col_name = |c: usize| -> String {
        header
            .as_ref()
            .map(|h| h[c].clone())
            .unwrap_or_else(|| c.to_string())
    };

    let n = rows.len();
    let d = feature_cols.len();
    let mut features = Array2::zeros((d, n));
    let mut label_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut labels = Vec::with_capacity(n);
    for (j, row) in rows.iter().enumerate() {
        for (fi, &c) in feature_cols.iter().enumerate() {
            let cell = &row[c];
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::BadCell {
                    row: j + data_row_offset,
                    column: col_name(c),
                    value: cell.clone(),
                })?;
            features[[fi, j]] = v;
        }
        if let Some(li) = label_idx {
            let next = label_ids.len();
            labels.push(*label_ids.entry(row[li].clone()).or_insert(next));
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ds = Dataset {
        features,
        labels: label_idx.map(|_| labels),
        name,
        feature_names: header
            .as_ref()
            .map(|_| feature_cols.iter().map(|&c| col_name(c)).collect()),
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes one sample per row with a header; labels, if any, go in a trailing
/// `label` column. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| DataError::Io {
        path: path.to_owned(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    let names: Vec<String> = ds
        .feature_names
        .clone()
        .unwrap_or_else(|| (0..ds.n_features()).map(|i| format!("f{i}")).collect());
    let mut header = names.join(",");
    if ds.labels.is_some() {
        header.push_str(",label");
    }
    writeln!(out, "{header}").map_err(io)?;
    for j in 0..ds.n_samples() {
        let mut line = ds
            .features
            .column(j)
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        if let Some(l) = &ds.labels {
            line.push_str(&format!(",{}", l[j]));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Zero-variance features are reported with std 1.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.ncols() as f64;
        let mut mean = Vec::with_capacity(features.nrows());
        let mut std = Vec::with_capacity(features.nrows());
        for row in features.rows() {
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            // Treat numerically constant rows as constant.
            std.push(if sd > 1e-12 * mu.abs().max(1.0) { sd } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn transform(&self, features: &Array2<f64>) -> Array2<f64> {
        let mu = Array1::from(self.mean.clone()).insert_axis(Axis(1));
        let sd = Array1::from(self.std.clone()).insert_axis(Axis(1));
        (features - &mu) / &sd
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        Dataset {
            features: self.transform(&ds.features),
            ..ds.clone()
        }
    }
}

/// Z-scores every feature using population moments.
pub fn standardize(ds: &Dataset) -> (Dataset, Standardizer) {
    let s = Standardizer::fit(&ds.features);
    (s.apply(ds), s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub candidate_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub candidate: Dataset,
    pub test: Dataset,
    /// Sorted ascending.
    pub candidate_indices: Vec<usize>,
    /// Sorted ascending.
    pub test_indices: Vec<usize>,
}

/// Random candidate/test partition with `round(fraction·n)` candidates.
/// A fraction of exactly 1 is allowed and leaves the test side empty.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let n = ds.n_samples();
    let f = spec.candidate_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(DataError::Invalid(format!(
            "candidate fraction {f} not in (0, 1]"
        )));
    }
    let n_cand = (f * n as f64).round() as usize;
    if n_cand == 0 {
        return Err(DataError::EmptySplit("candidate"));
    }
    if n_cand == n && f < 1.0 {
        return Err(DataError::EmptySplit("test"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(spec.seed));
    let mut candidate_indices = perm[..n_cand].to_vec();
    let mut test_indices = perm[n_cand..].to_vec();
    candidate_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        candidate: ds.subset(&candidate_indices),
        test: ds.subset(&test_indices),
        candidate_indices,
        test_indices,
    })
}

/// Isotropic Gaussian clusters around means drawn uniformly from
/// `[-10, 10]^d`. Samples are grouped by class.
pub fn make_blobs(
    n_per_class: usize,
    classes: usize,
    d: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 || d == 0 {
        return Err(DataError::Invalid("make_blobs counts must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    let uni = Uniform::new(-10.0, 10.0).expect("valid range");
    let centers = Array2::from_shape_fn((d, classes), |_| uni.sample(&mut rng));
    let n = n_per_class * classes;
    let mut features = Array2::zeros((d, n));
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for i in 0..n_per_class {
            let j = c * n_per_class + i;
            for r in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[r, j]] = centers[[r, c]] + spread * z;
            }
            labels.push(c);
        }
    }
    let mut ds = Dataset::new("blobs", features, Some(labels))?;
    ds.feature_names = Some((0..d).map(|i| format!("x{i}")).collect());
    Ok(ds)
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(flatten)]
    pub csv: CsvOptions,
}

/// Maps dataset names to files. TOML layout:
///
/// ```toml
/// [datasets.splice]
/// path = "data/splice.csv"   # relative to the manifest
/// label_column = "class"
/// delimiter = ","
/// has_header = true
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub datasets: BTreeMap<String, ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut m: Manifest =
            toml::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, name: &str) -> Result<(PathBuf, CsvOptions)> {
        let e = self
            .datasets
            .get(name)
            .ok_or_else(|| DataError::Manifest(format!("no dataset named {name:?}")))?;
        let path = if e.path.is_absolute() {
            e.path.clone()
        } else {
            self.base_dir.join(&e.path)
        };
        Ok((path, e.csv.clone()))
    }

    pub fn load_dataset(&self, name: &str) -> Result<Dataset> {
        let (path, opts) = self.resolve(name)?;
        let mut ds = load_csv(path, &opts)?;
        ds.name = name.to_owned();
        Ok(ds)
    }
}

//! Run configuration shared by every command.
//!
//! TOML layout (all sections optional):
//!
//! ```toml
//! schema_version = 1
//! seed = 0                 # root seed: model init and run seeds derive from it
//! out_dir = "runs/demo"
//!
//! [dataset]
//! path = "data/splice.csv" # or: name = "splice" with manifest = "datasets.toml"
//! label_column = "class"   # or: name = "blobs" for the synthetic fixture
//!
//! [dataset.blobs]
//! n_per_class = 50
//! classes = 3
//! dim = 10
//! spread = 1.0
//!
//! [select]
//! m = 50
//!
//! [model]                  # see ModelConfig
//! lambda = 1.0
//!
//! [protocol]
//! budgets = [25, 50, 75]
//! runs = 5                 # seeds default to seed, seed+1, ...
//! classifiers = ["linear_svm", "logistic_regression"]
//!
//! [[selectors]]
//! kind = "kmeans"
//! kmeans_k = 5
//!
//! [grid]
//! alpha = [0.1, 1.0, 10.0]
//! beta = [0.1, 1.0, 10.0]
//! lambda = [0.1, 1.0, 10.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{SelectorKind, SelectorSpec};
use crate::data::{load_csv, make_blobs, CsvOptions, DataError, Dataset, Manifest};
use crate::eval::{ClassifierKind, FeatureSpace, Protocol};
use crate::model::ModelConfig;
use crate::seed;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            n_per_class: 50,
            classes: 3,
            dim: 10,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetRef {
    /// Manifest entry, or `blobs` for the synthetic fixture.
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub label_column: Option<String>,
    pub delimiter: Option<char>,
    pub has_header: Option<bool>,
    pub blobs: Option<BlobsSpec>,
}

impl DatasetRef {
    /// Interprets a command-line `NAME|PATH`: anything that exists on disk
    /// or ends in `.csv` is a path, everything else a name.
    pub fn set_from_arg(&mut self, arg: &str) {
        let p = Path::new(arg);
        if p.exists() || p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            self.path = Some(p.to_owned());
            self.name = None;
        } else {
            self.name = Some(arg.to_owned());
            self.path = None;
        }
    }

    fn csv_options(&self, base: CsvOptions) -> CsvOptions {
        CsvOptions {
            label_column: self.label_column.clone().or(base.label_column),
            delimiter: self.delimiter.unwrap_or(base.delimiter),
            has_header: self.has_header.unwrap_or(base.has_header),
        }
    }

    /// Loads the referenced data. `seed` only affects the synthetic fixture.
    pub fn load(&self, seed: u64) -> Result<Dataset, DataError> {
        if let Some(path) = &self.path {
            let mut ds = load_csv(path, &self.csv_options(CsvOptions::default()))?;
            if let Some(n) = &self.name {
                ds.name = n.clone();
            }
            return Ok(ds);
        }
        match self.name.as_deref() {
            Some("blobs") => {
                let b = self.blobs.unwrap_or_default();
                make_blobs(b.n_per_class, b.classes, b.dim, b.spread, seed::substream(seed, "blobs"))
            }
            Some(name) => {
                let manifest = self.manifest.as_ref().ok_or_else(|| {
                    DataError::Manifest(format!("dataset {name:?} needs a manifest"))
                })?;
                let m = Manifest::load(manifest)?;
                let (path, opts) = m.resolve(name)?;
                let mut ds = load_csv(path, &self.csv_options(opts))?;
                ds.name = name.to_owned();
                Ok(ds)
            }
            None => Err(DataError::Invalid("no dataset given".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    /// Number of samples written to the selection; the ranking file always
    /// covers the whole pool.
    pub m: Option<usize>,
}

/// Protocol fields as written in a file; anything left out takes the
/// protocol default, and seeds derive from the root seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub budgets: Option<Vec<usize>>,
    pub runs: Option<usize>,
    pub candidate_fraction: Option<f64>,
    pub classifiers: Option<Vec<ClassifierKind>>,
    pub seeds: Option<Vec<u64>>,
    pub feature_space: Option<FeatureSpace>,
    pub logreg_reg: Option<f64>,
    pub svm_c: Option<f64>,
}

impl ProtocolSection {
    pub fn resolve(&self, root_seed: u64) -> Protocol {
        let d = Protocol::default();
        let seeds = match (&self.seeds, self.runs) {
            (Some(s), _) => s.clone(),
            (None, runs) => {
                let runs = runs.unwrap_or(d.runs) as u64;
                (root_seed..root_seed + runs).collect()
            }
        };
        Protocol {
            budgets: self.budgets.clone().unwrap_or(d.budgets),
            runs: self.runs.unwrap_or(seeds.len()),
            candidate_fraction: self.candidate_fraction.unwrap_or(d.candidate_fraction),
            classifiers: self.classifiers.clone().unwrap_or(d.classifiers),
            seeds,
            feature_space: self.feature_space.unwrap_or(d.feature_space),
            logreg_reg: self.logreg_reg.unwrap_or(d.logreg_reg),
            svm_c: self.svm_c.unwrap_or(d.svm_c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Run seed used for every grid point. Defaults to a substream of the
    /// root seed.
    pub validation_seed: Option<u64>,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = vec![0.1, 1.0, 10.0];
        Self {
            alpha: g.clone(),
            beta: g.clone(),
            lambda: g,
            validation_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetRef,
    pub select: SelectSection,
    pub model: ModelConfig,
    pub protocol: ProtocolSection,
    /// Defaults to every selector.
    pub selectors: Vec<SelectorSpec>,
    pub grid: GridSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out_dir: PathBuf::from("out"),
            dataset: DatasetRef::default(),
            select: SelectSection::default(),
            model: ModelConfig::default(),
            protocol: ProtocolSection::default(),
            selectors: SelectorKind::ALL.into_iter().map(SelectorSpec::new).collect(),
            grid: GridSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(cfg.schema_version));
        }
        Ok(cfg)
    }

    /// Reads a config file. Relative dataset and manifest paths are taken
    /// relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.path, &mut cfg.dataset.manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Model configuration with the root seed applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol.resolve(self.seed)
    }

    pub fn validation_seed(&self) -> u64 {
        self.grid
            .validation_seed
            .unwrap_or_else(|| seed::substream(self.seed, "grid-validation"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.protocol()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for s in &self.selectors {
            s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for (name, values) in [
            ("alpha", &self.grid.alpha),
            ("beta", &self.grid.beta),
            ("lambda", &self.grid.lambda),
        ] {
            if values.is_empty() {
                return invalid(format!("grid.{name} is empty"));
            }
            if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return invalid(format!("grid.{name} must hold positive reals"));
            }
        }
        if self.select.m == Some(0) {
            return invalid("select.m must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses `25,50,75` or an inclusive range `25:225:25`.
pub fn parse_budgets(s: &str) -> Result<Vec<usize>, ConfigError> {
    let bad = || ConfigError::Invalid(format!("cannot parse budgets {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let (start, end, step) = (nums[0], nums[1], nums[2]);
        if step == 0 || start > end {
            return Err(bad());
        }
        return Ok((start..=end).step_by(step).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

/// Parses `random,kmeans,...`.
pub fn parse_selectors(s: &str) -> Result<Vec<SelectorKind>, ConfigError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<SelectorKind>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))
        })
        .collect()
}

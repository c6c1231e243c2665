//! The work behind each CLI subcommand. Every command writes its artifacts
//! plus a `config.toml` snapshot into the output directory; no artifact
//! carries timestamps, so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::OpKind;
use crate::baselines::{SelectError, SelectorKind, SelectorSpec};
use crate::config::{ConfigError, RunConfig};
use crate::data::{standardize, DataError, Dataset};
use crate::eval::{run_protocol, run_protocol_labeled, EvalError, EvalReport};
use crate::gradcheck;
use crate::model::{ablation_variant, fit, rank, save_checkpoint, ModelError, SelectionResult, Variant};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("selector: {0}")]
    Select(#[from] SelectError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed")]
    GradCheck,
}

impl CliError {
    /// 2 config, 3 data, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(e) => model_code(e),
            CliError::Select(e) => select_code(e),
            CliError::Eval(e) => match e {
                EvalError::Data(_) => 3,
                EvalError::Model(m) => model_code(m),
                EvalError::Select(s) => select_code(s),
                EvalError::Budget { .. } | EvalError::Protocol(_) => 2,
                EvalError::Io(_) => 1,
            },
            CliError::Io { .. } | CliError::GradCheck => 1,
        }
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Config(_) => 2,
        ModelError::Shape(_) => 3,
        ModelError::NonFinite { .. } | ModelError::Autodiff(_) => 4,
        ModelError::Graph(_) => 3,
        ModelError::Checkpoint(_) => 1,
    }
}

fn select_code(e: &SelectError) -> i32 {
    match e {
        SelectError::Budget { .. } | SelectError::Param(_) | SelectError::Unknown(_) => 2,
        SelectError::Svd(_) | SelectError::Degenerate { .. } => 4,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn prepare(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let snap = out.join("config.toml");
    std::fs::write(&snap, cfg.to_toml()).map_err(io_err(&snap))?;
    Ok(out)
}

fn labeled_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = cfg.dataset.load(cfg.seed)?;
    ds.validate()?;
    if ds.labels.is_none() {
        return Err(DataError::Invalid("this command needs a label column".into()).into());
    }
    Ok(ds)
}

#[derive(Debug, Serialize)]
struct SelectionFile<'a> {
    dataset: &'a str,
    m: usize,
    selected: &'a [usize],
    result: &'a SelectionResult,
}

/// Trains on the whole (standardized) dataset and ranks every sample.
/// Writes `ranking.csv`, `selection.json`, `losses.csv`, `checkpoint.json`.
pub fn cmd_select(cfg: &RunConfig) -> Result<SelectionResult> {
    let out = prepare(cfg)?;
    let ds = cfg.dataset.load(cfg.seed)?;
    ds.validate()?;
    let model = cfg.model_config();
    let x = standardize(&ds).0.features;
    let outcome = fit(&x, &model)?;
    let mut result = rank(&outcome.params.q);
    result.config = Some(model.clone());
    result.final_losses = Some(outcome.final_losses);
    let m = cfg.select.m.unwrap_or(ds.n_samples()).min(ds.n_samples());

    write_file(&out.join("ranking.csv"), |w| {
        writeln!(w, "index,score")?;
        for (i, s) in result.ranked_indices.iter().zip(&result.scores) {
            writeln!(w, "{i},{s}")?;
        }
        Ok(())
    })?;
    write_file(&out.join("losses.csv"), |w| outcome.history.write_csv(w))?;
    write_json(
        &out.join("selection.json"),
        &SelectionFile {
            dataset: &ds.name,
            m,
            selected: result.top(m),
            result: &result,
        },
    )?;
    save_checkpoint(out.join("checkpoint.json"), &model, &outcome.params)?;
    Ok(result)
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write_file(&out.join("report.csv"), |w| report.write_csv(w))?;
    write_file(&out.join("table.csv"), |w| report.write_table_csv(w))?;
    write_file(&out.join("plot.csv"), |w| report.write_plot_csv(w))?;
    write_json(&out.join("summary.json"), &report.summary())
}

/// Runs the evaluation protocol for every configured selector. Writes
/// `report.csv`, `table.csv`, `plot.csv`, `summary.json`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let out = prepare(cfg)?;
    let ds = labeled_dataset(cfg)?;
    let report = run_protocol(&ds, &cfg.selectors, &cfg.protocol(), &cfg.model_config())?;
    write_report(&out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOutcome {
    pub validation_seed: u64,
    /// Sorted by `(alpha, beta, lambda)` ascending.
    pub rows: Vec<GridRow>,
    pub best: GridRow,
}

fn sorted_unique(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Evaluates every `(alpha, beta, lambda)` on one fixed validation run and
/// keeps the best mean accuracy; ties go to the smallest triple. Writes
/// `grid.csv` and `best.json`.
pub fn cmd_grid(cfg: &RunConfig) -> Result<GridOutcome> {
    let out = prepare(cfg)?;
    let ds = labeled_dataset(cfg)?;
    let validation_seed = cfg.validation_seed();
    let mut protocol = cfg.protocol();
    protocol.seeds = vec![validation_seed];
    protocol.runs = 1;
    let allg = [SelectorSpec::new(SelectorKind::Allg)];

    let mut rows = Vec::new();
    for &alpha in &sorted_unique(&cfg.grid.alpha) {
        for &beta in &sorted_unique(&cfg.grid.beta) {
            for &lambda in &sorted_unique(&cfg.grid.lambda) {
                let mut model = cfg.model_config();
                model.alpha = alpha;
                model.beta = beta;
                model.lambda = lambda;
                let report = run_protocol(&ds, &allg, &protocol, &model)?;
                let mean = report.cells.iter().map(|c| c.accuracy).sum::<f64>() / report.cells.len() as f64;
                rows.push(GridRow {
                    alpha,
                    beta,
                    lambda,
                    mean_accuracy: mean,
                });
            }
        }
    }
    let mut best = rows[0].clone();
    for r in &rows[1..] {
        if r.mean_accuracy > best.mean_accuracy {
            best = r.clone();
        }
    }
    write_file(&out.join("grid.csv"), |w| {
        writeln!(w, "alpha,beta,lambda,mean_accuracy")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.alpha, r.beta, r.lambda, r.mean_accuracy)?;
        }
        Ok(())
    })?;
    let outcome = GridOutcome {
        validation_seed,
        rows,
        best,
    };
    write_json(&out.join("best.json"), &outcome.best)?;
    Ok(outcome)
}

/// Evaluates the learned selector under each ablation row on identical
/// splits. Writes `ablation.csv` (one row per variant and classifier with an
/// `Average` column) plus the usual report files.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<EvalReport> {
    let out = prepare(cfg)?;
    let ds = labeled_dataset(cfg)?;
    let protocol = cfg.protocol();
    let base = cfg.model_config();
    let allg = SelectorSpec::new(SelectorKind::Allg);
    let mut report = EvalReport::default();
    for v in Variant::TABLE {
        let model = ablation_variant(&base, v)?;
        let r = run_protocol_labeled(&ds, &[(v.name().to_owned(), allg.clone())], &protocol, &model)?;
        report.cells.extend(r.cells);
    }
    write_file(&out.join("ablation.csv"), |w| report.write_table_csv(w))?;
    write_report(&out, &report)?;
    Ok(report)
}

/// Runs the finite-difference suite and prints its table. `corrupt` breaks
/// one backward rule on purpose.
pub fn cmd_gradcheck(seed: u64, corrupt: Option<OpKind>, mut out: impl Write) -> Result<gradcheck::Report> {
    let report = gradcheck::run_suite(seed, corrupt);
    write!(out, "{report}").map_err(io_err(Path::new("<stdout>")))?;
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::GradCheck)
    }
}

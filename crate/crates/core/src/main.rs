use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use allg::autodiff::OpKind;
use allg::baselines::SelectorSpec;
use allg::commands::{cmd_ablate, cmd_evaluate, cmd_gradcheck, cmd_grid, cmd_select, CliError};
use allg::config::{parse_budgets, parse_selectors, RunConfig};

#[derive(Parser)]
#[command(name = "allg", version, about = "Unsupervised active learning with learned graph propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset and rank every sample by representativeness.
    Select(Common),
    /// Run the selection/classification protocol for all selectors.
    Evaluate(Common),
    /// Search alpha, beta and lambda on a fixed validation run.
    Grid(Common),
    /// Compare graph-learning ablations under identical splits.
    Ablate(Common),
    /// Check every backward rule against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately break one backward rule (harness sanity check).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest name, `blobs`, or a CSV path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `25,50,75` or `25:225:25`.
    #[arg(long)]
    budgets: Option<String>,
    /// Comma-separated selector kinds.
    #[arg(long)]
    selector: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    /// Samples kept by `select`.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    train_epochs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset.set_from_arg(d);
        }
        if let Some(l) = &self.label_column {
            cfg.dataset.label_column = Some(l.clone());
        }
        if let Some(m) = &self.manifest {
            cfg.dataset.manifest = Some(m.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            if self.runs.is_none() && cfg.protocol.seeds.is_some() {
                cfg.protocol.runs = cfg.protocol.seeds.as_ref().map(Vec::len);
            }
            cfg.protocol.seeds = None;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(b) = &self.budgets {
            cfg.protocol.budgets = Some(parse_budgets(b)?);
        }
        if let Some(s) = &self.selector {
            cfg.selectors = parse_selectors(s)?
                .into_iter()
                .map(|kind| {
                    cfg.selectors
                        .iter()
                        .find(|s| s.kind == kind)
                        .cloned()
                        .unwrap_or_else(|| SelectorSpec::new(kind))
                })
                .collect();
        }
        if let Some(r) = self.runs {
            cfg.protocol.runs = Some(r);
            cfg.protocol.seeds = None;
        }
        if let Some(m) = self.m {
            cfg.select.m = Some(m);
        }
        if let Some(e) = self.pretrain_epochs {
            cfg.model.pretrain_epochs = e;
        }
        if let Some(e) = self.train_epochs {
            cfg.model.train_epochs = e;
        }
        Ok(cfg)
    }
}

fn parse_op(name: &str) -> Option<OpKind> {
    [
        OpKind::MatMul,
        OpKind::Affine,
        OpKind::Relu,
        OpKind::FrobSq,
        OpKind::SupNormRows,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Scale,
        OpKind::WeightedSum,
    ]
    .into_iter()
    .find(|k| k.name() == name)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Select(c) => {
            let cfg = c.resolve()?;
            let r = cmd_select(&cfg)?;
            println!(
                "ranked {} samples; artifacts in {}",
                r.ranked_indices.len(),
                cfg.out_dir.display()
            );
        }
        Command::Evaluate(c) => {
            let cfg = c.resolve()?;
            let r = cmd_evaluate(&cfg)?;
            for row in r.summary().rows {
                println!("{:<12} {:<20} average {:.4}", row.selector, row.classifier, row.average);
            }
        }
        Command::Grid(c) => {
            let cfg = c.resolve()?;
            let g = cmd_grid(&cfg)?;
            println!(
                "best alpha={} beta={} lambda={} (mean accuracy {:.4})",
                g.best.alpha, g.best.beta, g.best.lambda, g.best.mean_accuracy
            );
        }
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            let r = cmd_ablate(&cfg)?;
            for row in r.summary().rows {
                println!("{:<12} {:<20} average {:.4}", row.selector, row.classifier, row.average);
            }
        }
        Command::Gradcheck { seed, corrupt } => {
            let fault = match corrupt.as_deref() {
                None => None,
                Some(name) => Some(parse_op(name).ok_or_else(|| {
                    CliError::Config(allg::config::ConfigError::Invalid(format!("unknown op {name:?}")))
                })?),
            };
            cmd_gradcheck(seed, fault, std::io::stdout())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

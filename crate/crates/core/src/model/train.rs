//! Two-stage training: autoencoder pretraining, then joint optimization of
//! every parameter against the full objective.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    bind, forward, losses, loss_reconstruction, decode, encode, trainable_arrays_mut,
    trainable_shapes, AdjacencyMode, Autoencoder, ModelConfig, ModelError, ModelParams, Result,
    Stage,
};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::graph::{knn_graph, PriorGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub reconstruction: f64,
    pub adjacency: f64,
    pub propagation: f64,
    pub selection: f64,
    pub total: f64,
}

/// Per-epoch loss terms, measured before each update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,L_r,L_a,L_p,L_s,total")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.reconstruction, r.adjacency, r.propagation, r.selection, r.total
            )?;
        }
        Ok(())
    }
}

fn adam_cfg(cfg: &ModelConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    }
}

fn check_input(x: &Array2<f64>, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    if x.ncols() < 2 || x.nrows() < 1 {
        return Err(ModelError::Shape(format!("input is {:?}", x.dim())));
    }
    Ok(())
}

fn should_stop(totals: &[f64], cfg: &ModelConfig) -> bool {
    let Some(es) = cfg.early_stop else {
        return false;
    };
    let t = totals.len();
    if es.patience == 0 || t <= es.patience {
        return false;
    }
    let (old, new) = (totals[t - 1 - es.patience], totals[t - 1]);
    (old - new).abs() / old.abs().max(f64::MIN_POSITIVE) < es.tolerance
}

/// Minimizes the reconstruction loss of a plain autoencoder with full-batch
/// Adam. Returns the parameters and the per-epoch loss.
pub fn pretrain(x: &Array2<f64>, cfg: &ModelConfig) -> Result<(Autoencoder, Vec<f64>)> {
    check_input(x, cfg)?;
    let ae = Autoencoder::init(&cfg.encoder_dims(x.nrows()), cfg.seed);
    let mut params = ModelParams {
        autoencoder: ae,
        adjacency: Vec::new(),
        q: Array2::zeros((0, 0)),
    };
    let mut state = AdamState::new(trainable_shapes(&params, cfg, Stage::Pretrain));
    let adam = adam_cfg(cfg);
    let mut history = Vec::with_capacity(cfg.pretrain_epochs);

    for epoch in 0..cfg.pretrain_epochs {
        let mut tape = Tape::new();
        let pv = bind(&mut tape, &params, cfg, Stage::Pretrain);
        let xv = tape.constant(x.clone());
        let z = encode(&mut tape, &pv.encoder, xv, cfg.latent_relu)?;
        let xbar = decode(&mut tape, &pv.decoder, z)?;
        let loss = loss_reconstruction(&mut tape, xv, xbar)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(ModelError::NonFinite {
                stage: Stage::Pretrain.name(),
                epoch,
            });
        }
        history.push(value);
        tape.backward(loss)?;
        let grads: Vec<_> = pv.trainable.iter().map(|&v| tape.grad(v)).collect();
        let mut arrays = trainable_arrays_mut(&mut params, cfg, Stage::Pretrain);
        adam_step(&mut arrays, &grads, &mut state, &adam)?;
        if should_stop(&history, cfg) {
            break;
        }
    }
    Ok((params.autoencoder, history))
}

/// Joint training from the standard initialization: adjacency layers at the
/// prior, `Q = 0`.
pub fn train(
    x: &Array2<f64>,
    a0: &Array2<f64>,
    cfg: &ModelConfig,
    pretrained: Autoencoder,
) -> Result<(ModelParams, LossHistory)> {
    let params = ModelParams::from_pretrained(pretrained, a0, cfg);
    train_from(x, a0, cfg, params)
}

/// Joint training from arbitrary initial parameters.
pub fn train_from(
    x: &Array2<f64>,
    a0: &Array2<f64>,
    cfg: &ModelConfig,
    mut params: ModelParams,
) -> Result<(ModelParams, LossHistory)> {
    check_input(x, cfg)?;
    let n = x.ncols();
    if a0.dim() != (n, n) {
        return Err(ModelError::Shape(format!(
            "prior graph is {:?} for {n} samples",
            a0.dim()
        )));
    }
    if params.q.dim() != (n, n) || params.adjacency.len() != cfg.n_adjacency {
        return Err(ModelError::Shape(format!(
            "parameters sized for {} samples / {} layers, data has {n} / config {}",
            params.q.nrows(),
            params.adjacency.len(),
            cfg.n_adjacency
        )));
    }
    if params.autoencoder.input_dim() != x.nrows() {
        return Err(ModelError::Shape(format!(
            "autoencoder expects {} features, data has {}",
            params.autoencoder.input_dim(),
            x.nrows()
        )));
    }
    if cfg.adjacency_mode == AdjacencyMode::Tied {
        tie(&mut params);
    }

    let mut state = AdamState::new(trainable_shapes(&params, cfg, Stage::Joint));
    let adam = adam_cfg(cfg);
    let mut history = LossHistory::default();
    let mut totals = Vec::with_capacity(cfg.train_epochs);

    for epoch in 0..cfg.train_epochs {
        let mut tape = Tape::new();
        let pv = bind(&mut tape, &params, cfg, Stage::Joint);
        let xv = tape.constant(x.clone());
        let a0v = tape.constant(a0.clone());
        let fv = forward(&mut tape, &pv, xv, cfg)?;
        let lv = losses(&mut tape, &pv, &fv, xv, a0v, cfg)?;
        let record = lv.record(&tape, epoch);
        if !record.total.is_finite() {
            return Err(ModelError::NonFinite {
                stage: Stage::Joint.name(),
                epoch,
            });
        }
        history.records.push(record);
        totals.push(record.total);
        tape.backward(lv.total)?;
        let grads: Vec<_> = pv.trainable.iter().map(|&v| tape.grad(v)).collect();
        let mut arrays = trainable_arrays_mut(&mut params, cfg, Stage::Joint);
        adam_step(&mut arrays, &grads, &mut state, &adam)?;
        if cfg.adjacency_mode == AdjacencyMode::Tied {
            tie(&mut params);
        }
        if should_stop(&totals, cfg) {
            break;
        }
    }
    Ok((params, history))
}

fn tie(params: &mut ModelParams) {
    if let Some((first, rest)) = params.adjacency.split_first_mut() {
        for a in rest {
            a.assign(first);
        }
    }
}

/// Loss terms at the given parameters, without updating them.
pub fn evaluate_losses(
    x: &Array2<f64>,
    a0: &Array2<f64>,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<super::LossRecord> {
    let mut tape = Tape::new();
    let pv = bind(&mut tape, params, cfg, Stage::Joint);
    let xv = tape.constant(x.clone());
    let a0v = tape.constant(a0.clone());
    let fv = forward(&mut tape, &pv, xv, cfg)?;
    let lv = losses(&mut tape, &pv, &fv, xv, a0v, cfg)?;
    Ok(lv.record(&tape, usize::MAX))
}

/// Everything produced by one end-to-end run.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub prior: PriorGraph,
    pub pretrain_losses: Vec<f64>,
    pub params: ModelParams,
    pub history: LossHistory,
    /// Losses after the last update.
    pub final_losses: LossRecord,
}

/// Prior graph, pretraining and joint training on a standardized `d × n`
/// candidate matrix.
pub fn fit(x: &Array2<f64>, cfg: &ModelConfig) -> Result<FitOutcome> {
    check_input(x, cfg)?;
    let k = cfg.prior_k.min(x.ncols() - 1);
    let prior = knn_graph(x.view(), k)?;
    let a0 = prior.normalized(cfg.prior_normalization);
    let (ae, pretrain_losses) = pretrain(x, cfg)?;
    let (params, history) = train(x, &a0, cfg, ae)?;
    let final_losses = evaluate_losses(x, &a0, cfg, &params)?;
    Ok(FitOutcome {
        prior,
        pretrain_losses,
        params,
        history,
        final_losses,
    })
}

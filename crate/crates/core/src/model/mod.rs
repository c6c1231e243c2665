//! The graph-learning active-learning model.
//!
//! Forward pass, for a `d × n` candidate matrix `X`:
//!
//! ```text
//! Z     = encoder(X)                      (d' × n, ReLU layers)
//! S_1   = relu(Z · A_1)
//! S_i+1 = relu(S_i · A_i+1)               i = 1..N-1
//! S_out = r · S_k + (1 - r) · S_N         (shortcut)
//! X̄     = decoder(S_out · Q)
//! ```
//!
//! and the training objective is the sum of the reconstruction, adjacency,
//! propagation and self-selection terms.

mod checkpoint;
mod config;
mod select;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ablation_variant, AdjacencyMode, EarlyStop, ModelConfig, Variant};
pub use select::{rank, SelectionResult};
pub use train::{evaluate_losses, fit, pretrain, train, train_from, FitOutcome, LossHistory, LossRecord};

use ndarray::Array2;
use rand::Rng;
use rand_distr::Uniform;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::graph::GraphError;
use crate::seed;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss during {stage} at epoch {epoch}")]
    NonFinite { stage: &'static str, epoch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    /// `out × 1`
    pub bias: Array2<f64>,
}

impl Dense {
    /// Uniform in `±sqrt(6 / fan_in)`, zero bias.
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        Self {
            weight: Array2::from_shape_fn((fan_out, fan_in), |_| rng.sample(dist)),
            bias: Array2::zeros((fan_out, 1)),
        }
    }
}

/// Encoder layers `d → … → d'` and mirrored decoder layers `d' → … → d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl Autoencoder {
    pub fn init(dims: &[usize], seed: u64) -> Self {
        let mut rng = seed::rng(seed::substream(seed, "init"));
        let encoder = dims.windows(2).map(|w| Dense::init(w[0], w[1], &mut rng)).collect();
        let decoder = dims
            .windows(2)
            .rev()
            .map(|w| Dense::init(w[1], w[0], &mut rng))
            .collect();
        Self { encoder, decoder }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].weight.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    fn arrays(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weight, &l.bias])
    }

    fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Latent codes `Θ(x)` computed without a tape.
    pub fn encode(&self, x: &Array2<f64>, latent_relu: bool) -> Array2<f64> {
        let last = self.encoder.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.encoder.iter().enumerate() {
            h = l.weight.dot(&h) + &l.bias;
            if i < last || latent_relu {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }
}

/// All trainable arrays of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub autoencoder: Autoencoder,
    /// One `n × n` matrix per adjacency layer. In tied mode every entry is
    /// the same matrix; in frozen mode they hold the prior.
    pub adjacency: Vec<Array2<f64>>,
    /// `n × n` self-selection matrix.
    pub q: Array2<f64>,
}

impl ModelParams {
    /// Graph layers start at the prior, `Q` at zero.
    pub fn from_pretrained(autoencoder: Autoencoder, a0: &Array2<f64>, cfg: &ModelConfig) -> Self {
        let n = a0.nrows();
        Self {
            autoencoder,
            adjacency: vec![a0.clone(); cfg.n_adjacency],
            q: Array2::zeros((n, n)),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.q.nrows()
    }
}

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Joint,
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Pretrain => "pretraining",
            Stage::Joint => "training",
        }
    }
}

/// Tape handles for the parameters of one forward pass.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub encoder: Vec<(Var, Var)>,
    pub decoder: Vec<(Var, Var)>,
    /// One per layer; aliases the same variable in tied mode.
    pub adjacency: Vec<Var>,
    pub q: Option<Var>,
    /// Trainable variables in the order of [`trainable_arrays_mut`].
    pub trainable: Vec<Var>,
}

fn bind_dense(tape: &mut Tape, layers: &[Dense], trainable: &mut Vec<Var>) -> Vec<(Var, Var)> {
    layers
        .iter()
        .map(|l| {
            let w = tape.param(l.weight.clone());
            let b = tape.param(l.bias.clone());
            trainable.extend([w, b]);
            (w, b)
        })
        .collect()
}

/// Registers parameters on the tape. In [`Stage::Pretrain`] only the
/// autoencoder is bound.
pub fn bind(tape: &mut Tape, params: &ModelParams, cfg: &ModelConfig, stage: Stage) -> ParamVars {
    let mut trainable = Vec::new();
    let encoder = bind_dense(tape, &params.autoencoder.encoder, &mut trainable);
    let decoder = bind_dense(tape, &params.autoencoder.decoder, &mut trainable);
    if stage == Stage::Pretrain {
        return ParamVars {
            encoder,
            decoder,
            adjacency: Vec::new(),
            q: None,
            trainable,
        };
    }
    let adjacency = match cfg.adjacency_mode {
        AdjacencyMode::Learned => params
            .adjacency
            .iter()
            .map(|a| {
                let v = tape.param(a.clone());
                trainable.push(v);
                v
            })
            .collect(),
        AdjacencyMode::Frozen => params
            .adjacency
            .iter()
            .map(|a| tape.constant(a.clone()))
            .collect(),
        AdjacencyMode::Tied => match params.adjacency.first() {
            Some(a) => {
                let v = tape.param(a.clone());
                trainable.push(v);
                vec![v; params.adjacency.len()]
            }
            None => Vec::new(),
        },
    };
    let q = tape.param(params.q.clone());
    trainable.push(q);
    ParamVars {
        encoder,
        decoder,
        adjacency,
        q: Some(q),
        trainable,
    }
}

/// Mutable views of the trainable arrays, matching `ParamVars::trainable`.
pub fn trainable_arrays_mut<'a>(
    params: &'a mut ModelParams,
    cfg: &ModelConfig,
    stage: Stage,
) -> Vec<&'a mut Array2<f64>> {
    let mut out: Vec<&mut Array2<f64>> = params.autoencoder.arrays_mut().collect();
    if stage == Stage::Joint {
        match cfg.adjacency_mode {
            AdjacencyMode::Learned => out.extend(params.adjacency.iter_mut()),
            AdjacencyMode::Frozen => {}
            AdjacencyMode::Tied => out.extend(params.adjacency.iter_mut().take(1)),
        }
        out.push(&mut params.q);
    }
    out
}

pub(crate) fn trainable_shapes(params: &ModelParams, cfg: &ModelConfig, stage: Stage) -> Vec<(usize, usize)> {
    let mut out: Vec<_> = params.autoencoder.arrays().map(|a| a.dim()).collect();
    if stage == Stage::Joint {
        let k = match cfg.adjacency_mode {
            AdjacencyMode::Learned => params.adjacency.len(),
            AdjacencyMode::Frozen => 0,
            AdjacencyMode::Tied => params.adjacency.len().min(1),
        };
        out.extend(params.adjacency.iter().take(k).map(|a| a.dim()));
        out.push(params.q.dim());
    }
    out
}

/// `Z^L` on the tape.
pub fn encode(tape: &mut Tape, layers: &[(Var, Var)], x: Var, latent_relu: bool) -> Result<Var> {
    let last = layers.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.affine(w, h, b)?;
        if i < last || latent_relu {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Mirror of the encoder. Hidden layers use ReLU, the output layer is linear
/// so standardized (signed) features can be reproduced.
pub fn decode(tape: &mut Tape, layers: &[(Var, Var)], h: Var) -> Result<Var> {
    let last = layers.len() - 1;
    let mut h = h;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.affine(w, h, b)?;
        if i < last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Tape handles of the intermediate representations.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub z: Var,
    pub s: Vec<Var>,
    pub s_out: Var,
    pub xbar0: Var,
    pub xbar: Var,
}

/// Values of the intermediate representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub z: Array2<f64>,
    pub s: Vec<Array2<f64>>,
    pub s_out: Array2<f64>,
    pub xbar0: Array2<f64>,
    pub xbar: Array2<f64>,
}

impl ForwardVars {
    pub fn cache(&self, tape: &Tape) -> ForwardCache {
        ForwardCache {
            z: tape.value(self.z).clone(),
            s: self.s.iter().map(|&v| tape.value(v).clone()).collect(),
            s_out: tape.value(self.s_out).clone(),
            xbar0: tape.value(self.xbar0).clone(),
            xbar: tape.value(self.xbar).clone(),
        }
    }
}

/// Propagates `Z` through the adjacency layers and mixes in the shortcut.
pub fn propagate(tape: &mut Tape, z: Var, adjacency: &[Var], cfg: &ModelConfig) -> Result<(Vec<Var>, Var)> {
    let mut s = Vec::with_capacity(adjacency.len());
    let mut h = z;
    for &a in adjacency {
        h = tape.matmul(h, a)?;
        h = tape.relu(h)?;
        s.push(h);
    }
    let Some(&last) = s.last() else {
        return Ok((s, z));
    };
    if !cfg.shortcut {
        return Ok((s, last));
    }
    let early = s[cfg.shortcut_layer - 1];
    let r = cfg.shortcut_weight;
    let s_out = if r == 1.0 {
        early
    } else if r == 0.0 || early == last {
        last
    } else {
        let a = tape.scale(early, r)?;
        let b = tape.scale(last, 1.0 - r)?;
        tape.add(a, b)?
    };
    Ok((s, s_out))
}

/// Full forward pass. `x` must have as many columns as the adjacency side.
pub fn forward(tape: &mut Tape, pv: &ParamVars, x: Var, cfg: &ModelConfig) -> Result<ForwardVars> {
    let q = pv
        .q
        .ok_or_else(|| ModelError::Shape("forward needs the selection layer bound".into()))?;
    if q.shape().0 != x.shape().1 {
        return Err(ModelError::Shape(format!(
            "{} samples but selection layer is {:?}",
            x.shape().1,
            q.shape()
        )));
    }
    for a in &pv.adjacency {
        if a.shape() != q.shape() {
            return Err(ModelError::Shape(format!(
                "adjacency {:?} vs {} samples",
                a.shape(),
                x.shape().1
            )));
        }
    }
    let z = encode(tape, &pv.encoder, x, cfg.latent_relu)?;
    let (s, s_out) = propagate(tape, z, &pv.adjacency, cfg)?;
    let xbar0 = tape.matmul(s_out, q)?;
    let xbar = decode(tape, &pv.decoder, xbar0)?;
    Ok(ForwardVars {
        z,
        s,
        s_out,
        xbar0,
        xbar,
    })
}

/// Convenience wrapper: forward pass on a fresh tape, values only.
pub fn forward_values(params: &ModelParams, x: &Array2<f64>, cfg: &ModelConfig) -> Result<ForwardCache> {
    let mut tape = Tape::new();
    let pv = bind(&mut tape, params, cfg, Stage::Joint);
    let xv = tape.constant(x.clone());
    Ok(forward(&mut tape, &pv, xv, cfg)?.cache(&tape))
}

/// `‖X − X̄‖_F²`
pub fn loss_reconstruction(tape: &mut Tape, x: Var, xbar: Var) -> Result<Var> {
    let diff = tape.sub(x, xbar)?;
    Ok(tape.frob_sq(diff)?)
}

/// `α‖A_1‖_F² + β‖A_1 − A_0‖_F²`
pub fn loss_adjacency(tape: &mut Tape, a1: Var, a0: Var, alpha: f64, beta: f64) -> Result<Var> {
    let norm = tape.frob_sq(a1)?;
    let diff = tape.sub(a1, a0)?;
    let dev = tape.frob_sq(diff)?;
    let a = tape.scale(norm, alpha)?;
    let b = tape.scale(dev, beta)?;
    Ok(tape.add(a, b)?)
}

/// `Σ_{l≥2} α'‖A_l‖_F² + β'‖A_l − A_{l−1}‖_F²`; a zero constant for a
/// single layer.
pub fn loss_propagation(tape: &mut Tape, layers: &[Var], alpha: f64, beta: f64) -> Result<Var> {
    if let Some(w) = layers.windows(2).next() {
        if w[0].shape() != w[1].shape() {
            return Err(ModelError::Shape("adjacency layers differ in shape".into()));
        }
    }
    let mut terms = Vec::new();
    for w in layers.windows(2) {
        terms.push(loss_adjacency(tape, w[1], w[0], alpha, beta)?);
    }
    if terms.is_empty() {
        return Ok(tape.constant(Array2::zeros((1, 1))));
    }
    Ok(tape.sum(&terms)?)
}

/// `‖S − S·Q‖_F² + λ‖Q‖_{∞,1}`
pub fn loss_selection(tape: &mut Tape, s_out: Var, q: Var, lambda: f64) -> Result<Var> {
    let sq = tape.matmul(s_out, q)?;
    let diff = tape.sub(s_out, sq)?;
    let fit = tape.frob_sq(diff)?;
    let sup = tape.sup_norm_rows(q)?;
    let reg = tape.scale(sup, lambda)?;
    Ok(tape.add(fit, reg)?)
}

/// The four objective terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub reconstruction: Var,
    pub adjacency: Var,
    pub propagation: Var,
    pub selection: Var,
    pub total: Var,
}

impl LossVars {
    pub fn record(&self, tape: &Tape, epoch: usize) -> LossRecord {
        LossRecord {
            epoch,
            reconstruction: tape.scalar(self.reconstruction),
            adjacency: tape.scalar(self.adjacency),
            propagation: tape.scalar(self.propagation),
            selection: tape.scalar(self.selection),
            total: tape.scalar(self.total),
        }
    }
}

/// All loss terms of one forward pass.
pub fn losses(
    tape: &mut Tape,
    pv: &ParamVars,
    fv: &ForwardVars,
    x: Var,
    a0: Var,
    cfg: &ModelConfig,
) -> Result<LossVars> {
    let q = pv.q.expect("joint stage binds Q");
    let reconstruction = loss_reconstruction(tape, x, fv.xbar)?;
    let adjacency = match pv.adjacency.first() {
        Some(&a1) => loss_adjacency(tape, a1, a0, cfg.alpha, cfg.beta)?,
        None => tape.constant(Array2::zeros((1, 1))),
    };
    let propagation = loss_propagation(tape, &pv.adjacency, cfg.alpha_prop(), cfg.beta_prop())?;
    let selection = loss_selection(tape, fv.s_out, q, cfg.lambda)?;
    let total = tape.sum(&[reconstruction, adjacency, propagation, selection])?;
    Ok(LossVars {
        reconstruction,
        adjacency,
        propagation,
        selection,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(n: usize, d: usize, cfg: &ModelConfig, seed: u64) -> (Array2<f64>, Array2<f64>, ModelParams) {
        let mut rng = seed::rng(seed);
        let x = Array2::from_shape_fn((d, n), |_| rng.random_range(-1.0..1.0));
        let a0 = crate::graph::knn_graph(x.view(), 2).unwrap().adjacency;
        let ae = Autoencoder::init(&cfg.encoder_dims(d), seed);
        let mut p = ModelParams::from_pretrained(ae, &a0, cfg);
        p.q = Array2::from_shape_fn((n, n), |_| rng.random_range(-0.2..0.2));
        for a in &mut p.adjacency {
            a.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
        }
        (x, a0, p)
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            layer_widths: vec![6, 5, 4],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let ae = Autoencoder::init(&[8, 6, 5, 4], 1);
        let enc: Vec<_> = ae.encoder.iter().map(|l| l.weight.dim()).collect();
        let dec: Vec<_> = ae.decoder.iter().map(|l| l.weight.dim()).collect();
        assert_eq!(enc, vec![(6, 8), (5, 6), (4, 5)]);
        assert_eq!(dec, vec![(5, 4), (6, 5), (8, 6)]);
    }

    #[test]
    fn shortcut_endpoints_exact() {
        let base = small_cfg();
        let (x, _, p) = toy(6, 8, &base, 3);
        let ends = |r: f64| {
            let cfg = ModelConfig {
                shortcut_weight: r,
                ..base.clone()
            };
            forward_values(&p, &x, &cfg).unwrap()
        };
        let c1 = ends(1.0);
        assert_eq!(c1.s_out, c1.s[0]);
        let c0 = ends(0.0);
        assert_eq!(c0.s_out, c0.s[1]);
        let mid = ends(0.3);
        let expect = &mid.s[0] * 0.3 + &mid.s[1] * 0.7;
        assert!((&mid.s_out - &expect).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn identity_q_passes_s_out() {
        let cfg = small_cfg();
        let (x, _, mut p) = toy(6, 8, &cfg, 4);
        p.q = Array2::eye(6);
        let c = forward_values(&p, &x, &cfg).unwrap();
        assert_eq!(c.xbar0, c.s_out);
    }

    #[test]
    fn no_graph_has_no_layers() {
        let cfg = ablation_variant(&small_cfg(), Variant::NoGraph).unwrap();
        let (x, a0, _) = toy(6, 8, &small_cfg(), 5);
        let p = ModelParams::from_pretrained(Autoencoder::init(&cfg.encoder_dims(8), 5), &a0, &cfg);
        let c = forward_values(&p, &x, &cfg).unwrap();
        assert!(c.s.is_empty());
        assert_eq!(c.s_out, c.z);
    }

    #[test]
    fn forward_rejects_mismatched_samples() {
        let cfg = small_cfg();
        let (_, _, p) = toy(6, 8, &cfg, 6);
        let x = Array2::zeros((8, 5));
        assert!(matches!(
            forward_values(&p, &x, &cfg),
            Err(ModelError::Shape(_))
        ));
    }

    #[test]
    fn loss_term_examples() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let lr0 = loss_reconstruction(&mut t, x, x).unwrap();
        assert_eq!(t.scalar(lr0), 0.0);
        let y = t.constant(array![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
        let lr1 = loss_reconstruction(&mut t, x, y).unwrap();
        assert_eq!(t.scalar(lr1), 6.0);

        let z = t.constant(Array2::zeros((3, 3)));
        let i = t.constant(Array2::eye(3));
        let la = loss_adjacency(&mut t, z, i, 1.0, 1.0).unwrap();
        assert_eq!(t.scalar(la), 3.0);
        let la2 = loss_adjacency(&mut t, i, i, 0.5, 7.0).unwrap();
        assert_eq!(t.scalar(la2), 1.5);

        let lp1 = loss_propagation(&mut t, &[i], 1.0, 1.0).unwrap();
        assert_eq!(t.scalar(lp1), 0.0);
        let two = t.constant(Array2::eye(3) * 2.0);
        let lp2 = loss_propagation(&mut t, &[two, two], 0.5, 3.0).unwrap();
        assert_eq!(t.scalar(lp2), 0.5 * 12.0);

        let s = t.constant(array![[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]]);
        let ls = loss_selection(&mut t, s, i, 0.7).unwrap();
        assert!((t.scalar(ls) - 0.7 * 3.0).abs() < 1e-15);
        let ls0 = loss_selection(&mut t, s, z, 0.7).unwrap();
        assert_eq!(t.scalar(ls0), 1.0 + 4.0 + 0.25 + 9.0 + 0.0 + 1.0);
    }

    #[test]
    fn total_is_sum_of_terms() {
        let cfg = small_cfg();
        let (x, a0, p) = toy(6, 8, &cfg, 7);
        let mut t = Tape::new();
        let pv = bind(&mut t, &p, &cfg, Stage::Joint);
        let xv = t.constant(x);
        let a0v = t.constant(a0);
        let fv = forward(&mut t, &pv, xv, &cfg).unwrap();
        let l = losses(&mut t, &pv, &fv, xv, a0v, &cfg).unwrap();
        let r = l.record(&t, 0);
        let sum = r.reconstruction + r.adjacency + r.propagation + r.selection;
        assert!((sum - r.total).abs() <= 1e-12 * r.total.abs());
    }

    #[test]
    fn trainable_order_matches_binding() {
        for mode in [AdjacencyMode::Learned, AdjacencyMode::Frozen, AdjacencyMode::Tied] {
            let cfg = ModelConfig {
                adjacency_mode: mode,
                ..small_cfg()
            };
            let (_, _, mut p) = toy(6, 8, &cfg, 8);
            let mut t = Tape::new();
            let pv = bind(&mut t, &p, &cfg, Stage::Joint);
            let shapes: Vec<_> = pv.trainable.iter().map(|v| v.shape()).collect();
            assert_eq!(shapes, trainable_shapes(&p, &cfg, Stage::Joint));
            let arrays = trainable_arrays_mut(&mut p, &cfg, Stage::Joint);
            assert_eq!(arrays.len(), shapes.len());
        }
    }
}

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::graph::PriorNormalization;

/// How the adjacency layers are parameterized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// Every layer owns a trainable matrix.
    #[default]
    Learned,
    /// Every layer uses the prior graph as a constant.
    Frozen,
    /// One trainable matrix shared by all layers.
    Tied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Relative change of the total loss across `patience` epochs.
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder widths after the input layer; the last entry is the latent
    /// size. Each width is clipped to the input dimension.
    pub layer_widths: Vec<usize>,
    /// Apply ReLU to the latent layer too.
    pub latent_relu: bool,
    /// Number of adjacency layers. Zero removes graph learning entirely.
    pub n_adjacency: usize,
    pub adjacency_mode: AdjacencyMode,
    pub shortcut: bool,
    /// 1-based index of the layer mixed into the output.
    pub shortcut_layer: usize,
    pub shortcut_weight: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Defaults to `alpha`.
    pub alpha_prop: Option<f64>,
    /// Defaults to `beta`.
    pub beta_prop: Option<f64>,
    pub lambda: f64,
    pub lr: f64,
    pub pretrain_epochs: usize,
    pub train_epochs: usize,
    pub early_stop: Option<EarlyStop>,
    pub prior_k: usize,
    pub prior_normalization: PriorNormalization,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_widths: vec![128, 64, 32],
            latent_relu: true,
            n_adjacency: 2,
            adjacency_mode: AdjacencyMode::Learned,
            shortcut: true,
            shortcut_layer: 1,
            shortcut_weight: 0.3,
            alpha: 1.0,
            beta: 1.0,
            alpha_prop: None,
            beta_prop: None,
            lambda: 1.0,
            lr: 1e-3,
            pretrain_epochs: 500,
            train_epochs: 2000,
            early_stop: None,
            prior_k: 5,
            prior_normalization: PriorNormalization::None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// `[d, h_1, ..., d']` for input dimension `d`.
    pub fn encoder_dims(&self, d: usize) -> Vec<usize> {
        std::iter::once(d)
            .chain(self.layer_widths.iter().map(|&w| w.min(d)))
            .collect()
    }

    pub fn latent_dim(&self, d: usize) -> usize {
        *self.encoder_dims(d).last().expect("at least the input dim")
    }

    pub fn alpha_prop(&self) -> f64 {
        self.alpha_prop.unwrap_or(self.alpha)
    }

    pub fn beta_prop(&self) -> f64 {
        self.beta_prop.unwrap_or(self.beta)
    }

    /// Whether `S_out` mixes in an earlier layer.
    pub fn uses_shortcut(&self) -> bool {
        self.shortcut && self.n_adjacency > 0 && self.shortcut_layer < self.n_adjacency
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return bad("layer_widths must be non-empty and positive".into());
        }
        if self.shortcut && self.n_adjacency > 0
            && !(1..=self.n_adjacency).contains(&self.shortcut_layer)
        {
            return bad(format!(
                "shortcut_layer {} not in 1..={}",
                self.shortcut_layer, self.n_adjacency
            ));
        }
        if !(0.0..=1.0).contains(&self.shortcut_weight) {
            return bad(format!("shortcut_weight {} not in [0, 1]", self.shortcut_weight));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("alpha_prop", self.alpha_prop()),
            ("beta_prop", self.beta_prop()),
            ("lambda", self.lambda),
            ("lr", self.lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.prior_k == 0 {
            return bad("prior_k must be at least 1".into());
        }
        Ok(())
    }
}

/// Table rows of the graph-learning ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No adjacency layers: `S_out = Z^L`.
    NoGraph,
    /// One layer using the kNN prior as a fixed matrix.
    KnnOnly,
    /// One learned matrix.
    OneMatrix,
    /// Two layers sharing one learned matrix, no shortcut.
    TiedTwo,
    /// Two distinct learned matrices, no shortcut.
    DistinctTwo,
    /// The base configuration with its shortcut removed.
    NoShortcut,
    /// The base configuration.
    Full,
}

impl Variant {
    /// Rows reported by the ablation command, in table order.
    pub const TABLE: [Variant; 6] = [
        Variant::NoGraph,
        Variant::KnnOnly,
        Variant::OneMatrix,
        Variant::TiedTwo,
        Variant::DistinctTwo,
        Variant::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::NoGraph => "no_graph",
            Variant::KnnOnly => "knn_only",
            Variant::OneMatrix => "one_matrix",
            Variant::TiedTwo => "tied_two",
            Variant::DistinctTwo => "distinct_two",
            Variant::NoShortcut => "no_shortcut",
            Variant::Full => "full",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "no_graph" => Variant::NoGraph,
            "knn_only" => Variant::KnnOnly,
            "one_matrix" => Variant::OneMatrix,
            "tied_two" => Variant::TiedTwo,
            "distinct_two" => Variant::DistinctTwo,
            "no_shortcut" => Variant::NoShortcut,
            "full" => Variant::Full,
            other => return Err(ModelError::Config(format!("unknown variant {other:?}"))),
        })
    }
}

/// Derives the configuration of an ablation row from a base configuration.
pub fn ablation_variant(base: &ModelConfig, variant: Variant) -> Result<ModelConfig, ModelError> {
    base.validate()?;
    let mut cfg = base.clone();
    match variant {
        Variant::NoGraph => {
            cfg.n_adjacency = 0;
            cfg.shortcut = false;
        }
        Variant::KnnOnly => {
            cfg.n_adjacency = 1;
            cfg.adjacency_mode = AdjacencyMode::Frozen;
            cfg.shortcut = false;
        }
        Variant::OneMatrix => {
            cfg.n_adjacency = 1;
            cfg.adjacency_mode = AdjacencyMode::Learned;
            cfg.shortcut = false;
        }
        Variant::TiedTwo => {
            cfg.n_adjacency = 2;
            cfg.adjacency_mode = AdjacencyMode::Tied;
            cfg.shortcut = false;
        }
        Variant::DistinctTwo => {
            cfg.n_adjacency = 2;
            cfg.adjacency_mode = AdjacencyMode::Learned;
            cfg.shortcut = false;
        }
        Variant::NoShortcut => cfg.shortcut = false,
        Variant::Full => {}
    }
    cfg.shortcut_layer = cfg.shortcut_layer.min(cfg.n_adjacency.max(1));
    Ok(cfg)
}

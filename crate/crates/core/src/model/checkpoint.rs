//! JSON checkpoints.
//!
//! ```json
//! { "format": "allg-checkpoint", "version": 1,
//!   "config": { ...ModelConfig... },
//!   "matrices": [ { "name": "encoder.0.weight", "rows": 6, "cols": 8,
//!                   "data": [ ...row-major... ] }, ... ] }
//! ```
//!
//! Names: `encoder.{i}.weight|bias`, `decoder.{i}.weight|bias`,
//! `adjacency.{l}`, `q`. Floats are written in shortest round-trip form, so
//! loading restores every parameter bit for bit.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Autoencoder, Dense, ModelConfig, ModelError, ModelParams, Result};

const FORMAT: &str = "allg-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedMatrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NamedMatrix {
    fn new(name: String, a: &Array2<f64>) -> Self {
        Self {
            name,
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn into_array(self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct File {
    format: String,
    version: u32,
    config: ModelConfig,
    matrices: Vec<NamedMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn to_file(cfg: &ModelConfig, params: &ModelParams) -> File {
    let mut matrices = Vec::new();
    for (side, layers) in [
        ("encoder", &params.autoencoder.encoder),
        ("decoder", &params.autoencoder.decoder),
    ] {
        for (i, l) in layers.iter().enumerate() {
            matrices.push(NamedMatrix::new(format!("{side}.{i}.weight"), &l.weight));
            matrices.push(NamedMatrix::new(format!("{side}.{i}.bias"), &l.bias));
        }
    }
    for (i, a) in params.adjacency.iter().enumerate() {
        matrices.push(NamedMatrix::new(format!("adjacency.{i}"), a));
    }
    matrices.push(NamedMatrix::new("q".into(), &params.q));
    File {
        format: FORMAT.into(),
        version: VERSION,
        config: cfg.clone(),
        matrices,
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let text = serde_json::to_string(&to_file(cfg, params))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let file: File =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    let mut encoder: Vec<(Option<Array2<f64>>, Option<Array2<f64>>)> = Vec::new();
    let mut decoder: Vec<(Option<Array2<f64>>, Option<Array2<f64>>)> = Vec::new();
    let mut adjacency = Vec::new();
    let mut q = None;
    for m in file.matrices {
        let parts: Vec<String> = m.name.split('.').map(str::to_owned).collect();
        let name = m.name.clone();
        let arr = m.into_array()?;
        match parts.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            [side @ ("encoder" | "decoder"), idx, kind @ ("weight" | "bias")] => {
                let i: usize = idx
                    .parse()
                    .map_err(|_| ModelError::Checkpoint(format!("bad name {name}")))?;
                let layers = if *side == "encoder" { &mut encoder } else { &mut decoder };
                if layers.len() <= i {
                    layers.resize(i + 1, (None, None));
                }
                if *kind == "weight" {
                    layers[i].0 = Some(arr);
                } else {
                    layers[i].1 = Some(arr);
                }
            }
            ["adjacency", _] => adjacency.push(arr),
            ["q"] => q = Some(arr),
            _ => return Err(ModelError::Checkpoint(format!("unknown matrix {name}"))),
        }
    }
    let dense = |layers: Vec<(Option<Array2<f64>>, Option<Array2<f64>>)>| -> Result<Vec<Dense>> {
        layers
            .into_iter()
            .map(|(w, b)| match (w, b) {
                (Some(weight), Some(bias)) => Ok(Dense { weight, bias }),
                _ => Err(ModelError::Checkpoint("incomplete layer".into())),
            })
            .collect()
    };
    Ok(Checkpoint {
        config: file.config,
        params: ModelParams {
            autoencoder: Autoencoder {
                encoder: dense(encoder)?,
                decoder: dense(decoder)?,
            },
            adjacency,
            q: q.ok_or_else(|| ModelError::Checkpoint("missing q".into()))?,
        },
    })
}

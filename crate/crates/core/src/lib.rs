//! Unsupervised active learning with learnable graph structures.
//!
//! The pipeline encodes an unlabeled candidate pool with an autoencoder,
//! refines the latent codes through trainable adjacency layers anchored to a
//! kNN prior, and scores every sample by how much a row-sparse
//! self-selection matrix relies on it to reconstruct the rest. The top-`m`
//! samples are the ones to label.

pub mod autodiff;
pub mod baselines;
pub mod commands;
pub mod config;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod seed;

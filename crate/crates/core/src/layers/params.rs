//! Parameter naming, shapes, and initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// All trainable tensors of a model, keyed by name.
pub type ModelParams = ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

fn init_kind(name: &str) -> Init {
    if name.ends_with(".bias") || name.ends_with(".beta") {
        Init::Zeros
    } else if name.ends_with(".gamma") {
        Init::Ones
    } else {
        Init::Glorot
    }
}

pub(crate) fn mpm_name(layer: usize, part: &str) -> String {
    format!("mpm.{layer}.{part}")
}

pub(crate) fn tf_name(layer: usize, part: &str) -> String {
    format!("transformer.{layer}.{part}")
}

pub(crate) fn head_name(layer: usize, head: usize, part: &str) -> String {
    format!("transformer.{layer}.head{head}.{part}")
}

/// Expected `(rows, cols)` of every parameter for `cfg`.
pub fn param_shapes(cfg: &ModelConfig) -> BTreeMap<String, (usize, usize)> {
    let mut s = BTreeMap::new();
    let edge = cfg.modules.edge_enhance;
    if cfg.modules.dvm {
        s.insert("embed.dvm.table".into(), (cfg.codebook.index_count(), cfg.dvm_dim));
        s.insert("embed.dvm.adjust".into(), (cfg.dvm_dim, cfg.dvm_dim));
    }
    s.insert("embed.node.weight".into(), (cfg.node_input_width(), cfg.d_n));
    s.insert("embed.node.bias".into(), (1, cfg.d_n));
    s.insert("embed.edge.weight".into(), (2, cfg.d_e));
    s.insert("embed.edge.bias".into(), (1, cfg.d_e));

    for l in 0..cfg.mpm_layers {
        let att_in = 2 * cfg.d_n + if edge { cfg.d_e } else { 0 };
        s.insert(mpm_name(l, "att_proj"), (att_in, cfg.mpm_hidden));
        s.insert(mpm_name(l, "att_vec"), (cfg.mpm_hidden, 1));
        s.insert(mpm_name(l, "agg"), (cfg.d_n, cfg.d_n));
        if edge {
            s.insert(mpm_name(l, "edge_update"), (cfg.d_e, cfg.d_e));
        }
    }

    let pair = if edge { 2 * cfg.d_h } else { cfg.d_h };
    for l in 0..cfg.transformer_layers {
        for h in 0..cfg.heads {
            s.insert(head_name(l, h, "q_node"), (cfg.d_n, cfg.d_h));
            s.insert(head_name(l, h, "key"), (cfg.d_n, cfg.d_h));
            s.insert(head_name(l, h, "v_node"), (cfg.d_n, cfg.d_h));
            s.insert(head_name(l, h, "score"), (pair, cfg.d_h));
            s.insert(head_name(l, h, "mix"), (pair, cfg.d_h));
            if edge {
                s.insert(head_name(l, h, "q_edge"), (cfg.d_e, cfg.d_h));
                s.insert(head_name(l, h, "v_edge"), (cfg.d_e, cfg.d_h));
            }
        }
        s.insert(tf_name(l, "node_out"), (cfg.heads * cfg.d_h, cfg.d_n));
        s.insert(tf_name(l, "node_norm.gamma"), (1, cfg.d_n));
        s.insert(tf_name(l, "node_norm.beta"), (1, cfg.d_n));
        if edge {
            s.insert(tf_name(l, "edge_out"), (cfg.heads * cfg.d_h, cfg.d_e));
            s.insert(tf_name(l, "edge_norm.gamma"), (1, cfg.d_e));
            s.insert(tf_name(l, "edge_norm.beta"), (1, cfg.d_e));
        }
    }
    s.insert("classifier.weight".into(), (cfg.d_n, cfg.class_count));
    s.insert("classifier.bias".into(), (1, cfg.class_count));
    s
}

/// Glorot-uniform weights, zero biases and shifts, unit norm scales.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, (rows, cols)) in param_shapes(cfg) {
        let data = match init_kind(&name) {
            Init::Zeros => vec![0.0; rows * cols],
            Init::Ones => vec![1.0; rows * cols],
            Init::Glorot => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        params.insert(name, Tensor::matrix(rows, cols, data)?);
    }
    Ok(params)
}

/// Checks that `params` has exactly the names and shapes `cfg` implies.
pub fn check_params(cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let shapes = param_shapes(cfg);
    for (name, &(r, c)) in &shapes {
        let t = params.get(name)?;
        if t.shape() != [r, c] {
            return Err(Error::Config(format!(
                "parameter {name} has shape {:?}, config expects [{r}, {c}]",
                t.shape()
            )));
        }
    }
    if let Some(extra) = params.names().find(|n| !shapes.contains_key(*n)) {
        return Err(Error::Config(format!("unexpected parameter {extra}")));
    }
    Ok(())
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    param_shapes(cfg).values().map(|(r, c)| r * c).sum()
}

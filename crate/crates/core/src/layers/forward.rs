//! The network: embeddings, edge-aware message passing, edge-aware
//! multi-head attention, mean readout, and a linear classifier.
//!
//! Matrices act on row vectors (`x W`), so weight shapes are
//! `in_dim x out_dim`.

use std::collections::BTreeMap;

use super::config::ModelConfig;
use super::inputs::GraphInputs;
use super::params::{head_name, mpm_name, tf_name, ModelParams};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub type ParamVars = BTreeMap<String, Var>;

fn param(vars: &ParamVars, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::MissingParam(name.to_string()))
}

/// Alpha embedding: `ReLU(table[index])` followed by a linear resize.
pub fn dvm_embed(tape: &mut Tape, indices: &[usize], table: Var, adjust: Var) -> Result<Var> {
    let z = tape.embedding_lookup(table, indices)?;
    let h = tape.relu(z)?;
    tape.matmul(h, adjust)
}

/// Initial node (`K x d_n`) and directed-edge (`E x d_e`) embeddings.
pub fn init_embeddings(
    tape: &mut Tape,
    inputs: &GraphInputs,
    vars: &ParamVars,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    let mut parts = vec![tape.constant(inputs.continuous.clone())];
    if cfg.modules.dvm {
        let table = param(vars, "embed.dvm.table")?;
        let adjust = param(vars, "embed.dvm.adjust")?;
        parts.push(dvm_embed(tape, &inputs.alpha_index, table, adjust)?);
    }
    parts.push(tape.constant(inputs.gne.clone()));
    let node_in = tape.concat(&parts)?;
    let h = tape.matmul(node_in, param(vars, "embed.node.weight")?)?;
    let h = tape.add_bias(h, param(vars, "embed.node.bias")?)?;

    let edge_in = tape.constant(inputs.edge_features.clone());
    let e = tape.matmul(edge_in, param(vars, "embed.edge.weight")?)?;
    let e = tape.add_bias(e, param(vars, "embed.edge.bias")?)?;
    Ok((h, e))
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    pub nodes: Var,
    pub edges: Var,
}

/// Message passing with edge-conditioned attention coefficients.
///
/// `a_ij = softmax_{i in N(j)} v^T LeakyReLU([h_i | h_j | e_ij] W)`,
/// `h'_j = sum_i a_ij h_i W_agg`, `e'_ij = e_ij + (a_ij e_ij) W_e`.
/// Returns the layer output and the `E x 1` attention coefficients.
pub fn mpm_layer(
    tape: &mut Tape,
    h: Var,
    e: Var,
    inputs: &GraphInputs,
    vars: &ParamVars,
    layer: usize,
    cfg: &ModelConfig,
) -> Result<(LayerOutput, Var)> {
    let layout = &inputs.layout;
    let h_src = tape.gather_rows(h, layout.sources.clone())?;
    let h_dst = tape.gather_rows(h, layout.targets.clone())?;
    let joint = if cfg.modules.edge_enhance {
        tape.concat(&[h_src, h_dst, e])?
    } else {
        tape.concat(&[h_src, h_dst])?
    };
    let hidden = tape.matmul(joint, param(vars, &mpm_name(layer, "att_proj"))?)?;
    let hidden = tape.leaky_relu(hidden, cfg.leaky_slope)?;
    let logits = tape.matmul(hidden, param(vars, &mpm_name(layer, "att_vec"))?)?;
    let alpha = tape.segment_softmax(logits, layout.by_center.clone())?;

    let projected = tape.matmul(h, param(vars, &mpm_name(layer, "agg"))?)?;
    let messages = tape.gather_rows(projected, layout.sources.clone())?;
    let weighted = tape.scale_rows(messages, alpha)?;
    let nodes = tape.segment_sum(weighted, layout.by_center.clone())?;

    let edges = if cfg.modules.edge_enhance {
        let scaled = tape.scale_rows(e, alpha)?;
        let update = tape.matmul(scaled, param(vars, &mpm_name(layer, "edge_update"))?)?;
        tape.add(e, update)?
    } else {
        e
    };
    Ok((LayerOutput { nodes, edges }, alpha))
}

/// Multi-head attention where queries come from the center node and the
/// edge, keys and node values from the neighbor, and edge values from the
/// edge. Heads are concatenated, projected back, residual-added, and
/// layer-normalized. Returns the output and one `E x 1` weight column per
/// head.
pub fn transformer_layer(
    tape: &mut Tape,
    h: Var,
    e: Var,
    inputs: &GraphInputs,
    vars: &ParamVars,
    layer: usize,
    cfg: &ModelConfig,
) -> Result<(LayerOutput, Vec<Var>)> {
    let layout = &inputs.layout;
    let edge = cfg.modules.edge_enhance;
    let h_center = tape.gather_rows(h, layout.targets.clone())?;
    let h_neighbor = tape.gather_rows(h, layout.sources.clone())?;
    let inv_sqrt_dh = 1.0 / (cfg.d_h as f64).sqrt();

    let mut node_heads = Vec::with_capacity(cfg.heads);
    let mut edge_heads = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let w = |part: &str| param(vars, &head_name(layer, head, part));
        let q_node = tape.matmul(h_center, w("q_node")?)?;
        let key = tape.matmul(h_neighbor, w("key")?)?;
        let v_node = tape.matmul(h_neighbor, w("v_node")?)?;
        let (query, value, v_edge) = if edge {
            let q_edge = tape.matmul(e, w("q_edge")?)?;
            let v_edge = tape.matmul(e, w("v_edge")?)?;
            (
                tape.concat(&[q_node, q_edge])?,
                tape.concat(&[v_node, v_edge])?,
                Some(v_edge),
            )
        } else {
            (q_node, v_node, None)
        };
        let mixed_query = tape.matmul(query, w("score")?)?;
        let dot = tape.mul(mixed_query, key)?;
        let score = tape.row_sum(dot)?;
        let score = tape.scalar_mul(score, inv_sqrt_dh)?;
        let s = tape.segment_softmax(score, layout.by_center.clone())?;
        weights.push(s);

        let message = tape.matmul(value, w("mix")?)?;
        let message = tape.scale_rows(message, s)?;
        node_heads.push(tape.segment_sum(message, layout.by_center.clone())?);
        if let Some(v_edge) = v_edge {
            edge_heads.push(tape.scale_rows(v_edge, s)?);
        }
    }

    let t = |part: &str| param(vars, &tf_name(layer, part));
    let node_cat = tape.concat(&node_heads)?;
    let node_proj = tape.matmul(node_cat, t("node_out")?)?;
    let node_res = tape.add(h, node_proj)?;
    let nodes = tape.layer_norm(
        node_res,
        t("node_norm.gamma")?,
        t("node_norm.beta")?,
        cfg.layer_norm_eps,
    )?;

    let edges = if edge {
        let edge_cat = tape.concat(&edge_heads)?;
        let edge_proj = tape.matmul(edge_cat, t("edge_out")?)?;
        let edge_res = tape.add(e, edge_proj)?;
        tape.layer_norm(
            edge_res,
            t("edge_norm.gamma")?,
            t("edge_norm.beta")?,
            cfg.layer_norm_eps,
        )?
    } else {
        e
    };
    Ok((LayerOutput { nodes, edges }, weights))
}

/// Mean over node rows.
pub fn readout(tape: &mut Tape, h: Var) -> Result<Var> {
    tape.mean_rows(h)
}

/// Handles to the intermediate results of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    pub pooled: Var,
    pub mpm_attention: Vec<Var>,
    /// `[layer][head]`.
    pub transformer_attention: Vec<Vec<Var>>,
    pub layer_outputs: Vec<LayerOutput>,
}

pub fn model_forward(
    tape: &mut Tape,
    inputs: &GraphInputs,
    vars: &ParamVars,
    cfg: &ModelConfig,
) -> Result<ForwardTrace> {
    let (mut h, mut e) = init_embeddings(tape, inputs, vars, cfg)?;
    let mut layer_outputs = Vec::new();
    let mut mpm_attention = Vec::with_capacity(cfg.mpm_layers);
    for l in 0..cfg.mpm_layers {
        let (out, alpha) = mpm_layer(tape, h, e, inputs, vars, l, cfg)?;
        (h, e) = (out.nodes, out.edges);
        mpm_attention.push(alpha);
        layer_outputs.push(out);
    }
    let mut transformer_attention = Vec::with_capacity(cfg.transformer_layers);
    for l in 0..cfg.transformer_layers {
        let (out, s) = transformer_layer(tape, h, e, inputs, vars, l, cfg)?;
        (h, e) = (out.nodes, out.edges);
        transformer_attention.push(s);
        layer_outputs.push(out);
    }
    let pooled = readout(tape, h)?;
    let logits = tape.matmul(pooled, param(vars, "classifier.weight")?)?;
    let logits = tape.add_bias(logits, param(vars, "classifier.bias")?)?;
    Ok(ForwardTrace {
        logits,
        pooled,
        mpm_attention,
        transformer_attention,
        layer_outputs,
    })
}

/// Class logits for one graph.
pub fn logits(inputs: &GraphInputs, cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = tape.params_from(params);
    let trace = model_forward(&mut tape, inputs, &vars, cfg)?;
    let out = tape.value(trace.logits);
    if !out.all_finite() {
        return Err(Error::NonFinite("model logits".into()));
    }
    Ok(out.data().to_vec())
}

/// Result of one forward and backward pass over a single graph.
#[derive(Debug, Clone)]
pub struct GraphStep {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub grads: ParamStore,
}

pub fn forward_backward(
    inputs: &GraphInputs,
    label: usize,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<GraphStep> {
    if label >= cfg.class_count {
        return Err(Error::LabelOutOfRange {
            label,
            classes: cfg.class_count,
        });
    }
    let mut tape = Tape::new();
    let vars = tape.params_from(params);
    let trace = model_forward(&mut tape, inputs, &vars, cfg)?;
    let loss_var = tape.cross_entropy(trace.logits, label)?;
    let loss = tape.value(loss_var).data()[0];
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    let grads = tape.backward(loss_var)?;
    Ok(GraphStep {
        loss,
        logits: tape.value(trace.logits).data().to_vec(),
        grads: tape.param_grads(&grads),
    })
}

/// Cross-entropy loss of one graph and its gradient for every parameter.
pub fn loss_and_grads(
    inputs: &GraphInputs,
    label: usize,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(f64, ParamStore)> {
    let step = forward_backward(inputs, label, cfg, params)?;
    Ok((step.loss, step.grads))
}

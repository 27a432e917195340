use serde::Serialize;

use super::{check_labels, prepare, PreparedGraph};
use crate::asc_graph::DatasetRecord;
use crate::error::Result;
use crate::layers::{check_params, logits, GraphInputs, ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Probability of correct classification.
    pub pcc: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// First index of the largest logit.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict(inputs: &GraphInputs, cfg: &ModelConfig, params: &ModelParams) -> Result<usize> {
    Ok(argmax(&logits(inputs, cfg, params)?))
}

pub fn evaluate(records: &[DatasetRecord], cfg: &ModelConfig, params: &ModelParams) -> Result<Evaluation> {
    check_params(cfg, params)?;
    check_labels(records, cfg.class_count)?;
    evaluate_prepared(&prepare(records, cfg)?, cfg, params)
}

pub fn evaluate_prepared(
    graphs: &[PreparedGraph],
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<Evaluation> {
    check_params(cfg, params)?;
    let c = cfg.class_count;
    let mut confusion = vec![vec![0; c]; c];
    let mut correct = 0;
    for g in graphs {
        let p = predict(&g.inputs, cfg, params)?;
        confusion[g.label][p] += 1;
        correct += usize::from(p == g.label);
    }
    let total = graphs.len();
    Ok(Evaluation {
        pcc: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        confusion,
    })
}

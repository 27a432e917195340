//! Mini-batch training, evaluation, and the module ablation harness.

mod ablation;
mod eval;
mod optim;

pub use ablation::{ablation_rows, ablation_study, AblationRow};
pub use eval::{evaluate, evaluate_prepared, predict, Evaluation};
pub use optim::Adam;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asc_graph::DatasetRecord;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::layers::{
    ablate, forward_backward, init_params, AblationFlags, FeatureStats, GraphInputs, ModelConfig,
    ModelParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One graph ready for the network.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub inputs: GraphInputs,
    pub label: usize,
}

pub fn check_labels(records: &[DatasetRecord], class_count: usize) -> Result<()> {
    match records.iter().find(|r| r.label >= class_count) {
        Some(r) => Err(Error::LabelOutOfRange {
            label: r.label,
            classes: class_count,
        }),
        None => Ok(()),
    }
}

pub fn prepare(records: &[DatasetRecord], cfg: &ModelConfig) -> Result<Vec<PreparedGraph>> {
    check_labels(records, cfg.class_count)?;
    records
        .iter()
        .map(|r| {
            Ok(PreparedGraph {
                inputs: GraphInputs::from_centers(&r.centers, cfg)?,
                label: r.label,
            })
        })
        .collect()
}

/// Mean loss and mean gradient over a batch, reduced in batch order.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: ParamStore,
    pub correct: usize,
}

pub fn batch_gradient(
    batch: &[&PreparedGraph],
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut correct = 0;
    for g in batch {
        let step = forward_backward(&g.inputs, g.label, cfg, params)?;
        loss += step.loss;
        if eval::argmax(&step.logits) == g.label {
            correct += 1;
        }
        grads.accumulate(&step.grads)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok(BatchGradient {
        loss: loss / n,
        grads,
        correct,
    })
}

/// Emitted once per epoch as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-graph training loss over the epoch.
    pub loss: f64,
    /// Accuracy of the predictions made during the epoch's forward passes.
    pub train_acc: f64,
    /// `None` without a validation split.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// The model config after ablation, with fitted feature statistics.
    pub config: ModelConfig,
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

pub fn train(
    train_set: &[DatasetRecord],
    val_set: &[DatasetRecord],
    model: &ModelConfig,
    tc: &TrainConfig,
) -> Result<TrainOutput> {
    train_with(train_set, val_set, model, tc, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    train_set: &[DatasetRecord],
    val_set: &[DatasetRecord],
    model: &ModelConfig,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutput> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut cfg = ablate(model, tc.ablation);
    cfg.stats = Some(FeatureStats::fit(train_set)?);
    cfg.validate()?;
    let graphs = prepare(train_set, &cfg)?;
    let val = prepare(val_set, &cfg)?;

    let mut params = init_params(&cfg, tc.seed)?;
    let mut adam = Adam::new(&params, tc.lr, tc.beta1, tc.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut metrics = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<&PreparedGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let bg = batch_gradient(&batch, &cfg, &params).map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}"))
                }
                other => other,
            })?;
            loss_sum += bg.loss * batch.len() as f64;
            correct += bg.correct;
            adam.step(&mut params, &bg.grads)?;
        }
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(evaluate_prepared(&val, &cfg, &params)?.pcc)
        };
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / graphs.len() as f64,
            train_acc: correct as f64 / graphs.len() as f64,
            val_acc,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutput {
        config: cfg,
        params,
        metrics,
    })
}

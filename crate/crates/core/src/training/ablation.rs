use serde::Serialize;

use super::{evaluate, train, TrainConfig};
use crate::asc_graph::DatasetRecord;
use crate::error::Result;
use crate::layers::{AblationFlags, ModelConfig};

/// The full model followed by each single-module removal.
pub fn ablation_rows() -> Vec<(&'static str, AblationFlags)> {
    let none = AblationFlags::default();
    vec![
        ("none", none),
        ("dvm", AblationFlags { disable_dvm: true, ..none }),
        ("edge_enhance", AblationFlags { disable_edge_enhance: true, ..none }),
        ("gne", AblationFlags { disable_gne: true, ..none }),
        ("epe", AblationFlags { disable_epe: true, ..none }),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    /// Removed module, or `"none"` for the full model.
    pub removed: String,
    pub flags: AblationFlags,
    /// Test PCC per seed, in seed order.
    pub pcc: Vec<f64>,
    pub mean_pcc: f64,
}

/// Trains every row of [`ablation_rows`] once per seed and evaluates on
/// `test_set`. The ablation flags of `tc` are replaced per row.
pub fn ablation_study(
    train_set: &[DatasetRecord],
    test_set: &[DatasetRecord],
    model: &ModelConfig,
    tc: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, flags) in ablation_rows() {
        let mut pcc = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = TrainConfig {
                seed,
                ablation: flags,
                ..tc.clone()
            };
            let out = train(train_set, &[], model, &run)?;
            pcc.push(evaluate(test_set, &out.config, &out.params)?.pcc);
        }
        let mean_pcc = if pcc.is_empty() {
            0.0
        } else {
            pcc.iter().sum::<f64>() / pcc.len() as f64
        };
        rows.push(AblationRow {
            removed: name.to_string(),
            flags,
            pcc,
            mean_pcc,
        });
    }
    Ok(rows)
}

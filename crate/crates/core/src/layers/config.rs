use serde::{Deserialize, Serialize};

use crate::asc_graph::{DatasetRecord, DiscreteCodebook, SigmaD, PARAM_COUNT};
use crate::error::{Error, Result};

/// Which optional modules of the network are active. All on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleFlags {
    /// Embed `alpha` through the codebook table instead of as a raw number.
    pub dvm: bool,
    /// Edge embeddings take part in attention and get updated.
    pub edge_enhance: bool,
    pub gne: bool,
    pub epe: bool,
}

impl Default for ModuleFlags {
    fn default() -> Self {
        Self {
            dvm: true,
            edge_enhance: true,
            gne: true,
            epe: true,
        }
    }
}

/// Per-column z-score statistics over the 7 raw parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Fits over every center of every record. Constant columns get unit std.
    pub fn fit(records: &[DatasetRecord]) -> Result<Self> {
        let rows: Vec<[f64; PARAM_COUNT]> = records
            .iter()
            .flat_map(|r| r.centers.iter().map(|c| c.to_array()))
            .collect();
        if rows.is_empty() {
            return Err(Error::Config("cannot fit feature statistics on no centers".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; PARAM_COUNT];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = vec![0.0; PARAM_COUNT];
        for r in &rows {
            for c in 0..PARAM_COUNT {
                std[c] += (r[c] - mean[c]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, column: usize, value: f64) -> f64 {
        (value - self.mean[column]) / self.std[column]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_n: usize,
    pub d_e: usize,
    pub d_h: usize,
    pub heads: usize,
    pub mpm_layers: usize,
    pub transformer_layers: usize,
    /// Width of the attention hidden layer in message passing.
    pub mpm_hidden: usize,
    /// Width of the discrete-alpha embedding.
    pub dvm_dim: usize,
    pub gne_n: usize,
    pub leaky_slope: f64,
    pub layer_norm_eps: f64,
    pub class_count: usize,
    pub codebook: DiscreteCodebook,
    pub sigma_d: SigmaD,
    pub modules: ModuleFlags,
    pub stats: Option<FeatureStats>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_n: 64,
            d_e: 16,
            d_h: 16,
            heads: 4,
            mpm_layers: 1,
            transformer_layers: 2,
            mpm_hidden: 32,
            dvm_dim: 8,
            gne_n: 8,
            leaky_slope: 0.2,
            layer_norm_eps: 1e-5,
            class_count: 3,
            codebook: DiscreteCodebook::default(),
            sigma_d: SigmaD::Auto,
            modules: ModuleFlags::default(),
            stats: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_n", self.d_n),
            ("d_e", self.d_e),
            ("d_h", self.d_h),
            ("heads", self.heads),
            ("mpm_hidden", self.mpm_hidden),
            ("dvm_dim", self.dvm_dim),
            ("gne_n", self.gne_n),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        if let Some(stats) = &self.stats {
            if stats.mean.len() != PARAM_COUNT || stats.std.len() != PARAM_COUNT {
                return Err(Error::Config("feature statistics need 7 columns".into()));
            }
        }
        Ok(())
    }

    /// Continuous input columns: 6 with the alpha embedding, 7 without.
    pub fn continuous_width(&self) -> usize {
        if self.modules.dvm {
            PARAM_COUNT - 1
        } else {
            PARAM_COUNT
        }
    }

    pub fn node_input_width(&self) -> usize {
        self.continuous_width() + if self.modules.dvm { self.dvm_dim } else { 0 } + self.gne_n
    }

    pub fn stats(&self) -> Result<&FeatureStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::Config("feature standardization statistics missing".into()))
    }
}

/// Toggles for removing one module at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AblationFlags {
    pub disable_dvm: bool,
    pub disable_edge_enhance: bool,
    pub disable_gne: bool,
    pub disable_epe: bool,
}

impl AblationFlags {
    pub fn any(&self) -> bool {
        self.disable_dvm || self.disable_edge_enhance || self.disable_gne || self.disable_epe
    }
}

/// Config variant with the flagged modules removed.
pub fn ablate(config: &ModelConfig, flags: AblationFlags) -> ModelConfig {
    let mut out = config.clone();
    out.modules.dvm &= !flags.disable_dvm;
    out.modules.edge_enhance &= !flags.disable_edge_enhance;
    out.modules.gne &= !flags.disable_gne;
    out.modules.epe &= !flags.disable_epe;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().node_input_width(), 6 + 8 + 8);
    }

    #[test]
    fn rejects_zero_dims() {
        let cfg = ModelConfig {
            heads: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            class_count: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn no_flags_is_identity() {
        let cfg = ModelConfig::default();
        assert_eq!(ablate(&cfg, AblationFlags::default()), cfg);
        let no_dvm = ablate(
            &cfg,
            AblationFlags {
                disable_dvm: true,
                ..Default::default()
            },
        );
        assert!(!no_dvm.modules.dvm && no_dvm.modules.gne);
        assert_eq!(no_dvm.continuous_width(), 7);
    }

    #[test]
    fn stats_fit_and_floor() {
        use crate::asc_graph::ScatteringCenter;
        let recs = vec![DatasetRecord {
            label: 0,
            centers: vec![
                ScatteringCenter::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
                ScatteringCenter::from_array([3.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0]),
            ],
        }];
        let s = FeatureStats::fit(&recs).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.std[2], 1.0); // constant column
        assert_eq!(s.standardize(5, 1.0), 1.0);
    }
}

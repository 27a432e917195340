//! `key = value` run configuration with `#` comments.
//!
//! Resolution order: built-in defaults, then the config file, then
//! command-line overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gtr_core::asc_graph::SigmaD;
use gtr_core::layers::ModelConfig;
use gtr_core::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    /// Set when `class_count` came from a file or flag rather than the default.
    pub class_count_explicit: bool,
}

pub const KEYS: &[&str] = &[
    "d_n",
    "d_e",
    "d_h",
    "heads",
    "mpm_layers",
    "transformer_layers",
    "mpm_hidden",
    "dvm_dim",
    "gne_n",
    "leaky_slope",
    "layer_norm_eps",
    "class_count",
    "sigma_d",
    "strict_alpha",
    "lr",
    "beta1",
    "beta2",
    "epochs",
    "batch_size",
    "seed",
    "disable_dvm",
    "disable_edge_enhance",
    "disable_gne",
    "disable_epe",
    "data",
    "val",
    "test",
    "out",
    "metrics",
    "checkpoint",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

impl RunConfig {
    /// Applies one setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        let p = &mut self.paths;
        let v = value.trim();
        match key {
            "d_n" => m.d_n = num(key, v)?,
            "d_e" => m.d_e = num(key, v)?,
            "d_h" => m.d_h = num(key, v)?,
            "heads" => m.heads = num(key, v)?,
            "mpm_layers" => m.mpm_layers = num(key, v)?,
            "transformer_layers" => m.transformer_layers = num(key, v)?,
            "mpm_hidden" => m.mpm_hidden = num(key, v)?,
            "dvm_dim" => m.dvm_dim = num(key, v)?,
            "gne_n" => m.gne_n = num(key, v)?,
            "leaky_slope" => m.leaky_slope = num(key, v)?,
            "layer_norm_eps" => m.layer_norm_eps = num(key, v)?,
            "class_count" => {
                m.class_count = num(key, v)?;
                self.class_count_explicit = true;
            }
            "sigma_d" => {
                m.sigma_d = if v == "auto" {
                    SigmaD::Auto
                } else {
                    SigmaD::Fixed(num(key, v)?)
                }
            }
            "strict_alpha" => m.codebook = m.codebook.clone().strict(flag(key, v)?),
            "lr" => t.lr = num(key, v)?,
            "beta1" => t.beta1 = num(key, v)?,
            "beta2" => t.beta2 = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "disable_dvm" => t.ablation.disable_dvm = flag(key, v)?,
            "disable_edge_enhance" => t.ablation.disable_edge_enhance = flag(key, v)?,
            "disable_gne" => t.ablation.disable_gne = flag(key, v)?,
            "disable_epe" => t.ablation.disable_epe = flag(key, v)?,
            "data" => p.data = Some(v.into()),
            "val" => p.val = Some(v.into()),
            "test" => p.test = Some(v.into()),
            "out" => p.out = Some(v.into()),
            "metrics" => p.metrics = Some(v.into()),
            "checkpoint" => p.checkpoint = Some(v.into()),
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected key = value", n + 1))?;
            self.set(k.trim(), v)
                .map_err(|e| format!("{origin}:{}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), String> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| format!("--set expects key=value, got {pair:?}"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if let SigmaD::Fixed(s) = self.model.sigma_d {
            if !(s > 0.0 && s.is_finite()) {
                return Err(format!("sigma_d must be positive, got {s}"));
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn render(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let sigma = match m.sigma_d {
            SigmaD::Auto => "auto".to_string(),
            SigmaD::Fixed(s) => s.to_string(),
        };
        let values: Vec<String> = vec![
            m.d_n.to_string(),
            m.d_e.to_string(),
            m.d_h.to_string(),
            m.heads.to_string(),
            m.mpm_layers.to_string(),
            m.transformer_layers.to_string(),
            m.mpm_hidden.to_string(),
            m.dvm_dim.to_string(),
            m.gne_n.to_string(),
            m.leaky_slope.to_string(),
            m.layer_norm_eps.to_string(),
            m.class_count.to_string(),
            sigma,
            m.codebook.is_strict().to_string(),
            t.lr.to_string(),
            t.beta1.to_string(),
            t.beta2.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.seed.to_string(),
            t.ablation.disable_dvm.to_string(),
            t.ablation.disable_edge_enhance.to_string(),
            t.ablation.disable_gne.to_string(),
            t.ablation.disable_epe.to_string(),
            path(&self.paths.data),
            path(&self.paths.val),
            path(&self.paths.test),
            path(&self.paths.out),
            path(&self.paths.metrics),
            path(&self.paths.checkpoint),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

//! Labeled synthetic scatterer scenes built from class templates.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::asc_graph::{DatasetRecord, ScatteringCenter};
use crate::error::{Error, Result};

/// Upper bound on the number of centers in one scene.
pub const MAX_CENTERS: usize = 40;

/// One scatterer of a template in its canonical pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseScatterer {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub alpha: f64,
    #[serde(default)]
    pub length: f64,
    #[serde(default)]
    pub phi: f64,
    #[serde(default)]
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub name: String,
    pub scatterers: Vec<BaseScatterer>,
    /// Std of the isotropic position jitter, meters.
    pub position_jitter: f64,
    /// Std of the log-normal amplitude factor.
    pub amplitude_jitter: f64,
    /// Independent probability of dropping each scatterer.
    pub dropout: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl ClassTemplate {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidTemplate {
                name: self.name.clone(),
                reason,
            })
        };
        if self.k_min < 2 {
            return bad(format!("k_min {} below 2", self.k_min));
        }
        if self.k_max > MAX_CENTERS {
            return bad(format!("k_max {} above {MAX_CENTERS}", self.k_max));
        }
        if self.k_min > self.k_max {
            return bad(format!("k_min {} above k_max {}", self.k_min, self.k_max));
        }
        if self.scatterers.len() < self.k_min {
            return bad(format!(
                "{} scatterers cannot reach k_min {}",
                self.scatterers.len(),
                self.k_min
            ));
        }
        if !(self.position_jitter >= 0.0 && self.position_jitter.is_finite()) {
            return bad("position_jitter must be finite and >= 0".into());
        }
        if !(self.amplitude_jitter >= 0.0 && self.amplitude_jitter.is_finite()) {
            return bad("amplitude_jitter must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1]", self.dropout));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            let vals = [s.x, s.y, s.amplitude, s.alpha, s.length, s.phi, s.gamma];
            if vals.iter().any(|v| !v.is_finite()) {
                return bad(format!("scatterer {i} has a non-finite field"));
            }
            if s.amplitude <= 0.0 {
                return bad(format!("scatterer {i} has non-positive amplitude"));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.scatterers.len() as f64;
        let sx: f64 = self.scatterers.iter().map(|s| s.x).sum();
        let sy: f64 = self.scatterers.iter().map(|s| s.y).sum();
        (sx / n, sy / n)
    }

    /// Same template with different noise settings.
    pub fn with_noise(mut self, position_jitter: f64, amplitude_jitter: f64, dropout: f64) -> Self {
        self.position_jitter = position_jitter;
        self.amplitude_jitter = amplitude_jitter;
        self.dropout = dropout;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum Rotation {
    /// Uniform angle in `[0, 2pi)` per record.
    #[default]
    Full,
    Fixed(f64),
}

fn scatterer(x: f64, y: f64, amplitude: f64, alpha: f64, length: f64) -> BaseScatterer {
    BaseScatterer {
        x,
        y,
        amplitude,
        alpha,
        length,
        phi: 0.0,
        gamma: 0.0,
    }
}

/// `line`, `rectangle`, and `cross`, with jitter 0.1 m, amplitude jitter
/// 0.1, and dropout 0.1.
pub fn builtin_templates() -> Vec<ClassTemplate> {
    let t = |name: &str, scatterers: Vec<BaseScatterer>, k_min: usize| ClassTemplate {
        name: name.into(),
        k_max: scatterers.len(),
        scatterers,
        position_jitter: 0.1,
        amplitude_jitter: 0.1,
        dropout: 0.1,
        k_min,
    };
    let line = (0..5)
        .map(|i| {
            let alpha = if i % 2 == 0 { 1.0 } else { 0.5 };
            scatterer(-2.0 + i as f64, 0.0, 1.0 + 0.2 * i as f64, alpha, 0.4)
        })
        .collect();
    let rectangle = vec![
        scatterer(-2.0, -1.0, 1.5, 0.0, 0.0),
        scatterer(2.0, -1.0, 1.5, 0.0, 0.0),
        scatterer(2.0, 1.0, 1.5, 0.0, 0.0),
        scatterer(-2.0, 1.0, 1.5, 0.0, 0.0),
        scatterer(0.0, -1.0, 0.8, -0.5, 1.0),
        scatterer(0.0, 1.0, 0.8, 0.5, 1.0),
    ];
    let cross = vec![
        scatterer(-1.5, 0.0, 0.9, -1.0, 0.2),
        scatterer(0.0, 0.0, 2.0, 0.5, 0.0),
        scatterer(1.5, 0.0, 0.9, -1.0, 0.2),
        scatterer(0.0, -1.5, 0.9, -0.5, 0.2),
        scatterer(0.0, 1.5, 0.9, -0.5, 0.2),
    ];
    vec![
        t("line", line, 4),
        t("rectangle", rectangle, 4),
        t("cross", cross, 4),
    ]
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<ClassTemplate>> {
    let text = std::fs::read_to_string(path)?;
    let templates: Vec<ClassTemplate> = serde_json::from_str(&text)?;
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

pub fn save_templates(path: impl AsRef<Path>, templates: &[ClassTemplate]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(templates)?)?;
    Ok(())
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Draws one scene from `template`.
///
/// Rotation is about the template centroid and also turns each scatterer's
/// orientation `phi`. Dropped scatterers are restored in layout order until
/// `k_min` is met; surplus beyond `k_max` is cut from the end.
pub fn sample_scene<R: Rng>(template: &ClassTemplate, rotation: Rotation, rng: &mut R) -> Vec<ScatteringCenter> {
    let theta = match rotation {
        Rotation::Full => rng.gen_range(0.0..TAU),
        Rotation::Fixed(a) => a,
    };
    let (sin, cos) = theta.sin_cos();
    let (cx, cy) = template.centroid();

    let mut keep: Vec<bool> = template
        .scatterers
        .iter()
        .map(|_| !rng.gen_bool(template.dropout))
        .collect();
    let mut count = keep.iter().filter(|k| **k).count();
    for k in keep.iter_mut() {
        if count >= template.k_min {
            break;
        }
        if !*k {
            *k = true;
            count += 1;
        }
    }
    for k in keep.iter_mut().rev() {
        if count <= template.k_max {
            break;
        }
        if *k {
            *k = false;
            count -= 1;
        }
    }

    let mut out = Vec::with_capacity(count);
    for (s, kept) in template.scatterers.iter().zip(keep) {
        // noise is drawn for every scatterer so dropout does not shift the
        // stream of the ones after it
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        let na: f64 = StandardNormal.sample(rng);
        if !kept {
            continue;
        }
        let (dx, dy) = (s.x - cx, s.y - cy);
        let x = cx + cos * dx - sin * dy + template.position_jitter * nx;
        let y = cy + sin * dx + cos * dy + template.position_jitter * ny;
        let phi = if theta == 0.0 { s.phi } else { wrap_angle(s.phi + theta) };
        out.push(ScatteringCenter {
            amplitude: s.amplitude * (template.amplitude_jitter * na).exp(),
            alpha: s.alpha,
            length: s.length,
            phi,
            gamma: s.gamma,
            x,
            y,
        });
    }
    out
}

/// `per_class` records for every template, interleaved so that record `r`
/// has label `r % templates.len()`. Record `r` draws from its own random
/// stream, so the result does not depend on generation order.
pub fn generate(
    templates: &[ClassTemplate],
    per_class: usize,
    seed: u64,
    rotation: Rotation,
) -> Result<Vec<DatasetRecord>> {
    if templates.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 templates, got {}",
            templates.len()
        )));
    }
    if per_class == 0 {
        return Err(Error::Config("per-class count must be at least 1".into()));
    }
    for t in templates {
        t.validate()?;
    }
    let n = templates.len();
    Ok((0..per_class * n)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let label = r % n;
            DatasetRecord {
                label,
                centers: sample_scene(&templates[label], rotation, &mut rng),
            }
        })
        .collect())
}

/// `k` unstructured centers with every attribute drawn uniformly and alpha
/// taken from the default codebook. For gradient checks and smoke tests.
pub fn random_scene<R: Rng>(k: usize, rng: &mut R) -> Vec<ScatteringCenter> {
    const CODES: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
    (0..k)
        .map(|_| ScatteringCenter {
            amplitude: rng.gen_range(0.1..3.0),
            alpha: CODES[rng.gen_range(0..CODES.len())],
            length: rng.gen_range(0.0..1.5),
            phi: rng.gen_range(-PI..PI),
            gamma: rng.gen_range(-1.0..1.0),
            x: rng.gen_range(-4.0..4.0),
            y: rng.gen_range(-4.0..4.0),
        })
        .collect()
}

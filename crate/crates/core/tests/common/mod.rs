#![allow(dead_code)]

use gtr_core::asc_graph::{DatasetRecord, ScatteringCenter};
use gtr_core::layers::{FeatureStats, ModelConfig};
use rand::Rng;

pub const ALPHAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

pub fn random_center<R: Rng>(rng: &mut R) -> ScatteringCenter {
    ScatteringCenter::from_array([
        rng.gen_range(0.1..3.0),
        ALPHAS[rng.gen_range(0..ALPHAS.len())],
        rng.gen_range(0.0..1.5),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-4.0..4.0),
        rng.gen_range(-4.0..4.0),
    ])
}

pub fn random_centers<R: Rng>(rng: &mut R, k: usize) -> Vec<ScatteringCenter> {
    (0..k).map(|_| random_center(rng)).collect()
}

/// Small widths so exhaustive finite differences stay fast.
pub fn compact_config() -> ModelConfig {
    ModelConfig {
        d_n: 8,
        d_e: 4,
        d_h: 4,
        heads: 2,
        mpm_hidden: 6,
        dvm_dim: 4,
        gne_n: 4,
        ..Default::default()
    }
}

pub fn with_stats(mut cfg: ModelConfig, centers: &[ScatteringCenter]) -> ModelConfig {
    let rec = DatasetRecord {
        label: 0,
        centers: centers.to_vec(),
    };
    cfg.stats = Some(FeatureStats::fit(&[rec]).unwrap());
    cfg
}

pub fn random_permutation<R: Rng>(rng: &mut R, k: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    p
}

//! Attributed scattering centers and their fully-connected weighted graphs.
//!
//! Each center is a 7-parameter record `[A, alpha, L, phi, gamma, x, y]`.
//! A set of `K` centers becomes a complete undirected graph whose edge
//! weights come from a Gaussian kernel on the `(x, y)` positions.

mod dataset;

pub use dataset::{read_jsonl, read_jsonl_file, write_jsonl, write_jsonl_file, DatasetRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of parameters per scattering center.
pub const PARAM_COUNT: usize = 7;

/// Column of `alpha` within a feature row.
pub const ALPHA_COLUMN: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringCenter {
    pub amplitude: f64,
    pub alpha: f64,
    pub length: f64,
    pub phi: f64,
    pub gamma: f64,
    pub x: f64,
    pub y: f64,
}

impl ScatteringCenter {
    pub fn from_array(p: [f64; PARAM_COUNT]) -> Self {
        Self {
            amplitude: p[0],
            alpha: p[1],
            length: p[2],
            phi: p[3],
            gamma: p[4],
            x: p[5],
            y: p[6],
        }
    }

    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.amplitude,
            self.alpha,
            self.length,
            self.phi,
            self.gamma,
            self.x,
            self.y,
        ]
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidCenter {
            index,
            reason: reason.to_string(),
        };
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        if self.amplitude < 0.0 {
            return Err(invalid("negative amplitude"));
        }
        if self.length < 0.0 {
            return Err(invalid("negative length"));
        }
        Ok(())
    }
}

/// Ordered set of permitted `alpha` values plus an overflow bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCodebook {
    values: Vec<f64>,
    unknown_index: usize,
    strict: bool,
}

impl Default for DiscreteCodebook {
    fn default() -> Self {
        Self {
            values: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            unknown_index: 5,
            strict: false,
        }
    }
}

const ALPHA_TOLERANCE: f64 = 1e-9;

impl DiscreteCodebook {
    /// Values must be finite and strictly increasing; the unknown bucket is
    /// the index right after the last value.
    pub fn new(values: Vec<f64>, strict: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidCodebook("no values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCodebook("non-finite value".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCodebook("values must be strictly increasing".into()));
        }
        let unknown_index = values.len();
        Ok(Self {
            values,
            unknown_index,
            strict,
        })
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unknown_index(&self) -> usize {
        self.unknown_index
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    /// Number of embedding rows needed: every value plus the unknown bucket.
    pub fn index_count(&self) -> usize {
        self.unknown_index + 1
    }

    pub fn alpha_to_index(&self, alpha: f64) -> Result<usize> {
        let nearest = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (i, (v - alpha).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, d)) if d <= ALPHA_TOLERANCE => Ok(i),
            _ if self.strict => Err(Error::UnknownAlpha(alpha)),
            _ => Ok(self.unknown_index),
        }
    }
}

/// Kernel bandwidth for edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum SigmaD {
    /// Median of all pairwise distances in the graph.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterGraph {
    centers: Vec<ScatteringCenter>,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    sigma_d: f64,
}

/// Position of unordered edge `{i, j}` (`i < j`) in lexicographic order.
pub fn edge_slot(k: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * k - i * (i + 1) / 2 + (j - i - 1)
}

fn distance(a: &ScatteringCenter, b: &ScatteringCenter) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median pairwise distance, falling back to the median of the nonzero
/// distances when more than half coincide and to 1.0 when all do.
pub fn auto_sigma(centers: &[ScatteringCenter]) -> f64 {
    let mut dists = Vec::with_capacity(centers.len() * centers.len().saturating_sub(1) / 2);
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            dists.push(distance(&centers[i], &centers[j]));
        }
    }
    let m = if dists.is_empty() { 0.0 } else { median(dists.clone()) };
    if m > 0.0 {
        return m;
    }
    let positive: Vec<f64> = dists.into_iter().filter(|d| *d > 0.0).collect();
    if positive.is_empty() {
        1.0
    } else {
        median(positive)
    }
}

/// Gaussian kernel weight, kept strictly positive under underflow.
pub fn kernel_weight(dist: f64, sigma_d: f64) -> f64 {
    (-(dist * dist) / (2.0 * sigma_d * sigma_d))
        .exp()
        .max(f64::MIN_POSITIVE)
}

pub fn build_graph(centers: &[ScatteringCenter], sigma: SigmaD) -> Result<ScatterGraph> {
    let k = centers.len();
    if k < 2 {
        return Err(Error::DegenerateGraph(k));
    }
    for (i, c) in centers.iter().enumerate() {
        c.validate(i)?;
    }
    let sigma_d = match sigma {
        SigmaD::Auto => auto_sigma(centers),
        SigmaD::Fixed(s) if s > 0.0 && s.is_finite() => s,
        SigmaD::Fixed(s) => return Err(Error::Config(format!("sigma_d must be positive, got {s}"))),
    };
    let mut edges = Vec::with_capacity(k * (k - 1) / 2);
    let mut weights = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            edges.push((i, j));
            weights.push(kernel_weight(distance(&centers[i], &centers[j]), sigma_d));
        }
    }
    Ok(ScatterGraph {
        centers: centers.to_vec(),
        edges,
        weights,
        sigma_d,
    })
}

impl ScatterGraph {
    pub fn node_count(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[ScatteringCenter] {
        &self.centers
    }

    /// Unordered edges `(i, j)` with `i < j`, lexicographically ordered.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Weights aligned with [`edges`](Self::edges).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma_d(&self) -> f64 {
        self.sigma_d
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.node_count();
        if i == j || i >= k || j >= k {
            return None;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        Some(self.weights[edge_slot(k, a, b)])
    }

    /// Initial attribute matrix, one 7-parameter row per center.
    pub fn features(&self) -> Vec<[f64; PARAM_COUNT]> {
        self.centers.iter().map(ScatteringCenter::to_array).collect()
    }

    /// Dense symmetric weight matrix with zero diagonal.
    pub fn weight_matrix(&self) -> Vec<Vec<f64>> {
        let k = self.node_count();
        let mut w = vec![vec![0.0; k]; k];
        for (&(i, j), &v) in self.edges.iter().zip(&self.weights) {
            w[i][j] = v;
            w[j][i] = v;
        }
        w
    }
}

/// Relabels nodes so that old node `i` becomes node `perm[i]`.
pub fn permute_graph(g: &ScatterGraph, perm: &[usize]) -> Result<ScatterGraph> {
    let k = g.node_count();
    if perm.len() != k {
        return Err(Error::InvalidPermutation(k));
    }
    let mut seen = vec![false; k];
    for &p in perm {
        if p >= k || seen[p] {
            return Err(Error::InvalidPermutation(k));
        }
        seen[p] = true;
    }
    let mut centers = g.centers.clone();
    for (old, &new) in perm.iter().enumerate() {
        centers[new] = g.centers[old];
    }
    let mut weights = vec![0.0; g.weights.len()];
    for (&(i, j), &w) in g.edges.iter().zip(&g.weights) {
        let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
        weights[edge_slot(k, a, b)] = w;
    }
    Ok(ScatterGraph {
        centers,
        edges: g.edges.clone(),
        weights,
        sigma_d: g.sigma_d,
    })
}

/// Inverse of a permutation given as `perm[old] = new`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    inv
}

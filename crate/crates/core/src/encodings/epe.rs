//! Edge position encoding from weighted random walks.
//!
//! A walk moves from `i` to `j` with probability `w_ij / d_i`. In the
//! stationary regime an undirected edge is traversed with probability
//! `w_ij / W` per step (`W` the total edge weight), so normalized visit
//! frequencies converge to `w_ij / sum(w)`. [`epe_closed_form`] returns
//! that limit; [`epe_simulate`] estimates it by sampling.

use std::collections::BTreeSet;
use std::ops::{Add, Div};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asc_graph::ScatterGraph;
use crate::error::{Error, Result};

/// Weighted undirected graph prepared for walk sampling.
#[derive(Debug, Clone)]
pub struct WalkGraph {
    k: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    /// Per node: `(neighbor, edge slot, cumulative weight)`.
    adjacency: Vec<Vec<(usize, usize, f64)>>,
}

impl WalkGraph {
    /// Builds from unordered edges; zero-weight edges are dropped.
    pub fn new(k: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut kept = Vec::new();
        let mut weights = Vec::new();
        let mut seen = BTreeSet::new();
        for &(i, j, w) in edges {
            if i == j || i >= k || j >= k {
                return Err(Error::Config(format!("invalid edge ({i}, {j}) for {k} nodes")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("edge ({i}, {j}) has weight {w}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Config(format!("duplicate edge ({i}, {j})")));
            }
            if w > 0.0 {
                kept.push((i.min(j), i.max(j)));
                weights.push(w);
            }
        }
        if kept.is_empty() {
            return Err(Error::Config("walk graph has no positive-weight edge".into()));
        }
        let mut adjacency = vec![Vec::new(); k];
        for (slot, (&(i, j), &w)) in kept.iter().zip(&weights).enumerate() {
            for (from, to) in [(i, j), (j, i)] {
                let acc = adjacency[from].last().map_or(0.0, |e: &(usize, usize, f64)| e.2);
                adjacency[from].push((to, slot, acc + w));
            }
        }
        Ok(Self {
            k,
            edges: kept,
            weights,
            adjacency,
        })
    }

    pub fn from_scatter(g: &ScatterGraph) -> Self {
        let edges: Vec<_> = g
            .edges()
            .iter()
            .zip(g.weights())
            .map(|(&(i, j), &w)| (i, j, w))
            .collect();
        Self::new(g.node_count(), &edges).expect("scatter graphs have positive weights")
    }

    pub fn node_count(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn edge_slot(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.iter().position(|&e| e == key)
    }

    pub fn weighted_degrees(&self) -> Vec<f64> {
        self.adjacency
            .iter()
            .map(|adj| adj.last().map_or(0.0, |e| e.2))
            .collect()
    }

    pub fn stationary_distribution(&self) -> Vec<f64> {
        let edges: Vec<_> = self
            .edges
            .iter()
            .zip(&self.weights)
            .map(|(&(i, j), &w)| (i, j, w))
            .collect();
        stationary_from_weights(self.k, &edges, 0.0)
    }

    fn step(&self, from: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let adj = &self.adjacency[from];
        let total = adj.last().expect("walk reached an isolated node").2;
        let u = rng.gen::<f64>() * total;
        let pos = adj.partition_point(|e| e.2 <= u).min(adj.len() - 1);
        (adj[pos].0, adj[pos].1)
    }

    fn sample_start(&self, pi_cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let total = *pi_cumulative.last().expect("non-empty");
        let u = rng.gen::<f64>() * total;
        pi_cumulative
            .partition_point(|&c| c <= u)
            .min(self.k - 1)
    }
}

/// `pi_i = d_i / 2W` over any number type; `zero` is the additive identity.
pub fn stationary_from_weights<T>(k: usize, edges: &[(usize, usize, T)], zero: T) -> Vec<T>
where
    T: Clone + Add<Output = T> + Div<Output = T>,
{
    let mut degree = vec![zero.clone(); k];
    let mut twice_total = zero;
    for (i, j, w) in edges {
        degree[*i] = degree[*i].clone() + w.clone();
        degree[*j] = degree[*j].clone() + w.clone();
        twice_total = twice_total + w.clone() + w.clone();
    }
    degree.into_iter().map(|d| d / twice_total.clone()).collect()
}

/// `w_ij / sum(w)` per unordered edge, aligned with `g.edges()`.
pub fn epe_closed_form(g: &ScatterGraph) -> Result<Vec<f64>> {
    if g.node_count() < 2 {
        return Err(Error::DegenerateGraph(g.node_count()));
    }
    let total: f64 = g.weights().iter().sum();
    Ok(g.weights().iter().map(|w| w / total).collect())
}

/// How raw expected counts are scaled; normalized frequencies are the
/// same under both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountConvention {
    /// `N_w l_w w_ij / W`: one count per step, matching the sampler.
    #[default]
    PerStep,
    /// `N_w l_w w_ij / 2W`.
    Halved,
}

pub fn expected_counts(
    graph: &WalkGraph,
    walks: usize,
    walk_length: usize,
    convention: CountConvention,
) -> Vec<f64> {
    let total: f64 = graph.weights.iter().sum();
    let steps = (walks * walk_length) as f64;
    let divisor = match convention {
        CountConvention::PerStep => total,
        CountConvention::Halved => 2.0 * total,
    };
    graph.weights.iter().map(|w| steps * w / divisor).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkParams {
    pub walks: usize,
    pub walk_length: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkStats {
    pub node_count: usize,
    /// Traversal counts per unordered edge, direction-agnostic.
    pub counts: Vec<u64>,
    pub total_steps: u64,
    pub params: WalkParams,
    /// Node sequence of each walk, starting node first.
    pub paths: Vec<Vec<u32>>,
}

impl WalkStats {
    pub fn frequencies(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    pub fn starts(&self) -> impl Iterator<Item = usize> + '_ {
        self.paths.iter().map(|p| p[0] as usize)
    }
}

/// Independent stream per walk so results do not depend on execution order.
fn walk_rng(seed: u64, walk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(walk as u64);
    rng
}

fn cumulative(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn run_walk(graph: &WalkGraph, start: usize, steps: usize, rng: &mut ChaCha8Rng, counts: &mut [u64]) -> Vec<u32> {
    let mut path = Vec::with_capacity(steps + 1);
    path.push(start as u32);
    let mut at = start;
    for _ in 0..steps {
        let (next, slot) = graph.step(at, rng);
        counts[slot] += 1;
        path.push(next as u32);
        at = next;
    }
    path
}

pub fn simulate_walks(graph: &WalkGraph, params: WalkParams) -> Result<WalkStats> {
    if params.walks == 0 || params.walk_length == 0 {
        return Err(Error::Config("walk count and length must be at least 1".into()));
    }
    let pi = cumulative(&graph.stationary_distribution());
    let mut counts = vec![0u64; graph.edges.len()];
    let mut paths = Vec::with_capacity(params.walks);
    for w in 0..params.walks {
        let mut rng = walk_rng(params.seed, w);
        let start = graph.sample_start(&pi, &mut rng);
        paths.push(run_walk(graph, start, params.walk_length, &mut rng, &mut counts));
    }
    Ok(WalkStats {
        node_count: graph.k,
        counts,
        total_steps: (params.walks * params.walk_length) as u64,
        params,
        paths,
    })
}

/// Samples `walks` walks of `walk_length` steps with starts drawn from
/// the stationary distribution.
pub fn epe_simulate(g: &ScatterGraph, params: WalkParams) -> Result<WalkStats> {
    simulate_walks(&WalkGraph::from_scatter(g), params)
}

/// Refreshes `stats` after the weights of `changed` edges moved.
///
/// Walks starting within one hop of a changed edge's endpoints are redrawn
/// from their recorded start under the new weights. When more than half
/// of all walks qualify, everything is resampled from scratch.
pub fn update_walks_local(
    stats: &WalkStats,
    graph: &WalkGraph,
    changed: &[(usize, usize)],
) -> Result<WalkStats> {
    if stats.node_count != graph.k {
        return Err(Error::WalkMismatch {
            stats: stats.node_count,
            graph: graph.k,
        });
    }
    if stats.counts.len() != graph.edges.len() {
        return Err(Error::Config(format!(
            "walk statistics have {} edges, graph has {}",
            stats.counts.len(),
            graph.edges.len()
        )));
    }
    if changed.is_empty() {
        return Ok(stats.clone());
    }
    let mut near = vec![false; graph.k];
    for &(i, j) in changed {
        if i >= graph.k || j >= graph.k {
            return Err(Error::Config(format!("changed edge ({i}, {j}) out of range")));
        }
        for end in [i, j] {
            near[end] = true;
            for &(nb, _, _) in &graph.adjacency[end] {
                near[nb] = true;
            }
        }
    }
    let affected: Vec<usize> = stats
        .starts()
        .enumerate()
        .filter(|(_, s)| near[*s])
        .map(|(w, _)| w)
        .collect();
    if 2 * affected.len() > stats.paths.len() {
        return simulate_walks(graph, stats.params);
    }

    let mut counts = stats.counts.clone();
    let mut paths = stats.paths.clone();
    for &w in &affected {
        for pair in stats.paths[w].windows(2) {
            let slot = graph
                .edge_slot(pair[0] as usize, pair[1] as usize)
                .ok_or_else(|| Error::Config("recorded walk uses a removed edge".into()))?;
            counts[slot] -= 1;
        }
        let mut rng = walk_rng(stats.params.seed, w);
        let _ = rng.gen::<f64>(); // start draw, replaced by the recorded start
        let start = stats.paths[w][0] as usize;
        paths[w] = run_walk(graph, start, stats.params.walk_length, &mut rng, &mut counts);
    }
    Ok(WalkStats {
        counts,
        paths,
        ..stats.clone()
    })
}

pub fn epe_update_local(
    stats: &WalkStats,
    g: &ScatterGraph,
    changed: &[(usize, usize)],
) -> Result<WalkStats> {
    if stats.node_count != g.node_count() {
        return Err(Error::WalkMismatch {
            stats: stats.node_count,
            graph: g.node_count(),
        });
    }
    update_walks_local(stats, &WalkGraph::from_scatter(g), changed)
}

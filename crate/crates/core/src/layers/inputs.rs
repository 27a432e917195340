//! Non-trainable per-graph tensors: standardized node attributes, alpha
//! codes, encodings, and the directed edge layout.

use std::sync::Arc;

use super::config::ModelConfig;
use crate::asc_graph::{build_graph, ScatterGraph, ScatteringCenter, ALPHA_COLUMN, PARAM_COUNT};
use crate::autodiff::{SegmentIndex, Tensor};
use crate::encodings::{epe_closed_form, gne};
use crate::error::Result;

/// Directed edges `i -> j` for every ordered pair, grouped by center `j`.
#[derive(Debug, Clone)]
pub struct EdgeLayout {
    /// Neighbor `i` of each directed edge.
    pub sources: Arc<[usize]>,
    /// Center `j` of each directed edge.
    pub targets: Arc<[usize]>,
    /// Unordered edge slot (into `ScatterGraph::edges`) of each directed edge.
    pub undirected: Vec<usize>,
    pub by_center: Arc<SegmentIndex>,
}

impl EdgeLayout {
    pub fn complete(k: usize) -> Self {
        let mut sources = Vec::with_capacity(k * (k - 1));
        let mut targets = Vec::with_capacity(k * (k - 1));
        let mut undirected = Vec::with_capacity(k * (k - 1));
        for j in 0..k {
            for i in 0..k {
                if i == j {
                    continue;
                }
                sources.push(i);
                targets.push(j);
                undirected.push(crate::asc_graph::edge_slot(k, i.min(j), i.max(j)));
            }
        }
        let by_center = Arc::new(SegmentIndex::new(targets.clone(), k).expect("ids < k"));
        Self {
            sources: sources.into(),
            targets: targets.into(),
            undirected,
            by_center,
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub node_count: usize,
    /// Standardized continuous attributes, `K x continuous_width`.
    pub continuous: Tensor,
    /// Codebook index of each node's alpha.
    pub alpha_index: Vec<usize>,
    /// `K x gne_n`, zeroed when the module is off.
    pub gne: Tensor,
    /// `[w_ij, EPE(e_ij)]` per directed edge.
    pub edge_features: Tensor,
    pub layout: EdgeLayout,
}

impl GraphInputs {
    pub fn from_centers(centers: &[ScatteringCenter], cfg: &ModelConfig) -> Result<Self> {
        Self::prepare(&build_graph(centers, cfg.sigma_d)?, cfg)
    }

    pub fn prepare(g: &ScatterGraph, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let stats = cfg.stats()?;
        let k = g.node_count();

        let mut continuous = Vec::with_capacity(k * cfg.continuous_width());
        let mut alpha_index = Vec::with_capacity(k);
        for center in g.centers() {
            let raw = center.to_array();
            for (col, &v) in raw.iter().enumerate().take(PARAM_COUNT) {
                if col == ALPHA_COLUMN && cfg.modules.dvm {
                    continue;
                }
                continuous.push(stats.standardize(col, v));
            }
            alpha_index.push(if cfg.modules.dvm {
                cfg.codebook.alpha_to_index(center.alpha)?
            } else {
                0
            });
        }
        let continuous = Tensor::matrix(k, cfg.continuous_width(), continuous)?;

        let gne = if cfg.modules.gne {
            gne(g, cfg.gne_n)?
        } else {
            Tensor::zeros(k, cfg.gne_n)
        };

        let layout = EdgeLayout::complete(k);
        let epe = epe_closed_form(g)?;
        let mut edge_features = Vec::with_capacity(layout.len() * 2);
        for &slot in &layout.undirected {
            edge_features.push(g.weights()[slot]);
            edge_features.push(if cfg.modules.epe { epe[slot] } else { 0.0 });
        }
        let edge_features = Tensor::matrix(layout.len(), 2, edge_features)?;

        Ok(Self {
            node_count: k,
            continuous,
            alpha_index,
            gne,
            edge_features,
            layout,
        })
    }
}

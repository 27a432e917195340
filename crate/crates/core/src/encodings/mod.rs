//! Structural encodings: spectral node positions and random-walk edge
//! frequencies.

mod epe;
mod spectral;

pub use epe::{
    epe_closed_form, epe_simulate, epe_update_local, expected_counts, simulate_walks,
    stationary_from_weights, update_walks_local, CountConvention, WalkGraph, WalkParams,
    WalkStats,
};
pub use spectral::{
    eigendecompose_symmetric, eigendecompose_symmetric_capped, gne, laplacian_from_adjacency,
    normalized_laplacian, SpectralDecomposition, DEFAULT_EIGEN_CAP,
};

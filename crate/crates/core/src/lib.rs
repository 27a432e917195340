pub mod asc_graph;
pub mod autodiff;
pub mod encodings;
pub mod error;
pub mod layers;
pub mod synth_data;
pub mod training;

pub use error::{Error, Result};

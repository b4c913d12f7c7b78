//! Rescoring of rigid-body protein–protein docking models with a
//! distance-aware graph-attention network, plus the evaluation tooling around
//! it: CAPRI classification, epitope metrics and interface clustering.
pub mod assessment;
pub mod clustering;
pub mod error;
pub mod geometry;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod structure;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

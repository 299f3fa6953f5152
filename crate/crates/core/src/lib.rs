//! Segmentation of multivariate time series by shifts in learned temporal
//! causal mechanisms, with per-phase graph-convolutional soft sensors.
//!
//! The pipeline discovers a temporal causal graph on a growing data window,
//! extends the window while the learned mechanism keeps predicting incoming
//! samples, and emits a breakpoint when a similarity distance (prediction
//! loss plus a mean-shift term) crosses a phase-specific threshold. Each
//! discovered phase then gets its own graph-convolutional quality predictor
//! driven by the phase's causal graph.

pub mod acyclic;
pub mod discovery;
pub mod error;
pub mod eval;
pub mod opt;
pub mod pipeline;
pub mod segmentation;
pub mod series;
pub mod synth;
pub mod tcgcn;
pub mod util;

pub use error::{Error, Result};

//! Hierarchical sequence-learning engine.
//!
//! Stacked cortical columns learn, segment and predict multidimensional
//! symbol streams online. A hippocampal filter gates plasticity and replays
//! sequences, and a thalamic loop forwards confident predictions upward.

pub mod checkpoint;
pub mod column;
pub mod cortex;
pub mod error;
pub mod experiment;
pub mod hippocampus;
pub mod metrics;
pub mod periphery;
pub mod permanence;
pub mod projector;
pub mod rng;
pub mod sdr;
pub mod sequence_memory;
pub mod thalamus;

pub use error::{HerError, Result};

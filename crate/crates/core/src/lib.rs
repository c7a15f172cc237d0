//! Inverse mapping of a flapping-wing system: from desired aerodynamic
//! force time-series to the wing kinematics that generate them.
//!
//! The crate bundles a small dense-tensor core with hand-written backward
//! passes, a gated spectral layer that reweights frequency bins, a GRU
//! sequence-to-sequence model with FC attention, a force/kinematics data
//! pipeline, a quasi-steady synthetic data generator, L1/Adam training with
//! early stopping, evaluation with Wilcoxon significance tests, an
//! inference-latency benchmark, and a binary checkpoint format. The `cli`
//! companion crate exposes the batch commands.

pub mod asl;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fft;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod seq2seq;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use nn::Mode;
pub use rng::Rng;
pub use tensor::{Parameter, Tensor};

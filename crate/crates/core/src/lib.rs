//! Braking-intensity prediction from multichannel EEG.
//!
//! The pipeline decomposes preprocessed EEG into independent components with
//! logistic infomax, ranks the components by how consistently their δ–θ band
//! power leads the brake-pedal trace, and feeds the selected components'
//! lagged power (plus brake history) to a small PReLU network that predicts
//! braking intensity a fixed horizon ahead. CSP and DMD feature extractors are
//! provided as drop-in baselines, and [`synth`] generates ground-truth data
//! that every stage can be checked against.

pub mod baselines;
pub mod cluster;
pub mod codec;
pub mod config;
mod error;
pub mod filter;
pub mod ica;
pub mod linalg;
pub mod metrics;
pub mod montage;
pub mod pipeline;
pub mod predict;
pub mod preprocess;
pub mod select;
pub mod signal;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use signal::{BrakeTrace, EegRecording, Epoch};

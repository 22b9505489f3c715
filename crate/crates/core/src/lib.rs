//! Automated quality evaluation for synthesized speech.
//!
//! The crate covers the whole evaluation stack at desk scale:
//!
//! - [`audio_io`]: WAV input/output and band-limited resampling
//! - [`features`]: STFT, log-mel frames, pooled utterance embeddings and hashed text embeddings
//! - [`augment`]: two-stage signal and segment-level degradations
//! - [`ratings`]: per-rater standardization, inter-rater baseline, pair generation and text-disjoint splits
//! - [`sbs`]: antisymmetric bilinear preference model for side-by-side comparisons
//! - [`ensemble`]: stacked weak learners with an MLP meta-learner for absolute MOS
//! - [`batching`]: length-sorted batching, padding masks and sequence-level loss
//! - [`metrics`]: MSE, RMSE, LCC, SRCC, Kendall's tau-b, accuracy and AUC-ROC
//! - [`pipeline`]: end-to-end commands used by the `ttseval` binary

pub mod audio_io;
pub mod augment;
pub mod batching;
pub mod ensemble;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod ratings;
pub mod sbs;
pub(crate) mod util;

pub use audio_io::{load_wav, save_wav, Waveform, CANONICAL_RATE};
pub use features::{FeatureMatrix, UtteranceEmbedding};
pub use sbs::SbsModelParams;

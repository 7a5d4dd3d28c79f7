//! # eegcodec
//!
//! A residual-vector-quantized neural codec for multi-channel EEG, built on
//! a strided convolutional encoder/decoder with an audio-style training
//! recipe. The crate covers the full pipeline:
//!
//! * [`data_io`] — EEGC containers, EDF ingestion, synthetic generators
//! * [`preprocess`] — resample / high-pass / clip-normalize / window
//! * [`codec`] — single-channel encoder/decoder with FiLM style hooks
//! * [`rvq`] — residual vector quantization, depth pruning, vocab merging
//! * [`grouping`] — channel partitions (spatial random sampler + manual)
//! * [`multichannel`] — grouped encoding with attention fusion and
//!   per-channel style-conditioned decoding
//! * [`training`] — composite loss, two-phase schedule, Adam training
//! * [`evaluation`] — reconstruction metrics, bitrate, sweeps, downstream
//!   classification, plots
//!
//! The `eegcodec` binary exposes everything as subcommands; see the README.

pub mod data_io;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod grouping;
pub mod model;
pub mod multichannel;
pub mod nn;
pub mod cli;
pub mod codec;
pub mod preprocess;
pub mod rvq;
pub mod tokens;
pub mod training;

pub use error::{Error, Result};

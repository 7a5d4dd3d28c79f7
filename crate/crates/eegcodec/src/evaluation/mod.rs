//! Evaluation harness: reconstruction metrics, bitrate accounting,
//! configuration sweeps, downstream classification, and plot emission.

pub mod bench;
pub mod bitrate;
pub mod features;
pub mod forest;
pub mod plots;
pub mod recon;

pub use bench::{benchmark_downstream, synth_benchmark_set, BenchmarkResult, LabeledSet};
pub use bitrate::{bitrate, BitrateSpec};
pub use features::{extract_features, RecordingFeatures};
pub use recon::{
    eval_reconstruction, pruning_sweep_post, pruning_sweep_pre, IdentityCodec,
    ModelReconstructor, Reconstruct, SweepPoint,
};

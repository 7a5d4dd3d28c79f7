//! Signal containers and ingestion: the on-disk EEGC format, an EDF reader,
//! the built-in 10-20 electrode position table, and seeded synthetic
//! EEG/audio generators used for desk-scale training and tests.

mod container;
mod edf;
mod positions;
mod synth;

pub use container::{load_container, save_container};
pub use edf::ingest_edf;
pub use positions::{canonical_label, position_for, CANONICAL_ORDER};
pub use synth::{synth_audio, synth_eeg};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-channel metadata: dataset label plus an optional unit-sphere scalp
/// position. Channels without a position (EKG, EOG, ...) are excluded from
/// distance-based grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMeta {
    pub name: String,
    pub position: Option<[f64; 3]>,
}

impl ChannelMeta {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        let position = position_for(&name);
        ChannelMeta { name, position }
    }
}

/// A raw multi-channel recording in microvolts.
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: String,
    pub channels: Vec<ChannelMeta>,
    /// `[n_channels x n_samples]`, microvolts before normalization.
    pub data: Array2<f32>,
    pub sample_rate_hz: f64,
    pub annotation: Option<String>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        channels: Vec<ChannelMeta>,
        data: Array2<f32>,
        sample_rate_hz: f64,
        annotation: Option<String>,
    ) -> Result<Self> {
        if sample_rate_hz <= 0.0 {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if channels.len() != data.nrows() {
            return Err(Error::Shape(format!(
                "{} channel descriptors for {} data rows",
                channels.len(),
                data.nrows()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for ch in &channels {
            if !seen.insert(ch.name.as_str()) {
                return Err(Error::Data(format!("duplicate channel name {:?}", ch.name)));
            }
            if ch.name.contains('\t') || ch.name.contains('\n') {
                return Err(Error::Data(format!(
                    "channel name {:?} contains tab/newline",
                    ch.name
                )));
            }
        }
        Ok(Recording {
            id: id.into(),
            channels,
            data,
            sample_rate_hz,
            annotation,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recording_rejects_duplicate_channel_names() {
        let data = Array2::zeros((2, 10));
        let chans = vec![ChannelMeta::new("C3"), ChannelMeta::new("C3")];
        assert!(Recording::new("r", chans, data, 512.0, None).is_err());
    }

    #[test]
    fn recording_rejects_channel_count_mismatch() {
        let data = Array2::zeros((2, 10));
        let chans = vec![ChannelMeta::new("C3")];
        assert!(Recording::new("r", chans, data, 512.0, None).is_err());
    }

    #[test]
    fn channel_meta_attaches_known_positions() {
        let c3 = ChannelMeta::new("C3");
        let p = c3.position.expect("C3 has a scalp position");
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(ChannelMeta::new("EKG").position.is_none());
    }
}

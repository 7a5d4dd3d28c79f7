//! Deterministic conditioning pipeline from a raw [`Recording`] to
//! model-ready windows: drop the noisy initial seconds, drop empty channels,
//! resample, high-pass, clip/normalize, and segment into non-overlapping
//! windows.

use ndarray::Array2;

use crate::data_io::Recording;
use crate::dsp;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    pub target_rate_hz: f64,
    pub highpass_hz: f64,
    pub clip_uv: f64,
    pub window_s: f64,
    pub drop_initial_s: f64,
    /// Channels whose standard deviation over the whole recording falls
    /// below this (in microvolts) are treated as disconnected and dropped.
    pub empty_channel_std_uv: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_rate_hz: 512.0,
            highpass_hz: 0.1,
            clip_uv: 200.0,
            window_s: 30.0,
            drop_initial_s: 10.0,
            empty_channel_std_uv: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.target_rate_hz > 0.0
            && self.highpass_hz > 0.0
            && self.clip_uv > 0.0
            && self.window_s > 0.0
            && self.drop_initial_s >= 0.0
            && self.empty_channel_std_uv >= 0.0;
        if !all_positive {
            return Err(Error::Config(format!("invalid preprocess config: {self:?}")));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_s * self.target_rate_hz).round() as usize
    }
}

/// One model-ready segment: normalized values in [-1, 1].
#[derive(Debug, Clone)]
pub struct Window {
    /// `[n_channels x window_samples]`, each value in [-1, 1].
    pub data: Array2<f32>,
    pub source_channels: Vec<String>,
    pub sample_rate_hz: f64,
    /// (recording id, start-sample offset in the resampled signal)
    pub origin: (String, usize),
    pub label: Option<String>,
}

/// Clamp to `±clip_uv` then scale into [-1, 1].
pub fn clip_normalize(signal_uv: &[f32], clip_uv: f64) -> Vec<f32> {
    let c = clip_uv as f32;
    signal_uv
        .iter()
        .map(|&v| v.clamp(-c, c) / c)
        .collect()
}

/// Full pipeline. Recordings shorter than `drop_initial_s + window_s`
/// produce an empty list.
pub fn preprocess_recording(rec: &Recording, cfg: &PreprocessConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    if rec.n_channels() == 0 {
        return Err(Error::Data("recording has no channels".into()));
    }

    let fs_in = rec.sample_rate_hz;
    let skip = (cfg.drop_initial_s * fs_in).round() as usize;
    if skip >= rec.n_samples() {
        return Ok(Vec::new());
    }

    // Channel exclusion uses the std over the whole raw recording.
    let mut kept = Vec::new();
    for (idx, ch) in rec.channels.iter().enumerate() {
        let row = rec.data.row(idx);
        let n = row.len() as f64;
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        if var.sqrt() >= cfg.empty_channel_std_uv {
            kept.push((idx, ch.name.clone()));
        }
    }
    if kept.is_empty() {
        return Ok(Vec::new());
    }

    let mut processed: Vec<Vec<f32>> = Vec::with_capacity(kept.len());
    for (idx, _) in &kept {
        let raw: Vec<f32> = rec.data.row(*idx).iter().skip(skip).copied().collect();
        let resampled = dsp::resample(&raw, fs_in, cfg.target_rate_hz)?;
        let filtered = dsp::highpass(&resampled, cfg.highpass_hz, cfg.target_rate_hz)?;
        processed.push(clip_normalize(&filtered, cfg.clip_uv));
    }

    let win = cfg.window_samples();
    let total = processed[0].len();
    let n_windows = total / win;
    let names: Vec<String> = kept.iter().map(|(_, n)| n.clone()).collect();
    let mut windows = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let mut data = Array2::zeros((kept.len(), win));
        for (c, row) in processed.iter().enumerate() {
            for i in 0..win {
                data[[c, i]] = row[w * win + i];
            }
        }
        windows.push(Window {
            data,
            source_channels: names.clone(),
            sample_rate_hz: cfg.target_rate_hz,
            origin: (rec.id.clone(), w * win),
            label: rec.annotation.clone(),
        });
    }
    Ok(windows)
}

//! Frequency-domain features for downstream classification.
//!
//! Per channel and window: relative band powers over delta (0.5-4), theta
//! (4-8), alpha (8-13), beta (13-30) and low gamma (30-70 Hz) from a Welch
//! periodogram (4 s segments, 50% overlap, Hann), spectral entropy over the
//! PSD bins, line length, and variance - 8 values, aggregated per recording
//! by mean and std over windows. Features are keyed by channel name, so the
//! vector layout is independent of channel order in the data array.

use std::collections::BTreeMap;

use crate::dsp;
use crate::error::{Error, Result};
use crate::preprocess::Window;

pub const BANDS: [(f64, f64); 5] = [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 70.0)];
pub const PER_CHANNEL: usize = 8;

/// Feature names in vector order (per channel: each as mean then std).
pub fn feature_names() -> Vec<&'static str> {
    vec![
        "delta_rel", "theta_rel", "alpha_rel", "beta_rel", "gamma_rel",
        "spectral_entropy", "line_length", "variance",
    ]
}

/// The 8 per-channel features of one window row.
pub fn window_channel_features(x: &[f32], fs: f64) -> Result<[f64; PER_CHANNEL]> {
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let nperseg = ((4.0 * fs) as usize).min(x.len()).max(8);
    let (freqs, psd) = dsp::welch_psd(&x64, fs, nperseg)?;

    let band_power = |lo: f64, hi: f64| -> f64 {
        freqs
            .iter()
            .zip(&psd)
            .filter(|(f, _)| **f >= lo && **f < hi)
            .map(|(_, p)| *p)
            .sum()
    };
    let mut powers = [0.0f64; 5];
    for (i, &(lo, hi)) in BANDS.iter().enumerate() {
        powers[i] = band_power(lo, hi);
    }
    let total: f64 = powers.iter().sum::<f64>().max(f64::MIN_POSITIVE);

    // entropy over all non-DC bins
    let bins: Vec<f64> = psd.iter().skip(1).copied().collect();
    let psum: f64 = bins.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mut entropy = 0.0;
    for &p in &bins {
        if p > 0.0 {
            let q = p / psum;
            entropy -= q * q.ln();
        }
    }

    let line_length: f64 = x64.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let n = x64.len() as f64;
    let mean = x64.iter().sum::<f64>() / n;
    let variance = x64.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;

    Ok([
        powers[0] / total,
        powers[1] / total,
        powers[2] / total,
        powers[3] / total,
        powers[4] / total,
        entropy,
        line_length,
        variance,
    ])
}

/// Per-recording feature vector: channels sorted by name, 16 values each
/// (the 8 features aggregated by mean then std over the recording's
/// windows).
#[derive(Debug, Clone)]
pub struct RecordingFeatures {
    pub channel_names: Vec<String>,
    pub values: Vec<f64>,
}

pub fn extract_features(windows: &[Window]) -> Result<RecordingFeatures> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to extract features from".into()));
    }
    let mut names: Vec<String> = windows[0].source_channels.clone();
    names.sort();
    for w in windows {
        let mut these = w.source_channels.clone();
        these.sort();
        if these != names {
            return Err(Error::Data(
                "windows of one recording disagree on their channel set".into(),
            ));
        }
    }
    // per channel: list of per-window feature rows
    let mut per_channel: BTreeMap<&str, Vec<[f64; PER_CHANNEL]>> = BTreeMap::new();
    for w in windows {
        for (ci, name) in w.source_channels.iter().enumerate() {
            let row: Vec<f32> = w.data.row(ci).to_vec();
            let feats = window_channel_features(&row, w.sample_rate_hz)?;
            per_channel.entry(name.as_str()).or_default().push(feats);
        }
    }
    let mut values = Vec::with_capacity(names.len() * PER_CHANNEL * 2);
    for name in &names {
        let rows = &per_channel[name.as_str()];
        let n = rows.len() as f64;
        for f in 0..PER_CHANNEL {
            let mean = rows.iter().map(|r| r[f]).sum::<f64>() / n;
            values.push(mean);
        }
        for f in 0..PER_CHANNEL {
            let mean = rows.iter().map(|r| r[f]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n;
            values.push(var.sqrt());
        }
    }
    Ok(RecordingFeatures { channel_names: names, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tone_window(freq: f64, channels: &[&str]) -> Window {
        let fs = 512.0;
        let n = 15360;
        let mut data = Array2::zeros((channels.len(), n));
        for c in 0..channels.len() {
            for i in 0..n {
                data[[c, i]] =
                    (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin()) as f32;
            }
        }
        Window {
            data,
            source_channels: channels.iter().map(|s| s.to_string()).collect(),
            sample_rate_hz: fs,
            origin: ("t".into(), 0),
            label: None,
        }
    }

    #[test]
    fn alpha_tone_concentrates_alpha_power() {
        let w = tone_window(10.0, &["C3"]);
        let f = window_channel_features(&w.data.row(0).to_vec(), 512.0).unwrap();
        assert!(f[2] > 0.9, "alpha relative power {}", f[2]);
        assert!(f[0] < 0.05 && f[1] < 0.05 && f[3] < 0.05 && f[4] < 0.05);
    }

    #[test]
    fn white_noise_entropy_is_near_log_bin_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f32> = (0..15360).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = window_channel_features(&x, 512.0).unwrap();
        let bins = 2048 / 2; // nperseg/2 non-DC bins
        let max_entropy = (bins as f64).ln();
        assert!(
            f[5] > 0.95 * max_entropy,
            "entropy {} vs max {max_entropy}",
            f[5]
        );
    }

    #[test]
    fn constant_signal_has_zero_line_length_and_variance() {
        let x = vec![0.25f32; 4096];
        let f = window_channel_features(&x, 512.0).unwrap();
        assert_eq!(f[6], 0.0);
        assert_eq!(f[7], 0.0);
    }

    #[test]
    fn features_are_keyed_by_channel_name() {
        // Swapping the rows (and their names) must not change the vector.
        let fs = 512.0;
        let n = 4096;
        let mut a = Array2::zeros((2, n));
        for i in 0..n {
            a[[0, i]] = (0.5 * (2.0 * std::f64::consts::PI * 6.0 * i as f64 / fs).sin()) as f32;
            a[[1, i]] = (0.4 * (2.0 * std::f64::consts::PI * 20.0 * i as f64 / fs).sin()) as f32;
        }
        let w1 = Window {
            data: a.clone(),
            source_channels: vec!["C3".into(), "O1".into()],
            sample_rate_hz: fs,
            origin: ("r".into(), 0),
            label: None,
        };
        let mut b = Array2::zeros((2, n));
        for i in 0..n {
            b[[1, i]] = a[[0, i]];
            b[[0, i]] = a[[1, i]];
        }
        let w2 = Window {
            data: b,
            source_channels: vec!["O1".into(), "C3".into()],
            sample_rate_hz: fs,
            origin: ("r".into(), 0),
            label: None,
        };
        let f1 = extract_features(&[w1]).unwrap();
        let f2 = extract_features(&[w2]).unwrap();
        assert_eq!(f1.channel_names, f2.channel_names);
        assert_eq!(f1.values, f2.values);
    }

    #[test]
    fn channel_set_mismatch_is_a_data_error() {
        let w1 = tone_window(10.0, &["C3", "C4"]);
        let w2 = tone_window(10.0, &["C3", "O1"]);
        assert!(matches!(
            extract_features(&[w1, w2]),
            Err(Error::Data(_))
        ));
    }
}

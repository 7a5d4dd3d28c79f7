//! Reconstruction-quality evaluation and configuration sweeps.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{CodecModel, Mode};
use crate::preprocess::Window;
use crate::training::losses;

/// Anything that maps a window to a reconstructed `[channels x samples]`
/// array. Implemented by the codec model per mode and by the identity stub
/// used to sanity-check the metric.
pub trait Reconstruct {
    fn reconstruct(&self, window: &Window) -> Result<Array2<f32>>;
}

/// Passes the input through unchanged; the reconstruction loss of this stub
/// is exactly zero.
pub struct IdentityCodec;

impl Reconstruct for IdentityCodec {
    fn reconstruct(&self, window: &Window) -> Result<Array2<f32>> {
        Ok(window.data.clone())
    }
}

pub struct ModelReconstructor<'a> {
    pub model: &'a CodecModel,
    pub mode: Mode,
    pub depth: usize,
    pub seed: u64,
}

impl Reconstruct for ModelReconstructor<'_> {
    fn reconstruct(&self, window: &Window) -> Result<Array2<f32>> {
        self.model.round_trip_window(window, &self.mode, self.depth, self.seed)
    }
}

/// Mean per-channel spectrogram loss over a held-out window set.
pub fn eval_reconstruction(r: &dyn Reconstruct, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config("empty evaluation dataset".into()));
    }
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for w in windows {
        let recon = r.reconstruct(w)?;
        for (ci, _) in w.source_channels.iter().enumerate() {
            let orig: Vec<f32> = w.data.row(ci).to_vec();
            let rec: Vec<f32> = recon.row(ci).to_vec();
            acc += losses::spectrogram_loss(&orig, &rec, &losses::SPEC_SCALES)?;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// One point of a sweep curve.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub k: usize,
    pub loss: f64,
    pub bits_per_second: f64,
}

/// Post-fine-tune depth sweep: truncate the trained stack at inference for
/// k = full..=3 (or down to 1 for shallow stacks).
pub fn pruning_sweep_post(
    model: &CodecModel,
    windows: &[Window],
    mode: &Mode,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let full = model.rvq.n_books();
    if windows.is_empty() {
        return Err(Error::Config("empty sweep dataset".into()));
    }
    let lowest = 3.min(full);
    let mut out = Vec::new();
    for k in (lowest..=full).rev() {
        let r = ModelReconstructor { model, mode: mode.clone(), depth: k, seed };
        let loss = eval_reconstruction(&r, windows)?;
        let spec = crate::evaluation::bitrate::BitrateSpec {
            vocab_sizes: model.rvq.vocab_sizes[..k].to_vec(),
            stride_total: model.codec.config.stride_total,
            presented_rate_hz: windows[0].sample_rate_hz,
            native_rate_hz: windows[0].sample_rate_hz,
            group_size: 1,
        };
        out.push(SweepPoint {
            label: format!("depth-{k}"),
            k,
            loss,
            bits_per_second: crate::evaluation::bitrate::bitrate(&spec)?,
        });
    }
    Ok(out)
}

/// Pre-fine-tune depth sweep: each k is a separately trained checkpoint.
pub fn pruning_sweep_pre(
    checkpoints: &[(usize, std::path::PathBuf)],
    windows: &[Window],
    mode: &Mode,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if checkpoints.is_empty() {
        return Err(Error::Config(
            "pre-mode sweep needs one trained checkpoint per depth".into(),
        ));
    }
    let mut out = Vec::new();
    for (k, path) in checkpoints {
        if !path.exists() {
            return Err(Error::Config(format!(
                "missing pre-trained checkpoint for depth {k}: {}",
                path.display()
            )));
        }
        let model = CodecModel::load(path)?;
        let r = ModelReconstructor { model: &model, mode: mode.clone(), depth: *k, seed };
        let loss = eval_reconstruction(&r, windows)?;
        let spec = crate::evaluation::bitrate::BitrateSpec {
            vocab_sizes: model.rvq.vocab_sizes[..*k].to_vec(),
            stride_total: model.codec.config.stride_total,
            presented_rate_hz: windows[0].sample_rate_hz,
            native_rate_hz: windows[0].sample_rate_hz,
            group_size: 1,
        };
        out.push(SweepPoint {
            label: format!("pre-depth-{k}"),
            k: *k,
            loss,
            bits_per_second: crate::evaluation::bitrate::bitrate(&spec)?,
        });
    }
    out.sort_by(|a, b| b.k.cmp(&a.k));
    Ok(out)
}

/// Serialize sweep points as TSV (label, k, loss, bits/s).
pub fn sweep_to_tsv(points: &[SweepPoint]) -> String {
    let mut out = String::from("label\tk\tloss\tbits_per_second\n");
    for p in points {
        out.push_str(&format!(
            "{}\t{}\t{:.9e}\t{:.6}\n",
            p.label, p.k, p.loss, p.bits_per_second
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::model::ModelConfig;
    use crate::rvq::RvqConfig;

    fn tiny_windows(n: usize) -> Vec<Window> {
        (0..n)
            .map(|i| {
                let rec =
                    crate::data_io::synth_eeg(2, 1.2, 512.0, 90 + i as u64).unwrap();
                let mut data = rec.data.clone();
                data.mapv_inplace(|v| (v / 200.0).clamp(-1.0, 1.0));
                Window {
                    data,
                    source_channels: rec.channel_names(),
                    sample_rate_hz: 512.0,
                    origin: (format!("e{i}"), 0),
                    label: None,
                }
            })
            .collect()
    }

    #[test]
    fn identity_stub_scores_zero() {
        let windows = tiny_windows(2);
        let loss = eval_reconstruction(&IdentityCodec, &windows).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        assert!(matches!(
            eval_reconstruction(&IdentityCodec, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn post_sweep_has_full_depth_head_equal_to_plain_eval() {
        let codec = CodecConfig::tiny();
        let rvq = RvqConfig {
            n_books: 4,
            vocab: 8,
            code_dim: 4,
            hidden_dim: codec.hidden_dim,
            factorized: true,
        };
        let model = CodecModel::new(ModelConfig { codec, rvq, mc: None }, 3).unwrap();
        let windows = tiny_windows(2);
        let sweep = pruning_sweep_post(&model, &windows, &Mode::Sc, 0).unwrap();
        assert_eq!(sweep.len(), 2); // k = 4, 3
        assert_eq!(sweep[0].k, 4);
        let direct = eval_reconstruction(
            &ModelReconstructor { model: &model, mode: Mode::Sc, depth: 4, seed: 0 },
            &windows,
        )
        .unwrap();
        assert_eq!(sweep[0].loss, direct);
        // bitrate column tracks ceil(log2 V) = 3 bits per book at stride 16
        assert_eq!(sweep[0].bits_per_second, 512.0 / 16.0 * 12.0);
    }

    #[test]
    fn pre_sweep_demands_existing_checkpoints() {
        let windows = tiny_windows(1);
        let missing = vec![(3usize, std::path::PathBuf::from("/nonexistent.ckpt"))];
        assert!(matches!(
            pruning_sweep_pre(&missing, &windows, &Mode::Sc, 0),
            Err(Error::Config(_))
        ));
    }
}

//! Seeded synthetic signal generators.
//!
//! `synth_eeg` produces EEG-like multi-channel recordings: per channel a sum
//! of band-limited sinusoids (delta/theta/alpha/beta draws) plus 1/f noise,
//! with a shared component so cross-channel correlation is nontrivial.
//! `synth_audio` produces harmonic, envelope-modulated material used to
//! build surrogate "audio-pretrained" checkpoints.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{ChannelMeta, Recording, CANONICAL_ORDER};

const BANDS: [(f64, f64); 4] = [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0)];

struct Tone {
    freq: f64,
    amp: f64,
    phase: f64,
}

fn draw_tones(rng: &mut ChaCha8Rng) -> Vec<Tone> {
    BANDS
        .iter()
        .map(|&(lo, hi)| Tone {
            freq: rng.gen_range(lo..hi),
            amp: rng.gen_range(0.5..1.0),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect()
}

fn render_tones(tones: &[Tone], n: usize, fs: f64, out: &mut [f64]) {
    for tone in tones {
        let step = std::f64::consts::TAU * tone.freq / fs;
        for (i, slot) in out.iter_mut().enumerate().take(n) {
            *slot += tone.amp * (tone.phase + step * i as f64).sin();
        }
    }
}

/// Pink-ish 1/f noise via a cascade of one-pole low-passes driven by white
/// noise (Paul Kellet's economy filter), unit-ish variance.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 3];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let white: f64 = rng.gen_range(-1.0..1.0);
        b[0] = 0.99765 * b[0] + white * 0.0990460;
        b[1] = 0.96300 * b[1] + white * 0.2965164;
        b[2] = 0.57000 * b[2] + white * 1.0526913;
        out.push(b[0] + b[1] + b[2] + white * 0.1848);
    }
    out
}

/// Deterministic synthetic EEG: `n_channels x round(duration_s * rate)`
/// microvolt samples, amplitude bounded by ±200 uV.
pub fn synth_eeg(
    n_channels: usize,
    duration_s: f64,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<Recording> {
    if n_channels == 0 || duration_s <= 0.0 || sample_rate_hz <= 0.0 {
        return Err(Error::Config(
            "synth_eeg arguments must all be positive".into(),
        ));
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Shared component drawn once, then per-channel tones and noise.
    let common_tones = draw_tones(&mut rng);
    let mut common = vec![0.0f64; n];
    render_tones(&common_tones, n, sample_rate_hz, &mut common);

    let w_common = 0.9;
    let w_own = 0.8;
    let w_noise = 0.45;
    let scale_uv = 45.0;

    let mut data = Array2::zeros((n_channels, n));
    let mut peak = 0.0f64;
    for c in 0..n_channels {
        let own_tones = draw_tones(&mut rng);
        let mut own = vec![0.0f64; n];
        render_tones(&own_tones, n, sample_rate_hz, &mut own);
        let noise = pink_noise(&mut rng, n);
        for i in 0..n {
            let v = scale_uv * (w_common * common[i] + w_own * own[i] + w_noise * noise[i]);
            peak = peak.max(v.abs());
            data[[c, i]] = v as f32;
        }
    }
    // Keep the amplitude contract without clipping (which would distort).
    if peak > 199.0 {
        let shrink = (199.0 / peak) as f32;
        data.mapv_inplace(|v| v * shrink);
    }

    let channels: Vec<ChannelMeta> = (0..n_channels)
        .map(|c| {
            if c < CANONICAL_ORDER.len() {
                ChannelMeta::new(CANONICAL_ORDER[c])
            } else {
                ChannelMeta::new(format!("CH{c}"))
            }
        })
        .collect();
    Recording::new(
        format!("synth-eeg-{seed}"),
        channels,
        data,
        sample_rate_hz,
        None,
    )
}

/// Deterministic synthetic "audio": one channel of harmonic stacks with
/// slow amplitude envelopes plus a little hiss, normalized to [-1, 1] scale
/// times 200 so it runs through the same microvolt pipeline.
pub fn synth_audio(duration_s: f64, sample_rate_hz: f64, seed: u64) -> Result<Recording> {
    if duration_s <= 0.0 || sample_rate_hz <= 0.0 {
        return Err(Error::Config(
            "synth_audio arguments must all be positive".into(),
        ));
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA0D10);
    let mut x = vec![0.0f64; n];
    // A few "notes": fundamental + 3 harmonics, each with its own envelope.
    let n_notes = 5;
    for _ in 0..n_notes {
        let f0 = rng.gen_range(20.0..(sample_rate_hz / 12.0));
        let env_rate = rng.gen_range(0.2..2.0);
        let env_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let note_amp = rng.gen_range(0.3..1.0);
        for h in 1..=4u32 {
            let f = f0 * h as f64;
            if f >= sample_rate_hz / 2.0 {
                break;
            }
            let amp = note_amp / h as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let step = std::f64::consts::TAU * f / sample_rate_hz;
            let env_step = std::f64::consts::TAU * env_rate / sample_rate_hz;
            for (i, slot) in x.iter_mut().enumerate() {
                let env = 0.5 + 0.5 * (env_phase + env_step * i as f64).sin();
                *slot += amp * env * (phase + step * i as f64).sin();
            }
        }
    }
    for slot in x.iter_mut() {
        *slot += 0.01 * rng.gen_range(-1.0..1.0f64);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let scale = 190.0 / peak;
    let mut data = Array2::zeros((1, n));
    for (i, v) in x.iter().enumerate() {
        data[[0, i]] = (v * scale) as f32;
    }
    Recording::new(
        format!("synth-audio-{seed}"),
        vec![ChannelMeta::new("AUDIO")],
        data,
        sample_rate_hz,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            let dx = x as f64 - ma;
            let dy = y as f64 - mb;
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synth_eeg(3, 2.0, 256.0, 7).unwrap();
        let b = synth_eeg(3, 2.0, 256.0, 7).unwrap();
        assert_eq!(a.data, b.data);
        let c = synth_eeg(3, 2.0, 256.0, 8).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn shape_and_amplitude_bounds() {
        let rec = synth_eeg(4, 30.0, 512.0, 1).unwrap();
        assert_eq!(rec.data.dim(), (4, 15360));
        let peak = rec.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak <= 200.0, "peak {peak}");
        assert!(peak > 10.0, "suspiciously quiet: {peak}");
    }

    #[test]
    fn cross_channel_correlation_is_nontrivial() {
        let rec = synth_eeg(4, 30.0, 512.0, 3).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let r = pearson(
                    rec.data.row(i).as_slice().unwrap(),
                    rec.data.row(j).as_slice().unwrap(),
                );
                assert!(r > 0.1 && r < 0.95, "corr({i},{j}) = {r}");
            }
        }
    }

    #[test]
    fn audio_generator_is_deterministic_and_bounded() {
        let a = synth_audio(2.0, 512.0, 11).unwrap();
        let b = synth_audio(2.0, 512.0, 11).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.data.nrows(), 1);
        let peak = a.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak <= 200.0 && peak > 50.0);
    }
}

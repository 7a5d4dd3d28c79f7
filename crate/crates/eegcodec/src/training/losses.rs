//! Reconstruction losses.
//!
//! Pure f64 versions are the evaluation/metric path; `*_graph` builders
//! assemble the same formulas on the autodiff tape for training.
//!
//! * waveform loss: mean absolute error over samples.
//! * spectrogram loss: sum over scales of mean |log(|STFT(x)|+eps) -
//!   log(|STFT(x_hat)|+eps)|, Hann window, eps = 1e-5; default scales
//!   (2048, hop 512) and (512, hop 128).
//! * multi-scale STFT loss: windows {2048, 1024, 512, 256, 128} with hop =
//!   window/4; per scale the sum of the linear-magnitude L1 term
//!   mean| |X| - |X_hat| | and the log-magnitude L1 term as above.
//!
//! Scales longer than the signal are skipped; it is an error if no scale
//! fits.

use crate::dsp;
use crate::error::{Error, Result};
use crate::nn::{Tape, Tid};

pub const LOG_EPS: f64 = 1e-5;
pub const SPEC_SCALES: [(usize, usize); 2] = [(2048, 512), (512, 128)];
pub const MSTFT_WINDOWS: [usize; 5] = [2048, 1024, 512, 256, 128];

/// Mean absolute error.
pub fn waveform_loss(x: &[f32], x_hat: &[f32]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!(
            "waveform loss length mismatch: {} vs {}",
            x.len(),
            x_hat.len()
        )));
    }
    let n = x.len().max(1);
    Ok(x.iter()
        .zip(x_hat)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>()
        / n as f64)
}

fn log_mag_l1(x: &[f64], x_hat: &[f64], n_fft: usize, hop: usize) -> f64 {
    let a = dsp::stft_mag(x, n_fft, hop);
    let b = dsp::stft_mag(x_hat, n_fft, hop);
    let mut acc = 0.0;
    let mut count = 0usize;
    for (fa, fb) in a.iter().zip(&b) {
        for (&ma, &mb) in fa.iter().zip(fb) {
            acc += ((ma + LOG_EPS).ln() - (mb + LOG_EPS).ln()).abs();
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

fn lin_mag_l1(x: &[f64], x_hat: &[f64], n_fft: usize, hop: usize) -> f64 {
    let a = dsp::stft_mag(x, n_fft, hop);
    let b = dsp::stft_mag(x_hat, n_fft, hop);
    let mut acc = 0.0;
    let mut count = 0usize;
    for (fa, fb) in a.iter().zip(&b) {
        for (&ma, &mb) in fa.iter().zip(fb) {
            acc += (ma - mb).abs();
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

/// Log-magnitude spectrogram distance over `scales`.
pub fn spectrogram_loss(x: &[f32], x_hat: &[f32], scales: &[(usize, usize)]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape("spectrogram loss length mismatch".into()));
    }
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let y64: Vec<f64> = x_hat.iter().map(|&v| v as f64).collect();
    let feasible: Vec<&(usize, usize)> = scales.iter().filter(|(w, _)| *w <= x.len()).collect();
    if feasible.is_empty() {
        return Err(Error::Data(format!(
            "signal of {} samples is shorter than every spectrogram scale",
            x.len()
        )));
    }
    Ok(feasible
        .iter()
        .map(|(w, h)| log_mag_l1(&x64, &y64, *w, *h))
        .sum())
}

/// Linear + log magnitude distance over the five standard windows.
pub fn multiscale_stft_loss(x: &[f32], x_hat: &[f32]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape("multi-scale stft loss length mismatch".into()));
    }
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let y64: Vec<f64> = x_hat.iter().map(|&v| v as f64).collect();
    let feasible: Vec<usize> = MSTFT_WINDOWS
        .iter()
        .copied()
        .filter(|&w| w <= x.len())
        .collect();
    if feasible.is_empty() {
        return Err(Error::Data(format!(
            "signal of {} samples is shorter than every stft window",
            x.len()
        )));
    }
    Ok(feasible
        .iter()
        .map(|&w| lin_mag_l1(&x64, &y64, w, w / 4) + log_mag_l1(&x64, &y64, w, w / 4))
        .sum())
}

/// Graph waveform loss: mean |x - x_hat| over everything.
pub fn waveform_loss_graph(t: &mut Tape, x: Tid, x_hat: Tid) -> Tid {
    let d = t.sub(x_hat, x);
    let a = t.abs(d);
    t.mean_all(a)
}

/// Graph log-magnitude spectrogram loss over the feasible `scales`;
/// `None` when nothing fits. Inputs are `[B, T]`.
pub fn spectrogram_loss_graph(
    t: &mut Tape,
    x: Tid,
    x_hat: Tid,
    scales: &[(usize, usize)],
) -> Option<Tid> {
    let n = t.shape(x)[1];
    let mut terms = Vec::new();
    for &(w, h) in scales {
        if w > n {
            continue;
        }
        let ma = t.stft_mag(x, w, h);
        let mb = t.stft_mag(x_hat, w, h);
        let la = t.log_eps(ma, LOG_EPS as f32);
        let lb = t.log_eps(mb, LOG_EPS as f32);
        let d = t.sub(la, lb);
        let a = t.abs(d);
        terms.push(t.mean_all(a));
    }
    if terms.is_empty() {
        None
    } else {
        Some(t.add_n(&terms))
    }
}

/// Graph multi-scale STFT loss (linear + log terms); `None` when nothing
/// fits. Inputs are `[B, T]`.
pub fn multiscale_stft_loss_graph(t: &mut Tape, x: Tid, x_hat: Tid) -> Option<Tid> {
    let n = t.shape(x)[1];
    let mut terms = Vec::new();
    for &w in &MSTFT_WINDOWS {
        if w > n {
            continue;
        }
        let ma = t.stft_mag(x, w, w / 4);
        let mb = t.stft_mag(x_hat, w, w / 4);
        let dlin = t.sub(ma, mb);
        let alin = t.abs(dlin);
        terms.push(t.mean_all(alin));
        let la = t.log_eps(ma, LOG_EPS as f32);
        let lb = t.log_eps(mb, LOG_EPS as f32);
        let dlog = t.sub(la, lb);
        let alog = t.abs(dlog);
        terms.push(t.mean_all(alog));
    }
    if terms.is_empty() {
        None
    } else {
        Some(t.add_n(&terms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f32> {
        (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin()) as f32)
            .collect()
    }

    #[test]
    fn waveform_loss_examples() {
        let x = vec![0.0f32; 100];
        assert_eq!(waveform_loss(&x, &x).unwrap(), 0.0);
        let half = vec![0.5f32; 100];
        assert!((waveform_loss(&x, &half).unwrap() - 0.5).abs() < 1e-9);
        assert!(waveform_loss(&x, &half[..50].to_vec()).is_err());
        // random pair against an elementwise oracle
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f32> = (0..257).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..257).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let oracle = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum::<f64>()
            / 257.0;
        assert!((waveform_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn spectrogram_loss_zero_on_identity_and_positive_on_scaling() {
        let x = tone(10.0, 512.0, 4096, 0.8);
        assert_eq!(spectrogram_loss(&x, &x, &SPEC_SCALES).unwrap(), 0.0);
        let half = tone(10.0, 512.0, 4096, 0.4);
        let loss = spectrogram_loss(&x, &half, &SPEC_SCALES).unwrap();
        assert!(loss > 0.0);
    }

    /// Independent direct-DFT oracle for the log-magnitude distance.
    fn naive_log_mag_l1(x: &[f32], y: &[f32], n_fft: usize, hop: usize) -> f64 {
        let hann: Vec<f64> = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos())
            .collect();
        let frames = (x.len() - n_fft) / hop + 1;
        let bins = n_fft / 2 + 1;
        let mut acc = 0.0;
        for f in 0..frames {
            for k in 0..bins {
                let mut mags = [0.0f64; 2];
                for (m, sig) in [x, y].iter().enumerate() {
                    let mut re = 0.0f64;
                    let mut im = 0.0f64;
                    for i in 0..n_fft {
                        let ph = 2.0 * std::f64::consts::PI * (k * i) as f64 / n_fft as f64;
                        let v = sig[f * hop + i] as f64 * hann[i];
                        re += v * ph.cos();
                        im -= v * ph.sin();
                    }
                    mags[m] = (re * re + im * im).sqrt();
                }
                acc += ((mags[0] + LOG_EPS).ln() - (mags[1] + LOG_EPS).ln()).abs();
            }
        }
        acc / (frames * bins) as f64
    }

    #[test]
    fn spectrogram_loss_matches_direct_dft_oracle() {
        let x = tone(10.0, 512.0, 700, 0.8);
        let y = tone(10.0, 512.0, 700, 0.4);
        let ours = spectrogram_loss(&x, &y, &[(512, 128)]).unwrap();
        let oracle = naive_log_mag_l1(&x, &y, 512, 128);
        assert!((ours - oracle).abs() < 1e-7, "{ours} vs {oracle}");
    }

    /// Full second implementation of the multi-scale loss used as an oracle.
    fn naive_mstft(x: &[f32], y: &[f32]) -> f64 {
        let mut total = 0.0;
        for &w in &MSTFT_WINDOWS {
            if w > x.len() {
                continue;
            }
            let hop = w / 4;
            let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let y64: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let a = crate::dsp::stft_mag(&x64, w, hop);
            let b = crate::dsp::stft_mag(&y64, w, hop);
            let mut lin = 0.0;
            let mut log = 0.0;
            let mut n = 0usize;
            for (fa, fb) in a.iter().zip(&b) {
                for (&ma, &mb) in fa.iter().zip(fb) {
                    lin += (ma - mb).abs();
                    log += ((ma + LOG_EPS).ln() - (mb + LOG_EPS).ln()).abs();
                    n += 1;
                }
            }
            total += (lin + log) / n as f64;
        }
        total
    }

    #[test]
    fn multiscale_loss_matches_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f32> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f32> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ours = multiscale_stft_loss(&x, &y).unwrap();
        let oracle = naive_mstft(&x, &y);
        assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");
        assert_eq!(multiscale_stft_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn single_feasible_scale_degenerates_to_that_scale() {
        let x = tone(20.0, 512.0, 200, 0.5);
        let y = tone(20.0, 512.0, 200, 0.2);
        // only the 128 window fits
        let ours = multiscale_stft_loss(&x, &y).unwrap();
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let y64: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let expect = lin_mag_l1(&x64, &y64, 128, 32) + log_mag_l1(&x64, &y64, 128, 32);
        assert!((ours - expect).abs() < 1e-12);
        // nothing fits -> error
        assert!(multiscale_stft_loss(&x[..64], &y[..64]).is_err());
        assert!(spectrogram_loss(&x[..100], &y[..100], &SPEC_SCALES).is_err());
    }

    #[test]
    fn graph_losses_agree_with_pure_versions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f32> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f32> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::new();
        let xa = t.constant(x.clone(), vec![1, 600]);
        let ya = t.constant(y.clone(), vec![1, 600]);
        let wl = waveform_loss_graph(&mut t, xa, ya);
        assert!((t.scalar(wl) as f64 - waveform_loss(&x, &y).unwrap()).abs() < 1e-6);
        let sl = spectrogram_loss_graph(&mut t, xa, ya, &SPEC_SCALES).unwrap();
        assert!(
            (t.scalar(sl) as f64 - spectrogram_loss(&x, &y, &SPEC_SCALES).unwrap()).abs() < 1e-4
        );
        let ml = multiscale_stft_loss_graph(&mut t, xa, ya).unwrap();
        assert!((t.scalar(ml) as f64 - multiscale_stft_loss(&x, &y).unwrap()).abs() < 1e-3);
    }
}

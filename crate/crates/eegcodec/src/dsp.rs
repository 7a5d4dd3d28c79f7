//! Shared signal-processing primitives: band-limited resampling, zero-phase
//! Butterworth high-pass filtering, STFT magnitudes and Welch periodograms.
//!
//! Everything here is deterministic and computed in f64; callers convert to
//! f32 at the boundary.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Band-limited resampling by windowed-sinc interpolation.
///
/// Output length is `round(n * f_out / f_in)`. The interpolation kernel is a
/// Hann-windowed sinc with 64 zero crossings at the lower of the two Nyquist
/// rates, which keeps pure tones below both Nyquists within ~1e-4 relative
/// RMS error away from the edges.
pub fn resample(signal: &[f32], f_in: f64, f_out: f64) -> Result<Vec<f32>> {
    if f_in <= 0.0 || f_out <= 0.0 {
        return Err(Error::Config(format!(
            "resample rates must be positive, got {f_in} -> {f_out}"
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("resample input contains non-finite samples".into()));
    }
    if (f_in - f_out).abs() < 1e-12 {
        return Ok(signal.to_vec());
    }
    let n_in = signal.len();
    let n_out = (n_in as f64 * f_out / f_in).round() as usize;
    let ratio = f_in / f_out; // input samples per output sample
    // Anti-alias cutoff at the lower Nyquist, expressed relative to f_in.
    let cutoff = (f_out / f_in).min(1.0);
    let half_width = 64.0 / cutoff; // zero crossings of the scaled sinc
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let center = m as f64 * ratio;
        let lo = ((center - half_width).floor().max(0.0)) as usize;
        let hi = ((center + half_width).ceil() as usize).min(n_in.saturating_sub(1));
        let mut acc = 0.0f64;
        for (k, &x) in signal[lo..=hi].iter().enumerate() {
            let t = (lo + k) as f64 - center;
            acc += x as f64 * windowed_sinc(t * cutoff, 64.0) * cutoff;
        }
        out.push(acc as f32);
    }
    Ok(out)
}

fn windowed_sinc(t: f64, zeros: f64) -> f64 {
    if t.abs() >= zeros {
        return 0.0;
    }
    let w = 0.5 + 0.5 * (std::f64::consts::PI * t / zeros).cos();
    w * sinc(t)
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        let pt = std::f64::consts::PI * t;
        pt.sin() / pt
    }
}

/// One second-order IIR section (biquad), direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2], // a1, a2 with a0 normalized to 1
}

impl Biquad {
    /// DC gain of the section.
    fn h1(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filter with the internal state initialized to steady state for a
    /// constant input equal to the first sample, so step offsets produce no
    /// startup transient (the `lfilter_zi` trick).
    fn filter_inplace(&self, x: &mut [f64]) {
        let x0 = x.first().copied().unwrap_or(0.0);
        let y0 = self.h1() * x0;
        let mut z1 = y0 - self.b[0] * x0;
        let mut z2 = self.b[2] * x0 - self.a[1] * y0;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * y + z2;
            z2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// 4th-order Butterworth high-pass as two cascaded biquads (bilinear
/// transform with frequency prewarping).
fn butter_highpass_sos(cutoff_hz: f64, fs: f64) -> [Biquad; 2] {
    // Analog prototype poles for order 4: exp(i*pi*(2k+n-1)/(2n)), k=1..n/2
    // giving two conjugate pairs with quality factors 1/(2cos(theta)).
    let warped = (std::f64::consts::PI * cutoff_hz / fs).tan();
    let mut sections = [Biquad { b: [0.0; 3], a: [0.0; 2] }; 2];
    for (k, section) in sections.iter_mut().enumerate() {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + 1.0) / 8.0;
        let q = 1.0 / (2.0 * theta.cos());
        // Bilinear transform of the high-pass prototype s^2 / (s^2 + s/Q + 1)
        // with s scaled by the warped cutoff.
        let w = warped;
        let a0 = w * w + w / q + 1.0;
        section.b = [1.0 / a0, -2.0 / a0, 1.0 / a0];
        section.a = [(2.0 * (w * w - 1.0)) / a0, (w * w - w / q + 1.0) / a0];
    }
    sections
}

/// Zero-phase 4th-order Butterworth high-pass (forward-backward filtering
/// with odd-reflection edge padding).
pub fn highpass(signal: &[f32], cutoff_hz: f64, fs: f64) -> Result<Vec<f32>> {
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::Config(format!(
            "high-pass cutoff {cutoff_hz} Hz out of range for fs {fs} Hz"
        )));
    }
    let sos = butter_highpass_sos(cutoff_hz, fs);
    let n = signal.len();
    if n < 2 {
        return Ok(signal.to_vec());
    }
    // Odd reflection around both edges reduces startup transients.
    let pad = (3 * 8).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let first = signal[0] as f64;
    let last = signal[n - 1] as f64;
    for i in (1..=pad).rev() {
        ext.push(2.0 * first - signal[i] as f64);
    }
    ext.extend(signal.iter().map(|&v| v as f64));
    for i in 1..=pad {
        ext.push(2.0 * last - signal[n - 1 - i] as f64);
    }
    for section in &sos {
        section.filter_inplace(&mut ext);
    }
    ext.reverse();
    for section in &sos {
        section.filter_inplace(&mut ext);
    }
    ext.reverse();
    Ok(ext[pad..pad + n].iter().map(|&v| v as f32).collect())
}

/// Magnitude STFT frames: Hann window of `n_fft`, hop `hop`, no padding.
///
/// Returns `frames x (n_fft/2 + 1)` magnitudes; empty if the signal is
/// shorter than one window.
pub fn stft_mag(signal: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<f64>> {
    if signal.len() < n_fft {
        return Vec::new();
    }
    let window = hann(n_fft);
    let n_frames = (signal.len() - n_fft) / hop + 1;
    let bins = n_fft / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut out = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for f in 0..n_frames {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(signal[f * hop + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..bins].iter().map(|c| c.norm()).collect());
    }
    out
}

/// Welch power spectral density with Hann window and 50% overlap.
///
/// Returns `(frequencies_hz, psd)`; the PSD is normalized so that the sum of
/// `psd * df` approximates the signal power.
pub fn welch_psd(signal: &[f64], fs: f64, nperseg: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let nperseg = nperseg.min(signal.len());
    if nperseg < 8 {
        return Err(Error::Data("welch: signal too short".into()));
    }
    let hop = nperseg / 2;
    let window = hann(nperseg);
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let n_segments = (signal.len() - nperseg) / hop + 1;
    let bins = nperseg / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nperseg);
    let mut psd = vec![0.0f64; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); nperseg];
    for s in 0..n_segments {
        let seg = &signal[s * hop..s * hop + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new((seg[i] - mean) * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, acc) in psd.iter_mut().enumerate() {
            let scale = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            *acc += scale * buf[k].norm_sqr();
        }
    }
    let norm = 1.0 / (n_segments as f64 * fs * win_power);
    for v in psd.iter_mut() {
        *v *= norm;
    }
    let freqs = (0..bins).map(|k| k as f64 * fs / nperseg as f64).collect();
    Ok((freqs, psd))
}

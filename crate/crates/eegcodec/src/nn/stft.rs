//! FFT helpers for the differentiable STFT-magnitude op.
//!
//! A real frame x of length N is windowed and transformed; only the onesided
//! spectrum (N/2 + 1 bins) is kept. The adjoint maps bin gradients back to
//! the frame: dL/dx_n = w_n * Re( sum_k G_k e^{+2*pi*i*k*n/N} ) with G zero
//! outside the onesided bins, computed with an unnormalized inverse FFT.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::{num_complex::Complex32, Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f32>>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f32>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Periodic Hann window in f32.
pub fn hann32(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f32::consts::PI * i as f32 / n as f32).cos())
        .collect()
}

/// Windowed forward FFT of one frame; writes the onesided spectrum.
pub fn frame_fft(frame: &[f32], window: &[f32], re: &mut [f32], im: &mut [f32]) {
    let n = frame.len();
    let bins = n / 2 + 1;
    debug_assert_eq!(re.len(), bins);
    let mut buf: Vec<Complex32> = frame
        .iter()
        .zip(window)
        .map(|(&x, &w)| Complex32::new(x * w, 0.0))
        .collect();
    plan(n, false).process(&mut buf);
    for k in 0..bins {
        re[k] = buf[k].re;
        im[k] = buf[k].im;
    }
}

/// Adjoint of `frame_fft` restricted to the onesided bins.
pub fn frame_fft_adjoint(gre: &[f32], gim: &[f32], window: &[f32], out: &mut [f32]) {
    let n = window.len();
    let bins = n / 2 + 1;
    debug_assert_eq!(gre.len(), bins);
    let mut buf = vec![Complex32::new(0.0, 0.0); n];
    for k in 0..bins {
        buf[k] = Complex32::new(gre[k], gim[k]);
    }
    // rustfft's inverse transform is unnormalized: sum_k G_k e^{+2pi i kn/N}.
    plan(n, true).process(&mut buf);
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = buf[i].re * window[i];
    }
}

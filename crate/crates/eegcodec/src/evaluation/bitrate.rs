//! Bitrate accounting.
//!
//! bits per real second = (presented_rate / stride) * sum_i ceil(log2 V_i);
//! grouped streams divide by the group size for per-channel figures.

use crate::error::{Error, Result};
use crate::tokens::TokenStream;

#[derive(Debug, Clone)]
pub struct BitrateSpec {
    pub vocab_sizes: Vec<usize>,
    pub stride_total: usize,
    pub presented_rate_hz: f64,
    pub native_rate_hz: f64,
    /// Channels sharing one stream (1 for per-channel coding).
    pub group_size: usize,
}

impl BitrateSpec {
    pub fn new(
        n_codebooks: usize,
        vocab: usize,
        stride_total: usize,
        presented_rate_hz: f64,
    ) -> Self {
        BitrateSpec {
            vocab_sizes: vec![vocab; n_codebooks],
            stride_total,
            presented_rate_hz,
            native_rate_hz: presented_rate_hz,
            group_size: 1,
        }
    }

    pub fn from_stream(tokens: &TokenStream) -> Self {
        BitrateSpec {
            vocab_sizes: tokens.vocab_sizes.clone(),
            stride_total: tokens.stride_total,
            presented_rate_hz: tokens.presented_rate_hz,
            native_rate_hz: tokens.native_rate_hz,
            group_size: tokens.members.len().max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_sizes.is_empty()
            || self.vocab_sizes.iter().any(|&v| v < 2)
            || self.stride_total == 0
            || self.presented_rate_hz <= 0.0
            || self.native_rate_hz <= 0.0
            || self.group_size == 0
        {
            return Err(Error::Config(format!("invalid bitrate spec: {self:?}")));
        }
        Ok(())
    }

    pub fn bits_per_frame(&self) -> u32 {
        self.vocab_sizes
            .iter()
            .map(|&v| TokenStream::bits_per_code(v))
            .sum()
    }
}

/// Per-channel bits per real second of signal.
pub fn bitrate(spec: &BitrateSpec) -> Result<f64> {
    spec.validate()?;
    let frames_per_second = spec.presented_rate_hz / spec.stride_total as f64;
    Ok(frames_per_second * spec.bits_per_frame() as f64 / spec.group_size as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configurations() {
        // 9 books x 1024 at stride 512, presented 512 Hz -> 90 bits/s
        let spec = BitrateSpec::new(9, 1024, 512, 512.0);
        assert_eq!(bitrate(&spec).unwrap(), 90.0);
        // halving the vocabulary drops one bit per book: 81 bits/s
        let spec = BitrateSpec::new(9, 512, 512, 512.0);
        assert_eq!(bitrate(&spec).unwrap(), 81.0);
        // pruning to 3 books: 30 bits/s
        let spec = BitrateSpec::new(3, 1024, 512, 512.0);
        assert_eq!(bitrate(&spec).unwrap(), 30.0);
        // native 256 Hz presented directly halves the frame rate
        let spec = BitrateSpec::new(9, 1024, 512, 256.0);
        assert_eq!(bitrate(&spec).unwrap(), 45.0);
    }

    #[test]
    fn grouping_divides_per_channel_bits() {
        let mut spec = BitrateSpec::new(9, 1024, 512, 512.0);
        spec.group_size = 5;
        assert_eq!(bitrate(&spec).unwrap(), 18.0);
    }

    #[test]
    fn linear_in_bits_per_token() {
        // one fewer bit per codebook exactly when V halves from 1024 to 512
        let a = BitrateSpec::new(9, 1024, 512, 512.0);
        let b = BitrateSpec::new(9, 512, 512, 512.0);
        let frames_per_s = 1.0;
        assert_eq!(
            bitrate(&a).unwrap() - bitrate(&b).unwrap(),
            9.0 * frames_per_s
        );
        // and linear in the presented rate
        let c = BitrateSpec::new(9, 1024, 512, 1024.0);
        assert_eq!(bitrate(&c).unwrap(), 180.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = BitrateSpec::new(9, 1024, 512, 512.0);
        spec.vocab_sizes[3] = 1;
        assert!(bitrate(&spec).is_err());
        let spec = BitrateSpec::new(0, 1024, 512, 512.0);
        assert!(bitrate(&spec).is_err());
    }
}

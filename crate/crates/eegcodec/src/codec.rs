//! Single-channel codec backbone: a strided 1-D convolutional encoder that
//! maps stride-sized sample windows to latent frames, and a mirrored
//! transposed-convolution decoder with per-block FiLM (style) hooks.
//!
//! Widths double per encoder block from `base_width` (capped at 8x); the
//! decoder mirrors them in reverse and ends in tanh. Inputs are right-padded
//! with zeros to a stride multiple, so a 30 s window at 512 Hz with stride
//! 512 becomes exactly 30 frames.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Tid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// x + sin^2(alpha x)/alpha with learnable per-channel alpha.
    Snake,
    Elu,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Snake => "snake",
            Activation::Elu => "elu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "snake" => Ok(Activation::Snake),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CodecConfig {
    /// Samples per latent frame; must equal the product of `block_strides`.
    pub stride_total: usize,
    pub block_strides: Vec<usize>,
    pub hidden_dim: usize,
    pub base_width: usize,
    pub activation: Activation,
}

impl CodecConfig {
    /// Desk-scale defaults: trainable on one CPU core.
    pub fn desk() -> Self {
        CodecConfig {
            stride_total: 512,
            block_strides: vec![8, 8, 4, 2],
            hidden_dim: 64,
            base_width: 16,
            activation: Activation::Snake,
        }
    }

    /// Full-scale configuration matching the published backbone dimensions.
    pub fn full_scale() -> Self {
        CodecConfig {
            stride_total: 512,
            block_strides: vec![8, 8, 4, 2],
            hidden_dim: 1024,
            base_width: 64,
            activation: Activation::Snake,
        }
    }

    /// Tiny configuration for gradient checks (hidden 8, stride 16).
    pub fn tiny() -> Self {
        CodecConfig {
            stride_total: 16,
            block_strides: vec![4, 2, 2],
            hidden_dim: 8,
            base_width: 4,
            activation: Activation::Snake,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let product: usize = self.block_strides.iter().product();
        if product != self.stride_total {
            return Err(Error::Config(format!(
                "block strides {:?} multiply to {product}, not stride_total {}",
                self.block_strides, self.stride_total
            )));
        }
        if self.block_strides.iter().any(|&s| s < 2 || s % 2 != 0) {
            return Err(Error::Config(format!(
                "block strides must be even and >= 2, got {:?}",
                self.block_strides
            )));
        }
        if self.hidden_dim == 0 || self.base_width == 0 {
            return Err(Error::Config("zero hidden_dim or base_width".into()));
        }
        Ok(())
    }

    /// Channel widths entering each encoder stage: `[w0, w1, .., wB]` where
    /// w0 feeds block 0 and wB feeds the final latent projection.
    pub fn widths(&self) -> Vec<usize> {
        let cap = self.base_width * 8;
        let mut w = vec![self.base_width];
        for _ in &self.block_strides {
            w.push((w.last().unwrap() * 2).min(cap));
        }
        w
    }

    pub fn n_blocks(&self) -> usize {
        self.block_strides.len()
    }

    /// Frame count after right-zero-padding to a stride multiple.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.stride_total)
    }

    /// Channel width at the input of decoder block `j` (0-based); this is
    /// the width the FiLM hook for that block modulates.
    pub fn decoder_block_widths(&self) -> Vec<usize> {
        let w = self.widths();
        (0..self.n_blocks()).map(|j| w[self.n_blocks() - j]).collect()
    }
}

/// Encoder output: `[t_frames x hidden_dim]` plus framing metadata.
#[derive(Debug, Clone)]
pub struct LatentSequence {
    pub frames: Array2<f32>,
    pub stride_total: usize,
    pub source_rate_hz: f64,
}

impl LatentSequence {
    pub fn t_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Per-decoder-block (scale, bias) pairs; identity leaves decoding unchanged.
#[derive(Debug, Clone)]
pub struct StyleVector {
    pub blocks: Vec<(Vec<f32>, Vec<f32>)>,
}

impl StyleVector {
    pub fn identity(config: &CodecConfig) -> Self {
        let blocks = config
            .decoder_block_widths()
            .into_iter()
            .map(|w| (vec![1.0f32; w], vec![0.0f32; w]))
            .collect();
        StyleVector { blocks }
    }

    pub fn is_identity(&self) -> bool {
        self.blocks.iter().all(|(s, b)| {
            s.iter().all(|&v| v == 1.0) && b.iter().all(|&v| v == 0.0)
        })
    }
}

/// The convolutional backbone. Parameter tensors live in a [`ParamStore`]
/// under the `enc.*` / `dec.*` prefixes.
#[derive(Debug, Clone)]
pub struct Codec {
    pub config: CodecConfig,
}

impl Codec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        config.validate()?;
        Ok(Codec { config })
    }

    /// Initialize every backbone tensor (overwrites existing entries).
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let w = self.config.widths();
        let nb = self.config.n_blocks();
        conv_init(store, "enc.stem.conv", w[0], 1, 7, rng);
        for i in 0..nb {
            store.init_const(format!("enc.block{i}.alpha"), vec![w[i]], 1.0);
            let k = 2 * self.config.block_strides[i];
            conv_init(store, &format!("enc.block{i}.conv"), w[i + 1], w[i], k, rng);
        }
        store.init_const("enc.out.alpha", vec![w[nb]], 1.0);
        conv_init(store, "enc.out.conv", self.config.hidden_dim, w[nb], 3, rng);

        conv_init(store, "dec.in.conv", w[nb], self.config.hidden_dim, 3, rng);
        for j in 0..nb {
            let s = self.config.block_strides[nb - 1 - j];
            let win = w[nb - j];
            let wout = w[nb - 1 - j];
            store.init_const(format!("dec.block{j}.alpha"), vec![win], 1.0);
            // transposed conv weights are [cin, cout, k]
            let fan_in = win * 2 * s;
            store.init_normal(
                format!("dec.block{j}.tconv.w"),
                vec![win, wout, 2 * s],
                1.0 / (fan_in as f32).sqrt(),
                rng,
            );
            store.init_const(format!("dec.block{j}.tconv.b"), vec![wout], 0.0);
        }
        store.init_const("dec.out.alpha", vec![w[0]], 1.0);
        conv_init(store, "dec.out.conv", 1, w[0], 7, rng);
    }

    /// Names of every backbone tensor, in creation order.
    pub fn param_names(&self) -> Vec<String> {
        let nb = self.config.n_blocks();
        let mut names = vec!["enc.stem.conv.w".into(), "enc.stem.conv.b".into()];
        for i in 0..nb {
            names.push(format!("enc.block{i}.alpha"));
            names.push(format!("enc.block{i}.conv.w"));
            names.push(format!("enc.block{i}.conv.b"));
        }
        names.push("enc.out.alpha".into());
        names.push("enc.out.conv.w".into());
        names.push("enc.out.conv.b".into());
        names.push("dec.in.conv.w".into());
        names.push("dec.in.conv.b".into());
        for j in 0..nb {
            names.push(format!("dec.block{j}.alpha"));
            names.push(format!("dec.block{j}.tconv.w"));
            names.push(format!("dec.block{j}.tconv.b"));
        }
        names.push("dec.out.alpha".into());
        names.push("dec.out.conv.w".into());
        names.push("dec.out.conv.b".into());
        names
    }

    fn activate(&self, t: &mut Tape, store: &ParamStore, x: Tid, alpha_name: &str) -> Tid {
        match self.config.activation {
            Activation::Snake => {
                let alpha = t.param(store, alpha_name);
                t.snake(x, alpha)
            }
            Activation::Elu => t.elu(x),
        }
    }

    /// Encoder graph: `[B,1,T]` (T a stride multiple) -> `[B,hidden,Tf]`.
    pub fn encode_graph(&self, t: &mut Tape, store: &ParamStore, x: Tid) -> Tid {
        let nb = self.config.n_blocks();
        let mut h = conv_forward(t, store, "enc.stem.conv", x, 1, 3);
        for i in 0..nb {
            let s = self.config.block_strides[i];
            h = self.activate(t, store, h, &format!("enc.block{i}.alpha"));
            h = conv_forward(t, store, &format!("enc.block{i}.conv"), h, s, s / 2);
        }
        h = self.activate(t, store, h, "enc.out.alpha");
        conv_forward(t, store, "enc.out.conv", h, 1, 1)
    }

    /// Decoder graph: `[B,hidden,Tf]` -> `[B,1,Tf*stride]`, optionally FiLM
    /// modulated per block by `styles` (tape nodes, one (scale,bias) pair
    /// per block).
    pub fn decode_graph(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        z: Tid,
        styles: Option<&[(Tid, Tid)]>,
    ) -> Tid {
        let nb = self.config.n_blocks();
        if let Some(s) = styles {
            assert_eq!(s.len(), nb, "style must cover every decoder block");
        }
        let mut h = conv_forward(t, store, "dec.in.conv", z, 1, 1);
        for j in 0..nb {
            if let Some(style) = styles {
                let (scale, bias) = style[j];
                h = t.channel_affine(h, scale, bias);
            }
            let s = self.config.block_strides[nb - 1 - j];
            h = self.activate(t, store, h, &format!("dec.block{j}.alpha"));
            let w = t.param(store, &format!("dec.block{j}.tconv.w"));
            let b = t.param(store, &format!("dec.block{j}.tconv.b"));
            h = t.conv_transpose1d(h, w, s, s / 2);
            h = t.bias_channels(h, b);
        }
        h = self.activate(t, store, h, "dec.out.alpha");
        let y = conv_forward(t, store, "dec.out.conv", h, 1, 3);
        t.tanh(y)
    }

    /// Right-pad to a stride multiple and encode one window.
    pub fn encode(
        &self,
        store: &ParamStore,
        window: &[f32],
        sample_rate_hz: f64,
    ) -> Result<LatentSequence> {
        if window.len() < self.config.stride_total {
            return Err(Error::Shape(format!(
                "input of {} samples is shorter than one stride ({})",
                window.len(),
                self.config.stride_total
            )));
        }
        let frames = self.config.frames_for(window.len());
        let padded_len = frames * self.config.stride_total;
        let mut padded = window.to_vec();
        padded.resize(padded_len, 0.0);
        let mut t = Tape::new();
        let x = t.constant(padded, vec![1, 1, padded_len]);
        let z = self.encode_graph(&mut t, store, x);
        let h = self.config.hidden_dim;
        debug_assert_eq!(t.shape(z), &[1, h, frames]);
        let mut out = Array2::zeros((frames, h));
        let zv = t.value(z);
        for c in 0..h {
            for f in 0..frames {
                out[[f, c]] = zv[c * frames + f];
            }
        }
        Ok(LatentSequence {
            frames: out,
            stride_total: self.config.stride_total,
            source_rate_hz: sample_rate_hz,
        })
    }

    /// Decode latents back to a waveform of `t_frames * stride` samples.
    /// An identity style (or none) leaves the decoder output untouched.
    pub fn decode(
        &self,
        store: &ParamStore,
        latents: &LatentSequence,
        style: Option<&StyleVector>,
    ) -> Result<Vec<f32>> {
        let h = self.config.hidden_dim;
        if latents.hidden_dim() != h {
            return Err(Error::Shape(format!(
                "latents have width {}, model hidden_dim is {h}",
                latents.hidden_dim()
            )));
        }
        let frames = latents.t_frames();
        let mut t = Tape::new();
        let mut zv = vec![0.0f32; h * frames];
        for c in 0..h {
            for f in 0..frames {
                zv[c * frames + f] = latents.frames[[f, c]];
            }
        }
        let z = t.constant(zv, vec![1, h, frames]);
        let style_nodes = match style {
            Some(s) if !s.is_identity() => {
                let widths = self.config.decoder_block_widths();
                if s.blocks.len() != widths.len()
                    || s.blocks
                        .iter()
                        .zip(&widths)
                        .any(|((sc, bi), &w)| sc.len() != w || bi.len() != w)
                {
                    return Err(Error::Shape("style vector widths do not match decoder".into()));
                }
                Some(
                    s.blocks
                        .iter()
                        .map(|(sc, bi)| {
                            let scale = t.constant(sc.clone(), vec![sc.len()]);
                            let bias = t.constant(bi.clone(), vec![bi.len()]);
                            (scale, bias)
                        })
                        .collect::<Vec<_>>(),
                )
            }
            _ => None,
        };
        let y = self.decode_graph(&mut t, store, z, style_nodes.as_deref());
        Ok(t.value(y).to_vec())
    }
}

fn conv_init(
    store: &mut ParamStore,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    let fan_in = (cin * k) as f32;
    store.init_normal(format!("{name}.w"), vec![cout, cin, k], 1.0 / fan_in.sqrt(), rng);
    store.init_const(format!("{name}.b"), vec![cout], 0.0);
}

fn conv_forward(
    t: &mut Tape,
    store: &ParamStore,
    name: &str,
    x: Tid,
    stride: usize,
    pad: usize,
) -> Tid {
    let w = t.param(store, &format!("{name}.w"));
    let b = t.param(store, &format!("{name}.b"));
    let y = t.conv1d(x, w, stride, pad);
    t.bias_channels(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn init(config: CodecConfig) -> (Codec, ParamStore) {
        let codec = Codec::new(config).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        codec.init_params(&mut store, &mut rng);
        (codec, store)
    }

    #[test]
    fn frame_count_law() {
        let (codec, store) = init(CodecConfig::tiny());
        for n in [16usize, 17, 31, 32, 600, 160] {
            let window = vec![0.25f32; n];
            let lat = codec.encode(&store, &window, 512.0).unwrap();
            assert_eq!(lat.t_frames(), n.div_ceil(16), "n = {n}");
            assert_eq!(lat.hidden_dim(), 8);
        }
        // shorter than one stride is a shape error
        assert!(matches!(
            codec.encode(&store, &[0.0; 15], 512.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn thirty_seconds_at_512hz_is_30_frames() {
        let (codec, store) = init(CodecConfig::desk());
        let window = vec![0.1f32; 15360];
        let lat = codec.encode(&store, &window, 512.0).unwrap();
        assert_eq!(lat.t_frames(), 30);
    }

    #[test]
    fn decode_length_and_round_trip_shape() {
        let (codec, store) = init(CodecConfig::tiny());
        let window: Vec<f32> = (0..600).map(|i| ((i as f32) * 0.05).sin() * 0.5).collect();
        let lat = codec.encode(&store, &window, 512.0).unwrap();
        assert_eq!(lat.t_frames(), 38); // 600 padded to 608
        let wave = codec.decode(&store, &lat, None).unwrap();
        assert_eq!(wave.len(), 38 * 16);
    }

    #[test]
    fn identity_style_is_bitwise_equal_to_no_style() {
        let (codec, store) = init(CodecConfig::tiny());
        let window: Vec<f32> = (0..160).map(|i| ((i as f32) * 0.11).cos() * 0.3).collect();
        let lat = codec.encode(&store, &window, 512.0).unwrap();
        let plain = codec.decode(&store, &lat, None).unwrap();
        let identity = StyleVector::identity(&codec.config);
        let styled = codec.decode(&store, &lat, Some(&identity)).unwrap();
        assert_eq!(plain.len(), styled.len());
        for (a, b) in plain.iter().zip(&styled) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn non_identity_style_changes_output() {
        let (codec, store) = init(CodecConfig::tiny());
        let window: Vec<f32> = (0..160).map(|i| ((i as f32) * 0.07).sin() * 0.4).collect();
        let lat = codec.encode(&store, &window, 512.0).unwrap();
        let plain = codec.decode(&store, &lat, None).unwrap();
        let mut style = StyleVector::identity(&codec.config);
        for v in style.blocks[0].0.iter_mut() {
            *v = 2.0;
        }
        let styled = codec.decode(&store, &lat, Some(&style)).unwrap();
        assert_ne!(plain, styled);
    }

    #[test]
    fn encode_decode_are_deterministic() {
        let (codec, store) = init(CodecConfig::tiny());
        let window: Vec<f32> = (0..320).map(|i| ((i as f32) * 0.03).sin()).collect();
        let a = codec.encode(&store, &window, 512.0).unwrap();
        let b = codec.encode(&store, &window, 512.0).unwrap();
        assert_eq!(a.frames, b.frames);
        let da = codec.decode(&store, &a, None).unwrap();
        let db = codec.decode(&store, &b, None).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn decode_rejects_wrong_hidden_dim() {
        let (codec, store) = init(CodecConfig::tiny());
        let lat = LatentSequence {
            frames: Array2::zeros((4, 5)),
            stride_total: 16,
            source_rate_hz: 512.0,
        };
        assert!(matches!(codec.decode(&store, &lat, None), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = CodecConfig::desk();
        cfg.stride_total = 500;
        assert!(cfg.validate().is_err());
        let mut cfg = CodecConfig::desk();
        cfg.block_strides = vec![512];
        cfg.stride_total = 512;
        assert!(cfg.validate().is_ok());
        let mut cfg = CodecConfig::desk();
        cfg.block_strides = vec![3, 4];
        cfg.stride_total = 12;
        assert!(cfg.validate().is_err(), "odd strides rejected");
    }

    #[test]
    fn backbone_gradients_match_finite_differences() {
        // Tiny config end-to-end: mean squared decode(encode(x)) vs target.
        let (codec, mut store) = init(CodecConfig::tiny());
        let window: Vec<f32> = (0..64).map(|i| ((i as f32) * 0.21).sin() * 0.5).collect();
        let target: Vec<f32> = (0..64).map(|i| ((i as f32) * 0.17).cos() * 0.4).collect();
        let names = codec.param_names();
        let check = crate::nn::gradcheck::check_params(
            &mut store,
            &names,
            4,
            1e-2,
            2e-3,
            &mut |t, s| {
                let x = t.constant(window.clone(), vec![1, 1, 64]);
                let z = codec.encode_graph(t, s, x);
                let y = codec.decode_graph(t, s, z, None);
                let tgt = t.constant(target.clone(), vec![1, 1, 64]);
                let d = t.sub(y, tgt);
                let sq = t.mul(d, d);
                t.mean_all(sq)
            },
        );
        assert!(
            check.passed(),
            "checked {} worst {} failures {:?}",
            check.checked,
            check.worst_rel,
            check.failures
        );
    }
}

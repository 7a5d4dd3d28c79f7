//! Grouped multi-channel coding: per-channel encoding, latent concatenation
//! with zero padding, self-attention over frames, projection back to the
//! hidden width, one shared token stream per group, and per-channel
//! style-conditioned decoding.
//!
//! The concatenated width is `hidden_dim * max_group_size` with one slot per
//! member channel (canonical order). Padded slots are zeroed after every
//! transform and layer norm / attention heads operate per slot, so a padded
//! slot cannot perturb real-slot outputs: encoding a group at width g and at
//! width 5 (g real + pads) produces identical latents.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codec, CodecConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Tid};
use crate::rvq::{RvqStack, StreamMeta};
use crate::tokens::TokenStream;

pub const DEFAULT_MAX_GROUP: usize = 5;

#[derive(Debug, Clone)]
pub struct McConfig {
    pub max_group_size: usize,
    pub attn_layers: usize,
    /// Heads per channel slot; `hidden_dim` must be divisible by this.
    pub attn_heads: usize,
    /// Canonical ordered list of known channel names. Group members are
    /// sorted into this order and every train/eval channel must appear.
    pub channel_vocab: Vec<String>,
}

impl McConfig {
    pub fn with_vocab(channel_vocab: Vec<String>) -> Self {
        McConfig {
            max_group_size: DEFAULT_MAX_GROUP,
            attn_layers: 2,
            attn_heads: 4,
            channel_vocab,
        }
    }

    pub fn validate(&self, codec: &CodecConfig) -> Result<()> {
        if self.max_group_size == 0 || self.max_group_size > DEFAULT_MAX_GROUP {
            return Err(Error::Config(format!(
                "max_group_size {} outside 1..={DEFAULT_MAX_GROUP}",
                self.max_group_size
            )));
        }
        if self.attn_layers == 0 || self.attn_heads == 0 {
            return Err(Error::Config("need at least one attention layer/head".into()));
        }
        if codec.hidden_dim % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by {} heads",
                codec.hidden_dim, self.attn_heads
            )));
        }
        if self.channel_vocab.is_empty() {
            return Err(Error::Config("empty channel vocabulary".into()));
        }
        Ok(())
    }

    pub fn width(&self, codec: &CodecConfig) -> usize {
        codec.hidden_dim * self.max_group_size
    }

    pub fn vocab_index(&self, name: &str) -> Result<usize> {
        self.channel_vocab
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| {
                Error::Vocabulary(format!("channel {name:?} not in the model's channel vocabulary"))
            })
    }

    /// Sort member names into canonical (vocabulary) order.
    pub fn canonical_order(&self, members: &[String]) -> Result<Vec<String>> {
        let mut indexed: Vec<(usize, String)> = members
            .iter()
            .map(|m| self.vocab_index(m).map(|i| (i, m.clone())))
            .collect::<Result<_>>()?;
        indexed.sort();
        Ok(indexed.into_iter().map(|(_, m)| m).collect())
    }
}

/// Attention/projection adapter around the backbone plus the style and
/// positional tables.
#[derive(Debug, Clone)]
pub struct Mc {
    pub config: McConfig,
}

impl Mc {
    pub fn new(config: McConfig, codec: &CodecConfig) -> Result<Self> {
        config.validate(codec)?;
        Ok(Mc { config })
    }

    pub fn init_params(&self, codec: &CodecConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let h = codec.hidden_dim;
        let w = self.config.width(codec);
        store.init_normal("mc.pos.table", vec![self.config.channel_vocab.len(), h], 0.02, rng);
        for l in 0..self.config.attn_layers {
            let p = format!("mc.attn{l}");
            store.init_const(format!("{p}.ln1.gamma"), vec![w], 1.0);
            store.init_const(format!("{p}.ln1.beta"), vec![w], 0.0);
            for proj in ["q", "k", "v", "o"] {
                store.init_normal(
                    format!("{p}.{proj}.w"),
                    vec![w, w],
                    1.0 / (w as f32).sqrt(),
                    rng,
                );
                store.init_const(format!("{p}.{proj}.b"), vec![w], 0.0);
            }
            store.init_const(format!("{p}.ln2.gamma"), vec![w], 1.0);
            store.init_const(format!("{p}.ln2.beta"), vec![w], 0.0);
            store.init_normal(format!("{p}.mlp.w1"), vec![w, 2 * w], 1.0 / (w as f32).sqrt(), rng);
            store.init_const(format!("{p}.mlp.b1"), vec![2 * w], 0.0);
            store.init_normal(
                format!("{p}.mlp.w2"),
                vec![2 * w, w],
                1.0 / ((2 * w) as f32).sqrt(),
                rng,
            );
            store.init_const(format!("{p}.mlp.b2"), vec![w], 0.0);
        }
        store.init_normal("mc.proj.w", vec![w, h], 1.0 / (w as f32).sqrt(), rng);
        store.init_const("mc.proj.b", vec![h], 0.0);
        // styles start at identity so pretrained decoding is unchanged
        for name in &self.config.channel_vocab {
            for (j, width) in codec.decoder_block_widths().iter().enumerate() {
                store.init_const(style_name(name, j, "scale"), vec![*width], 1.0);
                store.init_const(style_name(name, j, "bias"), vec![*width], 0.0);
            }
        }
    }

    pub fn param_names(&self, codec: &CodecConfig) -> Vec<String> {
        let mut names = vec!["mc.pos.table".to_string()];
        for l in 0..self.config.attn_layers {
            let p = format!("mc.attn{l}");
            names.push(format!("{p}.ln1.gamma"));
            names.push(format!("{p}.ln1.beta"));
            for proj in ["q", "k", "v", "o"] {
                names.push(format!("{p}.{proj}.w"));
                names.push(format!("{p}.{proj}.b"));
            }
            names.push(format!("{p}.ln2.gamma"));
            names.push(format!("{p}.ln2.beta"));
            names.push(format!("{p}.mlp.w1"));
            names.push(format!("{p}.mlp.b1"));
            names.push(format!("{p}.mlp.w2"));
            names.push(format!("{p}.mlp.b2"));
        }
        names.push("mc.proj.w".into());
        names.push("mc.proj.b".into());
        for name in &self.config.channel_vocab {
            for j in 0..codec.n_blocks() {
                names.push(style_name(name, j, "scale"));
                names.push(style_name(name, j, "bias"));
            }
        }
        names
    }

    /// Add the channel's positional embedding to `[1,Tf,h]` frames.
    pub fn add_pos_embedding(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        frames: Tid,
        channel: &str,
    ) -> Result<Tid> {
        let idx = self.config.vocab_index(channel)?;
        let table = t.param(store, "mc.pos.table");
        let row = t.gather_row(table, idx);
        Ok(t.bias_last(frames, row))
    }

    /// Concatenate per-slot latents (zero-padding the absent slots), run the
    /// slot-masked attention stack, and project to `[1,Tf,hidden]`.
    ///
    /// `slots` are `[1,Tf,h]` nodes for the real members in canonical order.
    pub fn fuse_graph(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        codec: &CodecConfig,
        slots: &[Tid],
    ) -> Tid {
        let h = codec.hidden_dim;
        let s_max = self.config.max_group_size;
        let g = slots.len();
        assert!(g >= 1 && g <= s_max, "group size {g} outside 1..={s_max}");
        let tf = t.shape(slots[0])[1];
        let mut parts: Vec<Tid> = slots.to_vec();
        for _ in g..s_max {
            let zero = t.constant(vec![0.0; tf * h], vec![1, tf, h]);
            parts.push(zero);
        }
        let mut x = t.concat_last(&parts); // [1, Tf, W]
        let w = self.config.width(codec);
        let mut mask = vec![0.0f32; w];
        for slot in 0..g {
            for i in 0..h {
                mask[slot * h + i] = 1.0;
            }
        }
        let mut mask2 = vec![0.0f32; 2 * w];
        for slot in 0..g {
            for i in 0..2 * h {
                mask2[slot * 2 * h + i] = 1.0;
            }
        }
        let heads = self.config.attn_heads;
        let dh = h / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        for l in 0..self.config.attn_layers {
            let p = format!("mc.attn{l}");
            // attention sublayer (pre-norm)
            let g1 = t.param(store, &format!("{p}.ln1.gamma"));
            let b1 = t.param(store, &format!("{p}.ln1.beta"));
            let ln = t.block_layer_norm(x, g1, b1, h);
            let u = t.mask_last(ln, mask.clone());
            let q = self.qkv(t, store, &format!("{p}.q"), u, &mask);
            let k = self.qkv(t, store, &format!("{p}.k"), u, &mask);
            let v = self.qkv(t, store, &format!("{p}.v"), u, &mask);
            // heads live inside slots: groups = slots * heads
            let qh = t.split_groups(q, s_max * heads); // [S*H, Tf, dh]
            let kh = t.split_groups(k, s_max * heads);
            let vh = t.split_groups(v, s_max * heads);
            let scores = t.bmm(qh, kh, true);
            let scores = t.scale(scores, scale);
            let attn = t.softmax_last(scores);
            let av = t.bmm(attn, vh, false);
            let merged = t.merge_groups(av, s_max * heads); // [1, Tf, W]
            let wo = t.param(store, &format!("{p}.o.w"));
            let bo = t.param(store, &format!("{p}.o.b"));
            let proj = t.linear(merged, wo);
            let proj = t.bias_last(proj, bo);
            let proj = t.mask_last(proj, mask.clone());
            x = t.add(x, proj);
            // MLP sublayer
            let g2 = t.param(store, &format!("{p}.ln2.gamma"));
            let b2 = t.param(store, &format!("{p}.ln2.beta"));
            let ln2 = t.block_layer_norm(x, g2, b2, h);
            let u2 = t.mask_last(ln2, mask.clone());
            let w1 = t.param(store, &format!("{p}.mlp.w1"));
            let bb1 = t.param(store, &format!("{p}.mlp.b1"));
            let hid = t.linear(u2, w1);
            let hid = t.bias_last(hid, bb1);
            let hid = t.elu(hid);
            let hid = t.mask_last(hid, mask2.clone());
            let w2 = t.param(store, &format!("{p}.mlp.w2"));
            let bb2 = t.param(store, &format!("{p}.mlp.b2"));
            let out = t.linear(hid, w2);
            let out = t.bias_last(out, bb2);
            let out = t.mask_last(out, mask.clone());
            x = t.add(x, out);
        }
        let pw = t.param(store, "mc.proj.w");
        let pb = t.param(store, "mc.proj.b");
        let y = t.linear(x, pw);
        t.bias_last(y, pb)
    }

    fn qkv(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        u: Tid,
        mask: &[f32],
    ) -> Tid {
        let w = t.param(store, &format!("{prefix}.w"));
        let b = t.param(store, &format!("{prefix}.b"));
        let y = t.linear(u, w);
        let y = t.bias_last(y, b);
        t.mask_last(y, mask.to_vec())
    }

    /// Style (scale, bias) tape nodes for one channel, one pair per decoder
    /// block.
    pub fn style_nodes(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        codec: &CodecConfig,
        channel: &str,
    ) -> Result<Vec<(Tid, Tid)>> {
        self.config.vocab_index(channel)?;
        (0..codec.n_blocks())
            .map(|j| {
                let sname = style_name(channel, j, "scale");
                let bname = style_name(channel, j, "bias");
                if !store.contains(&sname) {
                    return Err(Error::Vocabulary(format!(
                        "channel {channel:?} has no style entry"
                    )));
                }
                let s = t.param(store, &sname);
                let b = t.param(store, &bname);
                Ok((s, b))
            })
            .collect()
    }
}

pub fn style_name(channel: &str, block: usize, kind: &str) -> String {
    format!("mc.style.{channel}.block{block}.{kind}")
}

/// Encode one channel group into a single shared token stream.
///
/// `windows` pairs member names with equal-length normalized windows (any
/// input order; members are sorted canonically).
pub fn encode_group(
    codec: &Codec,
    mc: &Mc,
    rvq: &RvqStack,
    store: &ParamStore,
    windows: &[(String, Vec<f32>)],
    sample_rate_hz: f64,
    depth: usize,
) -> Result<(TokenStream, Array2<f32>)> {
    if windows.is_empty() {
        return Err(Error::Config("empty group".into()));
    }
    if windows.len() > mc.config.max_group_size {
        return Err(Error::Config(format!(
            "group of {} exceeds max size {}",
            windows.len(),
            mc.config.max_group_size
        )));
    }
    let n = windows[0].1.len();
    if windows.iter().any(|(_, w)| w.len() != n) {
        return Err(Error::Shape("group members have unequal window lengths".into()));
    }
    let names: Vec<String> = windows.iter().map(|(n, _)| n.clone()).collect();
    let ordered = mc.config.canonical_order(&names)?;
    let frames = codec.config.frames_for(n);
    let padded_len = frames * codec.config.stride_total;

    let mut t = Tape::new();
    let mut slots = Vec::with_capacity(ordered.len());
    for name in &ordered {
        let data = &windows.iter().find(|(m, _)| m == name).unwrap().1;
        let mut padded = data.clone();
        padded.resize(padded_len, 0.0);
        let x = t.constant(padded, vec![1, 1, padded_len]);
        let z = codec.encode_graph(&mut t, store, x); // [1,h,Tf]
        let zf = t.transpose12(z); // [1,Tf,h]
        let with_pos = mc.add_pos_embedding(&mut t, store, zf, name)?;
        slots.push(with_pos);
    }
    let fused = mc.fuse_graph(&mut t, store, &codec.config, &slots); // [1,Tf,h]
    let h = codec.config.hidden_dim;
    let fv = t.value(fused);
    let mut latents = Array2::zeros((frames, h));
    for f in 0..frames {
        for c in 0..h {
            latents[[f, c]] = fv[f * h + c];
        }
    }
    let q = rvq.quantize(
        store,
        &latents,
        depth,
        StreamMeta {
            stride_total: codec.config.stride_total,
            presented_rate_hz: sample_rate_hz,
            native_rate_hz: sample_rate_hz,
            members: ordered,
        },
    )?;
    Ok((q.tokens, latents))
}

/// Decode a group stream into one waveform per member channel via the
/// member's style vector.
pub fn decode_group(
    codec: &Codec,
    mc: &Mc,
    rvq: &RvqStack,
    store: &ParamStore,
    tokens: &TokenStream,
) -> Result<Vec<(String, Vec<f32>)>> {
    if tokens.members.is_empty() {
        return Err(Error::Vocabulary("token stream carries no member names".into()));
    }
    let latent = rvq.dequantize(store, tokens)?; // [Tf, h]
    let frames = latent.nrows();
    let h = latent.ncols();
    let mut zv = vec![0.0f32; h * frames];
    for c in 0..h {
        for f in 0..frames {
            zv[c * frames + f] = latent[[f, c]];
        }
    }
    let mut out = Vec::with_capacity(tokens.members.len());
    for name in &tokens.members {
        let mut t = Tape::new();
        let z = t.constant(zv.clone(), vec![1, h, frames]);
        let styles = mc.style_nodes(&mut t, store, &codec.config, name)?;
        let y = codec.decode_graph(&mut t, store, z, Some(&styles));
        out.push((name.clone(), t.value(y).to_vec()));
    }
    Ok(out)
}

/// Evaluation mode that runs the multi-channel model on singleton groups.
pub fn run_single_channel_mode(
    codec: &Codec,
    mc: &Mc,
    rvq: &RvqStack,
    store: &ParamStore,
    window: &[f32],
    channel: &str,
    sample_rate_hz: f64,
    depth: usize,
) -> Result<(TokenStream, Vec<f32>)> {
    let (tokens, _) = encode_group(
        codec,
        mc,
        rvq,
        store,
        &[(channel.to_string(), window.to_vec())],
        sample_rate_hz,
        depth,
    )?;
    let decoded = decode_group(codec, mc, rvq, store, &tokens)?;
    let (_, wave) = decoded.into_iter().next().expect("singleton decode");
    Ok((tokens, wave))
}

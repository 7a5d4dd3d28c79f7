//! Model assembly: backbone + quantizer (+ optional multi-channel adapters)
//! bundled with their parameter store, checkpoint persistence with the
//! configuration embedded in the manifest, partial loading from donor
//! checkpoints, and per-mode window encoding/decoding.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codec, CodecConfig, LatentSequence};
use crate::error::{Error, Result};
use crate::grouping::{self, GroupLayout, SamplerParams};
use crate::multichannel::{self, Mc, McConfig};
use crate::nn::{load_matching, Checkpoint, LoadReport, ParamStore};
use crate::preprocess::Window;
use crate::rvq::{RvqConfig, RvqStack, StreamMeta};
use crate::tokens::TokenStream;

/// How a multi-channel window is mapped to token streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    /// One independent stream per channel through the plain backbone.
    Sc,
    /// One stream per channel through the multi-channel model (singleton
    /// groups).
    ScMc,
    /// Spatially sampled random groups (fixed seed at evaluation).
    RandomGroups,
    /// Fixed published layout for the named task.
    ManualGroups(String),
}

impl Mode {
    pub fn parse(s: &str, task: Option<&str>) -> Result<Mode> {
        match s {
            "sc" => Ok(Mode::Sc),
            "sc-mc" => Ok(Mode::ScMc),
            "random-groups" => Ok(Mode::RandomGroups),
            "manual-groups" => Ok(Mode::ManualGroups(
                task.unwrap_or("epilepsy").to_string(),
            )),
            other => Err(Error::Usage(format!(
                "unknown mode {other:?} (expected sc | sc-mc | random-groups | manual-groups)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Sc => "sc",
            Mode::ScMc => "sc-mc",
            Mode::RandomGroups => "random-groups",
            Mode::ManualGroups(_) => "manual-groups",
        }
    }

    pub fn needs_mc(&self) -> bool {
        !matches!(self, Mode::Sc)
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    pub rvq: RvqConfig,
    pub mc: Option<McConfig>,
}

impl ModelConfig {
    pub fn desk_sc() -> Self {
        let codec = CodecConfig::desk();
        let rvq = RvqConfig::default_stack(codec.hidden_dim);
        ModelConfig { codec, rvq, mc: None }
    }

    pub fn desk_mc(channel_vocab: Vec<String>) -> Self {
        let codec = CodecConfig::desk();
        let rvq = RvqConfig::default_stack(codec.hidden_dim);
        ModelConfig {
            codec,
            rvq,
            mc: Some(McConfig::with_vocab(channel_vocab)),
        }
    }
}

pub struct CodecModel {
    pub codec: Codec,
    pub rvq: RvqStack,
    pub mc: Option<Mc>,
    pub store: ParamStore,
}

impl CodecModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let codec = Codec::new(config.codec.clone())?;
        let rvq = RvqStack::new(&config.rvq)?;
        let mc = match config.mc {
            Some(mcfg) => Some(Mc::new(mcfg, &codec.config)?),
            None => None,
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        codec.init_params(&mut store, &mut rng);
        rvq.init_params(&mut store, &mut rng);
        if let Some(mc) = &mc {
            mc.init_params(&codec.config, &mut store, &mut rng);
        }
        for i in 0..rvq.n_books() {
            store.insert_frozen(
                format!("rvq.book{i}.usage"),
                vec![0.0; rvq.vocab_sizes[i]],
                vec![rvq.vocab_sizes[i]],
            );
        }
        Ok(CodecModel { codec, rvq, mc, store })
    }

    fn meta(&self) -> Vec<(String, String)> {
        let c = &self.codec.config;
        let strides: Vec<String> = c.block_strides.iter().map(|s| s.to_string()).collect();
        let mut meta = vec![
            ("format".into(), "eegcodec-model".into()),
            ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ("codec.stride_total".into(), c.stride_total.to_string()),
            ("codec.block_strides".into(), strides.join(",")),
            ("codec.hidden_dim".into(), c.hidden_dim.to_string()),
            ("codec.base_width".into(), c.base_width.to_string()),
            ("codec.activation".into(), c.activation.as_str().into()),
            ("rvq.n_books".into(), self.rvq.n_books().to_string()),
            ("rvq.code_dim".into(), self.rvq.code_dim.to_string()),
            ("rvq.factorized".into(), self.rvq.factorized.to_string()),
            ("rvq.active_depth".into(), self.rvq.active_depth.to_string()),
        ];
        if let Some(mc) = &self.mc {
            meta.push(("mc.max_group_size".into(), mc.config.max_group_size.to_string()));
            meta.push(("mc.attn_layers".into(), mc.config.attn_layers.to_string()));
            meta.push(("mc.attn_heads".into(), mc.config.attn_heads.to_string()));
            meta.push(("mc.channel_vocab".into(), mc.config.channel_vocab.join("\t")));
        }
        meta
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut store = self.store.clone();
        for i in 0..self.rvq.n_books() {
            let usage: Vec<f32> = self.rvq.usage[i].iter().map(|&u| u as f32).collect();
            let len = usage.len();
            store.get_mut(&format!("rvq.book{i}.usage")).map(|p| {
                p.value = usage.clone();
                p.shape = vec![len];
            });
        }
        store.save(path, &self.meta())
    }

    fn config_from_meta(ckpt: &Checkpoint) -> Result<ModelConfig> {
        let get = |key: &str| -> Result<&String> {
            ckpt.meta
                .get(key)
                .ok_or_else(|| Error::Format(format!("checkpoint missing meta key {key}")))
        };
        let parse = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("bad meta value for {key}")))
        };
        let codec = CodecConfig {
            stride_total: parse("codec.stride_total")?,
            block_strides: get("codec.block_strides")?
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::Format("bad stride".into())))
                .collect::<Result<_>>()?,
            hidden_dim: parse("codec.hidden_dim")?,
            base_width: parse("codec.base_width")?,
            activation: crate::codec::Activation::parse(get("codec.activation")?)?,
        };
        let n_books = parse("rvq.n_books")?;
        // vocabulary sizes come from the stored book shapes (merging shrinks them)
        let mut vocab = 1024;
        if let Some((_, shape)) = ckpt.tensors.get("rvq.book0.embed") {
            vocab = shape[0];
        }
        let rvq = RvqConfig {
            n_books,
            vocab,
            code_dim: parse("rvq.code_dim")?,
            hidden_dim: codec.hidden_dim,
            factorized: get("rvq.factorized")? == "true",
        };
        let mc = if ckpt.meta.contains_key("mc.max_group_size") {
            Some(McConfig {
                max_group_size: parse("mc.max_group_size")?,
                attn_layers: parse("mc.attn_layers")?,
                attn_heads: parse("mc.attn_heads")?,
                channel_vocab: get("mc.channel_vocab")?
                    .split('\t')
                    .map(|s| s.to_string())
                    .collect(),
            })
        } else {
            None
        };
        Ok(ModelConfig { codec, rvq, mc })
    }

    /// Load a model checkpoint written by [`CodecModel::save`].
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ckpt = Checkpoint::load(&path)?;
        let config = Self::config_from_meta(&ckpt)?;
        let codec = Codec::new(config.codec.clone())?;
        let mc = match config.mc {
            Some(mcfg) => Some(Mc::new(mcfg, &codec.config)?),
            None => None,
        };
        let mut store = ParamStore::new();
        for (name, (value, shape)) in &ckpt.tensors {
            if name.ends_with(".usage") {
                store.insert_frozen(name.clone(), value.clone(), shape.clone());
            } else {
                store.insert(name.clone(), value.clone(), shape.clone());
            }
        }
        // reconstruct stack state from tensor shapes + usage
        let mut vocab_sizes = Vec::with_capacity(config.rvq.n_books);
        for i in 0..config.rvq.n_books {
            let name = RvqStack::book_name(i);
            let p = store
                .get(&name)
                .ok_or_else(|| Error::Corruption(format!("checkpoint missing {name}")))?;
            vocab_sizes.push(p.shape[0]);
        }
        let active_depth: usize = ckpt
            .meta
            .get("rvq.active_depth")
            .and_then(|v| v.parse().ok())
            .unwrap_or(config.rvq.n_books);
        let usage: Vec<Vec<u64>> = (0..config.rvq.n_books)
            .map(|i| {
                store
                    .get(&format!("rvq.book{i}.usage"))
                    .map(|p| p.value.iter().map(|&v| v.max(0.0) as u64).collect())
                    .unwrap_or_else(|| vec![0; vocab_sizes[i]])
            })
            .collect();
        let last_used = vocab_sizes.iter().map(|&v| vec![0; v]).collect();
        let rvq = RvqStack {
            code_dim: config.rvq.code_dim,
            hidden_dim: config.rvq.hidden_dim,
            factorized: config.rvq.factorized,
            vocab_sizes,
            active_depth,
            usage,
            last_used,
        };
        // backbone tensors must exist
        for name in codec.param_names() {
            if !store.contains(&name) {
                return Err(Error::Corruption(format!("checkpoint missing tensor {name}")));
            }
        }
        Ok(CodecModel { codec, rvq, mc, store })
    }

    /// Build a freshly initialized model for `config`, then overlay every
    /// name/shape-matched tensor from the donor checkpoint. Adapter tensors
    /// that the donor does not carry stay freshly initialized.
    pub fn load_pretrained(
        path: impl AsRef<std::path::Path>,
        config: ModelConfig,
        seed: u64,
    ) -> Result<(Self, LoadReport)> {
        let ckpt = Checkpoint::load(&path)?;
        let mut model = CodecModel::new(config, seed)?;
        let report = load_matching(&mut model.store, &ckpt)?;
        Ok((model, report))
    }

    /// Encode one single-channel window through the plain backbone.
    pub fn encode_sc(
        &self,
        window: &[f32],
        channel: &str,
        sample_rate_hz: f64,
        depth: usize,
    ) -> Result<TokenStream> {
        let latents = self.codec.encode(&self.store, window, sample_rate_hz)?;
        let q = self.rvq.quantize(
            &self.store,
            &latents.frames,
            depth,
            StreamMeta {
                stride_total: self.codec.config.stride_total,
                presented_rate_hz: sample_rate_hz,
                native_rate_hz: sample_rate_hz,
                members: vec![channel.to_string()],
            },
        )?;
        Ok(q.tokens)
    }

    /// Decode a single-channel stream (identity style).
    pub fn decode_sc(&self, tokens: &TokenStream) -> Result<Vec<f32>> {
        let latent = self.rvq.dequantize(&self.store, tokens)?;
        let seq = LatentSequence {
            frames: latent,
            stride_total: tokens.stride_total,
            source_rate_hz: tokens.presented_rate_hz,
        };
        self.codec.decode(&self.store, &seq, None)
    }

    fn layout_for(&self, window: &Window, mode: &Mode, seed: u64) -> Result<GroupLayout> {
        let names = window.source_channels.clone();
        match mode {
            Mode::Sc | Mode::ScMc => Ok(GroupLayout {
                groups: names.iter().map(|n| vec![n.clone()]).collect(),
                provenance: grouping::Provenance::Manual { task: "singleton".into() },
            }),
            Mode::RandomGroups => {
                let metas: Vec<crate::data_io::ChannelMeta> =
                    names.iter().map(crate::data_io::ChannelMeta::new).collect();
                grouping::sample_random_layout(&metas, &SamplerParams { seed, ..Default::default() })
            }
            Mode::ManualGroups(task) => {
                let layout = grouping::manual_layout(task)?;
                let mut restricted = grouping::restrict_layout(&layout, &names);
                // keep the partition property for channels the table ignores
                let covered: std::collections::HashSet<String> =
                    restricted.groups.iter().flatten().cloned().collect();
                let leftovers: Vec<String> =
                    names.iter().filter(|n| !covered.contains(*n)).cloned().collect();
                for chunk in leftovers.chunks(grouping::MAX_GROUP_SIZE) {
                    restricted.groups.push(chunk.to_vec());
                }
                Ok(restricted)
            }
        }
    }

    /// Encode a (possibly multi-channel) window under the given mode.
    pub fn encode_window(
        &self,
        window: &Window,
        mode: &Mode,
        depth: usize,
        seed: u64,
    ) -> Result<Vec<TokenStream>> {
        if mode.needs_mc() && self.mc.is_none() {
            return Err(Error::Config(format!(
                "mode {} needs a multi-channel model",
                mode.as_str()
            )));
        }
        let layout = self.layout_for(window, mode, seed)?;
        let mut streams = Vec::new();
        for group in &layout.groups {
            match mode {
                Mode::Sc => {
                    for name in group {
                        let row = self.channel_row(window, name)?;
                        streams.push(self.encode_sc(
                            &row,
                            name,
                            window.sample_rate_hz,
                            depth,
                        )?);
                    }
                }
                _ => {
                    let mc = self.mc.as_ref().expect("checked above");
                    let members: Vec<(String, Vec<f32>)> = group
                        .iter()
                        .map(|name| Ok((name.clone(), self.channel_row(window, name)?)))
                        .collect::<Result<_>>()?;
                    let (tokens, _) = multichannel::encode_group(
                        &self.codec,
                        mc,
                        &self.rvq,
                        &self.store,
                        &members,
                        window.sample_rate_hz,
                        depth,
                    )?;
                    streams.push(tokens);
                }
            }
        }
        Ok(streams)
    }

    /// Decode streams back into a `[channels x samples]` array ordered like
    /// `window.source_channels`.
    pub fn reconstruct_window(&self, window: &Window, streams: &[TokenStream]) -> Result<Array2<f32>> {
        let names = &window.source_channels;
        let n_samples = window.data.ncols();
        let mut out = Array2::zeros((names.len(), n_samples));
        let mut filled = vec![false; names.len()];
        for tokens in streams {
            let decoded: Vec<(String, Vec<f32>)> = if tokens.members.len() == 1 && self.mc.is_none()
            {
                vec![(tokens.members[0].clone(), self.decode_sc(tokens)?)]
            } else if self.mc.is_none() {
                return Err(Error::Config("grouped stream needs a multi-channel model".into()));
            } else {
                multichannel::decode_group(
                    &self.codec,
                    self.mc.as_ref().unwrap(),
                    &self.rvq,
                    &self.store,
                    tokens,
                )?
            };
            for (name, wave) in decoded {
                let Some(idx) = names.iter().position(|n| *n == name) else {
                    return Err(Error::Data(format!(
                        "decoded channel {name:?} not present in the window"
                    )));
                };
                for i in 0..n_samples.min(wave.len()) {
                    out[[idx, i]] = wave[i];
                }
                filled[idx] = true;
            }
        }
        if let Some(missing) = filled.iter().position(|&f| !f) {
            return Err(Error::Data(format!(
                "no stream decoded channel {:?}",
                names[missing]
            )));
        }
        Ok(out)
    }

    /// Reconstruct a window end to end under a mode (encode + decode).
    pub fn round_trip_window(
        &self,
        window: &Window,
        mode: &Mode,
        depth: usize,
        seed: u64,
    ) -> Result<Array2<f32>> {
        let streams = self.encode_window(window, mode, depth, seed)?;
        self.reconstruct_window(window, &streams)
    }

    fn channel_row(&self, window: &Window, name: &str) -> Result<Vec<f32>> {
        let idx = window
            .source_channels
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("window has no channel {name:?}")))?;
        Ok(window.data.row(idx).to_vec())
    }

    /// Depth used when the caller does not override it.
    pub fn default_depth(&self) -> usize {
        self.rvq.active_depth
    }
}

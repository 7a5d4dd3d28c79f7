//! Training: composite loss, two-phase adversarial schedule with a
//! divergence watchdog, waveform-weight annealing, and the three regimes
//! (scratch / pretrained-frozen / fine-tune).
//!
//! Per step: sample a batch (grouped training resamples the channel layout
//! every step), build the forward graph, apply the current weights, update
//! with Adam (generator and discriminator use separate optimizers), track
//! codebook usage and re-seed dead entries, and append one metrics line.

pub mod discriminator;
pub mod losses;

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grouping::{self, SamplerParams};
use crate::model::CodecModel;
use crate::nn::{Adam, Tape, Tid};
use crate::preprocess::Window;
use discriminator::{lsgan_toward, Discriminator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Scratch,
    Finetune,
    /// Evaluation-only: forward passes, no parameter updates at all.
    Frozen,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(Regime::Scratch),
            "finetune" => Ok(Regime::Finetune),
            "frozen" => Ok(Regime::Frozen),
            other => Err(Error::Usage(format!(
                "unknown regime {other:?} (expected scratch | finetune | frozen)"
            ))),
        }
    }
}

/// What one training sample looks like.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainKind {
    /// Independent single-channel windows through the plain backbone.
    SingleChannel,
    /// Multi-channel windows, random layouts resampled every step.
    GroupedRandom,
    /// Multi-channel windows under a fixed manual layout.
    GroupedManual(String),
}

#[derive(Debug, Clone)]
pub struct LossWeights {
    pub w_waveform_start: f32,
    pub w_waveform_end: f32,
    pub w_mstft: f32,
    pub w_spec: f32,
    pub w_adv: f32,
    pub w_feat: f32,
    pub w_commit: f32,
    pub w_codebook: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_waveform_start: 10.0,
            w_waveform_end: 1.0,
            w_mstft: 1.0,
            w_spec: 1.0,
            w_adv: 0.25,
            w_feat: 2.0,
            w_commit: 0.25,
            w_codebook: 1.0,
        }
    }
}

impl LossWeights {
    /// Linear anneal from start to end over the first `anneal_frac` of
    /// training, flat afterwards.
    pub fn waveform_at(&self, step: usize, total_steps: usize, anneal_frac: f64) -> f32 {
        let end = (total_steps as f64 * anneal_frac).max(1.0);
        let p = (step as f64 / end).min(1.0);
        (self.w_waveform_start as f64
            + (self.w_waveform_end as f64 - self.w_waveform_start as f64) * p) as f32
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Fraction of steps that keep the adversarial terms (phase 1).
    pub phase1_frac: f64,
    pub anneal_frac: f64,
    pub regime: Regime,
    pub kind: TrainKind,
    /// RVQ depth used during training; 0 means the full stack.
    pub depth: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Extra checkpoints every N steps (0 = final only).
    pub checkpoint_every: usize,
    /// Codebook entries unused for this many steps get re-seeded.
    pub reseed_stale_after: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            beta1: 0.8,
            beta2: 0.999,
            batch_size: 4,
            total_steps: 100,
            phase1_frac: 0.5,
            anneal_frac: 0.2,
            regime: Regime::Finetune,
            kind: TrainKind::SingleChannel,
            depth: 0,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            reseed_stale_after: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: usize,
    pub phase: u8,
    pub total: f64,
    pub wave: f64,
    pub mstft: f64,
    pub spec: f64,
    pub commit: f64,
    pub codebook: f64,
    pub adv: f64,
    pub feat: f64,
    pub w_wave: f64,
    pub w_adv: f64,
    pub w_feat: f64,
    pub entropy: f64,
}

impl StepMetrics {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
            self.step,
            self.phase,
            self.total,
            self.wave,
            self.mstft,
            self.spec,
            self.commit,
            self.codebook,
            self.adv,
            self.feat,
            self.w_wave,
            self.w_adv,
            self.w_feat,
            self.entropy
        )
    }
}

pub const METRICS_HEADER: &str =
    "# step phase total wave mstft spec commit codebook adv feat w_wave w_adv w_feat entropy";

pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub steps: Vec<StepMetrics>,
    pub events: Vec<String>,
}

struct Watchdog {
    history: VecDeque<f64>,
    consecutive: usize,
    forced: bool,
}

impl Watchdog {
    fn new() -> Self {
        Watchdog { history: VecDeque::new(), consecutive: 0, forced: false }
    }

    fn observe(&mut self, gen_adv: f64) {
        if self.history.len() >= 10 {
            let mut sorted: Vec<f64> = self.history.iter().copied().collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = sorted[sorted.len() / 2];
            if median > 0.0 && gen_adv > 100.0 * median {
                self.consecutive += 1;
            } else {
                self.consecutive = 0;
            }
            if self.consecutive >= 50 {
                self.forced = true;
            }
        }
        self.history.push_back(gen_adv);
        if self.history.len() > 100 {
            self.history.pop_front();
        }
    }
}

struct StepGraph {
    x: Tid,
    y: Tid,
    commit: Tid,
    codebook: Tid,
    codes: Vec<Vec<u32>>,
    /// Code-space frames entering the quantizer (`[B*Tf, code_dim]` values).
    projected: Tid,
}

/// Single-channel training samples: one (window, channel) pair each.
fn sc_samples(windows: &[Window]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (wi, w) in windows.iter().enumerate() {
        for ci in 0..w.data.nrows() {
            out.push((wi, ci));
        }
    }
    out
}

fn build_sc_graph(
    t: &mut Tape,
    model: &CodecModel,
    windows: &[Window],
    batch: &[(usize, usize)],
    depth: usize,
) -> StepGraph {
    let n = windows[batch[0].0].data.ncols();
    let b = batch.len();
    let mut xv = Vec::with_capacity(b * n);
    for &(wi, ci) in batch {
        xv.extend(windows[wi].data.row(ci).iter().copied());
    }
    let x = t.constant(xv, vec![b, 1, n]);
    let z = model.codec.encode_graph(t, &model.store, x);
    let zf = t.transpose12(z);
    let (q, commit, codebook, codes, projected) =
        model.rvq.quantize_graph(t, &model.store, zf, depth);
    let zq = t.transpose12(q);
    let y = model.codec.decode_graph(t, &model.store, zq, None);
    let xb = t.reshape(x, vec![b, n]);
    let yb = t.reshape(y, vec![b, n]);
    StepGraph { x: xb, y: yb, commit, codebook, codes, projected }
}

fn build_mc_graph(
    t: &mut Tape,
    model: &CodecModel,
    windows: &[Window],
    batch: &[usize],
    kind: &TrainKind,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepGraph> {
    let mc = model
        .mc
        .as_ref()
        .ok_or_else(|| Error::Config("grouped training needs a multi-channel model".into()))?;
    let n = windows[batch[0]].data.ncols();
    let mut group_nodes: Vec<Tid> = Vec::new();
    // (group index, member name, source row) for the decode pass
    let mut members: Vec<(usize, String, Vec<f32>)> = Vec::new();
    for &wi in batch {
        let w = &windows[wi];
        let layout = match kind {
            TrainKind::GroupedRandom => {
                let metas: Vec<crate::data_io::ChannelMeta> = w
                    .source_channels
                    .iter()
                    .map(crate::data_io::ChannelMeta::new)
                    .collect();
                grouping::sample_random_layout_with(
                    &metas,
                    &SamplerParams { seed: 0, ..Default::default() },
                    rng,
                )?
            }
            TrainKind::GroupedManual(task) => {
                let full = grouping::manual_layout(task)?;
                grouping::restrict_layout(&full, &w.source_channels)
            }
            TrainKind::SingleChannel => unreachable!(),
        };
        for group in &layout.groups {
            let ordered = mc.config.canonical_order(group)?;
            let mut slots = Vec::with_capacity(ordered.len());
            for name in &ordered {
                let row_idx = w
                    .source_channels
                    .iter()
                    .position(|c| c == name)
                    .expect("layout covers window channels");
                let row: Vec<f32> = w.data.row(row_idx).to_vec();
                let xi = t.constant(row.clone(), vec![1, 1, n]);
                let z = model.codec.encode_graph(t, &model.store, xi);
                let zf = t.transpose12(z);
                let zp = mc.add_pos_embedding(t, &model.store, zf, name)?;
                slots.push(zp);
                members.push((group_nodes.len(), name.clone(), row));
            }
            let fused = mc.fuse_graph(t, &model.store, &model.codec.config, &slots);
            group_nodes.push(fused);
        }
    }
    let stacked = t.stack_first(&group_nodes); // [G, Tf, h]
    let (q, commit, codebook, codes, projected) =
        model.rvq.quantize_graph(t, &model.store, stacked, depth);
    let mut xs = Vec::with_capacity(members.len());
    let mut ys = Vec::with_capacity(members.len());
    for (gi, name, row) in &members {
        let latent = t.slice_first(q, *gi);
        let zq = t.transpose12(latent);
        let styles = mc.style_nodes(t, &model.store, &model.codec.config, name)?;
        let y = model.codec.decode_graph(t, &model.store, zq, Some(&styles));
        ys.push(t.reshape(y, vec![1, n]));
        let xi = t.constant(row.clone(), vec![1, n]);
        xs.push(xi);
    }
    let x = t.stack_first(&xs);
    let y = t.stack_first(&ys);
    Ok(StepGraph { x, y, commit, codebook, codes, projected })
}

fn usage_entropy(codes: &[Vec<u32>], vocab_sizes: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &v) in codes.iter().zip(vocab_sizes) {
        let mut counts = vec![0usize; v];
        for &c in row {
            counts[c as usize] += 1;
        }
        let n = row.len().max(1) as f64;
        let mut h = 0.0;
        for &c in &counts {
            if c > 0 {
                let p = c as f64 / n;
                h -= p * p.ln();
            }
        }
        total += h / (v as f64).ln().max(f64::MIN_POSITIVE);
    }
    total / codes.len().max(1) as f64
}

/// Train (or, for the frozen regime, evaluate) a model in place, writing a
/// metrics log and checkpoints under `out_dir`.
pub fn train(
    model: &mut CodecModel,
    windows: &[Window],
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
) -> Result<TrainOutput> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    if windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    if cfg.total_steps == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("total_steps and batch_size must be positive".into()));
    }
    let depth = if cfg.depth == 0 { model.rvq.n_books() } else { cfg.depth };
    if depth > model.rvq.n_books() {
        return Err(Error::Config(format!(
            "training depth {depth} exceeds stack depth {}",
            model.rvq.n_books()
        )));
    }
    let n = windows[0].data.ncols();
    if windows.iter().any(|w| w.data.ncols() != n) {
        return Err(Error::Shape("training windows have unequal lengths".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase1_steps = (cfg.total_steps as f64 * cfg.phase1_frac).floor() as usize;
    let disc = Discriminator;
    if phase1_steps > 0 && !model.store.contains("disc.res0.conv0.w") {
        disc.init_params(&mut model.store, &mut rng);
    }

    // Scratch runs seed codebooks from real latent statistics.
    if cfg.regime == Regime::Scratch {
        let samples = sc_samples(windows);
        let mut rows = Vec::new();
        for &(wi, ci) in samples.iter().take(8) {
            let row: Vec<f32> = windows[wi].data.row(ci).to_vec();
            let lat = model.codec.encode(&model.store, &row, windows[wi].sample_rate_hz)?;
            rows.push(model.rvq.project_in(&model.store, &lat.frames));
        }
        let total_rows: usize = rows.iter().map(|r| r.nrows()).sum();
        let mut pool = ndarray::Array2::zeros((total_rows, model.rvq.code_dim));
        let mut at = 0usize;
        for r in &rows {
            for row in r.rows() {
                for (c, &v) in row.iter().enumerate() {
                    pool[[at, c]] = v;
                }
                at += 1;
            }
        }
        model.rvq.init_books_from_latents(&mut model.store, &pool, &mut rng);
    }

    let mut gen_opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut disc_opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut watchdog = Watchdog::new();
    let metrics_path = out_dir.join("metrics.log");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(log, "{METRICS_HEADER}")?;
    let mut steps_out = Vec::with_capacity(cfg.total_steps);
    let mut events = Vec::new();
    let sc_pool = sc_samples(windows);

    for step in 0..cfg.total_steps {
        let phase: u8 = if step < phase1_steps && !watchdog.forced { 1 } else { 2 };
        let w_wave = cfg.weights.waveform_at(step, cfg.total_steps, cfg.anneal_frac) as f64;
        let (w_adv, w_feat) = if phase == 1 {
            (cfg.weights.w_adv as f64, cfg.weights.w_feat as f64)
        } else {
            (0.0, 0.0)
        };

        let mut t = Tape::new();
        let (graph, batch_desc) = match &cfg.kind {
            TrainKind::SingleChannel => {
                let batch: Vec<(usize, usize)> = (0..cfg.batch_size)
                    .map(|_| sc_pool[rng.gen_range(0..sc_pool.len())])
                    .collect();
                let desc: Vec<String> = batch
                    .iter()
                    .map(|(wi, ci)| format!("{}:{}", windows[*wi].origin.0, ci))
                    .collect();
                (build_sc_graph(&mut t, model, windows, &batch, depth), desc)
            }
            kind => {
                let batch: Vec<usize> = (0..cfg.batch_size)
                    .map(|_| rng.gen_range(0..windows.len()))
                    .collect();
                let desc: Vec<String> = batch
                    .iter()
                    .map(|wi| windows[*wi].origin.0.clone())
                    .collect();
                (
                    build_mc_graph(&mut t, model, windows, &batch, kind, depth, &mut rng)?,
                    desc,
                )
            }
        };

        let wave = losses::waveform_loss_graph(&mut t, graph.x, graph.y);
        let mstft = losses::multiscale_stft_loss_graph(&mut t, graph.x, graph.y);
        let spec = losses::spectrogram_loss_graph(&mut t, graph.x, graph.y, &losses::SPEC_SCALES);

        let mut adv_val = 0.0f64;
        let mut feat_val = 0.0f64;
        let mut gen_terms: Vec<(Tid, f32)> = vec![
            (wave, w_wave as f32),
            (graph.commit, cfg.weights.w_commit),
            (graph.codebook, cfg.weights.w_codebook),
        ];
        if let Some(m) = mstft {
            gen_terms.push((m, cfg.weights.w_mstft));
        }
        if let Some(s) = spec {
            gen_terms.push((s, cfg.weights.w_spec));
        }
        if phase == 1 {
            let fake = disc.forward_graph(&mut t, &model.store, graph.y);
            let real = disc.forward_graph(&mut t, &model.store, graph.x);
            if !fake.is_empty() {
                let inv = 1.0 / fake.len() as f32;
                let mut adv_terms = Vec::new();
                let mut feat_terms = Vec::new();
                for ((fake_feats, fake_score), (real_feats, _)) in fake.iter().zip(&real) {
                    adv_terms.push(lsgan_toward(&mut t, *fake_score, 1.0));
                    for (&ff, &rf) in fake_feats.iter().zip(real_feats) {
                        let target = t.detach(rf);
                        let d = t.sub(ff, target);
                        let a = t.abs(d);
                        feat_terms.push(t.mean_all(a));
                    }
                }
                let adv_sum = t.add_n(&adv_terms);
                let adv_node = t.scale(adv_sum, inv);
                let feat_sum = t.add_n(&feat_terms);
                let feat_node = t.scale(feat_sum, 1.0 / feat_terms.len().max(1) as f32);
                adv_val = t.scalar(adv_node) as f64;
                feat_val = t.scalar(feat_node) as f64;
                gen_terms.push((adv_node, cfg.weights.w_adv));
                gen_terms.push((feat_node, cfg.weights.w_feat));
            }
        }

        // weighted total (graph for backward; f64 recombination for the log)
        let scaled: Vec<Tid> = gen_terms
            .iter()
            .map(|&(node, w)| t.scale(node, w))
            .collect();
        let total_node = t.add_n(&scaled);

        let wave_val = t.scalar(wave) as f64;
        let mstft_val = mstft.map(|m| t.scalar(m) as f64).unwrap_or(0.0);
        let spec_val = spec.map(|s| t.scalar(s) as f64).unwrap_or(0.0);
        let commit_val = t.scalar(graph.commit) as f64;
        let codebook_val = t.scalar(graph.codebook) as f64;
        let total_val = w_wave * wave_val
            + cfg.weights.w_mstft as f64 * mstft_val
            + cfg.weights.w_spec as f64 * spec_val
            + cfg.weights.w_commit as f64 * commit_val
            + cfg.weights.w_codebook as f64 * codebook_val
            + w_adv * adv_val
            + w_feat * feat_val;

        if !total_val.is_finite() {
            let dump = out_dir.join("diverged_batch.txt");
            std::fs::write(&dump, format!("step {step}\nbatch {batch_desc:?}\n"))?;
            return Err(Error::Data(format!(
                "non-finite loss at step {step}; offending batch ids dumped to {}",
                dump.display()
            )));
        }

        if cfg.regime != Regime::Frozen {
            t.backward(total_node);
            let mut gen_grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
            for (name, grad) in t.param_grads() {
                if !name.starts_with("disc.") {
                    gen_grads.insert(name, grad);
                }
            }
            gen_opt.step(&mut model.store, &gen_grads);

            if phase == 1 {
                // Discriminator update on its own tape with detached fakes.
                let mut td = Tape::new();
                let xr = td.constant(t.value(graph.x).to_vec(), t.shape(graph.x).to_vec());
                let xf = td.constant(t.value(graph.y).to_vec(), t.shape(graph.y).to_vec());
                let real = disc.forward_graph(&mut td, &model.store, xr);
                let fake = disc.forward_graph(&mut td, &model.store, xf);
                if !real.is_empty() {
                    let mut terms = Vec::new();
                    for ((_, rs), (_, fs)) in real.iter().zip(&fake) {
                        terms.push(lsgan_toward(&mut td, *rs, 1.0));
                        terms.push(lsgan_toward(&mut td, *fs, 0.0));
                    }
                    let sum = td.add_n(&terms);
                    let d_loss = td.scale(sum, 1.0 / real.len() as f32);
                    td.backward(d_loss);
                    let mut d_grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
                    for (name, grad) in td.param_grads() {
                        if name.starts_with("disc.") {
                            d_grads.insert(name, grad);
                        }
                    }
                    disc_opt.step(&mut model.store, &d_grads);
                }
            }

            // usage statistics + dead-entry re-seeding from current latents
            let proj = t.value(graph.projected);
            let code_dim = model.rvq.code_dim;
            let rows = proj.len() / code_dim;
            let mut pool = ndarray::Array2::zeros((rows, code_dim));
            for r in 0..rows {
                for c in 0..code_dim {
                    pool[[r, c]] = proj[r * code_dim + c];
                }
            }
            model.rvq.update_usage(
                &mut model.store,
                &graph.codes,
                step as u64 + 1,
                cfg.reseed_stale_after,
                &pool,
                &mut rng,
            );
        }

        if phase == 1 {
            watchdog.observe(adv_val);
            if watchdog.forced && events.iter().all(|e: &String| !e.contains("divergence")) {
                let msg = format!("# event divergence-forced-phase2 step {step}");
                events.push(msg.clone());
                writeln!(log, "{msg}")?;
            }
        }

        let metrics = StepMetrics {
            step,
            phase,
            total: total_val,
            wave: wave_val,
            mstft: mstft_val,
            spec: spec_val,
            commit: commit_val,
            codebook: codebook_val,
            adv: adv_val,
            feat: feat_val,
            w_wave,
            w_adv,
            w_feat,
            entropy: usage_entropy(&graph.codes, &model.rvq.vocab_sizes[..depth]),
        };
        writeln!(log, "{}", metrics.to_line())?;
        steps_out.push(metrics);

        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            model.save(out_dir.join(format!("model_step{}.ckpt", step + 1)))?;
        }
    }

    log.flush()?;
    let ckpt = out_dir.join("model.ckpt");
    model.save(&ckpt)?;
    Ok(TrainOutput {
        checkpoint: ckpt,
        metrics_log: metrics_path,
        steps: steps_out,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::model::ModelConfig;
    use crate::multichannel::McConfig;
    use crate::rvq::RvqConfig;

    fn tiny_model(with_mc: bool, seed: u64) -> CodecModel {
        let codec = CodecConfig::tiny();
        let rvq = RvqConfig {
            n_books: 3,
            vocab: 8,
            code_dim: 4,
            hidden_dim: codec.hidden_dim,
            factorized: true,
        };
        let mc = with_mc.then(|| {
            let mut cfg = McConfig::with_vocab(
                ["FP1", "FP2", "F3", "F4"].iter().map(|s| s.to_string()).collect(),
            );
            cfg.attn_layers = 1;
            cfg.attn_heads = 2;
            cfg
        });
        CodecModel::new(ModelConfig { codec, rvq, mc }, seed).unwrap()
    }

    fn tiny_windows(n_windows: usize, n_ch: usize, n: usize) -> Vec<Window> {
        (0..n_windows)
            .map(|i| {
                let rec = crate::data_io::synth_eeg(n_ch, n as f64 / 512.0, 512.0, 50 + i as u64)
                    .unwrap();
                let mut data = rec.data.clone();
                data.mapv_inplace(|v| (v / 200.0).clamp(-1.0, 1.0));
                Window {
                    data,
                    source_channels: rec.channel_names(),
                    sample_rate_hz: 512.0,
                    origin: (format!("w{i}"), 0),
                    label: None,
                }
            })
            .collect()
    }

    fn quick_cfg(kind: TrainKind, regime: Regime, steps: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            batch_size: 2,
            total_steps: steps,
            phase1_frac: 0.5,
            regime,
            kind,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn annealing_endpoints() {
        let w = LossWeights::default();
        assert_eq!(w.waveform_at(0, 100, 0.2), 10.0);
        assert_eq!(w.waveform_at(20, 100, 0.2), 1.0);
        assert_eq!(w.waveform_at(99, 100, 0.2), 1.0);
        let mid = w.waveform_at(10, 100, 0.2);
        assert!((mid - 5.5).abs() < 1e-6, "linear midpoint, got {mid}");
    }

    #[test]
    fn sc_training_runs_and_logs_consistent_totals() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny_model(false, 1);
        let windows = tiny_windows(3, 2, 320);
        let out = train(
            &mut model,
            &windows,
            &quick_cfg(TrainKind::SingleChannel, Regime::Scratch, 6),
            dir.path(),
        )
        .unwrap();
        assert_eq!(out.steps.len(), 6);
        assert!(out.checkpoint.exists());
        for m in &out.steps {
            let recombined = m.w_wave * m.wave
                + 1.0 * m.mstft
                + 1.0 * m.spec
                + 0.25 * m.commit
                + 1.0 * m.codebook
                + m.w_adv * m.adv
                + m.w_feat * m.feat;
            assert!((recombined - m.total).abs() < 1e-6);
            assert!(m.total.is_finite());
        }
        // phase flips at the configured boundary
        assert_eq!(out.steps[2].phase, 1);
        assert_eq!(out.steps[3].phase, 2);
        assert_eq!(out.steps[3].adv, 0.0);
        assert_eq!(out.steps[3].w_adv, 0.0);
    }

    #[test]
    fn mc_training_reaches_all_parameter_families() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny_model(true, 2);
        let before: std::collections::BTreeMap<String, Vec<f32>> = model
            .store
            .iter()
            .map(|(n, p)| (n.clone(), p.value.clone()))
            .collect();
        let windows = tiny_windows(2, 4, 160);
        train(
            &mut model,
            &windows,
            &quick_cfg(TrainKind::GroupedRandom, Regime::Finetune, 4),
            dir.path(),
        )
        .unwrap();
        let moved = |prefix: &str| {
            model
                .store
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .any(|(n, p)| p.value != before[n])
        };
        assert!(moved("enc."), "encoder moved");
        assert!(moved("dec."), "decoder moved");
        assert!(moved("mc.attn0"), "attention moved");
        assert!(moved("mc.style."), "styles moved");
        assert!(moved("rvq."), "quantizer moved");
    }

    #[test]
    fn frozen_regime_mutates_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny_model(false, 3);
        // pre-create disc params so the comparison covers them too
        let windows = tiny_windows(2, 2, 320);
        let before: std::collections::BTreeMap<String, Vec<f32>> = model
            .store
            .iter()
            .map(|(n, p)| (n.clone(), p.value.clone()))
            .collect();
        let out = train(
            &mut model,
            &windows,
            &quick_cfg(TrainKind::SingleChannel, Regime::Frozen, 5),
            dir.path(),
        )
        .unwrap();
        assert_eq!(out.steps.len(), 5);
        for (name, p) in model.store.iter() {
            if let Some(old) = before.get(name) {
                assert_eq!(&p.value, old, "{name} changed in frozen regime");
            }
        }
    }

    #[test]
    fn seeded_runs_produce_identical_metrics_logs() {
        let windows = tiny_windows(2, 2, 320);
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let mut model = tiny_model(false, 4);
            train(
                &mut model,
                &windows,
                &quick_cfg(TrainKind::SingleChannel, Regime::Scratch, 5),
                dir.path(),
            )
            .unwrap();
            std::fs::read(dir.path().join("metrics.log")).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_reconstruction_loss_on_a_tone() {
        // Overfit a single simple waveform; the composite loss must drop.
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny_model(false, 5);
        let mut windows = tiny_windows(1, 1, 320);
        for (i, v) in windows[0].data.iter_mut().enumerate() {
            *v = 0.6 * (i as f32 * 0.1).sin();
        }
        let mut cfg = quick_cfg(TrainKind::SingleChannel, Regime::Scratch, 60);
        cfg.lr = 3e-3;
        cfg.batch_size = 1;
        cfg.phase1_frac = 0.0;
        let out = train(&mut model, &windows, &cfg, dir.path()).unwrap();
        let first = out.steps.first().unwrap().total;
        let last = out.steps.last().unwrap().total;
        assert!(last < first, "loss did not drop: {first} -> {last}");
    }
}

//! The `eegcodec` command line: ingest -> prep -> train -> encode/decode ->
//! eval/bench/sweep -> plot, plus synthetic data generation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 validation
//! error. Failures print one machine-parseable line:
//! `error[<category>]: <message>`.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data_io::{self, ChannelMeta, Recording};
use crate::error::{Error, Result};
use crate::evaluation::{self, bench, bitrate::BitrateSpec, recon, recon::Reconstruct};
use crate::model::{CodecModel, Mode, ModelConfig};
use crate::multichannel::McConfig;
use crate::preprocess::{preprocess_recording, Window};
use crate::training::{self, Regime, TrainConfig, TrainKind};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "eegcodec", version, about = "Neural EEG codec toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic recordings (EEG, audio, or a labeled benchmark).
    Synth {
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 60.0)]
        seconds: f64,
        #[arg(long, default_value_t = 512.0)]
        rate: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// eeg | audio | bench
        #[arg(long, default_value = "eeg")]
        kind: String,
        /// task for --kind bench (epilepsy | abnormal)
        #[arg(long, default_value = "epilepsy")]
        task: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Read an EDF file into an EEGC container.
    Ingest {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Condition recordings into model-ready windows plus a manifest.
    Prep {
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        hp: Option<f64>,
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long)]
        window: Option<f64>,
        #[arg(long)]
        drop: Option<f64>,
    },
    /// Train a codec (scratch | finetune | frozen).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "scratch")]
        regime: String,
        /// sc | random-groups | manual-groups
        #[arg(long, default_value = "sc")]
        kind: String,
        #[arg(long, default_value = "epilepsy")]
        task: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// donor checkpoint for finetune / frozen
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode a window container into token stream(s).
    Encode {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "sc")]
        mode: String,
        #[arg(long, default_value = "epilepsy")]
        task: String,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode a token stream back into an EEGC container.
    Decode {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Mean reconstruction loss of a model over prepared windows.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "sc")]
        mode: String,
        #[arg(long, default_value = "epilepsy")]
        task: String,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Downstream classification benchmark on the synthetic labeled set.
    Bench {
        #[arg(long)]
        task: String,
        /// coding modes to score (repeatable); baseline always included
        #[arg(long = "mode")]
        modes: Vec<String>,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        recordings: usize,
        #[arg(long, default_value_t = 100.0)]
        seconds: f64,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compression/fidelity sweeps: depth | vocab | rate.
    Sweep {
        #[arg(long)]
        what: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// second dataset (e.g. prepared at 256 Hz) for the rate sweep
        #[arg(long)]
        data_alt: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "sc")]
        mode: String,
        #[arg(long, default_value = "epilepsy")]
        task: String,
        /// directory of per-depth checkpoints (depth<k>.ckpt) for pre mode
        #[arg(long)]
        pre_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render plots from result files.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("error[usage]: {e}");
            return 2;
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

fn env_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(config::ENV_SEED) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad {} value {v:?}", config::ENV_SEED))),
        Err(_) => Ok(0),
    }
}

fn load_run_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::new(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { channels, seconds, rate, seed, count, kind, task, out } => {
            let seed = env_seed(seed)?;
            std::fs::create_dir_all(&out)?;
            let mut written = Vec::new();
            match kind.as_str() {
                "eeg" => {
                    for i in 0..count {
                        let rec = data_io::synth_eeg(channels, seconds, rate, seed + i as u64)?;
                        let path = out.join(format!("{}.eegc", rec.id));
                        data_io::save_container(&path, &rec)?;
                        written.push(path);
                    }
                }
                "audio" => {
                    for i in 0..count {
                        let rec = data_io::synth_audio(seconds, rate, seed + i as u64)?;
                        let path = out.join(format!("{}.eegc", rec.id));
                        data_io::save_container(&path, &rec)?;
                        written.push(path);
                    }
                }
                "bench" => {
                    let recs = bench::synth_benchmark_set(&task, count.max(2), seconds, seed)?;
                    for rec in recs {
                        let path = out.join(format!("{}.eegc", rec.id));
                        data_io::save_container(&path, &rec)?;
                        written.push(path);
                    }
                }
                other => {
                    return Err(Error::Usage(format!(
                        "unknown synth kind {other:?} (eeg | audio | bench)"
                    )))
                }
            }
            let cfg = RunConfig::new();
            cfg.persist(&out, &[("seed".into(), seed.to_string()), ("cmd".into(), "synth".into())])?;
            println!("wrote {} container(s) to {}", written.len(), out.display());
            Ok(())
        }

        Cmd::Ingest { input, out } => {
            let rec = data_io::ingest_edf(&input)?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            data_io::save_container(&out, &rec)?;
            println!(
                "ingested {} channels x {} samples at {} Hz -> {}",
                rec.n_channels(),
                rec.n_samples(),
                rec.sample_rate_hz,
                out.display()
            );
            Ok(())
        }

        Cmd::Prep { inputs, out, config, rate, hp, clip, window, drop } => {
            if inputs.is_empty() {
                return Err(Error::Usage("prep needs at least one input container".into()));
            }
            let mut run_cfg = load_run_config(&config)?;
            if let Some(v) = rate {
                run_cfg.set("prep.target_rate_hz", &v.to_string())?;
            }
            if let Some(v) = hp {
                run_cfg.set("prep.highpass_hz", &v.to_string())?;
            }
            if let Some(v) = clip {
                run_cfg.set("prep.clip_uv", &v.to_string())?;
            }
            if let Some(v) = window {
                run_cfg.set("prep.window_s", &v.to_string())?;
            }
            if let Some(v) = drop {
                run_cfg.set("prep.drop_initial_s", &v.to_string())?;
            }
            let prep = run_cfg.preprocess()?;
            std::fs::create_dir_all(&out)?;
            let mut manifest = String::from("path\trecording\tstart_sample\tlabel\n");
            let mut n_windows = 0usize;
            for input in &inputs {
                let rec = data_io::load_container(input)?;
                let windows = preprocess_recording(&rec, &prep)?;
                for w in windows {
                    let name = format!("{}_w{:05}.eegc", sanitize(&w.origin.0), w.origin.1);
                    let path = out.join(&name);
                    save_window(&path, &w)?;
                    manifest.push_str(&format!(
                        "{}\t{}\t{}\t{}\n",
                        name,
                        w.origin.0,
                        w.origin.1,
                        w.label.as_deref().unwrap_or("-")
                    ));
                    n_windows += 1;
                }
            }
            std::fs::write(out.join("manifest.tsv"), manifest)?;
            run_cfg.persist(&out, &[("cmd".into(), "prep".into())])?;
            println!("wrote {n_windows} window(s) + manifest to {}", out.display());
            Ok(())
        }

        Cmd::Train { config, regime, kind, task, data, out, from, steps, batch, lr, seed } => {
            let run_cfg = load_run_config(&config)?;
            let regime = Regime::parse(&regime)?;
            let seed = match seed {
                Some(s) => s,
                None => run_cfg.seed()?,
            };
            let windows = load_windows(&data)?;
            if windows.is_empty() {
                return Err(Error::Config(format!(
                    "no windows found under {}",
                    data.display()
                )));
            }
            let train_kind = match kind.as_str() {
                "sc" => TrainKind::SingleChannel,
                "random-groups" => TrainKind::GroupedRandom,
                "manual-groups" => TrainKind::GroupedManual(task.clone()),
                other => {
                    return Err(Error::Usage(format!(
                        "unknown training kind {other:?} (sc | random-groups | manual-groups)"
                    )))
                }
            };
            let codec_cfg = run_cfg.codec()?;
            let rvq_cfg = run_cfg.rvq(codec_cfg.hidden_dim)?;
            let mc_cfg = if train_kind == TrainKind::SingleChannel {
                None
            } else {
                let mut mc = McConfig::with_vocab(channel_vocab(&windows));
                mc.max_group_size = run_cfg.parse_or("mc.max_group_size", mc.max_group_size)?;
                mc.attn_layers = run_cfg.parse_or("mc.attn_layers", mc.attn_layers)?;
                mc.attn_heads = run_cfg.parse_or("mc.attn_heads", mc.attn_heads)?;
                Some(mc)
            };
            let model_cfg = ModelConfig { codec: codec_cfg, rvq: rvq_cfg, mc: mc_cfg };

            let mut model = match (regime, &from) {
                (Regime::Scratch, _) => CodecModel::new(model_cfg, seed)?,
                (Regime::Finetune, Some(path)) => {
                    let (model, report) = CodecModel::load_pretrained(path, model_cfg, seed)?;
                    println!(
                        "loaded {} tensors, initialized {}, skipped {}",
                        report.loaded.len(),
                        report.initialized.len(),
                        report.skipped.len()
                    );
                    model
                }
                (Regime::Frozen, Some(path)) => CodecModel::load(path)?,
                (_, None) => {
                    return Err(Error::Usage(
                        "finetune/frozen regimes need --from <checkpoint>".into(),
                    ))
                }
            };

            let defaults = TrainConfig::default();
            let train_cfg = TrainConfig {
                lr: lr.unwrap_or(run_cfg.parse_or("train.lr", defaults.lr)?),
                beta1: run_cfg.parse_or("train.beta1", defaults.beta1)?,
                beta2: run_cfg.parse_or("train.beta2", defaults.beta2)?,
                batch_size: batch.unwrap_or(run_cfg.parse_or("train.batch_size", 4)?),
                total_steps: steps.unwrap_or(run_cfg.parse_or("train.total_steps", 100)?),
                phase1_frac: run_cfg.parse_or("train.phase1_frac", defaults.phase1_frac)?,
                anneal_frac: run_cfg.parse_or("train.anneal_frac", defaults.anneal_frac)?,
                regime,
                kind: train_kind,
                depth: run_cfg.parse_or("train.depth", 0usize)?,
                seed,
                weights: defaults.weights.clone(),
                checkpoint_every: run_cfg.parse_or("train.checkpoint_every", 0usize)?,
                reseed_stale_after: defaults.reseed_stale_after,
            };
            let output = training::train(&mut model, &windows, &train_cfg, &out)?;
            run_cfg.persist(
                &out,
                &[
                    ("cmd".into(), "train".into()),
                    ("seed".into(), seed.to_string()),
                    ("regime".into(), regime_name(regime).into()),
                    ("kind".into(), kind.clone()),
                    ("train.total_steps".into(), train_cfg.total_steps.to_string()),
                    ("train.batch_size".into(), train_cfg.batch_size.to_string()),
                    ("train.lr".into(), train_cfg.lr.to_string()),
                ],
            )?;
            let last = output.steps.last().expect("at least one step");
            println!(
                "trained {} steps; final total loss {:.4}; checkpoint {}",
                output.steps.len(),
                last.total,
                output.checkpoint.display()
            );
            Ok(())
        }

        Cmd::Encode { input, model, out, mode, task, depth, seed } => {
            let model = CodecModel::load(&model)?;
            let mode = Mode::parse(&mode, Some(&task))?;
            let seed = env_seed(seed)?;
            let window = load_window_container(&input)?;
            let depth = depth.unwrap_or_else(|| model.default_depth());
            let streams = model.encode_window(&window, &mode, depth, seed)?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            if streams.len() == 1 {
                streams[0].save(&out)?;
                println!("wrote {}", out.display());
            } else {
                let stem = out
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "tokens".into());
                let dir = out.parent().map(|p| p.to_path_buf()).unwrap_or_default();
                for (i, s) in streams.iter().enumerate() {
                    let path = dir.join(format!("{stem}_g{i}.eegt"));
                    s.save(&path)?;
                    println!("wrote {}", path.display());
                }
            }
            Ok(())
        }

        Cmd::Decode { input, model, out } => {
            let model = CodecModel::load(&model)?;
            let tokens = crate::tokens::TokenStream::load(&input)?;
            let decoded: Vec<(String, Vec<f32>)> = if model.mc.is_some() && tokens.members.len() >= 1 {
                crate::multichannel::decode_group(
                    &model.codec,
                    model.mc.as_ref().unwrap(),
                    &model.rvq,
                    &model.store,
                    &tokens,
                )?
            } else {
                vec![(
                    tokens.members.first().cloned().unwrap_or_else(|| "CH0".into()),
                    model.decode_sc(&tokens)?,
                )]
            };
            let n = decoded[0].1.len();
            let mut data = ndarray::Array2::zeros((decoded.len(), n));
            let mut channels = Vec::new();
            for (ci, (name, wave)) in decoded.iter().enumerate() {
                channels.push(ChannelMeta::new(name.clone()));
                for (i, &v) in wave.iter().enumerate() {
                    data[[ci, i]] = v;
                }
            }
            let rec = Recording::new(
                input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "decoded".into()),
                channels,
                data,
                tokens.presented_rate_hz,
                None,
            )?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            data_io::save_container(&out, &rec)?;
            println!(
                "decoded {} channel(s) x {} samples -> {}",
                rec.n_channels(),
                rec.n_samples(),
                out.display()
            );
            Ok(())
        }

        Cmd::Eval { model, data, out, mode, task, depth, seed } => {
            let model = CodecModel::load(&model)?;
            let mode = Mode::parse(&mode, Some(&task))?;
            let seed = env_seed(seed)?;
            let windows = load_windows(&data)?;
            let depth = depth.unwrap_or_else(|| model.default_depth());
            let reconstructor =
                recon::ModelReconstructor { model: &model, mode: mode.clone(), depth, seed };
            let loss = recon::eval_reconstruction(&reconstructor, &windows)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("eval.tsv"),
                format!("mode\tdepth\tmean_spectrogram_loss\n{}\t{depth}\t{loss:.9e}\n", mode.as_str()),
            )?;
            // overlay pair for plotting
            if let Some(w) = windows.first() {
                let recon_data = reconstructor.reconstruct(w)?;
                let single = |data: ndarray::Array2<f32>, id: &str| -> Result<Recording> {
                    Recording::new(
                        id,
                        vec![ChannelMeta::new(w.source_channels[0].clone())],
                        data.slice(ndarray::s![0..1, ..]).to_owned(),
                        w.sample_rate_hz,
                        None,
                    )
                };
                data_io::save_container(
                    out.join("overlay_original.eegc"),
                    &single(w.data.clone(), "overlay-original")?,
                )?;
                data_io::save_container(
                    out.join("overlay_reconstruction.eegc"),
                    &single(recon_data, "overlay-reconstruction")?,
                )?;
            }
            RunConfig::new().persist(
                &out,
                &[
                    ("cmd".into(), "eval".into()),
                    ("seed".into(), seed.to_string()),
                    ("mode".into(), mode.as_str().into()),
                    ("eval.depth".into(), depth.to_string()),
                ],
            )?;
            println!("mean spectrogram loss ({}, depth {depth}): {loss:.6}", mode.as_str());
            Ok(())
        }

        Cmd::Bench { task, modes, model, out, recordings, seconds, depth, seed } => {
            let model = CodecModel::load(&model)?;
            let seed = env_seed(seed)?;
            let depth = depth.unwrap_or_else(|| model.default_depth());
            let modes: Vec<Mode> = if modes.is_empty() {
                vec![Mode::Sc]
            } else {
                modes
                    .iter()
                    .map(|m| Mode::parse(m, Some(&task)))
                    .collect::<Result<_>>()?
            };
            let report = run_benchmark(&model, &task, &modes, recordings, seconds, depth, seed)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("bench_report.tsv"), &report)?;
            RunConfig::new().persist(
                &out,
                &[
                    ("cmd".into(), "bench".into()),
                    ("seed".into(), seed.to_string()),
                    ("task".into(), task.clone()),
                ],
            )?;
            print!("{report}");
            println!("report written to {}", out.join("bench_report.tsv").display());
            Ok(())
        }

        Cmd::Sweep { what, model, data, data_alt, out, mode, task, pre_dir, seed } => {
            let model = CodecModel::load(&model)?;
            let mode = Mode::parse(&mode, Some(&task))?;
            let seed = env_seed(seed)?;
            let windows = load_windows(&data)?;
            std::fs::create_dir_all(&out)?;
            match what.as_str() {
                "depth" => {
                    let points = match pre_dir {
                        None => recon::pruning_sweep_post(&model, &windows, &mode, seed)?,
                        Some(dir) => {
                            let full = model.rvq.n_books();
                            let ckpts: Vec<(usize, PathBuf)> = (3..=full)
                                .rev()
                                .map(|k| (k, dir.join(format!("depth{k}.ckpt"))))
                                .collect();
                            recon::pruning_sweep_pre(&ckpts, &windows, &mode, seed)?
                        }
                    };
                    std::fs::write(out.join("depth_sweep.tsv"), recon::sweep_to_tsv(&points))?;
                    for p in &points {
                        println!("k={} loss={:.6} bits/s={}", p.k, p.loss, p.bits_per_second);
                    }
                }
                "vocab" => {
                    let full_v = model.rvq.vocab_sizes[0];
                    let mut points = Vec::new();
                    let r = recon::ModelReconstructor { model: &model, mode: mode.clone(), depth: model.rvq.n_books(), seed };
                    let loss = recon::eval_reconstruction(&r, &windows)?;
                    points.push(sweep_row(&model, &windows, format!("vocab-{full_v}"), loss)?);
                    // merged copy at half vocabulary
                    let mut merged = CodecModel {
                        codec: model.codec.clone(),
                        rvq: model.rvq.clone(),
                        mc: None,
                        store: model.store.clone(),
                    };
                    for b in 0..merged.rvq.n_books() {
                        let target = merged.rvq.vocab_sizes[b] / 2;
                        merged.rvq.merge_vocabulary(&mut merged.store, b, target)?;
                    }
                    let rm = recon::ModelReconstructor { model: &merged, mode: mode.clone(), depth: merged.rvq.n_books(), seed };
                    let loss_m = recon::eval_reconstruction(&rm, &windows)?;
                    points.push(sweep_row(&merged, &windows, format!("vocab-{}", full_v / 2), loss_m)?);
                    std::fs::write(out.join("rate_vocab.tsv"), recon::sweep_to_tsv(&points))?;
                    for p in &points {
                        println!("{} loss={:.6} bits/s={}", p.label, p.loss, p.bits_per_second);
                    }
                }
                "rate" => {
                    let mut points = Vec::new();
                    let mut eval_set = |windows: &[Window]| -> Result<()> {
                        let rate = windows[0].sample_rate_hz;
                        let r = recon::ModelReconstructor { model: &model, mode: mode.clone(), depth: model.rvq.n_books(), seed };
                        let loss = recon::eval_reconstruction(&r, windows)?;
                        points.push(sweep_row(&model, windows, format!("rate-{rate}"), loss)?);
                        Ok(())
                    };
                    eval_set(&windows)?;
                    if let Some(alt) = data_alt {
                        let alt_windows = load_windows(&alt)?;
                        eval_set(&alt_windows)?;
                    }
                    std::fs::write(out.join("rate_vocab.tsv"), recon::sweep_to_tsv(&points))?;
                    for p in &points {
                        println!("{} loss={:.6} bits/s={}", p.label, p.loss, p.bits_per_second);
                    }
                }
                other => {
                    return Err(Error::Usage(format!(
                        "unknown sweep {other:?} (depth | vocab | rate)"
                    )))
                }
            }
            RunConfig::new().persist(
                &out,
                &[
                    ("cmd".into(), "sweep".into()),
                    ("seed".into(), seed.to_string()),
                ],
            )?;
            Ok(())
        }

        Cmd::Plot { results, out } => {
            let produced = evaluation::plots::emit_plots(&results, &out)?;
            for p in &produced {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Scratch => "scratch",
        Regime::Finetune => "finetune",
        Regime::Frozen => "frozen",
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn sweep_row(
    model: &CodecModel,
    windows: &[Window],
    label: String,
    loss: f64,
) -> Result<recon::SweepPoint> {
    let spec = BitrateSpec {
        vocab_sizes: model.rvq.vocab_sizes.clone(),
        stride_total: model.codec.config.stride_total,
        presented_rate_hz: windows[0].sample_rate_hz,
        native_rate_hz: windows[0].sample_rate_hz,
        group_size: 1,
    };
    Ok(recon::SweepPoint {
        label,
        k: model.rvq.n_books(),
        loss,
        bits_per_second: evaluation::bitrate(&spec)?,
    })
}

/// Write one preprocessed window as an EEGC container (normalized units).
pub fn save_window(path: &Path, w: &Window) -> Result<()> {
    let channels: Vec<ChannelMeta> = w.source_channels.iter().map(ChannelMeta::new).collect();
    let rec = Recording::new(
        format!("{}@{}", w.origin.0, w.origin.1),
        channels,
        w.data.clone(),
        w.sample_rate_hz,
        w.label.clone(),
    )?;
    data_io::save_container(path, &rec)
}

/// Read one window container written by `prep` (or hand-built).
pub fn load_window_container(path: &Path) -> Result<Window> {
    let rec = data_io::load_container(path)?;
    let (origin_id, start) = match rec.id.rsplit_once('@') {
        Some((id, start)) => (id.to_string(), start.parse().unwrap_or(0)),
        None => (rec.id.clone(), 0),
    };
    Ok(Window {
        data: rec.data.clone(),
        source_channels: rec.channel_names(),
        sample_rate_hz: rec.sample_rate_hz,
        origin: (origin_id, start),
        label: rec.annotation.clone(),
    })
}

/// Load every window listed in a prep directory's manifest.
pub fn load_windows(dir: &Path) -> Result<Vec<Window>> {
    let manifest = dir.join("manifest.tsv");
    if !manifest.exists() {
        return Err(Error::Config(format!(
            "{} has no manifest.tsv (run `eegcodec prep` first)",
            dir.display()
        )));
    }
    let text = std::fs::read_to_string(&manifest)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            continue;
        }
        out.push(load_window_container(&dir.join(fields[0]))?);
    }
    Ok(out)
}

/// Channel vocabulary for a training set: canonical 10-20 names first, then
/// any remaining names alphabetically.
pub fn channel_vocab(windows: &[Window]) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    for w in windows {
        for name in &w.source_channels {
            seen.insert(name.clone());
        }
    }
    let mut vocab = Vec::new();
    for canon in data_io::CANONICAL_ORDER {
        if let Some(name) = seen.iter().find(|n| n.as_str() == canon) {
            vocab.push(name.clone());
        }
    }
    for name in &seen {
        if !vocab.contains(name) {
            vocab.push(name.clone());
        }
    }
    vocab
}

/// Full downstream benchmark: synthesize, preprocess, reconstruct per mode,
/// extract features, classify, and report (with per-mode bitrate columns).
pub fn run_benchmark(
    model: &CodecModel,
    task: &str,
    modes: &[Mode],
    n_recordings: usize,
    seconds: f64,
    depth: usize,
    seed: u64,
) -> Result<String> {
    let recs = bench::synth_benchmark_set(task, n_recordings, seconds, seed)?;
    let prep = crate::preprocess::PreprocessConfig::default();
    let labels = bench::task_labels(task)?;

    let mut originals: Vec<(String, usize, Vec<Window>)> = Vec::new();
    for rec in &recs {
        let windows = preprocess_recording(rec, &prep)?;
        if windows.is_empty() {
            return Err(Error::Config(
                "benchmark recordings too short for the preprocessing window".into(),
            ));
        }
        let label = (rec.annotation.as_deref() == Some(labels[1])) as usize;
        originals.push((rec.id.clone(), label, windows));
    }

    let mut sets: Vec<(String, bench::LabeledSet)> = Vec::new();
    sets.push((
        "baseline".into(),
        bench::features_for_recordings(&originals)?,
    ));
    let mut bits_by_mode: Vec<(String, f64)> = Vec::new();
    for mode in modes {
        let mut recon_rows: Vec<(String, usize, Vec<Window>)> = Vec::new();
        let mut group_bits: Option<f64> = None;
        for (id, label, windows) in &originals {
            let mut recon_windows = Vec::with_capacity(windows.len());
            for w in windows {
                let streams = model.encode_window(w, mode, depth, seed)?;
                if group_bits.is_none() {
                    // per-channel bits averaged over this window's streams
                    let total: f64 = streams
                        .iter()
                        .map(|s| {
                            evaluation::bitrate(&BitrateSpec::from_stream(s)).unwrap_or(0.0)
                                * s.members.len() as f64
                        })
                        .sum();
                    let members: usize = streams.iter().map(|s| s.members.len()).sum();
                    group_bits = Some(total / members.max(1) as f64);
                }
                let data = model.reconstruct_window(w, &streams)?;
                recon_windows.push(Window {
                    data,
                    source_channels: w.source_channels.clone(),
                    sample_rate_hz: w.sample_rate_hz,
                    origin: w.origin.clone(),
                    label: w.label.clone(),
                });
            }
            recon_rows.push((id.clone(), *label, recon_windows));
        }
        sets.push((
            mode.as_str().to_string(),
            bench::features_for_recordings(&recon_rows)?,
        ));
        bits_by_mode.push((mode.as_str().to_string(), group_bits.unwrap_or(0.0)));
    }

    let results = bench::benchmark_downstream(task, &sets, seed)?;
    Ok(bench::report_to_tsv(&results, &bits_by_mode))
}

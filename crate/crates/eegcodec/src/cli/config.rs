//! Layered run configuration: defaults < config file < environment <
//! command-line flags. Unknown keys are rejected and every run persists its
//! fully resolved configuration (plus seed and version) beside its outputs.
//!
//! File format: one `key value` pair per line, `#` comments allowed.

use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::{Activation, CodecConfig};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::rvq::RvqConfig;

pub const ENV_SEED: &str = "EEGCODEC_SEED";

const KNOWN_KEYS: [&str; 31] = [
    "seed",
    "prep.target_rate_hz",
    "prep.highpass_hz",
    "prep.clip_uv",
    "prep.window_s",
    "prep.drop_initial_s",
    "prep.empty_channel_std_uv",
    "codec.stride_total",
    "codec.block_strides",
    "codec.hidden_dim",
    "codec.base_width",
    "codec.activation",
    "rvq.n_books",
    "rvq.vocab",
    "rvq.code_dim",
    "rvq.factorized",
    "mc.max_group_size",
    "mc.attn_layers",
    "mc.attn_heads",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.batch_size",
    "train.total_steps",
    "train.phase1_frac",
    "train.anneal_frac",
    "train.depth",
    "train.checkpoint_every",
    "sampler.lambda",
    "sampler.tau",
    "eval.depth",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    /// Load and validate a config file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = RunConfig::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, char::is_whitespace);
            let key = parts.next().unwrap().trim();
            let value = parts
                .next()
                .map(|v| v.trim())
                .filter(|v| !v.is_empty())
                .ok_or_else(|| {
                    Error::Config(format!("config line {}: missing value", lineno + 1))
                })?;
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Apply environment overrides (currently the global seed).
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var(ENV_SEED) {
            self.set("seed", seed.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_or("seed", 0u64)
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig> {
        let d = PreprocessConfig::default();
        let cfg = PreprocessConfig {
            target_rate_hz: self.parse_or("prep.target_rate_hz", d.target_rate_hz)?,
            highpass_hz: self.parse_or("prep.highpass_hz", d.highpass_hz)?,
            clip_uv: self.parse_or("prep.clip_uv", d.clip_uv)?,
            window_s: self.parse_or("prep.window_s", d.window_s)?,
            drop_initial_s: self.parse_or("prep.drop_initial_s", d.drop_initial_s)?,
            empty_channel_std_uv: self
                .parse_or("prep.empty_channel_std_uv", d.empty_channel_std_uv)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn codec(&self) -> Result<CodecConfig> {
        let d = CodecConfig::desk();
        let strides = match self.values.get("codec.block_strides") {
            None => d.block_strides.clone(),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad stride {s:?}")))
                })
                .collect::<Result<_>>()?,
        };
        let cfg = CodecConfig {
            stride_total: self.parse_or("codec.stride_total", d.stride_total)?,
            block_strides: strides,
            hidden_dim: self.parse_or("codec.hidden_dim", d.hidden_dim)?,
            base_width: self.parse_or("codec.base_width", d.base_width)?,
            activation: match self.values.get("codec.activation") {
                None => d.activation,
                Some(v) => Activation::parse(v)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rvq(&self, hidden_dim: usize) -> Result<RvqConfig> {
        let d = RvqConfig::default_stack(hidden_dim);
        let cfg = RvqConfig {
            n_books: self.parse_or("rvq.n_books", d.n_books)?,
            vocab: self.parse_or("rvq.vocab", d.vocab)?,
            code_dim: self.parse_or("rvq.code_dim", d.code_dim)?,
            hidden_dim,
            factorized: self.parse_or("rvq.factorized", d.factorized)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialized resolved configuration (sorted keys).
    pub fn resolved_text(&self, extra: &[(String, String)]) -> String {
        let mut out = String::new();
        out.push_str(&format!("# eegcodec {}\n", env!("CARGO_PKG_VERSION")));
        let mut merged = self.values.clone();
        if !merged.contains_key("seed") {
            merged.insert("seed".into(), "0".into());
        }
        for (k, v) in extra {
            merged.insert(k.clone(), v.clone());
        }
        for (k, v) in &merged {
            out.push_str(&format!("{k} {v}\n"));
        }
        out
    }

    /// Write the resolved configuration beside a run's outputs.
    pub fn persist(&self, out_dir: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
        std::fs::create_dir_all(out_dir.as_ref())?;
        std::fs::write(
            out_dir.as_ref().join("run_config.txt"),
            self.resolved_text(extra),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_parsing_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nseed 42\nprep.window_s 10\ncodec.hidden_dim 32\n")
            .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed().unwrap(), 42);
        let prep = cfg.preprocess().unwrap();
        assert_eq!(prep.window_s, 10.0);
        assert_eq!(prep.target_rate_hz, 512.0, "untouched default");
        assert_eq!(cfg.codec().unwrap().hidden_dim, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "prep.windw_s 10\n").unwrap();
        assert!(matches!(RunConfig::from_file(&path), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_text_is_stable_and_carries_extras() {
        let mut cfg = RunConfig::new();
        cfg.set("seed", "7").unwrap();
        cfg.set("train.lr", "0.001").unwrap();
        let a = cfg.resolved_text(&[("regime".into(), "scratch".into())]);
        let b = cfg.resolved_text(&[("regime".into(), "scratch".into())]);
        assert_eq!(a, b);
        assert!(a.contains("seed 7"));
        assert!(a.contains("regime scratch"));
        assert!(a.contains("train.lr 0.001"));
    }
}

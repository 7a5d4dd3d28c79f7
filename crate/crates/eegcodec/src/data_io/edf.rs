//! Read-only EDF/EDF+ ingestion.
//!
//! Reads the fixed-layout EDF header, scales digital samples to physical
//! units, converts to microvolts, and attaches 10-20 positions where the
//! label is recognized. Channel names are preserved verbatim. Signals whose
//! samples-per-record differ from the majority (e.g. annotation channels)
//! are skipped.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::{ChannelMeta, Recording};

fn field(bytes: &[u8], offset: usize, len: usize, name: &str) -> Result<String> {
    let slice = bytes
        .get(offset..offset + len)
        .ok_or_else(|| Error::Ingest(format!("header too short reading {name}")))?;
    Ok(String::from_utf8_lossy(slice).trim().to_string())
}

fn numeric<T: std::str::FromStr>(bytes: &[u8], offset: usize, len: usize, name: &str) -> Result<T> {
    let s = field(bytes, offset, len, name)?;
    s.parse()
        .map_err(|_| Error::Ingest(format!("field {name} is not numeric: {s:?}")))
}

pub fn ingest_edf(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut head = vec![0u8; 256];
    r.read_exact(&mut head)
        .map_err(|_| Error::Ingest("file shorter than the 256-byte EDF header".into()))?;

    let version = field(&head, 0, 8, "version")?;
    if version != "0" {
        return Err(Error::Ingest(format!(
            "field version: expected \"0\", got {version:?}"
        )));
    }
    let n_records: i64 = numeric(&head, 236, 8, "number_of_records")?;
    let record_duration: f64 = numeric(&head, 244, 8, "record_duration")?;
    let n_signals: usize = numeric(&head, 252, 4, "number_of_signals")?;
    if n_signals == 0 {
        return Err(Error::Ingest("field number_of_signals: zero signals".into()));
    }
    if n_records < 0 {
        return Err(Error::Ingest(format!(
            "field number_of_records: negative ({n_records})"
        )));
    }
    if record_duration <= 0.0 {
        return Err(Error::Ingest(format!(
            "field record_duration: non-positive ({record_duration})"
        )));
    }

    let mut sig_head = vec![0u8; 256 * n_signals];
    r.read_exact(&mut sig_head)
        .map_err(|_| Error::Ingest("truncated per-signal header block".into()))?;

    struct SigInfo {
        label: String,
        dim: String,
        phys_min: f64,
        phys_max: f64,
        dig_min: f64,
        dig_max: f64,
        samples_per_record: usize,
    }
    // EDF signal headers are column-major: all labels, then all transducers, ...
    let mut sigs = Vec::with_capacity(n_signals);
    let block = |start: usize, width: usize, idx: usize| start * n_signals + idx * width;
    for i in 0..n_signals {
        let label = field(&sig_head, block(0, 16, i), 16, "signal_label")?;
        let dim = field(&sig_head, block(96, 8, i), 8, "physical_dimension")?;
        let phys_min: f64 = numeric(&sig_head, block(104, 8, i), 8, "physical_minimum")?;
        let phys_max: f64 = numeric(&sig_head, block(112, 8, i), 8, "physical_maximum")?;
        let dig_min: f64 = numeric(&sig_head, block(120, 8, i), 8, "digital_minimum")?;
        let dig_max: f64 = numeric(&sig_head, block(128, 8, i), 8, "digital_maximum")?;
        let samples_per_record: usize =
            numeric(&sig_head, block(216, 8, i), 8, "samples_per_record")?;
        if dig_max <= dig_min {
            return Err(Error::Ingest(format!(
                "field digital_minimum/maximum: degenerate range for {label:?}"
            )));
        }
        sigs.push(SigInfo {
            label,
            dim,
            phys_min,
            phys_max,
            dig_min,
            dig_max,
            samples_per_record,
        });
    }

    // Keep the majority samples-per-record cohort; this drops EDF+
    // annotation streams and oddball channels with a different rate.
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for s in &sigs {
        if !s.label.to_uppercase().contains("ANNOTATION") {
            *counts.entry(s.samples_per_record).or_default() += 1;
        }
    }
    let (&spr, _) = counts
        .iter()
        .max_by_key(|(_, &c)| c)
        .ok_or_else(|| Error::Ingest("no data signals found".into()))?;
    let keep: Vec<usize> = (0..n_signals)
        .filter(|&i| {
            sigs[i].samples_per_record == spr
                && !sigs[i].label.to_uppercase().contains("ANNOTATION")
        })
        .collect();
    let sample_rate = spr as f64 / record_duration;

    let n_records = n_records as usize;
    let n_samples = n_records * spr;
    let mut data = Array2::zeros((keep.len(), n_samples));
    let record_bytes: usize = sigs.iter().map(|s| s.samples_per_record * 2).sum();
    let mut record = vec![0u8; record_bytes];
    for rec_idx in 0..n_records {
        r.read_exact(&mut record).map_err(|_| {
            Error::Ingest(format!("truncated data record {rec_idx} of {n_records}"))
        })?;
        let mut offset = 0usize;
        for (sig_idx, sig) in sigs.iter().enumerate() {
            let bytes = &record[offset..offset + sig.samples_per_record * 2];
            offset += sig.samples_per_record * 2;
            let Some(row) = keep.iter().position(|&k| k == sig_idx) else {
                continue;
            };
            let gain = (sig.phys_max - sig.phys_min) / (sig.dig_max - sig.dig_min);
            let unit = match sig.dim.to_lowercase().as_str() {
                "mv" => 1000.0,
                "v" => 1e6,
                _ => 1.0, // uV or unknown: take as microvolts
            };
            for (j, pair) in bytes.chunks_exact(2).enumerate() {
                let dig = i16::from_le_bytes([pair[0], pair[1]]) as f64;
                let phys = (dig - sig.dig_min) * gain + sig.phys_min;
                data[[row, rec_idx * spr + j]] = (phys * unit) as f32;
            }
        }
    }

    let channels: Vec<ChannelMeta> = keep
        .iter()
        .map(|&i| ChannelMeta::new(sigs[i].label.clone()))
        .collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "edf".into());
    Recording::new(id, channels, data, sample_rate, None)
}

#[cfg(test)]
pub mod test_support {
    //! Minimal EDF writer used by tests only.

    use std::io::Write;

    pub fn write_edf(
        path: &std::path::Path,
        labels: &[&str],
        dims: &[&str],
        data_uv: &[Vec<f64>],
        sample_rate: usize,
    ) {
        let n_signals = labels.len();
        let n_samples = data_uv[0].len();
        assert_eq!(n_samples % sample_rate, 0);
        let n_records = n_samples / sample_rate;
        let header_bytes = 256 * (1 + n_signals);

        fn pad(s: &str, len: usize) -> Vec<u8> {
            let mut v = s.as_bytes().to_vec();
            assert!(v.len() <= len, "{s} longer than {len}");
            v.resize(len, b' ');
            v
        }

        let mut out = Vec::new();
        out.extend(pad("0", 8));
        out.extend(pad("test patient", 80));
        out.extend(pad("test recording", 80));
        out.extend(pad("01.01.20", 8));
        out.extend(pad("00.00.00", 8));
        out.extend(pad(&header_bytes.to_string(), 8));
        out.extend(pad("", 44));
        out.extend(pad(&n_records.to_string(), 8));
        out.extend(pad("1", 8));
        out.extend(pad(&n_signals.to_string(), 4));

        let phys_min = -500.0f64;
        let phys_max = 500.0f64;
        let dig_min = -32768i32;
        let dig_max = 32767i32;
        for l in labels {
            out.extend(pad(l, 16));
        }
        for _ in labels {
            out.extend(pad("AgAgCl", 80));
        }
        for d in dims {
            out.extend(pad(d, 8));
        }
        for _ in labels {
            out.extend(pad(&phys_min.to_string(), 8));
        }
        for _ in labels {
            out.extend(pad(&phys_max.to_string(), 8));
        }
        for _ in labels {
            out.extend(pad(&dig_min.to_string(), 8));
        }
        for _ in labels {
            out.extend(pad(&dig_max.to_string(), 8));
        }
        for _ in labels {
            out.extend(pad("HP:0.1Hz", 80));
        }
        for _ in labels {
            out.extend(pad(&sample_rate.to_string(), 8));
        }
        for _ in labels {
            out.extend(pad("", 32));
        }

        let gain = (dig_max as f64 - dig_min as f64) / (phys_max - phys_min);
        for rec in 0..n_records {
            for sig in data_uv {
                for j in 0..sample_rate {
                    let phys = sig[rec * sample_rate + j];
                    let dig = ((phys - phys_min) * gain + dig_min as f64).round() as i16;
                    out.extend(dig.to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&out).unwrap();
    }
}

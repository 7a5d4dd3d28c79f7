//! The EEGC signal container.
//!
//! Layout: magic `EEGC`, version `u16` LE, header length `u32` LE, a UTF-8
//! key-value header, then raw little-endian f32 samples channel-major.
//! Round trips are bit-exact for any finite payload.
//!
//! Header lines are `key<TAB>value...`:
//!
//! ```text
//! sample_rate_hz  512
//! n_channels      2
//! n_samples       15360
//! id              rec-0001
//! label           abnormal            (optional)
//! meta            key value           (optional, repeatable)
//! channel         FP1  -0.309  0.951  0.0
//! channel         EKG  -
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::{ChannelMeta, Recording};

const MAGIC: &[u8; 4] = b"EEGC";
const VERSION: u16 = 1;

pub fn save_container(path: impl AsRef<Path>, rec: &Recording) -> Result<()> {
    let mut header = String::new();
    header.push_str(&format!("sample_rate_hz\t{}\n", rec.sample_rate_hz));
    header.push_str(&format!("n_channels\t{}\n", rec.n_channels()));
    header.push_str(&format!("n_samples\t{}\n", rec.n_samples()));
    header.push_str(&format!("id\t{}\n", rec.id));
    if let Some(label) = &rec.annotation {
        header.push_str(&format!("label\t{label}\n"));
    }
    for ch in &rec.channels {
        match ch.position {
            Some(p) => header.push_str(&format!(
                "channel\t{}\t{:.17e}\t{:.17e}\t{:.17e}\n",
                ch.name, p[0], p[1], p[2]
            )),
            None => header.push_str(&format!("channel\t{}\t-\n", ch.name)),
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for row in rec.data.rows() {
        for &v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated before magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"EEGC\"",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2)?;
    let version = u16::from_le_bytes(buf2);
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported container version {version}",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let header_len = u32::from_le_bytes(buf4) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Format(format!("{}: header is not UTF-8", path.display())))?;

    let mut sample_rate = None;
    let mut n_channels = None;
    let mut n_samples = None;
    let mut id = String::new();
    let mut label = None;
    let mut channels = Vec::new();
    for line in header.lines() {
        let mut parts = line.split('\t');
        let key = parts.next().unwrap_or("");
        match key {
            "sample_rate_hz" => {
                sample_rate = Some(parse_field::<f64>(parts.next(), "sample_rate_hz")?)
            }
            "n_channels" => n_channels = Some(parse_field::<usize>(parts.next(), "n_channels")?),
            "n_samples" => n_samples = Some(parse_field::<usize>(parts.next(), "n_samples")?),
            "id" => id = parts.next().unwrap_or("").to_string(),
            "label" => label = Some(parts.next().unwrap_or("").to_string()),
            "channel" => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Format("channel line without name".into()))?
                    .to_string();
                let rest: Vec<&str> = parts.collect();
                let position = if rest == ["-"] {
                    None
                } else if rest.len() == 3 {
                    let mut p = [0.0f64; 3];
                    for (slot, s) in p.iter_mut().zip(&rest) {
                        *slot = s
                            .parse()
                            .map_err(|_| Error::Format(format!("bad position component {s:?}")))?;
                    }
                    Some(p)
                } else {
                    return Err(Error::Format(format!(
                        "channel {name:?}: expected position triple or '-'"
                    )));
                };
                channels.push(ChannelMeta { name, position });
            }
            "meta" | "" => {}
            other => {
                return Err(Error::Format(format!("unknown header key {other:?}")));
            }
        }
    }
    let sample_rate =
        sample_rate.ok_or_else(|| Error::Format("missing sample_rate_hz".into()))?;
    let n_channels = n_channels.ok_or_else(|| Error::Format("missing n_channels".into()))?;
    let n_samples = n_samples.ok_or_else(|| Error::Format("missing n_samples".into()))?;
    if channels.len() != n_channels {
        return Err(Error::Corruption(format!(
            "header declares {n_channels} channels but lists {}",
            channels.len()
        )));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n_channels * n_samples * 4 {
        return Err(Error::Corruption(format!(
            "payload is {} bytes, expected {} ({} ch x {} samples x 4)",
            payload.len(),
            n_channels * n_samples * 4,
            n_channels,
            n_samples
        )));
    }
    let mut data = Array2::zeros((n_channels, n_samples));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        data[[i / n_samples, i % n_samples]] =
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    if id.is_empty() {
        id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".into());
    }
    Recording::new(id, channels, data, sample_rate, label)
}

fn parse_field<T: std::str::FromStr>(value: Option<&str>, key: &str) -> Result<T> {
    value
        .ok_or_else(|| Error::Format(format!("missing value for {key}")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad value for {key}: {value:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn demo_recording() -> Recording {
        let mut data = Array2::zeros((2, 1000));
        for i in 0..1000 {
            data[[0, i]] = (i as f32 * 0.01).sin() * 50.0;
            data[[1, i]] = (i as f32 * 0.02).cos() * 20.0;
        }
        Recording::new(
            "demo",
            vec![ChannelMeta::new("C3"), ChannelMeta::new("EKG")],
            data,
            512.0,
            Some("normal".into()),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_data_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.eegc");
        let rec = demo_recording();
        save_container(&path, &rec).unwrap();
        let back = load_container(&path).unwrap();
        assert_eq!(back.data, rec.data);
        assert_eq!(back.channels, rec.channels);
        assert_eq!(back.sample_rate_hz, rec.sample_rate_hz);
        assert_eq!(back.annotation, rec.annotation);
        assert_eq!(back.id, rec.id);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.eegc");
        std::fs::write(&path, b"XXXXrest-of-file").unwrap();
        match load_container(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("bad magic"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_corruption_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.eegc");
        save_container(&path, &demo_recording()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match load_container(&path) {
            Err(Error::Corruption(_)) => {}
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn thirty_second_21_channel_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.eegc");
        let channels: Vec<ChannelMeta> = crate::data_io::CANONICAL_ORDER
            .iter()
            .map(|&name| ChannelMeta::new(name))
            .collect();
        let data = Array2::zeros((21, 30 * 512));
        let rec = Recording::new("full", channels, data, 512.0, None).unwrap();
        save_container(&path, &rec).unwrap();
        let back = load_container(&path).unwrap();
        assert_eq!(back.data.dim(), (21, 15360));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact_for_finite_floats(
            rows in prop::collection::vec(prop::collection::vec(-1e30f32..1e30, 17), 3)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.eegc");
            let mut data = Array2::zeros((3, 17));
            for (r, row) in rows.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    data[[r, c]] = v;
                }
            }
            let rec = Recording::new(
                "prop",
                vec![ChannelMeta::new("A"), ChannelMeta::new("B"), ChannelMeta::new("C")],
                data.clone(),
                256.0,
                None,
            ).unwrap();
            save_container(&path, &rec).unwrap();
            let back = load_container(&path).unwrap();
            for (a, b) in back.data.iter().zip(data.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

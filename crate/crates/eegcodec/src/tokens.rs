//! The EEGT token bitstream.
//!
//! Layout: magic `EEGT`, version `u16` LE, header length `u32` LE, a text
//! header (depth, frames, framing and rate metadata, per-book vocabulary
//! sizes, group member names), then the codes packed at `ceil(log2 V)` bits
//! each, book-major / frame-minor, MSB-first, zero-padded to a whole byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EEGT";
const VERSION: u16 = 1;

/// The compressed representation of one window (one channel or one group).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    /// `[depth][t_frames]` codebook indices.
    pub codes: Vec<Vec<u32>>,
    /// Vocabulary size per used book.
    pub vocab_sizes: Vec<usize>,
    pub stride_total: usize,
    pub presented_rate_hz: f64,
    pub native_rate_hz: f64,
    /// Channel names this stream covers (singleton for per-channel coding).
    pub members: Vec<String>,
}

impl TokenStream {
    pub fn depth(&self) -> usize {
        self.codes.len()
    }

    pub fn t_frames(&self) -> usize {
        self.codes.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.codes.len() != self.vocab_sizes.len() {
            return Err(Error::Shape(format!(
                "{} code rows vs {} vocab sizes",
                self.codes.len(),
                self.vocab_sizes.len()
            )));
        }
        let frames = self.t_frames();
        for (i, row) in self.codes.iter().enumerate() {
            if row.len() != frames {
                return Err(Error::Shape("ragged code rows".into()));
            }
            let v = self.vocab_sizes[i];
            if v < 2 {
                return Err(Error::Config(format!("book {i} has vocabulary {v} < 2")));
            }
            if let Some(&bad) = row.iter().find(|&&c| c as usize >= v) {
                return Err(Error::Corruption(format!(
                    "code {bad} out of range for book {i} (V = {v})"
                )));
            }
        }
        Ok(())
    }

    pub fn bits_per_code(v: usize) -> u32 {
        usize::BITS - (v - 1).leading_zeros()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut header = String::new();
        header.push_str(&format!("depth\t{}\n", self.depth()));
        header.push_str(&format!("frames\t{}\n", self.t_frames()));
        header.push_str(&format!("stride_total\t{}\n", self.stride_total));
        header.push_str(&format!("presented_rate_hz\t{}\n", self.presented_rate_hz));
        header.push_str(&format!("native_rate_hz\t{}\n", self.native_rate_hz));
        let vocab: Vec<String> = self.vocab_sizes.iter().map(|v| v.to_string()).collect();
        header.push_str(&format!("vocab\t{}\n", vocab.join("\t")));
        header.push_str(&format!("members\t{}\n", self.members.join("\t")));

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;

        let mut packer = BitPacker::new();
        for (row, &v) in self.codes.iter().zip(&self.vocab_sizes) {
            let bits = Self::bits_per_code(v);
            for &code in row {
                packer.push(code, bits);
            }
        }
        w.write_all(&packer.finish())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TokenStream> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format(format!("{}: truncated token file", path.display())))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected \"EEGT\"",
                path.display(),
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        if u16::from_le_bytes(b2) != VERSION {
            return Err(Error::Format("unsupported token-file version".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let hlen = u32::from_le_bytes(b4) as usize;
        let mut hbytes = vec![0u8; hlen];
        r.read_exact(&mut hbytes)
            .map_err(|_| Error::Format("truncated token header".into()))?;
        let header = String::from_utf8(hbytes)
            .map_err(|_| Error::Format("token header is not UTF-8".into()))?;

        let mut depth = None;
        let mut frames = None;
        let mut stride_total = None;
        let mut presented = None;
        let mut native = None;
        let mut vocab: Vec<usize> = Vec::new();
        let mut members: Vec<String> = Vec::new();
        for line in header.lines() {
            let mut parts = line.split('\t');
            match parts.next().unwrap_or("") {
                "depth" => depth = Some(parse(parts.next(), "depth")?),
                "frames" => frames = Some(parse(parts.next(), "frames")?),
                "stride_total" => stride_total = Some(parse(parts.next(), "stride_total")?),
                "presented_rate_hz" => presented = Some(parse(parts.next(), "presented_rate_hz")?),
                "native_rate_hz" => native = Some(parse(parts.next(), "native_rate_hz")?),
                "vocab" => {
                    for p in parts {
                        vocab.push(
                            p.parse()
                                .map_err(|_| Error::Format(format!("bad vocab entry {p:?}")))?,
                        );
                    }
                }
                "members" => members = parts.map(|s| s.to_string()).collect(),
                "" => {}
                other => return Err(Error::Format(format!("unknown token header key {other:?}"))),
            }
        }
        let depth: usize = depth.ok_or_else(|| Error::Format("missing depth".into()))?;
        let frames: usize = frames.ok_or_else(|| Error::Format("missing frames".into()))?;
        let stride_total =
            stride_total.ok_or_else(|| Error::Format("missing stride_total".into()))?;
        let presented = presented.ok_or_else(|| Error::Format("missing presented rate".into()))?;
        let native = native.ok_or_else(|| Error::Format("missing native rate".into()))?;
        if vocab.len() != depth {
            return Err(Error::Corruption(format!(
                "vocab list has {} entries for depth {depth}",
                vocab.len()
            )));
        }

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let total_bits: usize = vocab
            .iter()
            .map(|&v| Self::bits_per_code(v) as usize * frames)
            .sum();
        let expected = total_bits.div_ceil(8);
        if payload.len() != expected {
            return Err(Error::Corruption(format!(
                "token payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let mut unpacker = BitUnpacker::new(&payload);
        let mut codes = Vec::with_capacity(depth);
        for &v in &vocab {
            let bits = Self::bits_per_code(v);
            let mut row = Vec::with_capacity(frames);
            for _ in 0..frames {
                let code = unpacker.pull(bits);
                if code as usize >= v {
                    return Err(Error::Corruption(format!(
                        "unpacked code {code} exceeds vocabulary {v}"
                    )));
                }
                row.push(code);
            }
            codes.push(row);
        }
        Ok(TokenStream {
            codes,
            vocab_sizes: vocab,
            stride_total,
            presented_rate_hz: presented,
            native_rate_hz: native,
            members,
        })
    }
}

fn parse<T: std::str::FromStr>(v: Option<&str>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Format(format!("missing value for {key}")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad value for {key}")))
}

/// MSB-first bit packer.
struct BitPacker {
    out: Vec<u8>,
    acc: u64,
    n_bits: u32,
}

impl BitPacker {
    fn new() -> Self {
        BitPacker { out: Vec::new(), acc: 0, n_bits: 0 }
    }

    fn push(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 32 && (bits == 32 || (value as u64) < (1u64 << bits)));
        self.acc = (self.acc << bits) | value as u64;
        self.n_bits += bits;
        while self.n_bits >= 8 {
            self.n_bits -= 8;
            self.out.push((self.acc >> self.n_bits) as u8);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n_bits > 0 {
            self.out.push((self.acc << (8 - self.n_bits)) as u8);
        }
        self.out
    }
}

struct BitUnpacker<'a> {
    data: &'a [u8],
    byte: usize,
    acc: u64,
    n_bits: u32,
}

impl<'a> BitUnpacker<'a> {
    fn new(data: &'a [u8]) -> Self {
        BitUnpacker { data, byte: 0, acc: 0, n_bits: 0 }
    }

    fn pull(&mut self, bits: u32) -> u32 {
        while self.n_bits < bits {
            let next = self.data.get(self.byte).copied().unwrap_or(0);
            self.byte += 1;
            self.acc = (self.acc << 8) | next as u64;
            self.n_bits += 8;
        }
        self.n_bits -= bits;
        ((self.acc >> self.n_bits) & ((1u64 << bits) - 1)) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_stream(rng: &mut ChaCha8Rng) -> TokenStream {
        let depth = rng.gen_range(1..=9usize);
        let frames = rng.gen_range(1..=40usize);
        let vocab_sizes: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=1024usize)).collect();
        let codes = vocab_sizes
            .iter()
            .map(|&v| (0..frames).map(|_| rng.gen_range(0..v as u32)).collect())
            .collect();
        TokenStream {
            codes,
            vocab_sizes,
            stride_total: 512,
            presented_rate_hz: 512.0,
            native_rate_hz: if rng.gen_bool(0.5) { 512.0 } else { 256.0 },
            members: vec!["EEG C3-REF".into(), "EEG C4-REF".into()],
        }
    }

    #[test]
    fn round_trip_random_streams() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..200 {
            let stream = random_stream(&mut rng);
            let path = dir.path().join(format!("s{i}.eegt"));
            stream.save(&path).unwrap();
            let back = TokenStream::load(&path).unwrap();
            assert_eq!(stream, back);
        }
    }

    #[test]
    fn bits_per_code_is_ceil_log2() {
        assert_eq!(TokenStream::bits_per_code(2), 1);
        assert_eq!(TokenStream::bits_per_code(3), 2);
        assert_eq!(TokenStream::bits_per_code(512), 9);
        assert_eq!(TokenStream::bits_per_code(1024), 10);
        assert_eq!(TokenStream::bits_per_code(1025), 11);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.eegt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(TokenStream::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_a_corruption_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.eegt");
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stream = random_stream(&mut rng);
        stream.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(TokenStream::load(&path), Err(Error::Corruption(_))));
    }

    #[test]
    fn out_of_range_code_is_rejected_on_save() {
        let stream = TokenStream {
            codes: vec![vec![4]],
            vocab_sizes: vec![4],
            stride_total: 512,
            presented_rate_hz: 512.0,
            native_rate_hz: 512.0,
            members: vec!["C3".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(stream.save(dir.path().join("x.eegt")).is_err());
    }
}

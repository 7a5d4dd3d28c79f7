//! Named parameter storage and the on-disk checkpoint archive.
//!
//! Checkpoint layout: magic `EEGK`, version `u16` LE, header length `u32`
//! LE, a text manifest (`meta` and `tensor` lines), then concatenated f32 LE
//! tensor data. `tensor` lines carry name, comma-separated shape, dtype and
//! byte offset into the data section, which lets loaders read subsets by
//! name.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EEGK";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f32>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// All model tensors, keyed by name. Iteration order is lexicographic, which
/// keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Vec<f32>, shape: Vec<usize>) {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.entries.insert(
            name.into(),
            Param { value, shape, trainable: true },
        );
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Vec<f32>, shape: Vec<usize>) {
        self.entries.insert(
            name.into(),
            Param { value, shape, trainable: false },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Mark every tensor non-trainable (used by the frozen regime).
    pub fn freeze_all(&mut self) {
        for p in self.entries.values_mut() {
            p.trainable = false;
        }
    }

    /// Gaussian init helper used by layer constructors.
    pub fn init_normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f32,
        rng: &mut ChaCha8Rng,
    ) {
        let n: usize = shape.iter().product();
        // Box-Muller on ChaCha draws keeps init independent of rand_distr
        // internals across versions.
        let mut value = Vec::with_capacity(n);
        for _ in 0..n {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            value.push((z as f32) * std);
        }
        self.insert(name, value, shape);
    }

    pub fn init_const(&mut self, name: impl Into<String>, shape: Vec<usize>, v: f32) {
        let n: usize = shape.iter().product();
        self.insert(name, vec![v; n], shape);
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &[(String, String)]) -> Result<()> {
        let mut manifest = String::new();
        for (k, v) in meta {
            manifest.push_str(&format!("meta\t{k}\t{v}\n"));
        }
        let mut offset = 0usize;
        for (name, p) in &self.entries {
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!(
                "tensor\t{name}\t{}\tf32\t{offset}\n",
                dims.join(",")
            ));
            offset += p.value.len() * 4;
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(manifest.len() as u32).to_le_bytes())?;
        w.write_all(manifest.as_bytes())?;
        for p in self.entries.values() {
            for &v in &p.value {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Tensors and metadata read back from a checkpoint file.
pub struct Checkpoint {
    pub tensors: BTreeMap<String, (Vec<f32>, Vec<usize>)>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format(format!("{}: truncated checkpoint", path.display())))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "{}: bad checkpoint magic {:?}",
                path.display(),
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        if u16::from_le_bytes(b2) != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint version",
                path.display()
            )));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let mlen = u32::from_le_bytes(b4) as usize;
        let mut mbytes = vec![0u8; mlen];
        r.read_exact(&mut mbytes)?;
        let manifest = String::from_utf8(mbytes)
            .map_err(|_| Error::Format("checkpoint manifest is not UTF-8".into()))?;
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;

        let mut tensors = BTreeMap::new();
        let mut meta = BTreeMap::new();
        for line in manifest.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.first() {
                Some(&"meta") if fields.len() >= 3 => {
                    meta.insert(fields[1].to_string(), fields[2..].join("\t"));
                }
                Some(&"tensor") if fields.len() == 5 => {
                    let name = fields[1].to_string();
                    let shape: Vec<usize> = if fields[2].is_empty() {
                        Vec::new()
                    } else {
                        fields[2]
                            .split(',')
                            .map(|d| {
                                d.parse().map_err(|_| {
                                    Error::Format(format!("bad shape for tensor {name}"))
                                })
                            })
                            .collect::<Result<_>>()?
                    };
                    if fields[3] != "f32" {
                        return Err(Error::Format(format!(
                            "tensor {name}: unsupported dtype {}",
                            fields[3]
                        )));
                    }
                    let offset: usize = fields[4]
                        .parse()
                        .map_err(|_| Error::Format(format!("bad offset for {name}")))?;
                    let n: usize = shape.iter().product();
                    let end = offset + n * 4;
                    if end > data.len() {
                        return Err(Error::Corruption(format!(
                            "tensor {name} extends past end of data section"
                        )));
                    }
                    let value: Vec<f32> = data[offset..end]
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    tensors.insert(name, (value, shape));
                }
                Some(&"") | None => {}
                _ => {
                    return Err(Error::Format(format!(
                        "unrecognized manifest line: {line:?}"
                    )))
                }
            }
        }
        Ok(Checkpoint { tensors, meta })
    }
}

/// Outcome of partially loading a checkpoint into a freshly initialized
/// parameter tree.
#[derive(Debug, Default)]
pub struct LoadReport {
    /// Model tensors whose name and shape matched the checkpoint.
    pub loaded: Vec<String>,
    /// Model tensors kept at their fresh initialization.
    pub initialized: Vec<String>,
    /// Checkpoint tensors that matched nothing (or mismatched in shape).
    pub skipped: Vec<String>,
}

/// Overlay checkpoint tensors onto `store` by name where shapes agree.
///
/// Errors when nothing matches at all, which signals a checkpoint from an
/// unrelated model family.
pub fn load_matching(store: &mut ParamStore, ckpt: &Checkpoint) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (name, param) in store.entries.iter_mut() {
        match ckpt.tensors.get(name) {
            Some((value, shape)) if *shape == param.shape => {
                param.value.clone_from(value);
                report.loaded.push(name.clone());
            }
            _ => report.initialized.push(name.clone()),
        }
    }
    for (name, (_, shape)) in &ckpt.tensors {
        let used = store
            .get(name)
            .map(|p| p.shape == *shape)
            .unwrap_or(false);
        if !used {
            report.skipped.push(name.clone());
        }
    }
    if report.loaded.is_empty() {
        return Err(Error::Config(
            "checkpoint shares no tensors with this model (incompatible checkpoint)".into(),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        store.init_normal("enc.w", vec![3, 2], 0.1, &mut rng);
        store.init_const("enc.b", vec![3], 0.5);
        store
            .save(&path, &[("kind".into(), "test".into())])
            .unwrap();
        let ckpt = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt.meta.get("kind").unwrap(), "test");
        assert_eq!(ckpt.tensors.len(), 2);
        let (v, s) = &ckpt.tensors["enc.w"];
        assert_eq!(s, &vec![3, 2]);
        assert_eq!(v, &store.get("enc.w").unwrap().value);
    }

    #[test]
    fn partial_load_reports_all_three_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut donor = ParamStore::new();
        donor.insert("backbone.w", vec![1.0, 2.0], vec![2]);
        donor.insert("disc.w", vec![9.0], vec![1]);
        donor.save(&path, &[]).unwrap();

        let mut target = ParamStore::new();
        target.insert("backbone.w", vec![0.0, 0.0], vec![2]);
        target.insert("adapter.w", vec![0.0], vec![1]);
        let ckpt = Checkpoint::load(&path).unwrap();
        let report = load_matching(&mut target, &ckpt).unwrap();
        assert_eq!(report.loaded, vec!["backbone.w"]);
        assert_eq!(report.initialized, vec!["adapter.w"]);
        assert_eq!(report.skipped, vec!["disc.w"]);
        assert_eq!(target.get("backbone.w").unwrap().value, vec![1.0, 2.0]);
    }

    #[test]
    fn fully_incompatible_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut donor = ParamStore::new();
        donor.insert("other.w", vec![1.0], vec![1]);
        donor.save(&path, &[]).unwrap();
        let mut target = ParamStore::new();
        target.insert("mine.w", vec![0.0], vec![1]);
        let ckpt = Checkpoint::load(&path).unwrap();
        assert!(load_matching(&mut target, &ckpt).is_err());
    }
}

//! Checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    8 bytes  "LSNCKPT\0"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes of JSON: spec, epoch, rng state, tensor index
//! data     f64 values of every indexed tensor, in index order
//! ```
//!
//! Momentum buffers are stored as `<name>#momentum` when present.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::arch::{BackboneSpec, Network};
use super::model::ModelState;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LSNCKPT\0";
pub const VERSION: u32 = 1;
const MOMENTUM_SUFFIX: &str = "#momentum";

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: BackboneSpec,
    epoch: u32,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

pub(crate) struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub(crate) struct Stored {
    pub spec: BackboneSpec,
    pub epoch: u32,
    rng: RngState,
    pub tensors: BTreeMap<String, StoredTensor>,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

impl ModelState {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let params = self.params();
        let mut entries = Vec::new();
        let mut blobs: Vec<&[f64]> = Vec::new();
        for (name, p) in &params {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: p.shape.clone(),
            });
            blobs.push(&p.value);
            if p.velocity.len() == p.value.len() {
                entries.push(TensorEntry {
                    name: format!("{name}{MOMENTUM_SUFFIX}"),
                    shape: p.shape.clone(),
                });
                blobs.push(&p.velocity);
            }
        }
        let mut spec = self.spec.clone();
        spec.pretrained_ref = None;
        let header = Header {
            spec,
            epoch: self.epoch,
            rng: RngState {
                seed: hex(&self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let io = |e| Error::io(path.display().to_string(), e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for blob in blobs {
            for v in blob {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Restores weights, momentum, epoch and rng stream.
    pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
        let stored = read_tensors(path)?;
        let seed = unhex(&stored.rng.seed).ok_or_else(|| ckpt_err(path, "bad rng seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stored.rng.stream);
        rng.set_word_pos(
            stored
                .rng
                .word_pos
                .parse()
                .map_err(|_| ckpt_err(path, "bad rng position"))?,
        );
        let mut placeholder = crate::seed::rng_from(0);
        let network = Network::build(&stored.spec, &mut placeholder)?;
        let mut model = ModelState {
            spec: stored.spec,
            network,
            epoch: stored.epoch,
            rng,
        };
        let mut tensors = stored.tensors;
        for (name, p) in model.params_mut() {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| ckpt_err(path, format!("missing tensor {name}")))?;
            if t.shape != p.shape {
                return Err(ckpt_err(
                    path,
                    format!("{name}: stored shape {:?}, model {:?}", t.shape, p.shape),
                ));
            }
            p.value = t.values;
            if let Some(m) = tensors.remove(&format!("{name}{MOMENTUM_SUFFIX}")) {
                p.velocity = m.values;
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(ckpt_err(path, format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }

    /// Loads a checkpoint and checks it matches `expected` (architecture,
    /// input geometry, class count, widths).
    pub fn load_checkpoint_for(path: &Path, expected: &BackboneSpec) -> Result<ModelState> {
        let model = Self::load_checkpoint(path)?;
        let s = &model.spec;
        if s.architecture != expected.architecture
            || s.input_size != expected.input_size
            || s.num_classes != expected.num_classes
            || s.channel_divisor != expected.channel_divisor
            || s.random_crop_from != expected.random_crop_from
        {
            return Err(ckpt_err(
                path,
                format!("checkpoint holds {}, expected {}", s.model_id(), expected.model_id()),
            ));
        }
        Ok(model)
    }
}

pub(crate) fn read_tensors(path: &Path) -> Result<Stored> {
    let io = |e| Error::io(path.display().to_string(), e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| ckpt_err(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint file"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| ckpt_err(path, "truncated header"))?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(ckpt_err(path, format!("unsupported checkpoint version {version}")));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(|_| ckpt_err(path, "truncated header"))?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json).map_err(|_| ckpt_err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ckpt_err(path, e.to_string()))?;
    header.spec.validate()?;

    let mut tensors = BTreeMap::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)
            .map_err(|_| ckpt_err(path, format!("truncated data in {}", entry.name)))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.insert(
            entry.name,
            StoredTensor {
                shape: entry.shape,
                values,
            },
        );
    }
    Ok(Stored {
        spec: header.spec,
        epoch: header.epoch,
        rng: header.rng,
        tensors,
    })
}


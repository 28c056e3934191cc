//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DNMTCKPT"
//! version      u32
//! metadata     u32 count, then count × (str key, str value)
//! directory    u32 count, then count × (str name, u32 rank, rank × u64 dim)
//! values       f64 × Σ product(dims), row-major, directory order
//! digest       32 bytes sha256 of everything above
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. Model dimensions are
//! stored in metadata under `model.*`; callers add their own keys.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelParams, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DNMTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus free-form string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = config_metadata(&self.params.config);
        for (k, v) in &self.metadata {
            meta.insert(k.clone(), v.clone());
        }
        let tensors = self.params.tensors();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, meta.len());
        for (k, v) in &meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, tensors.len());
        for t in &tensors {
            put_str(&mut out, &t.name);
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for t in &tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let count = r.u32()? as usize;
        let mut directory = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflow"))?);
            }
            directory.push((name, shape));
        }
        let mut tensors = Vec::with_capacity(directory.len());
        for (name, shape) in directory {
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt("tensor size overflow"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor size overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(name, shape, data)?);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let config = config_from_metadata(&mut metadata)?;
        let mut params = ModelParams::zeros(&config);
        params.load_tensors(&tensors)?;
        Ok(Self { params, metadata })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), ModelError> {
    let bytes = checkpoint.to_bytes();
    // Write to a sibling temp file first so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}

fn corrupt(why: &str) -> ModelError {
    ModelError::Checkpoint(format!("corrupt checkpoint: {why}"))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of file"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }
}

fn config_metadata(c: &ModelConfig) -> BTreeMap<String, String> {
    [
        ("model.src_vocab", c.src_vocab.to_string()),
        ("model.tgt_vocab", c.tgt_vocab.to_string()),
        ("model.embedding", c.embedding.to_string()),
        ("model.case_embedding", c.case_embedding.to_string()),
        ("model.hidden", c.hidden.to_string()),
        ("model.layers", c.layers.to_string()),
        ("model.input_feed", c.input_feed.to_string()),
        ("model.max_len", c.max_len.to_string()),
        ("model.init_scale", format!("{:016x}", c.init_scale.to_bits())),
        ("model.bos_id", c.bos_id.to_string()),
        ("model.eos_id", c.eos_id.to_string()),
        ("model.pad_id", c.pad_id.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

// Removes the `model.*` keys from `meta` and rebuilds the configuration.
fn config_from_metadata(meta: &mut BTreeMap<String, String>) -> Result<ModelConfig, ModelError> {
    fn take<T: std::str::FromStr>(meta: &mut BTreeMap<String, String>, key: &str) -> Result<T, ModelError> {
        let v = meta
            .remove(key)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing metadata key {key}")))?;
        v.parse()
            .map_err(|_| ModelError::Checkpoint(format!("bad value {v:?} for {key}")))
    }
    let scale_bits: String = take(meta, "model.init_scale")?;
    let init_scale = u64::from_str_radix(&scale_bits, 16)
        .map(f64::from_bits)
        .map_err(|_| ModelError::Checkpoint("bad model.init_scale".into()))?;
    let config = ModelConfig {
        src_vocab: take(meta, "model.src_vocab")?,
        tgt_vocab: take(meta, "model.tgt_vocab")?,
        embedding: take(meta, "model.embedding")?,
        case_embedding: take(meta, "model.case_embedding")?,
        hidden: take(meta, "model.hidden")?,
        layers: take(meta, "model.layers")?,
        input_feed: take(meta, "model.input_feed")?,
        max_len: take(meta, "model.max_len")?,
        init_scale,
        bos_id: take(meta, "model.bos_id")?,
        eos_id: take(meta, "model.eos_id")?,
        pad_id: take(meta, "model.pad_id")?,
    };
    config.validate()?;
    Ok(config)
}

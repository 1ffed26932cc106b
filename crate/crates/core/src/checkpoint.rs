//! Binary checkpoint files. Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "LATINPNT"
//! version    u32
//! header     u32 length + UTF-8 JSON
//! tensors    u32 count, then per tensor:
//!              u32 name length, name, u32 rank, rank × u64 dims, f32 data
//! optimizer  u8 flag; if 1: u64 step, then m and v tensors in parameter order
//!              (same per-tensor encoding, names omitted: u32 0)
//! checksum   32-byte SHA-256 of every preceding byte
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Vocabulary};
use crate::latent::{InpaintNet, LatentRnn, LatentRnnConfig};
use crate::nn::{AdamConfig, AdamState, NnError, ParameterStore, Tensor};
use crate::vae::{MeasureVae, VaeConfig, VaeError};

pub const MAGIC: &[u8; 8] = b"LATINPNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint format version {found} is not supported (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    WrongKind { expected: CheckpointKind, found: CheckpointKind },
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Latent(#[from] crate::latent::LatentError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Vae,
    Inpaint,
}

/// Frozen-VAE reference stored inside an InpaintNet checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: CheckpointKind,
    pub vocabulary: Vec<String>,
    pub vae: VaeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentRnnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vae_ref: Option<VaeRef>,
    /// Training configuration snapshot.
    #[serde(default)]
    pub train: serde_json::Value,
    /// Free-form run facts (epochs, best epoch, metrics).
    #[serde(default)]
    pub info: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn from_adam(adam: &AdamState<f32>) -> Self {
        Self {
            config: adam.config,
            step: adam.step,
            m: adam.m.clone(),
            v: adam.v.clone(),
        }
    }

    pub fn into_adam(self) -> AdamState<f32> {
        AdamState {
            config: self.config,
            step: self.step,
            m: self.m,
            v: self.v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optimizer: Option<OptimizerState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>), CheckpointError> {
        let name_len = self.u32()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::CorruptFile("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::CorruptFile(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= self.buf.len()))
            .ok_or_else(|| CheckpointError::CorruptFile(format!("tensor {name} has impossible shape {shape:?}")))?;
        let bytes = self.take(4 * n)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_tensor(&mut out, name, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                let cfg = serde_json::to_vec(&opt.config).expect("adam config serializes");
                put_u32(&mut out, cfg.len() as u32);
                out.extend_from_slice(&cfg);
                out.extend_from_slice(&opt.step.to_le_bytes());
                put_u32(&mut out, opt.m.len() as u32);
                for t in opt.m.iter().chain(&opt.v) {
                    put_tensor(&mut out, "", t);
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::CorruptFile("missing magic bytes or file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::CorruptFile("checksum mismatch".into()));
        }
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let clen = r.u32()? as usize;
                let config: AdamConfig = serde_json::from_slice(r.take(clen)?)?;
                let step = r.u64()?;
                let n = r.u32()? as usize;
                let mut m = Vec::with_capacity(n.min(4096));
                let mut v = Vec::with_capacity(n.min(4096));
                for _ in 0..n {
                    m.push(r.tensor()?.1);
                }
                for _ in 0..n {
                    v.push(r.tensor()?.1);
                }
                Some(OptimizerState { config, step, m, v })
            }
            f => return Err(CheckpointError::CorruptFile(format!("bad optimizer flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(CheckpointError::CorruptFile(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            header,
            tensors,
            optimizer,
        })
    }

    /// Write the file and return its SHA-256 (hex).
    pub fn save(&self, path: &Path) -> Result<String, CheckpointError> {
        let bytes = self.to_bytes();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        std::fs::write(path, &bytes).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&read(path)?)
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, CheckpointError> {
        Ok(Vocabulary::from_tokens(self.header.vocabulary.clone())?)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// SHA-256 (hex) of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String, CheckpointError> {
    Ok(hex::encode(Sha256::digest(read(path)?)))
}

/// SHA-256 (hex) over parameter names, shapes and values.
pub fn store_digest(store: &ParameterStore<f32>) -> String {
    let mut h = Sha256::new();
    for id in store.ids() {
        let t = store.get(id);
        h.update(store.name(id).as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &x in t.data() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn named(store: &ParameterStore<f32>) -> Vec<(String, Tensor<f32>)> {
    store.ids().map(|id| (store.name(id).to_string(), store.get(id).clone())).collect()
}

pub fn vae_checkpoint(
    vae: &MeasureVae<f32>,
    vocab: &Vocabulary,
    train: serde_json::Value,
    info: serde_json::Value,
    optimizer: Option<&AdamState<f32>>,
) -> Checkpoint {
    Checkpoint {
        header: Header {
            kind: CheckpointKind::Vae,
            vocabulary: vocab.tokens().to_vec(),
            vae: vae.config().clone(),
            latent: None,
            vae_ref: None,
            train,
            info,
        },
        tensors: named(vae.store()),
        optimizer: optimizer.map(OptimizerState::from_adam),
    }
}

#[derive(Debug, Clone)]
pub struct LoadedVae {
    pub vae: MeasureVae<f32>,
    pub vocab: Vocabulary,
    pub header: Header,
    pub sha256: String,
    pub optimizer: Option<OptimizerState>,
}

pub fn load_vae(path: &Path) -> Result<LoadedVae, CheckpointError> {
    let bytes = read(path)?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    if ck.header.kind != CheckpointKind::Vae {
        return Err(CheckpointError::WrongKind {
            expected: CheckpointKind::Vae,
            found: ck.header.kind,
        });
    }
    let vocab = ck.vocabulary()?;
    if vocab.len() != ck.header.vae.vocab_size {
        return Err(CheckpointError::Mismatch(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            ck.header.vae.vocab_size
        )));
    }
    let mut vae = MeasureVae::new(ck.header.vae.clone(), 0)?;
    vae.store_mut().load_values(ck.tensors)?;
    Ok(LoadedVae {
        vae,
        vocab,
        header: ck.header,
        sha256: hex::encode(Sha256::digest(&bytes)),
        optimizer: ck.optimizer,
    })
}

pub fn inpaint_checkpoint(
    rnn: &LatentRnn<f32>,
    vae_header: &Header,
    vae_ref: VaeRef,
    train: serde_json::Value,
    info: serde_json::Value,
    optimizer: Option<&AdamState<f32>>,
) -> Checkpoint {
    Checkpoint {
        header: Header {
            kind: CheckpointKind::Inpaint,
            vocabulary: vae_header.vocabulary.clone(),
            vae: vae_header.vae.clone(),
            latent: Some(rnn.config().clone()),
            vae_ref: Some(vae_ref),
            train,
            info,
        },
        tensors: named(rnn.store()),
        optimizer: optimizer.map(OptimizerState::from_adam),
    }
}

#[derive(Debug, Clone)]
pub struct LoadedInpaint {
    pub net: InpaintNet<f32>,
    pub vocab: Vocabulary,
    pub header: Header,
    pub sha256: String,
    pub vae_sha256: String,
    pub vae_path: PathBuf,
    pub optimizer: Option<OptimizerState>,
}

/// Resolve the VAE reference: the stored path (relative paths are taken
/// from the InpaintNet checkpoint's directory), else a file of the same
/// name next to the InpaintNet checkpoint.
fn resolve_vae(inpaint_path: &Path, r: &VaeRef) -> PathBuf {
    let stored = PathBuf::from(&r.path);
    let dir = inpaint_path.parent().unwrap_or(Path::new("."));
    let primary = if stored.is_absolute() { stored.clone() } else { dir.join(&stored) };
    if primary.exists() {
        return primary;
    }
    match stored.file_name() {
        Some(name) if dir.join(name).exists() => dir.join(name),
        _ => primary,
    }
}

pub fn load_inpaint(path: &Path) -> Result<LoadedInpaint, CheckpointError> {
    let bytes = read(path)?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    if ck.header.kind != CheckpointKind::Inpaint {
        return Err(CheckpointError::WrongKind {
            expected: CheckpointKind::Inpaint,
            found: ck.header.kind,
        });
    }
    let (Some(latent), Some(vae_ref)) = (ck.header.latent.clone(), ck.header.vae_ref.clone()) else {
        return Err(CheckpointError::CorruptFile("inpaint checkpoint lacks its latent config or VAE reference".into()));
    };
    let vae_path = resolve_vae(path, &vae_ref);
    let vae = load_vae(&vae_path)?;
    if vae.sha256 != vae_ref.sha256 {
        return Err(CheckpointError::Mismatch(format!(
            "VAE {} has hash {}, checkpoint expects {}",
            vae_path.display(),
            vae.sha256,
            vae_ref.sha256
        )));
    }
    let mut net = InpaintNet::new(vae.vae, latent, 0)?;
    net.rnn.store_mut().load_values(ck.tensors)?;
    Ok(LoadedInpaint {
        net,
        vocab: vae.vocab,
        header: ck.header,
        sha256: hex::encode(Sha256::digest(&bytes)),
        vae_sha256: vae.sha256,
        vae_path,
        optimizer: ck.optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let vocab = Vocabulary::build(["C4", "D4"]);
        let mut cfg = VaeConfig::small(vocab.len(), 4, 6);
        cfg.embed_dim = 3;
        let vae: MeasureVae<f32> = MeasureVae::new(cfg, 1).unwrap();
        let adam = AdamState::new(AdamConfig::default(), vae.store());
        vae_checkpoint(&vae, &vocab, serde_json::json!({"seed": 1}), serde_json::Value::Null, Some(&adam))
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::CorruptFile(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::CorruptFile(_))));
    }

    #[test]
    fn old_version_is_reported() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        let n = bytes.len();
        let digest = Sha256::digest(&bytes[..n - 32]);
        bytes[n - 32..].copy_from_slice(&digest);
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, CheckpointError::VersionMismatch { found: 0, expected: 1 }));
        assert!(err.to_string().contains("version 0"));
    }
}

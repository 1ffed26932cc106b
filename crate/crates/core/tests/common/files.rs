use std::path::{Path, PathBuf};

use inpaint_core::checkpoint::{inpaint_checkpoint, vae_checkpoint, VaeRef};
use inpaint_core::codec::Vocabulary;
use inpaint_core::latent::{InpaintNet, LatentRnnConfig};
use inpaint_core::vae::{MeasureVae, VaeConfig};
use serde_json::json;

use super::synth;

pub struct ModelFiles {
    pub vae: PathBuf,
    pub inpaint: PathBuf,
    pub vae_sha256: String,
    pub inpaint_sha256: String,
}

/// Write `net` as `vae.ckpt` + `inpaint.ckpt` in `dir`.
pub fn save_pair(dir: &Path, net: &InpaintNet<f32>, vocab: &Vocabulary) -> ModelFiles {
    let vae = dir.join("vae.ckpt");
    let inpaint = dir.join("inpaint.ckpt");
    let vck = vae_checkpoint(&net.vae, vocab, json!({}), json!({}), None);
    let vae_sha256 = vck.save(&vae).unwrap();
    let r = VaeRef {
        path: "vae.ckpt".into(),
        sha256: vae_sha256.clone(),
    };
    let ick = inpaint_checkpoint(&net.rnn, &vck.header, r, json!({"seed": 0}), json!({}), None);
    let inpaint_sha256 = ick.save(&inpaint).unwrap();
    ModelFiles {
        vae,
        inpaint,
        vae_sha256,
        inpaint_sha256,
    }
}

pub struct TinyModel {
    pub vocab: Vocabulary,
    pub pool: Vec<Vec<String>>,
    pub files: ModelFiles,
}

/// Untrained tiny model over a pool of 8 melodic measures.
pub fn tiny_model(dir: &Path, seed: u64) -> TinyModel {
    let pool = synth::melodic_measures(8, seed);
    let vocab = Vocabulary::build(pool.iter().flatten());
    let vae = MeasureVae::new(VaeConfig::small(vocab.len(), 4, 8), seed).unwrap();
    let net = InpaintNet::new(vae, LatentRnnConfig::small(4, 8), seed + 1).unwrap();
    let files = save_pair(dir, &net, &vocab);
    TinyModel { vocab, pool, files }
}

/// A score of `n` measures cycling through `pool`.
pub fn score(pool: &[Vec<String>], n: usize) -> Vec<Vec<String>> {
    (0..n).map(|i| pool[(i * 3) % pool.len()].clone()).collect()
}

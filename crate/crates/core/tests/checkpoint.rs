mod common;

use common::files::{save_pair, tiny_model};
use inpaint_core::checkpoint::{file_sha256, load_inpaint, load_vae, store_digest, Checkpoint, CheckpointError};
use inpaint_core::latent::{InpaintNet, LatentRnnConfig};
use inpaint_core::vae::{MeasureVae, VaeConfig};

#[test]
fn files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_model(dir.path(), 3);
    assert_eq!(file_sha256(&m.files.vae).unwrap(), m.files.vae_sha256);
    let vae = load_vae(&m.files.vae).unwrap();
    assert_eq!(vae.vocab, m.vocab);
    let expected = MeasureVae::<f32>::new(VaeConfig::small(m.vocab.len(), 4, 8), 3).unwrap();
    assert_eq!(store_digest(vae.vae.store()), store_digest(expected.store()));

    let net = load_inpaint(&m.files.inpaint).unwrap();
    assert_eq!(net.sha256, m.files.inpaint_sha256);
    assert_eq!(net.vae_sha256, m.files.vae_sha256);
    let fresh = InpaintNet::new(expected, LatentRnnConfig::small(4, 8), 4).unwrap();
    assert_eq!(net.net.rnn.store().values(), fresh.rnn.store().values());

    let again = tempfile::tempdir().unwrap();
    let files = save_pair(again.path(), &net.net, &net.vocab);
    assert_eq!(std::fs::read(&files.inpaint).unwrap(), std::fs::read(&m.files.inpaint).unwrap());
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_model(dir.path(), 5);
    let bytes = std::fs::read(&m.files.vae).unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_vae(&bad), Err(CheckpointError::CorruptFile(_))));
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x10;
    std::fs::write(&bad, &flipped).unwrap();
    assert!(matches!(load_vae(&bad), Err(CheckpointError::CorruptFile(_))));
    assert!(matches!(load_vae(&dir.path().join("missing.ckpt")), Err(CheckpointError::Io { .. })));
    assert!(matches!(load_vae(&m.files.inpaint), Err(CheckpointError::WrongKind { .. })));
    assert!(matches!(load_inpaint(&m.files.vae), Err(CheckpointError::WrongKind { .. })));
    let parsed = Checkpoint::load(&m.files.vae).unwrap();
    assert_eq!(parsed.tensors.len(), load_vae(&m.files.vae).unwrap().vae.store().len());
}

#[test]
fn inpaint_checkpoint_requires_its_exact_vae() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_model(dir.path(), 7);
    let other = tempfile::tempdir().unwrap();
    let o = tiny_model(other.path(), 8);
    std::fs::copy(&o.files.vae, &m.files.vae).unwrap();
    let err = load_inpaint(&m.files.inpaint).unwrap_err();
    assert!(matches!(err, CheckpointError::Mismatch(_)), "{err}");
    std::fs::remove_file(&m.files.vae).unwrap();
    assert!(matches!(load_inpaint(&m.files.inpaint), Err(CheckpointError::Io { .. })));
}

#[test]
fn moved_pair_still_loads() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_model(dir.path(), 9);
    let dest = tempfile::tempdir().unwrap();
    for f in [&m.files.vae, &m.files.inpaint] {
        std::fs::rename(f, dest.path().join(f.file_name().unwrap())).unwrap();
    }
    let l = load_inpaint(&dest.path().join("inpaint.ckpt")).unwrap();
    assert_eq!(l.vae_sha256, m.files.vae_sha256);
}

//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   5 bytes  "AHNQS"
//! version u8       currently 1
//! kind    u8       0 = session-only, 1 = hierarchical, 2 = attentive
//! V       u64      vocabulary size
//! d_h     u64      hidden dimension
//! tensors           in declaration order, each:
//!   rows  u64
//!   cols  u64      (vectors are written as one row)
//!   data  rows*cols f64, row-major
//! vocab   u64 length + that many UTF-8 bytes (path of the vocabulary file)
//! ```
//!
//! The round trip is bit-exact: loading a saved model reproduces every
//! parameter byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Model, ModelConfig, ModelKind, ModelParams};

const MAGIC: &[u8; 5] = b"AHNQS";
const VERSION: u8 = 1;

fn kind_byte(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Nqs => 0,
        ModelKind::Hnqs => 1,
        ModelKind::Ahnqs => 2,
    }
}

fn kind_from_byte(byte: u8) -> Result<ModelKind> {
    match byte {
        0 => Ok(ModelKind::Nqs),
        1 => Ok(ModelKind::Hnqs),
        2 => Ok(ModelKind::Ahnqs),
        other => Err(Error::Checkpoint(format!("unknown model kind byte {other}"))),
    }
}

/// Writes the model and the vocabulary path it was trained against.
pub fn save_checkpoint(model: &Model, vocab_path: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, kind_byte(model.config.kind)])?;
    w.write_all(&(model.config.vocab_size as u64).to_le_bytes())?;
    w.write_all(&(model.config.hidden_dim as u64).to_le_bytes())?;
    for (_, tensor) in model.params.tensors() {
        let (rows, cols) = tensor.shape();
        w.write_all(&(rows as u64).to_le_bytes())?;
        w.write_all(&(cols as u64).to_le_bytes())?;
        for &x in tensor.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    let vocab_bytes = vocab_path.as_bytes();
    w.write_all(&(vocab_bytes.len() as u64).to_le_bytes())?;
    w.write_all(vocab_bytes)?;
    w.flush()?;
    Ok(())
}

struct CheckpointReader<R: Read> {
    inner: R,
}

impl<R: Read> CheckpointReader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>(what)?))
    }

    fn f64_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; n * 8];
        self.inner
            .read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let got_rows = self.u64(name)? as usize;
        let got_cols = self.u64(name)? as usize;
        if got_rows != rows || got_cols != cols {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: expected {rows}x{cols}, found {got_rows}x{got_cols}"
            )));
        }
        self.f64_block(rows * cols, name)
    }
}

/// Loads a checkpoint, returning the model and the recorded vocabulary path.
pub fn load_checkpoint(path: &Path) -> Result<(Model, String)> {
    let mut r = CheckpointReader { inner: BufReader::new(File::open(path)?) };

    let magic = r.bytes::<5>("magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let [version, kind_byte_value] = r.bytes::<2>("header")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let kind = kind_from_byte(kind_byte_value)?;
    let vocab_size = r.u64("vocab size")? as usize;
    let hidden_dim = r.u64("hidden dim")? as usize;

    let config = ModelConfig::new(kind, vocab_size, hidden_dim);
    config.validate().map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
    let mut params = ModelParams::zeros(&config)
        .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;

    // Read tensors in declaration order into the zero-initialized shapes.
    let shapes: Vec<(&'static str, usize, usize)> = params
        .tensors()
        .iter()
        .map(|(name, t)| {
            let (rows, cols) = t.shape();
            (*name, rows, cols)
        })
        .collect();
    let mut blocks = Vec::with_capacity(shapes.len());
    for (name, rows, cols) in &shapes {
        blocks.push(r.tensor(name, *rows, *cols)?);
    }
    for (slice, block) in params.tensor_slices_mut().into_iter().zip(&blocks) {
        slice.copy_from_slice(block);
    }

    let vocab_len = r.u64("vocab path length")? as usize;
    let mut vocab_raw = vec![0u8; vocab_len];
    r.inner
        .read_exact(&mut vocab_raw)
        .map_err(|_| Error::Checkpoint("truncated while reading vocab path".into()))?;
    let vocab_path = String::from_utf8(vocab_raw)
        .map_err(|_| Error::Checkpoint("vocab path is not UTF-8".into()))?;

    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }

    Ok((Model::new(config, params), vocab_path))
}

/// Loads a checkpoint and insists on a specific model kind.
pub fn load_checkpoint_expecting(path: &Path, kind: ModelKind) -> Result<(Model, String)> {
    let (model, vocab) = load_checkpoint(path)?;
    if model.config.kind != kind {
        return Err(Error::Checkpoint(format!(
            "model kind mismatch: checkpoint holds {}, expected {}",
            model.config.kind.name(),
            kind.name()
        )));
    }
    Ok((model, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn temp_path(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("ahnqs-ckpt-{}-{name}", std::process::id()))
    }

    fn sample_model(kind: ModelKind) -> Model {
        let config = ModelConfig::new(kind, 7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let params = ModelParams::init(&config, &mut rng).unwrap();
        Model::new(config, params)
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        for kind in [ModelKind::Nqs, ModelKind::Hnqs, ModelKind::Ahnqs] {
            let model = sample_model(kind);
            let path = temp_path(&format!("rt-{}", kind.name()));
            save_checkpoint(&model, "vocab.tsv", &path).unwrap();
            let (loaded, vocab) = load_checkpoint(&path).unwrap();
            assert_eq!(vocab, "vocab.tsv");
            assert_eq!(loaded.config.kind, kind);
            assert_eq!(loaded.params.flatten(), model.params.flatten());
            std::fs::remove_file(&path).ok();
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let model = sample_model(ModelKind::Ahnqs);
        let path = temp_path("trunc");
        save_checkpoint(&model, "vocab.tsv", &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let path = temp_path("magic");
        std::fs::write(&path, b"NOPE!xxxxxxxxxxxxxxxxxxx").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn kind_mismatch_rejected() {
        let model = sample_model(ModelKind::Nqs);
        let path = temp_path("kind");
        save_checkpoint(&model, "vocab.tsv", &path).unwrap();
        let err = load_checkpoint_expecting(&path, ModelKind::Ahnqs).unwrap_err();
        assert!(err.to_string().contains("mismatch"));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn trailing_garbage_rejected() {
        let model = sample_model(ModelKind::Hnqs);
        let path = temp_path("trailing");
        save_checkpoint(&model, "vocab.tsv", &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"));
        std::fs::remove_file(&path).ok();
    }
}

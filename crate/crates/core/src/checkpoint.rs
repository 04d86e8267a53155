//! Binary checkpoint: magic, version, model config, vocabulary and a named
//! tensor table stored as little-endian f32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CaptionModel, ModelConfig};
use crate::numerics::Matrix;
use crate::vocab::Vocabulary;
use crate::wire::{put_f32s, put_string, put_u32, put_u64, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HRNE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &CaptionModel, vocab: &Vocabulary) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        Ok(Checkpoint {
            config: model.config().clone(),
            vocab: vocab.clone(),
            tensors: model
                .params()
                .tensors()
                .iter()
                .map(|t| StoredTensor {
                    name: t.name.clone(),
                    dims: t.dims.clone(),
                    values: t.value.data().iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        })
    }

    /// Rebuilds the model. Tensor names, order and shapes must match the
    /// layout implied by the embedded config.
    pub fn to_model(&self) -> Result<CaptionModel> {
        let mut model = CaptionModel::new(self.config.clone(), 0)?;
        self.check_layout(&model)?;
        let ids: Vec<_> = model.params().ids().collect();
        for (id, stored) in ids.into_iter().zip(&self.tensors) {
            let m = model.params_mut().value_mut(id);
            let (rows, cols) = m.shape();
            *m = Matrix::from_vec(rows, cols, stored.values.iter().map(|&v| v as f64).collect())?;
        }
        Ok(model)
    }

    fn check_layout(&self, fresh: &CaptionModel) -> Result<()> {
        let expected = fresh.params().tensors();
        if expected.len() != self.tensors.len() {
            return Err(Error::Malformed(format!(
                "checkpoint has {} tensors, config implies {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (want, got) in expected.iter().zip(&self.tensors) {
            if want.name != got.name {
                return Err(Error::Malformed(format!("expected tensor {}, found {}", want.name, got.name)));
            }
            if want.dims != got.dims || got.values.len() != want.len() {
                return Err(Error::TensorMismatch {
                    name: got.name.clone(),
                    expected: want.dims.clone(),
                    found: got.dims.clone(),
                });
            }
        }
        if self.vocab.len() != self.config.vocab_size {
            return Err(Error::Malformed(format!(
                "vocabulary block has {} tokens, config says {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_string(&mut out, &self.config.to_text());
        put_u32(&mut out, self.vocab.len() as u32);
        for tok in self.vocab.tokens() {
            put_string(&mut out, tok);
        }
        put_u32(&mut out, self.tensors.len() as u32);
        for t in &self.tensors {
            put_string(&mut out, &t.name);
            put_u32(&mut out, t.dims.len() as u32);
            for &d in &t.dims {
                put_u64(&mut out, d as u64);
            }
            put_f32s(&mut out, &t.values);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let config = ModelConfig::from_text(&r.string("config block")?)?;
        let count = r.u32("vocabulary count")? as usize;
        let tokens = (0..count).map(|_| r.string("vocabulary token")).collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_tokens(tokens)?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rank = r.u32("tensor rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u64("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Malformed(format!("tensor {name} is too large")))?;
            let values = r.f32s(len, &format!("tensor {name}"))?;
            tensors.push(StoredTensor { name, dims, values });
        }
        r.finish()?;
        let ckpt = Checkpoint { config, vocab, tensors };
        ckpt.check_layout(&CaptionModel::new(ckpt.config.clone(), 0)?)?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck_config;
    use crate::numerics::{Rng, Vector};
    use crate::vocab::SPECIALS;

    fn sample() -> (Checkpoint, CaptionModel) {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..7).map(|i| format!("w{i}")));
        let vocab = Vocabulary::from_tokens(tokens).unwrap();
        let model = CaptionModel::new(gradcheck_config(), 5).unwrap();
        (Checkpoint::from_model(&model, &vocab).unwrap(), model)
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let (ckpt, _) = sample();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rebuilt_model_generates_identically() {
        let (ckpt, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let a = ckpt.to_model().unwrap();
        let b = load_checkpoint(&path).unwrap().to_model().unwrap();
        assert_eq!(a.params(), b.params());
        let mut rng = Rng::new(1);
        let xs: Vec<Vector> = (0..12).map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        assert_eq!(a.generate(&xs).unwrap(), b.generate(&xs).unwrap());
    }

    #[test]
    fn distinct_errors() {
        let (ckpt, _) = sample();
        let bytes = ckpt.to_bytes();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"NOPE");
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::UnsupportedVersion(999))));

        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..2]), Err(Error::Truncated(_))));

        let mut wrong = ckpt.clone();
        wrong.tensors[0].dims = vec![wrong.tensors[0].dims[1], wrong.tensors[0].dims[0]];
        assert!(matches!(Checkpoint::from_bytes(&wrong.to_bytes()), Err(Error::TensorMismatch { .. })));

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Malformed(_))));
    }

    #[test]
    fn vocabulary_size_must_match() {
        let model = CaptionModel::new(gradcheck_config(), 5).unwrap();
        let vocab = Vocabulary::from_tokens(SPECIALS.iter().map(|s| s.to_string()).collect()).unwrap();
        assert!(Checkpoint::from_model(&model, &vocab).is_err());
    }
}

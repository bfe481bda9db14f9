//! Versioned binary checkpoint holding everything `evaluate` and `amend`
//! need: vocabulary, autoencoder, task model, prototypes and configs.
//!
//! Layout (little-endian): magic, `u32` version, a dimension header
//! (`classes`, `input_dim`, `code_dim`, `feature_dim`), a length-prefixed
//! JSON config blob, then vocabulary, networks, prototypes and class-mean
//! confidences. Networks are stored as layer shapes followed by raw `f64`
//! parameter blocks, so reloading is bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ldl_core::amend::{EngineConfig, PrototypeMode, Predictor, Prototypes, TaskModel};
use ldl_core::embeddings::EmotionVocabulary;
use ldl_core::nn::{Activation, DenseLayer, Matrix, MlpNetwork};
use ldl_core::semantic::{AutoEncoder, SemanticConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"LDLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read checkpoint {}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write checkpoint {}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Configuration snapshot stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub engine: EngineConfig,
    pub semantic: SemanticConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ConfigSnapshot,
    pub vocab: EmotionVocabulary,
    pub autoencoder: AutoEncoder,
    pub model: TaskModel,
    pub prototypes: Prototypes,
    pub alpha_class_means: Vec<f64>,
}

impl Checkpoint {
    pub fn predictor(&self) -> Predictor {
        Predictor {
            model: self.model.clone(),
            prototypes: self.prototypes.clone(),
            autoencoder: self.autoencoder.clone(),
            vocab: self.vocab.clone(),
            config: self.config.engine.clone(),
            alpha_class_means: self.alpha_class_means.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(self.model.classes() as u32);
        w.u32(self.model.input_dim() as u32);
        w.u32(self.autoencoder.code_dim() as u32);
        w.u32(self.model.feature_dim() as u32);
        let blob = serde_json::to_vec(&self.config).expect("config serializes");
        w.u32(blob.len() as u32);
        w.0.extend_from_slice(&blob);

        w.u32(self.vocab.classes() as u32);
        w.u32(self.vocab.dim() as u32);
        for word in self.vocab.words() {
            w.u32(word.len() as u32);
            w.0.extend_from_slice(word.as_bytes());
        }
        w.f64s(self.vocab.vectors().as_slice());

        w.network(self.autoencoder.encoder.layers());
        w.network(self.autoencoder.decoder.layers());
        w.network(self.model.backbone.layers());
        w.network(std::slice::from_ref(&self.model.head));

        w.u8(match self.prototypes.mode {
            PrototypeMode::CountNormalized => 0,
            PrototypeMode::WeightedMean => 1,
        });
        for &v in &self.prototypes.valid {
            w.u8(v as u8);
        }
        w.f64s(self.prototypes.centers.as_slice());
        w.f64s(&self.alpha_class_means);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if !bytes.starts_with(MAGIC) {
            return Err(CheckpointError::BadMagic);
        }
        r.take(MAGIC.len())?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let classes = r.u32()? as usize;
        let input_dim = r.u32()? as usize;
        let code_dim = r.u32()? as usize;
        let feature_dim = r.u32()? as usize;
        let blob_len = r.u32()? as usize;
        let config: ConfigSnapshot = serde_json::from_slice(r.take(blob_len)?)
            .map_err(|e| corrupt(format!("config blob: {e}")))?;

        let words_n = r.u32()? as usize;
        let vocab_dim = r.u32()? as usize;
        expect("vocabulary size", classes, words_n)?;
        expect("vocabulary dimension", code_dim, vocab_dim)?;
        let mut words = Vec::with_capacity(words_n);
        for _ in 0..words_n {
            let len = r.u32()? as usize;
            let word = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("word is not UTF-8"))?;
            words.push(word.to_string());
        }
        let vectors = Matrix::from_vec(words_n, vocab_dim, r.f64s(words_n * vocab_dim)?)
            .map_err(|e| corrupt(e.to_string()))?;
        let vocab = EmotionVocabulary::new(words, vectors).map_err(|e| corrupt(e.to_string()))?;

        let encoder = r.network()?;
        let decoder = r.network()?;
        let backbone = r.network()?;
        let mut head = r.network()?.layers().to_vec();
        if head.len() != 1 {
            return Err(corrupt("head must be a single layer"));
        }
        let head = head.remove(0);
        expect("encoder input", input_dim, encoder.in_dim())?;
        expect("encoder output", code_dim, encoder.out_dim())?;
        expect("decoder output", input_dim, decoder.out_dim())?;
        expect("backbone input", input_dim, backbone.in_dim())?;
        expect("backbone output", feature_dim, backbone.out_dim())?;
        expect("head output", classes, head.out_dim())?;
        let autoencoder = AutoEncoder::from_parts(encoder, decoder).map_err(|e| corrupt(e.to_string()))?;
        let model = TaskModel::from_parts(backbone, head).map_err(|e| corrupt(e.to_string()))?;

        let mode = match r.u8()? {
            0 => PrototypeMode::CountNormalized,
            1 => PrototypeMode::WeightedMean,
            m => return Err(corrupt(format!("prototype mode {m}"))),
        };
        let valid = (0..classes)
            .map(|_| match r.u8()? {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(corrupt(format!("validity flag {v}"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        let centers = Matrix::from_vec(classes, feature_dim, r.f64s(classes * feature_dim)?)
            .map_err(|e| corrupt(e.to_string()))?;
        let alpha_class_means = r.f64s(classes)?;
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            vocab,
            autoencoder,
            model,
            prototypes: Prototypes { centers, mode, valid },
            alpha_class_means,
        })
    }

    /// Writes through a temporary file in the target directory and renames
    /// it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let err = |source| CheckpointError::Write { path: path.to_path_buf(), source };
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir).map_err(err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
        tmp.write_all(&self.to_bytes()).map_err(err)?;
        tmp.as_file().sync_all().map_err(err)?;
        tmp.persist(path).map_err(|e| err(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn corrupt(m: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(m.into())
}

fn expect(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(corrupt(format!("{what}: header says {expected}, found {got}")));
    }
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn network(&mut self, layers: &[DenseLayer]) {
        self.u32(layers.len() as u32);
        for l in layers {
            self.u32(l.in_dim() as u32);
            self.u32(l.out_dim() as u32);
            self.u8(l.activation.code());
        }
        for l in layers {
            self.f64s(l.weights.as_slice());
            self.f64s(&l.bias);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.pos))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn network(&mut self) -> Result<MlpNetwork> {
        let n = self.u32()? as usize;
        let mut shapes = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let (i, o) = (self.u32()? as usize, self.u32()? as usize);
            let act = self.u8()?;
            let act = Activation::from_code(act).ok_or_else(|| corrupt(format!("activation code {act}")))?;
            shapes.push((i, o, act));
        }
        let mut layers = Vec::with_capacity(n);
        for (i, o, act) in shapes {
            let weights = Matrix::from_vec(o, i, self.f64s(o * i)?).map_err(|e| corrupt(e.to_string()))?;
            let bias = self.f64s(o)?;
            layers.push(DenseLayer::new(weights, bias, act).map_err(|e| corrupt(e.to_string()))?);
        }
        MlpNetwork::from_layers(layers).map_err(|e| corrupt(e.to_string()))
    }
}

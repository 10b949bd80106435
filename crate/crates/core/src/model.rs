//! Trained model and its checkpoint file.
//!
//! A checkpoint is a single JSON document:
//!
//! ```json
//! {
//!   "format": "hrsn-checkpoint",
//!   "version": 1,
//!   "config": {"word_dim": 300, "sentence_dim": 150, "document_dim": 75,
//!              "max_words": 33, "max_sentences": 123, "tau1": 1.0, "tau2": 3.0},
//!   "params": {
//!     "sentence": {"w": [M, M, M, M], "u": [M, M, M, M], "b": [[..], [..], [..], [..]]},
//!     "document": {...}
//!   }
//! }
//! ```
//!
//! where each `M` is `{"rows": r, "cols": c, "data": [row-major values]}` and
//! gate order is forget, input, output, candidate. Floats are written in
//! shortest round-trip form, so save followed by load is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::encoder::{encode_document, EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::numeric::Vector;
use crate::preprocess;
use crate::siamese::Thresholds;

pub const CHECKPOINT_FORMAT: &str = "hrsn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub sentence_dim: usize,
    pub document_dim: usize,
    pub max_words: usize,
    pub max_sentences: usize,
    pub tau1: f64,
    pub tau2: f64,
}

impl ModelConfig {
    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            word: self.word_dim,
            sentence: self.sentence_dim,
            document: self.document_dim,
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.tau1, self.tau2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: EncoderParams,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<P> {
    format: String,
    version: u32,
    config: ModelConfig,
    params: P,
}

impl Model {
    pub fn new(config: ModelConfig, params: EncoderParams) -> Result<Self> {
        params.validate()?;
        if params.dims() != config.dims() {
            return Err(Error::shape("model", format!("{:?}", config.dims()), format!("{:?}", params.dims())));
        }
        config.thresholds()?;
        if config.max_words == 0 || config.max_sentences == 0 {
            return Err(Error::Config("max_words and max_sentences must be positive".into()));
        }
        Ok(Model { config, params })
    }

    pub fn thresholds(&self) -> Thresholds {
        self.config.thresholds().expect("validated at construction")
    }

    /// Inference-mode embedding of raw text.
    pub fn embed_text(&self, text: &str, table: &EmbeddingTable) -> Result<Vector> {
        if table.dim() != self.config.word_dim {
            return Err(Error::shape(
                "embeddings",
                format!("word dim {}", self.config.word_dim),
                format!("word dim {}", table.dim()),
            ));
        }
        let doc = preprocess::encode_document(text, table, self.config.max_words, self.config.max_sentences)?;
        encode_document(&self.params, &doc, None)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            params: &self.params,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint<EncoderParams> = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Model::new(ckpt.config, ckpt.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

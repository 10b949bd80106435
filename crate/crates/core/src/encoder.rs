//! The two-level document encoder.
//!
//! The sentence level runs an LSTM over each sentence's word vectors and keeps
//! the final hidden state as the sentence embedding. The document level runs a
//! second LSTM over the sentence embeddings; its final hidden state is the
//! document embedding. Both levels start from zero states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{lstm_backward, lstm_run_frozen, LstmParams, LstmState, LstmTape, StepMasks};
use crate::numeric::{add_scaled, ParamBuffers, Rng, Vector};
use crate::preprocess::EncodedDocument;

/// Initialization range for every LSTM parameter.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub word: usize,
    pub sentence: usize,
    pub document: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            word: 300,
            sentence: 150,
            document: 75,
        }
    }
}

/// Parameters of both levels; the sentence level feeds the document level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub sentence: LstmParams,
    pub document: LstmParams,
}

impl EncoderParams {
    pub fn zeros(dims: EncoderDims) -> Self {
        EncoderParams {
            sentence: LstmParams::zeros(dims.word, dims.sentence),
            document: LstmParams::zeros(dims.sentence, dims.document),
        }
    }

    /// Uniform initialization on `[-INIT_RANGE, INIT_RANGE)`.
    pub fn init(dims: EncoderDims, rng: &mut Rng) -> Result<Self> {
        Self::init_uniform(dims, -INIT_RANGE, INIT_RANGE, rng)
    }

    pub fn init_uniform(dims: EncoderDims, lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderParams {
            sentence: LstmParams::uniform(dims.word, dims.sentence, lo, hi, rng)?,
            document: LstmParams::uniform(dims.sentence, dims.document, lo, hi, rng)?,
        })
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            word: self.sentence.input_dim(),
            sentence: self.sentence.hidden_dim(),
            document: self.document.hidden_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sentence.validate()?;
        self.document.validate()?;
        if self.document.input_dim() != self.sentence.hidden_dim() {
            return Err(Error::shape(
                "encoder levels",
                format!("sentence output [{}]", self.sentence.hidden_dim()),
                format!("document input [{}]", self.document.input_dim()),
            ));
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for buf in self.buffers() {
            for v in buf {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }
}

impl ParamBuffers for EncoderParams {
    fn buffers(&self) -> Vec<&[f64]> {
        let mut out = self.sentence.buffers();
        out.extend(self.document.buffers());
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.sentence.buffers_mut();
        out.extend(self.document.buffers_mut());
        out
    }
}

/// Per-document variational dropout masks, one input/recurrent pair per level.
/// The sentence-level pair is shared by every sentence of the document.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub sentence: StepMasks,
    pub document: StepMasks,
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn sample_mask(dim: usize, rate: f64, rng: &mut Rng) -> Result<Vector> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(Vector::filled(dim, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Vector::from_vec((0..dim).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect()))
}

pub fn sample_dropout_masks(dims: EncoderDims, rate: f64, rng: &mut Rng) -> Result<DropoutMasks> {
    Ok(DropoutMasks {
        sentence: StepMasks {
            input: sample_mask(dims.word, rate, rng)?,
            recurrent: sample_mask(dims.sentence, rate, rng)?,
        },
        document: StepMasks {
            input: sample_mask(dims.sentence, rate, rng)?,
            recurrent: sample_mask(dims.document, rate, rng)?,
        },
    })
}

/// Sentence embedding: final hidden state of the sentence-level LSTM.
pub fn encode_sentence(
    level: &LstmParams,
    words: &[Vector],
    true_len: usize,
    max_words: usize,
    masks: Option<&StepMasks>,
) -> Result<Vector> {
    let (state, _) = lstm_run_frozen(level, words, true_len, max_words, &LstmState::zeros(level.hidden_dim()), masks)?;
    Ok(state.h)
}

/// Tapes of both levels for one document.
#[derive(Clone, Debug)]
pub struct EncoderTape {
    pub sentences: Vec<LstmTape>,
    pub document: LstmTape,
}

/// Document embedding plus the tapes needed by [`encoder_backward`].
pub fn encode_document_with_tape(
    params: &EncoderParams,
    doc: &EncodedDocument,
    masks: Option<&DropoutMasks>,
) -> Result<(Vector, EncoderTape)> {
    params.validate()?;
    let dims = params.dims();
    if doc.dim() != dims.word {
        return Err(Error::shape("encode document", format!("word dim {}", dims.word), format!("word dim {}", doc.dim())));
    }
    let n = doc.num_sentences();
    let mut sentence_embeddings = Vec::with_capacity(n);
    let mut sentence_tapes = Vec::with_capacity(n);
    for s in 0..n {
        let words = doc.sentence(s);
        let (state, tape) = lstm_run_frozen(
            &params.sentence,
            words,
            words.len(),
            doc.max_words(),
            &LstmState::zeros(dims.sentence),
            masks.map(|m| &m.sentence),
        )?;
        sentence_embeddings.push(state.h);
        sentence_tapes.push(tape);
    }
    let (state, doc_tape) = lstm_run_frozen(
        &params.document,
        &sentence_embeddings,
        n,
        doc.max_sentences(),
        &LstmState::zeros(dims.document),
        masks.map(|m| &m.document),
    )?;
    Ok((
        state.h,
        EncoderTape {
            sentences: sentence_tapes,
            document: doc_tape,
        },
    ))
}

/// Document embedding. Without masks this is the deterministic inference path.
pub fn encode_document(params: &EncoderParams, doc: &EncodedDocument, masks: Option<&DropoutMasks>) -> Result<Vector> {
    encode_document_with_tape(params, doc, masks).map(|(v, _)| v)
}

/// Gradients of both levels given the upstream gradient on the document embedding.
pub fn encoder_backward(params: &EncoderParams, tape: &EncoderTape, d_doc: &Vector) -> Result<EncoderParams> {
    let dims = params.dims();
    if tape.document.true_len() != tape.sentences.len() {
        return Err(Error::shape(
            "encoder backward",
            format!("{} sentence tapes", tape.sentences.len()),
            format!("{} document steps", tape.document.true_len()),
        ));
    }
    let doc_grads = lstm_backward(&params.document, &tape.document, d_doc, &Vector::zeros(dims.document))?;
    let mut grads = EncoderParams {
        sentence: LstmParams::zeros(dims.word, dims.sentence),
        document: doc_grads.params,
    };
    let zero_c = Vector::zeros(dims.sentence);
    for (sentence_tape, d_sentence) in tape.sentences.iter().zip(&doc_grads.inputs) {
        let g = lstm_backward(&params.sentence, sentence_tape, d_sentence, &zero_c)?;
        add_scaled(&mut grads.sentence, 1.0, &g.params)?;
    }
    Ok(grads)
}

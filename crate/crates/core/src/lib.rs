//! Hierarchical recurrent Siamese network for authorship verification.
//!
//! Two documents are each encoded by a two-level LSTM (words into sentences,
//! sentences into a document vector) with shared weights. Their Euclidean
//! distance is compared against a threshold: close means same author.
//!
//! ```
//! use hrsn::{decide, Thresholds};
//!
//! let score = decide(1.5, &Thresholds::default());
//! assert_eq!(score.decision, hrsn::Decision::SameAuthor);
//! ```

pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod preprocess;
pub mod siamese;
pub mod synthetic;
pub mod train;

pub use embedding::{EmbeddingTable, OovStats};
pub use encoder::{encode_document, DropoutMasks, EncoderDims, EncoderParams};
pub use error::{Error, Result};
pub use eval::{confusion_metrics, cross_validate, verify_pair, ConfusionCounts, CvReport, Metrics};
pub use lstm::{LstmParams, LstmState};
pub use model::{Model, ModelConfig};
pub use numeric::{clip_by_global_norm, Matrix, ParamBuffers, Rng, Vector};
pub use optim::{AdadeltaConfig, AdadeltaState};
pub use preprocess::{EncodedDocument, VerificationInstance};
pub use siamese::{decide, distance, Decision, Label, PairScore, Thresholds};
pub use train::{fit, EpochLog, TrainConfig};

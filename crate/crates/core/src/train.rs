//! Siamese training: batching, clipping, Adadelta, dropout, augmentation,
//! cross-validation splits and the epoch loop with early stopping.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::encoder::{encode_document_with_tape, encoder_backward, sample_dropout_masks, DropoutMasks, EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numeric::{add_scaled, clip_by_global_norm, ParamBuffers, Rng};
use crate::optim::{AdadeltaConfig, AdadeltaState};
use crate::preprocess::{self, EncodedDocument, VerificationInstance};
use crate::siamese::{contrastive_loss_grad, decide, distance, loss_at_distance, Label, Thresholds};

/// Every training hyperparameter. Serialized as a flat key/value TOML table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub word_dim: usize,
    pub sentence_dim: usize,
    pub document_dim: usize,
    pub max_words: usize,
    pub max_sentences: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Re-draw the known-document concatenation order every epoch.
    pub augment: bool,
    pub folds: usize,
    /// Also pick the decision threshold that maximizes dev accuracy.
    pub calibrate_threshold: bool,
    /// Ordered single-threaded gradient reduction.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            word_dim: 300,
            sentence_dim: 150,
            document_dim: 75,
            max_words: 33,
            max_sentences: 123,
            batch_size: 32,
            clip_norm: 5.0,
            dropout_rate: 0.3,
            learning_rate: 1.0,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-6,
            tau1: 1.0,
            tau2: 3.0,
            max_epochs: 30,
            patience: 10,
            seed: 0,
            augment: true,
            folds: 10,
            calibrate_threshold: false,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("sentence_dim", self.sentence_dim),
            ("document_dim", self.document_dim),
            ("max_words", self.max_words),
            ("max_sentences", self.max_sentences),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("folds", self.folds),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        self.adadelta().validate()?;
        self.thresholds().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

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

    pub fn adadelta(&self) -> AdadeltaConfig {
        AdadeltaConfig {
            lr: self.learning_rate,
            rho: self.adadelta_rho,
            eps: self.adadelta_eps,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            word_dim: self.word_dim,
            sentence_dim: self.sentence_dim,
            document_dim: self.document_dim,
            max_words: self.max_words,
            max_sentences: self.max_sentences,
            tau1: self.tau1,
            tau2: self.tau2,
        }
    }
}

/// A known/unknown document pair ready for the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPair {
    pub known: EncodedDocument,
    pub unknown: EncodedDocument,
    pub label: Label,
}

/// Encodes an instance with its known documents concatenated in stored order.
pub fn encode_instance(inst: &VerificationInstance, table: &EmbeddingTable, config: &TrainConfig) -> Result<EncodedPair> {
    Ok(EncodedPair {
        known: preprocess::encode_document(&inst.known_text(), table, config.max_words, config.max_sentences)?,
        unknown: preprocess::encode_document(&inst.unknown, table, config.max_words, config.max_sentences)?,
        label: inst.label,
    })
}

/// Mean loss and mean gradient over a batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: EncoderParams,
}

fn pair_gradient(
    params: &EncoderParams,
    pair: &EncodedPair,
    thresholds: &Thresholds,
    masks: Option<&(DropoutMasks, DropoutMasks)>,
) -> Result<(f64, EncoderParams)> {
    // both branches read the same parameter storage
    let (e1, t1) = encode_document_with_tape(params, &pair.known, masks.map(|m| &m.0))?;
    let (e2, t2) = encode_document_with_tape(params, &pair.unknown, masks.map(|m| &m.1))?;
    let loss = loss_at_distance(distance(&e1, &e2)?, pair.label, thresholds);
    let (g1, g2) = contrastive_loss_grad(&e1, &e2, pair.label, thresholds)?;
    let mut grads = encoder_backward(params, &t1, &g1)?;
    add_scaled(&mut grads, 1.0, &encoder_backward(params, &t2, &g2)?)?;
    Ok((loss, grads))
}

/// Loss and gradient of the batch-mean contrastive loss.
///
/// Pairs are processed in parallel. With `deterministic` the per-pair results
/// are summed in batch order on one thread; otherwise a parallel tree
/// reduction is used and the low bits of the sum may vary between runs.
pub fn batch_gradient(
    params: &EncoderParams,
    batch: &[EncodedPair],
    thresholds: &Thresholds,
    masks: Option<&[(DropoutMasks, DropoutMasks)]>,
    deterministic: bool,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(Error::invalid(format!("{} mask pairs for {} pairs", m.len(), batch.len())));
        }
    }
    let per_pair = |i: usize| pair_gradient(params, &batch[i], thresholds, masks.map(|m| &m[i]));
    let (loss_sum, mut grads) = if deterministic {
        let results: Vec<(f64, EncoderParams)> = (0..batch.len()).into_par_iter().map(per_pair).collect::<Result<_>>()?;
        let mut iter = results.into_iter();
        let (mut loss, mut acc) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            add_scaled(&mut acc, 1.0, &g)?;
        }
        (loss, acc)
    } else {
        (0..batch.len())
            .into_par_iter()
            .map(per_pair)
            .try_reduce_with(|(la, mut ga), (lb, gb)| {
                add_scaled(&mut ga, 1.0, &gb)?;
                Ok((la + lb, ga))
            })
            .expect("non-empty batch")?
    };
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok(BatchGradient { loss: loss_sum / n, grads })
}

/// Parameters plus optimizer state; the single parameter store both Siamese
/// branches read from.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: EncoderParams,
    pub optimizer: AdadeltaState<EncoderParams>,
}

impl TrainState {
    pub fn new(params: EncoderParams) -> Self {
        let optimizer = AdadeltaState::new(&params);
        TrainState { params, optimizer }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Batch-mean loss before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One optimization step on a batch: fresh dropout masks per document,
/// mean loss, global-norm clipping, Adadelta update.
pub fn train_step(state: &mut TrainState, batch: &[EncodedPair], config: &TrainConfig, rng: &mut Rng) -> Result<StepReport> {
    let thresholds = config.thresholds()?;
    let masks = if config.dropout_rate > 0.0 {
        let dims = state.params.dims();
        let mut m = Vec::with_capacity(batch.len());
        for _ in batch {
            m.push((
                sample_dropout_masks(dims, config.dropout_rate, rng)?,
                sample_dropout_masks(dims, config.dropout_rate, rng)?,
            ));
        }
        Some(m)
    } else {
        None
    };
    let BatchGradient { loss, mut grads } =
        batch_gradient(&state.params, batch, &thresholds, masks.as_deref(), config.deterministic)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grad_norm = clip_by_global_norm(&mut grads, config.clip_norm)?;
    let delta = state.optimizer.update(&grads, &config.adadelta())?;
    add_scaled(&mut state.params, 1.0, &delta)?;
    Ok(StepReport { loss, grad_norm })
}

/// Re-draws the known-document order of every instance uniformly.
pub fn augment_epoch(instances: &[VerificationInstance], rng: &mut Rng) -> Vec<VerificationInstance> {
    instances
        .iter()
        .map(|inst| {
            let mut out = inst.clone();
            if out.known.len() > 1 {
                rng.shuffle(&mut out.known);
            }
            out
        })
        .collect()
}

/// One cross-validation fold as instance indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` folds over a seeded permutation. Fold sizes differ by at most one.
/// In each split the test fold is held out and the rest is divided 8:1
/// into train and dev, dev taken from the instances that follow the test
/// fold in permutation order.
pub fn make_cv_splits(corpus_size: usize, k: usize, rng: &mut Rng) -> Result<Vec<CvSplit>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if corpus_size < k {
        return Err(Error::invalid(format!("corpus of {corpus_size} is smaller than {k} folds")));
    }
    let perm = rng.permutation(corpus_size);
    let (base, extra) = (corpus_size / k, corpus_size % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    let splits = (0..k)
        .map(|f| {
            let test = perm[bounds[f]..bounds[f + 1]].to_vec();
            let rest: Vec<usize> = perm[bounds[f + 1]..].iter().chain(&perm[..bounds[f]]).copied().collect();
            let dev_len = ((rest.len() as f64) / 9.0).round() as usize;
            CvSplit {
                fold: f,
                dev: rest[..dev_len].to_vec(),
                train: rest[dev_len..].to_vec(),
                test,
            }
        })
        .collect();
    Ok(splits)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
    pub grad_norm_mean: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the epoch with the best dev accuracy.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Distances between the two embeddings of every pair, in inference mode.
pub fn pair_distances(params: &EncoderParams, pairs: &[EncodedPair]) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| {
            let a = crate::encoder::encode_document(params, &p.known, None)?;
            let b = crate::encoder::encode_document(params, &p.unknown, None)?;
            distance(&a, &b)
        })
        .collect()
}

fn encode_all(instances: &[VerificationInstance], table: &EmbeddingTable, config: &TrainConfig) -> Result<Vec<EncodedPair>> {
    instances.par_iter().map(|i| encode_instance(i, table, config)).collect()
}

/// Trains on `train`, early-stopping on dev accuracy.
///
/// Each epoch re-draws known-document orders (when `augment` is set),
/// shuffles the pairs and runs mini-batches, then measures dev loss and
/// accuracy at the midpoint threshold. An epoch improves on the best so far
/// when dev accuracy is higher, or equal with a lower dev loss. Training
/// stops once `patience` epochs pass without improvement, or at `max_epochs`.
pub fn fit(
    train: &[VerificationInstance],
    dev: &[VerificationInstance],
    table: &EmbeddingTable,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("empty development set"));
    }
    if table.dim() != config.word_dim {
        return Err(Error::Config(format!("embeddings have dim {}, config says {}", table.dim(), config.word_dim)));
    }
    let thresholds = config.thresholds()?;
    let mut init_rng = rng.derive(0);
    let mut augment_rng = rng.derive(1);
    let mut shuffle_rng = rng.derive(2);
    let mut dropout_rng = rng.derive(3);

    let mut state = TrainState::new(EncoderParams::init(config.dims(), &mut init_rng)?);
    let base_pairs = encode_all(train, table, config)?;
    let dev_pairs = encode_all(dev, table, config)?;
    let multi_known: Vec<usize> = (0..train.len()).filter(|&i| train[i].known.len() > 1).collect();

    let mut best = (state.params.clone(), f64::NEG_INFINITY, f64::INFINITY, 0usize);
    let mut since_best = 0;
    let mut log = Vec::new();
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut pairs = base_pairs.clone();
        if config.augment && !multi_known.is_empty() {
            let reordered = augment_epoch(train, &mut augment_rng);
            let fresh: Vec<(usize, EncodedDocument)> = multi_known
                .par_iter()
                .map(|&i| {
                    preprocess::encode_document(&reordered[i].known_text(), table, config.max_words, config.max_sentences)
                        .map(|d| (i, d))
                })
                .collect::<Result<_>>()?;
            for (i, doc) in fresh {
                pairs[i].known = doc;
            }
        }
        shuffle_rng.shuffle(&mut pairs);

        let (mut loss_sum, mut norm_sum, mut steps) = (0.0, 0.0, 0usize);
        for batch in pairs.chunks(config.batch_size) {
            let report = train_step(&mut state, batch, config, &mut dropout_rng)?;
            loss_sum += report.loss * batch.len() as f64;
            norm_sum += report.grad_norm;
            steps += 1;
        }

        let distances = pair_distances(&state.params, &dev_pairs)?;
        let dev_loss = distances
            .iter()
            .zip(&dev_pairs)
            .map(|(d, p)| loss_at_distance(*d, p.label, &thresholds))
            .sum::<f64>()
            / dev_pairs.len() as f64;
        let correct = distances
            .iter()
            .zip(&dev_pairs)
            .filter(|(d, p)| decide(**d, &thresholds).decision.label() == p.label)
            .count();
        let dev_accuracy = correct as f64 / dev_pairs.len() as f64;

        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / pairs.len() as f64,
            dev_loss,
            dev_accuracy,
            grad_norm_mean: norm_sum / steps as f64,
            seconds: started.elapsed().as_secs_f64(),
        });

        if dev_accuracy > best.1 || (dev_accuracy == best.1 && dev_loss < best.2) {
            best = (state.params.clone(), dev_accuracy, dev_loss, epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }

    Ok(FitResult {
        model: Model::new(config.model_config(), best.0)?,
        log,
        best_epoch: best.3,
    })
}

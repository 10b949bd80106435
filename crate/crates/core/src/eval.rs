//! Verification metrics, pair scoring and the cross-validation driver.
//!
//! The positive class is `same_author` (label 1).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::Rng;
use crate::preprocess::VerificationInstance;
use crate::siamese::{decide, decide_at, distance, Label, PairScore};
use crate::train::{encode_instance, fit, make_cv_splits, pair_distances, EncodedPair, TrainConfig};

pub const CV_REPORT_SCHEMA: &str = "hrsn-cv-report";
pub const CV_REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Same, Label::Same) => self.tp += 1,
            (Label::Different, Label::Same) => self.fp += 1,
            (Label::Different, Label::Different) => self.tn += 1,
            (Label::Same, Label::Different) => self.fn_ += 1,
        }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("confusion", truth.len().to_string(), predicted.len().to_string()));
        }
        let mut c = ConfusionCounts::default();
        for (t, p) in truth.iter().zip(predicted) {
            c.record(*t, *p);
        }
        Ok(c)
    }
}

/// Fractions in [0, 1]. Any ratio with a zero denominator is 0 and its name
/// is listed in `undefined`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

pub fn confusion_metrics(counts: &ConfusionCounts) -> Result<Metrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::invalid("no evaluated pairs"));
    }
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let (tp, fp, fn_) = (counts.tp as f64, counts.fp as f64, counts.fn_ as f64);
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
    Ok(Metrics {
        precision,
        recall,
        f1,
        accuracy: (counts.tp + counts.tn) as f64 / total as f64,
        undefined,
    })
}

/// Sample mean and (n − 1) standard deviation, as fractions and percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub mean_percent: f64,
    pub std_percent: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::invalid("nothing to summarize"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        mean,
        std,
        mean_percent: 100.0 * mean,
        std_percent: 100.0 * std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    pub accuracy: Summary,
}

impl Aggregate {
    pub fn from_metrics<'a>(metrics: impl IntoIterator<Item = &'a Metrics>) -> Result<Self> {
        let ms: Vec<&Metrics> = metrics.into_iter().collect();
        let pick = |f: fn(&Metrics) -> f64| summarize(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
        Ok(Aggregate {
            precision: pick(|m| m.precision)?,
            recall: pick(|m| m.recall)?,
            f1: pick(|m| m.f1)?,
            accuracy: pick(|m| m.accuracy)?,
        })
    }
}

/// Results on held-out pairs for one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    /// Mean distance over same-author pairs; `None` without such pairs.
    pub same_author_mean_distance: Option<f64>,
    pub different_authors_mean_distance: Option<f64>,
}

pub fn evaluate_distances(distances: &[f64], labels: &[Label], threshold: f64) -> Result<Evaluation> {
    let predicted: Vec<Label> = distances.iter().map(|d| decide_at(*d, threshold).decision.label()).collect();
    let counts = ConfusionCounts::from_predictions(labels, &predicted)?;
    let mean_for = |label: Label| {
        let ds: Vec<f64> = distances.iter().zip(labels).filter(|(_, l)| **l == label).map(|(d, _)| *d).collect();
        (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64)
    };
    Ok(Evaluation {
        threshold,
        counts,
        metrics: confusion_metrics(&counts)?,
        same_author_mean_distance: mean_for(Label::Same),
        different_authors_mean_distance: mean_for(Label::Different),
    })
}

/// Threshold with the highest accuracy on the given pairs. Candidates are
/// midpoints between consecutive sorted distances plus one value on either
/// side; ties go to the candidate closest to `fallback`.
pub fn calibrate_threshold(distances: &[f64], labels: &[Label], fallback: f64) -> Result<f64> {
    if distances.is_empty() || distances.len() != labels.len() {
        return Err(Error::invalid("calibration needs matching, non-empty distances and labels"));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut candidates = vec![sorted[0] - 1.0, sorted[sorted.len() - 1] + 1.0];
    candidates.extend(sorted.windows(2).filter(|w| w[0] < w[1]).map(|w| 0.5 * (w[0] + w[1])));
    let accuracy = |t: f64| {
        distances
            .iter()
            .zip(labels)
            .filter(|(d, l)| decide_at(**d, t).decision.label() == **l)
            .count()
    };
    let mut best = (fallback, accuracy(fallback));
    for t in candidates {
        let a = accuracy(t);
        if a > best.1 || (a == best.1 && (t - fallback).abs() < (best.0 - fallback).abs()) {
            best = (t, a);
        }
    }
    Ok(best.0)
}

/// Scores two raw texts with a trained model, in inference mode.
pub fn verify_pair(model: &Model, table: &EmbeddingTable, doc_a: &str, doc_b: &str) -> Result<PairScore> {
    let a = model.embed_text(doc_a, table)?;
    let b = model.embed_text(doc_b, table)?;
    Ok(decide(distance(&a, &b)?, &model.thresholds()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_ids: Vec<usize>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Test results at the midpoint threshold.
    pub test: Evaluation,
    /// Test results at the threshold calibrated on dev, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated: Option<Evaluation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub corpus_size: usize,
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    /// Mean and sample standard deviation of the per-fold test metrics.
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_aggregate: Option<Aggregate>,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn distances_and_labels(model: &Model, pairs: &[EncodedPair]) -> Result<(Vec<f64>, Vec<Label>)> {
    Ok((pair_distances(&model.params, pairs)?, pairs.iter().map(|p| p.label).collect()))
}

/// k-fold cross-validation. Folds train in parallel, each from its own seed
/// stream, and are collected in fold order, so the report depends only on
/// the corpus, the embeddings and the config.
pub fn cross_validate(corpus: &[VerificationInstance], table: &EmbeddingTable, config: &TrainConfig) -> Result<CvReport> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let splits = make_cv_splits(corpus.len(), config.folds, &mut root.derive(999))?;
    let midpoint = config.thresholds()?.midpoint();
    let pick = |ids: &[usize]| ids.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();

    let folds: Vec<FoldReport> = splits
        .par_iter()
        .map(|split| {
            let fitted = fit(&pick(&split.train), &pick(&split.dev), table, config, &root.derive(1000 + split.fold as u64))?;
            let encode = |ids: &[usize]| -> Result<Vec<EncodedPair>> {
                ids.iter().map(|&i| encode_instance(&corpus[i], table, config)).collect()
            };
            let (test_d, test_l) = distances_and_labels(&fitted.model, &encode(&split.test)?)?;
            let calibrated = if config.calibrate_threshold {
                let (dev_d, dev_l) = distances_and_labels(&fitted.model, &encode(&split.dev)?)?;
                let t = calibrate_threshold(&dev_d, &dev_l, midpoint)?;
                Some(evaluate_distances(&test_d, &test_l, t)?)
            } else {
                None
            };
            Ok(FoldReport {
                fold: split.fold,
                train_size: split.train.len(),
                dev_size: split.dev.len(),
                test_ids: split.test.clone(),
                epochs_run: fitted.log.len(),
                best_epoch: fitted.best_epoch,
                test: evaluate_distances(&test_d, &test_l, midpoint)?,
                calibrated,
            })
        })
        .collect::<Result<_>>()?;

    let aggregate = Aggregate::from_metrics(folds.iter().map(|f| &f.test.metrics))?;
    let calibrated_aggregate = if config.calibrate_threshold {
        Some(Aggregate::from_metrics(folds.iter().filter_map(|f| f.calibrated.as_ref().map(|c| &c.metrics)))?)
    } else {
        None
    };
    Ok(CvReport {
        schema: CV_REPORT_SCHEMA.into(),
        version: CV_REPORT_VERSION,
        seed: config.seed,
        corpus_size: corpus.len(),
        config: config.clone(),
        folds,
        aggregate,
        calibrated_aggregate,
    })
}

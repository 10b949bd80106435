//! The Siamese head: Euclidean distance between document embeddings, the
//! two-threshold contrastive loss and the same-author decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Vector;

/// Pair label. `Same` (1) means both documents share an author.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Different,
    Same,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Different => 0.0,
            Label::Same => 1.0,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Different),
            1 => Ok(Label::Same),
            other => Err(Error::invalid(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Different => 0,
            Label::Same => 1,
        }
    }
}

/// Margin thresholds: same-author pairs are pulled inside `tau1`,
/// different-author pairs pushed beyond `tau2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Thresholds {
    tau1: f64,
    tau2: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { tau1: 1.0, tau2: 3.0 }
    }
}

impl Thresholds {
    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        if !(tau1.is_finite() && tau2.is_finite() && tau1 >= 0.0 && tau1 < tau2) {
            return Err(Error::invalid(format!("thresholds need 0 <= tau1 < tau2, got ({tau1}, {tau2})")));
        }
        Ok(Thresholds { tau1, tau2 })
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    /// The decision threshold, midway between the two margins.
    pub fn midpoint(&self) -> f64 {
        (self.tau1 + self.tau2) / 2.0
    }
}

impl TryFrom<(f64, f64)> for Thresholds {
    type Error = Error;

    fn try_from((a, b): (f64, f64)) -> Result<Self> {
        Thresholds::new(a, b)
    }
}

impl From<Thresholds> for (f64, f64) {
    fn from(t: Thresholds) -> Self {
        (t.tau1, t.tau2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    SameAuthor,
    DifferentAuthors,
}

impl Decision {
    pub fn label(self) -> Label {
        match self {
            Decision::SameAuthor => Label::Same,
            Decision::DifferentAuthors => Label::Different,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub distance: f64,
    pub decision: Decision,
    pub threshold: f64,
    /// `distance - threshold`; negative means same author.
    pub margin: f64,
}

pub fn distance(x1: &Vector, x2: &Vector) -> Result<f64> {
    Ok(x1.sub(x2)?.norm())
}

pub fn contrastive_loss(x1: &Vector, x2: &Vector, label: Label, thresholds: &Thresholds) -> Result<f64> {
    Ok(loss_at_distance(distance(x1, x2)?, label, thresholds))
}

/// The contrastive loss as a function of the distance alone.
pub fn loss_at_distance(d: f64, label: Label, thresholds: &Thresholds) -> f64 {
    match label {
        Label::Same => 0.5 * (d - thresholds.tau1).max(0.0).powi(2),
        Label::Different => 0.5 * (thresholds.tau2 - d).max(0.0).powi(2),
    }
}

/// Gradients of the contrastive loss with respect to both embeddings.
///
/// At `d = 0` the distance is not differentiable; the gradient there is zero.
pub fn contrastive_loss_grad(x1: &Vector, x2: &Vector, label: Label, thresholds: &Thresholds) -> Result<(Vector, Vector)> {
    let diff = x1.sub(x2)?;
    let d = diff.norm();
    let coeff = match label {
        Label::Same if d > thresholds.tau1 => (d - thresholds.tau1) / d,
        Label::Different if d < thresholds.tau2 && d > 0.0 => -(thresholds.tau2 - d) / d,
        _ => 0.0,
    };
    let g1 = diff.scaled(coeff);
    let g2 = g1.scaled(-1.0);
    Ok((g1, g2))
}

/// Same author iff `d < (tau1 + tau2) / 2`; a tie goes to different authors.
pub fn decide(d: f64, thresholds: &Thresholds) -> PairScore {
    decide_at(d, thresholds.midpoint())
}

/// Like [`decide`] with an explicit decision threshold.
pub fn decide_at(d: f64, threshold: f64) -> PairScore {
    let decision = if d < threshold {
        Decision::SameAuthor
    } else {
        Decision::DifferentAuthors
    };
    PairScore {
        distance: d,
        decision,
        threshold,
        margin: d - threshold,
    }
}

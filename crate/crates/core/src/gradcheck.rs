//! Central finite-difference checks of the analytic gradients.

use serde::Serialize;

use crate::encoder::{encode_document_with_tape, encoder_backward, sample_mask, EncoderDims, EncoderParams};
use crate::error::Result;
use crate::lstm::{lstm_backward, lstm_run_frozen, LstmParams, LstmState, StepMasks};
use crate::numeric::{add_scaled, ParamBuffers, Rng, Vector};
use crate::preprocess::EncodedDocument;
use crate::siamese::{contrastive_loss, contrastive_loss_grad, distance, Label, Thresholds};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    pub step: f64,
    pub relative: f64,
    pub absolute: f64,
    /// Below this analytic magnitude the absolute bound applies instead.
    pub small: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-5,
            relative: 1e-4,
            absolute: 1e-7,
            small: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        if analytic.abs() < self.small {
            diff < self.absolute
        } else {
            diff / analytic.abs().max(numeric.abs()) < self.relative
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub buffer: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Central differences of `f` with respect to every value of `point`.
pub fn numeric_gradient<P, F>(point: &P, step: f64, mut f: F) -> Result<P>
where
    P: ParamBuffers + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let mut grad = point.clone();
    grad.fill(0.0);
    let mut probe = point.clone();
    let sizes: Vec<usize> = point.buffers().iter().map(|b| b.len()).collect();
    for (b, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.buffers()[b][j];
            probe.buffers_mut()[b][j] = orig + step;
            let up = f(&probe)?;
            probe.buffers_mut()[b][j] = orig - step;
            let down = f(&probe)?;
            probe.buffers_mut()[b][j] = orig;
            grad.buffers_mut()[b][j] = (up - down) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Compares two gradients of identical layout entry by entry.
pub fn compare<P: ParamBuffers + ?Sized>(name: &str, analytic: &P, numeric: &P, tol: &Tolerance) -> GradCheckReport {
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_relative_error: 0.0,
        failures: Vec::new(),
    };
    for (b, (a, n)) in analytic.buffers().into_iter().zip(numeric.buffers()).enumerate() {
        for (j, (&a, &n)) in a.iter().zip(n).enumerate() {
            report.checked += 1;
            let scale = a.abs().max(n.abs());
            if scale > 0.0 {
                report.max_relative_error = report.max_relative_error.max((a - n).abs() / scale);
            }
            if !tol.accepts(a, n) {
                report.failures.push(Mismatch {
                    buffer: b,
                    index: j,
                    analytic: a,
                    numeric: n,
                });
            }
        }
    }
    report
}

fn random_vector(dim: usize, rng: &mut Rng) -> Vector {
    Vector::from_vec((0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

/// Everything a single LSTM check varies.
#[derive(Clone, Debug)]
pub struct LstmCase {
    pub params: LstmParams,
    pub inputs: Vec<Vector>,
    pub true_len: usize,
    pub init: LstmState,
    pub masks: Option<StepMasks>,
    /// The checked scalar is `a·h_T + b·c_T`.
    pub a: Vector,
    pub b: Vector,
}

impl LstmCase {
    pub fn random(rng: &mut Rng, with_masks: bool) -> Result<Self> {
        let input = 1 + rng.below(4);
        let hidden = 1 + rng.below(4);
        let unrolled = 1 + rng.below(5);
        let true_len = 1 + rng.below(unrolled);
        let masks = if with_masks {
            Some(StepMasks {
                input: sample_mask(input, 0.3, rng)?,
                recurrent: sample_mask(hidden, 0.3, rng)?,
            })
        } else {
            None
        };
        Ok(LstmCase {
            params: LstmParams::uniform(input, hidden, -0.8, 0.8, rng)?,
            inputs: (0..unrolled).map(|_| random_vector(input, rng)).collect(),
            true_len,
            init: LstmState {
                h: random_vector(hidden, rng),
                c: random_vector(hidden, rng),
            },
            masks,
            a: random_vector(hidden, rng),
            b: random_vector(hidden, rng),
        })
    }

    fn objective(&self, params: &LstmParams, inputs: &[Vector], init: &LstmState) -> Result<f64> {
        let (s, _) = lstm_run_frozen(params, inputs, self.true_len, inputs.len(), init, self.masks.as_ref())?;
        Ok(s.h.dot(&self.a)? + s.c.dot(&self.b)?)
    }

    /// Checks parameter, input and initial-state gradients.
    pub fn check(&self, tol: &Tolerance) -> Result<Vec<GradCheckReport>> {
        let t = self.inputs.len();
        let (_, tape) = lstm_run_frozen(&self.params, &self.inputs, self.true_len, t, &self.init, self.masks.as_ref())?;
        let g = lstm_backward(&self.params, &tape, &self.a, &self.b)?;

        let np = numeric_gradient(&self.params, tol.step, |p| self.objective(p, &self.inputs, &self.init))?;
        let nx = numeric_gradient(&self.inputs, tol.step, |xs| self.objective(&self.params, xs, &self.init))?;
        let nh = numeric_gradient(&self.init.h, tol.step, |h| {
            self.objective(&self.params, &self.inputs, &LstmState { h: h.clone(), c: self.init.c.clone() })
        })?;
        let nc = numeric_gradient(&self.init.c, tol.step, |c| {
            self.objective(&self.params, &self.inputs, &LstmState { h: self.init.h.clone(), c: c.clone() })
        })?;
        Ok(vec![
            compare("lstm params", &g.params, &np, tol),
            compare("lstm inputs", &g.inputs, &nx, tol),
            compare("lstm h0", &g.h0, &nh, tol),
            compare("lstm c0", &g.c0, &nc, tol),
        ])
    }
}

/// `count` random LSTM cases with input and hidden sizes up to 4 and up to
/// 5 unrolled steps; every other case uses dropout masks.
pub fn lstm_suite(count: usize, seed: u64, tol: &Tolerance) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();
    for k in 0..count {
        let case = LstmCase::random(&mut rng, k % 2 == 1)?;
        for mut r in case.check(tol)? {
            r.name = format!("{} #{k}", r.name);
            reports.push(r);
        }
    }
    Ok(reports)
}

/// Loss of one pair through the full encoder and contrastive head.
pub fn pair_loss(params: &EncoderParams, a: &EncodedDocument, b: &EncodedDocument, label: Label, t: &Thresholds) -> Result<f64> {
    let (x1, _) = encode_document_with_tape(params, a, None)?;
    let (x2, _) = encode_document_with_tape(params, b, None)?;
    contrastive_loss(&x1, &x2, label, t)
}

/// Analytic parameter gradient of [`pair_loss`].
pub fn pair_loss_gradient(params: &EncoderParams, a: &EncodedDocument, b: &EncodedDocument, label: Label, t: &Thresholds) -> Result<EncoderParams> {
    let (x1, t1) = encode_document_with_tape(params, a, None)?;
    let (x2, t2) = encode_document_with_tape(params, b, None)?;
    let (g1, g2) = contrastive_loss_grad(&x1, &x2, label, t)?;
    let mut grads = encoder_backward(params, &t1, &g1)?;
    add_scaled(&mut grads, 1.0, &encoder_backward(params, &t2, &g2)?)?;
    Ok(grads)
}

/// Full-pipeline check on a pair of 2-sentence, 2-word documents with word,
/// sentence and document sizes 3, 2, 2, once per label. Thresholds are set
/// from the actual distance so the loss is in its active region.
pub fn pipeline_suite(seed: u64, tol: &Tolerance) -> Result<Vec<GradCheckReport>> {
    let dims = EncoderDims {
        word: 3,
        sentence: 2,
        document: 2,
    };
    let mut rng = Rng::new(seed);
    let params = EncoderParams::init_uniform(dims, -1.0, 1.0, &mut rng)?;
    let doc = |rng: &mut Rng| {
        let s = (0..2).map(|_| (0..2).map(|_| random_vector(3, rng)).collect()).collect();
        EncodedDocument::from_sentences(s, 3, 2, 2)
    };
    let (a, b) = (doc(&mut rng)?, doc(&mut rng)?);
    let d = distance(&crate::encoder::encode_document(&params, &a, None)?, &crate::encoder::encode_document(&params, &b, None)?)?;
    let mut reports = Vec::new();
    for (label, t) in [
        (Label::Same, Thresholds::new(0.5 * d, 2.0 * d + 1.0)?),
        (Label::Different, Thresholds::new(0.0, 2.0 * d + 1.0)?),
    ] {
        let analytic = pair_loss_gradient(&params, &a, &b, label, &t)?;
        let numeric = numeric_gradient(&params, tol.step, |p| pair_loss(p, &a, &b, label, &t))?;
        reports.push(compare(&format!("pipeline label {}", label.as_f64()), &analytic, &numeric, tol));
    }
    Ok(reports)
}

//! A single LSTM cell, frozen-state unrolling and backpropagation through time.
//!
//! Gate layout everywhere is `[forget, input, output, candidate]`:
//!
//! ```text
//! f  = σ(W_f h + U_f x + b_f)
//! i  = σ(W_i h + U_i x + b_i)
//! o  = σ(W_o h + U_o x + b_o)
//! c~ = tanh(W_c h + U_c x + b_c)
//! c' = f ⊙ c + i ⊙ c~
//! h' = o ⊙ tanh(c')
//! ```
//!
//! No forget-gate bias offset is applied at initialization.
//!
//! When a sequence is shorter than the unrolled length, the state after the
//! last real step is carried unchanged through the remaining steps. Those
//! steps are identity copies, so they are never evaluated: forward results
//! are bitwise independent of the padding and gradients flow through them
//! untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{uniform_init, Matrix, ParamBuffers, Rng, Vector};

pub const FORGET: usize = 0;
pub const INPUT: usize = 1;
pub const OUTPUT: usize = 2;
pub const CANDIDATE: usize = 3;

/// Parameters of one LSTM level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// Recurrent weights, `hidden × hidden`.
    pub w: [Matrix; 4],
    /// Input weights, `hidden × input`.
    pub u: [Matrix; 4],
    pub b: [Vector; 4],
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            w: std::array::from_fn(|_| Matrix::zeros(hidden_dim, hidden_dim)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden_dim, input_dim)),
            b: std::array::from_fn(|_| Vector::zeros(hidden_dim)),
        }
    }

    /// Every entry drawn uniformly from `[lo, hi)`.
    pub fn uniform(input_dim: usize, hidden_dim: usize, lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        let mut p = LstmParams::zeros(input_dim, hidden_dim);
        for k in 0..4 {
            p.w[k] = uniform_init(hidden_dim, hidden_dim, lo, hi, rng)?;
            p.u[k] = uniform_init(hidden_dim, input_dim, lo, hi, rng)?;
            let bias = uniform_init(1, hidden_dim, lo, hi, rng)?;
            p.b[k] = Vector::from_vec(bias.data().to_vec());
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.u[0].cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w[0].rows()
    }

    /// Checks that all gates agree on shape.
    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        for k in 0..4 {
            if self.w[k].shape() != (h, h) {
                return Err(Error::shape("lstm params W", format!("[{h}x{h}]"), &self.w[k]));
            }
            if self.u[k].shape() != (h, d) {
                return Err(Error::shape("lstm params U", format!("[{h}x{d}]"), &self.u[k]));
            }
            if self.b[k].dim() != h {
                return Err(Error::shape("lstm params b", format!("[{h}]"), format!("[{}]", self.b[k].dim())));
            }
        }
        Ok(())
    }
}

impl ParamBuffers for LstmParams {
    fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(12);
        out.extend(self.w.iter().map(|m| m.data()));
        out.extend(self.u.iter().map(|m| m.data()));
        out.extend(self.b.iter().map(|v| &v[..]));
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(12);
        out.extend(self.w.iter_mut().map(|m| m.data_mut()));
        out.extend(self.u.iter_mut().map(|m| m.data_mut()));
        out.extend(self.b.iter_mut().map(|v| &mut v[..]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(dim: usize) -> Self {
        LstmState {
            h: Vector::zeros(dim),
            c: Vector::zeros(dim),
        }
    }
}

/// Fixed multiplicative masks for the input and the recurrent hidden state,
/// reused at every step of a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMasks {
    pub input: Vector,
    pub recurrent: Vector,
}

/// Activations of one real step.
#[derive(Clone, Debug)]
pub struct StepCache {
    /// Input after masking.
    pub x: Vector,
    /// Previous hidden state after masking.
    pub h_prev: Vector,
    pub c_prev: Vector,
    /// Gate activations `[f, i, o, c~]`.
    pub gates: [Vector; 4],
    pub c: Vector,
    pub tanh_c: Vector,
}

/// Everything the backward pass needs from one unrolled sequence.
#[derive(Clone, Debug)]
pub struct LstmTape {
    steps: Vec<StepCache>,
    unrolled_len: usize,
    input_dim: usize,
    hidden_dim: usize,
    masks: Option<StepMasks>,
}

impl LstmTape {
    /// Unrolled length `T`, including frozen steps.
    pub fn len(&self) -> usize {
        self.unrolled_len
    }

    pub fn is_empty(&self) -> bool {
        self.unrolled_len == 0
    }

    /// Index of the last real step (1-based), after which the state is frozen.
    pub fn true_len(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[StepCache] {
        &self.steps
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dims(params: &LstmParams, x_dim: usize, state: &LstmState) -> Result<()> {
    if x_dim != params.input_dim() {
        return Err(Error::shape("lstm input", format!("[{}]", params.input_dim()), format!("[{x_dim}]")));
    }
    let h = params.hidden_dim();
    if state.h.dim() != h || state.c.dim() != h {
        return Err(Error::shape(
            "lstm state",
            format!("[{h}]"),
            format!("h [{}], c [{}]", state.h.dim(), state.c.dim()),
        ));
    }
    Ok(())
}

fn check_masks(params: &LstmParams, masks: Option<&StepMasks>) -> Result<()> {
    if let Some(m) = masks {
        if m.input.dim() != params.input_dim() || m.recurrent.dim() != params.hidden_dim() {
            return Err(Error::shape(
                "lstm masks",
                format!("input [{}], recurrent [{}]", params.input_dim(), params.hidden_dim()),
                format!("input [{}], recurrent [{}]", m.input.dim(), m.recurrent.dim()),
            ));
        }
    }
    Ok(())
}

/// One step; shapes validated by the caller.
fn step_cached(params: &LstmParams, x: &[f64], state: &LstmState, masks: Option<&StepMasks>) -> StepCache {
    let (x, h_prev) = match masks {
        Some(m) => (
            Vector::from_vec(x.iter().zip(m.input.iter()).map(|(a, b)| a * b).collect()),
            state.h.hadamard(&m.recurrent).expect("mask shape checked"),
        ),
        None => (Vector::from_vec(x.to_vec()), state.h.clone()),
    };
    let gates: [Vector; 4] = std::array::from_fn(|k| {
        let mut z = params.b[k].clone();
        params.w[k].matvec_acc(&h_prev, &mut z);
        params.u[k].matvec_acc(&x, &mut z);
        for v in z.iter_mut() {
            *v = if k == CANDIDATE { v.tanh() } else { sigmoid(*v) };
        }
        z
    });
    let c: Vector = (0..state.c.dim())
        .map(|j| gates[FORGET][j] * state.c[j] + gates[INPUT][j] * gates[CANDIDATE][j])
        .collect::<Vec<_>>()
        .into();
    let tanh_c: Vector = c.iter().map(|v| v.tanh()).collect::<Vec<_>>().into();
    StepCache {
        x,
        h_prev,
        c_prev: state.c.clone(),
        gates,
        c,
        tanh_c,
    }
}

impl StepCache {
    fn next_state(&self) -> LstmState {
        let h = self.gates[OUTPUT].hadamard(&self.tanh_c).expect("same dims");
        LstmState { h, c: self.c.clone() }
    }
}

/// A single cell update from `state` on input `x`.
pub fn lstm_step(params: &LstmParams, x: &Vector, state: &LstmState) -> Result<LstmState> {
    params.validate()?;
    check_dims(params, x.dim(), state)?;
    Ok(step_cached(params, x, state, None).next_state())
}

/// Unrolls the cell over `unrolled_len` steps, applying it to the first
/// `true_len` inputs and holding the state fixed afterwards.
pub fn lstm_run_frozen(
    params: &LstmParams,
    xs: &[Vector],
    true_len: usize,
    unrolled_len: usize,
    init: &LstmState,
    masks: Option<&StepMasks>,
) -> Result<(LstmState, LstmTape)> {
    if true_len == 0 {
        return Err(Error::invalid("sequence has no real steps"));
    }
    if true_len > unrolled_len {
        return Err(Error::invalid(format!("true length {true_len} exceeds unrolled length {unrolled_len}")));
    }
    if xs.len() < true_len {
        return Err(Error::invalid(format!("{} inputs for true length {true_len}", xs.len())));
    }
    params.validate()?;
    check_masks(params, masks)?;
    let mut state = init.clone();
    let mut steps = Vec::with_capacity(true_len);
    for x in &xs[..true_len] {
        check_dims(params, x.dim(), &state)?;
        let cache = step_cached(params, x, &state, masks);
        state = cache.next_state();
        steps.push(cache);
    }
    let tape = LstmTape {
        steps,
        unrolled_len,
        input_dim: params.input_dim(),
        hidden_dim: params.hidden_dim(),
        masks: masks.cloned(),
    };
    Ok((state, tape))
}

/// Gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct LstmGradients {
    pub params: LstmParams,
    /// One entry per unrolled step; zero for frozen steps.
    pub inputs: Vec<Vector>,
    pub h0: Vector,
    pub c0: Vector,
}

/// Backpropagation through time from upstream gradients on the final state.
pub fn lstm_backward(params: &LstmParams, tape: &LstmTape, d_h_final: &Vector, d_c_final: &Vector) -> Result<LstmGradients> {
    params.validate()?;
    let (hd, id) = (params.hidden_dim(), params.input_dim());
    if tape.hidden_dim != hd || tape.input_dim != id {
        return Err(Error::shape(
            "lstm backward",
            format!("params [{hd}x{id}]"),
            format!("tape [{}x{}]", tape.hidden_dim, tape.input_dim),
        ));
    }
    if d_h_final.dim() != hd || d_c_final.dim() != hd {
        return Err(Error::shape(
            "lstm backward upstream",
            format!("[{hd}]"),
            format!("h [{}], c [{}]", d_h_final.dim(), d_c_final.dim()),
        ));
    }

    let mut grads = LstmParams::zeros(id, hd);
    let mut inputs = vec![Vector::zeros(id); tape.unrolled_len];
    // frozen steps are identity copies: the upstream gradient reaches the last real step unchanged
    let mut dh = d_h_final.clone();
    let mut dc = d_c_final.clone();
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hd]);

    for (t, step) in tape.steps.iter().enumerate().rev() {
        let [f, i, o, g] = &step.gates;
        for j in 0..hd {
            let do_ = dh[j] * step.tanh_c[j];
            let dc_total = dc[j] + dh[j] * o[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
            dz[OUTPUT][j] = do_ * o[j] * (1.0 - o[j]);
            dz[FORGET][j] = dc_total * step.c_prev[j] * f[j] * (1.0 - f[j]);
            dz[INPUT][j] = dc_total * g[j] * i[j] * (1.0 - i[j]);
            dz[CANDIDATE][j] = dc_total * i[j] * (1.0 - g[j] * g[j]);
            dc[j] = dc_total * f[j];
        }
        let mut dh_prev = vec![0.0; hd];
        let dx = &mut inputs[t];
        for k in 0..4 {
            grads.w[k].add_outer(&dz[k], &step.h_prev);
            grads.u[k].add_outer(&dz[k], &step.x);
            for (b, z) in grads.b[k].iter_mut().zip(&dz[k]) {
                *b += z;
            }
            params.w[k].matvec_t_acc(&dz[k], &mut dh_prev);
            params.u[k].matvec_t_acc(&dz[k], dx);
        }
        if let Some(m) = &tape.masks {
            for (v, mask) in dh_prev.iter_mut().zip(m.recurrent.iter()) {
                *v *= mask;
            }
            for (v, mask) in dx.iter_mut().zip(m.input.iter()) {
                *v *= mask;
            }
        }
        dh = Vector::from_vec(dh_prev);
    }

    Ok(LstmGradients {
        params: grads,
        inputs,
        h0: dh,
        c0: dc,
    })
}

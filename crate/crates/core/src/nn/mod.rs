//! Recurrent forecaster: one LSTM or GRU layer followed by a single linear
//! output unit, trained with MSE and RMSProp using full backpropagation
//! through time.

mod checkpoint;
mod gradcheck;
mod gru;
mod loss;
mod lstm;
mod optim;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use checkpoint::{
    read_checkpoint_binary, read_checkpoint_json, write_checkpoint_binary, write_checkpoint_json,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_with, random_case, GradCheckReport};
pub use gru::Gru;
pub use loss::{loss_mse, metric_mae};
pub use lstm::Lstm;
pub use optim::{rmsprop_step, rmsprop_update, OptimizerState, RmsPropConfig};
pub use train::{evaluate_mae, predict_all, train, train_step, TrainConfig, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl NetError {
    pub fn kind(&self) -> &'static str {
        match self {
            NetError::ShapeMismatch(_) => "ShapeMismatch",
            NetError::EmptyBatch => "EmptyBatch",
            NetError::NonFinite(_) => "NonFinite",
            NetError::Checkpoint(_) => "CheckpointError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => Lstm::GATES,
            CellKind::Gru => Gru::GATES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(format!("unknown cell kind `{other}` (expected lstm|gru)")),
        }
    }
}

/// Names of the parameter tensors, in storage order.
pub const TENSOR_NAMES: [&str; 5] = ["w_input", "w_recurrent", "bias", "head_weight", "head_bias"];

/// All weights of the recurrent layer and the dense head.
///
/// Gate blocks are stacked row-wise: row `g * H + j` belongs to unit `j` of
/// gate `g`. LSTM gate order is input, forget, candidate, output; GRU order
/// is update, reset, candidate. The same type holds gradients and optimizer
/// accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<S> {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[G*H][D]`
    pub w_input: Vec<S>,
    /// `[G*H][H]`
    pub w_recurrent: Vec<S>,
    /// `[G*H]`
    pub bias: Vec<S>,
    /// `[H]`
    pub head_weight: Vec<S>,
    /// `[1]`
    pub head_bias: Vec<S>,
}

impl<S: Scalar> ModelParameters<S> {
    pub fn zeros(kind: CellKind, input_size: usize, hidden_size: usize) -> Self {
        let rows = kind.gates() * hidden_size;
        Self {
            kind,
            input_size,
            hidden_size,
            w_input: vec![S::zero(); rows * input_size],
            w_recurrent: vec![S::zero(); rows * hidden_size],
            bias: vec![S::zero(); rows],
            head_weight: vec![S::zero(); hidden_size],
            head_bias: vec![S::zero()],
        }
    }

    /// Seeded uniform initialization in `[-1/sqrt(H), 1/sqrt(H)]`; LSTM
    /// forget-gate biases start at 1.
    pub fn init(kind: CellKind, input_size: usize, hidden_size: usize, seed: u64) -> Self {
        let mut p = Self::zeros(kind, input_size, hidden_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        for tensor in p.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = S::of(rng.gen_range(-bound..=bound));
            }
        }
        if kind == CellKind::Lstm {
            for b in &mut p.bias[hidden_size..2 * hidden_size] {
                *b = S::one();
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind, self.input_size, self.hidden_size)
    }

    pub fn shapes(&self) -> [Vec<usize>; 5] {
        let rows = self.kind.gates() * self.hidden_size;
        [
            vec![rows, self.input_size],
            vec![rows, self.hidden_size],
            vec![rows],
            vec![self.hidden_size],
            vec![1],
        ]
    }

    pub fn tensors(&self) -> [&[S]; 5] {
        [
            &self.w_input,
            &self.w_recurrent,
            &self.bias,
            &self.head_weight,
            &self.head_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [S]; 5] {
        [
            &mut self.w_input,
            &mut self.w_recurrent,
            &mut self.bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Errors unless `other` has the same cell kind and dimensions and every
    /// tensor has the expected length.
    pub fn check_same_shape(&self, other: &Self) -> Result<(), NetError> {
        if self.kind != other.kind
            || self.input_size != other.input_size
            || self.hidden_size != other.hidden_size
        {
            return Err(NetError::ShapeMismatch(format!(
                "{} D={} H={} vs {} D={} H={}",
                self.kind, self.input_size, self.hidden_size, other.kind, other.input_size, other.hidden_size
            )));
        }
        other.check_consistent()
    }

    pub fn check_consistent(&self) -> Result<(), NetError> {
        for ((name, shape), t) in TENSOR_NAMES.iter().zip(self.shapes()).zip(self.tensors()) {
            let want: usize = shape.iter().product();
            if t.len() != want {
                return Err(NetError::ShapeMismatch(format!(
                    "{name} has {} values, expected {want}",
                    t.len()
                )));
            }
        }
        Ok(())
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ModelParameters<T> {
        let c = |v: &[S]| v.iter().map(|x| T::of(x.as_f64())).collect();
        ModelParameters {
            kind: self.kind,
            input_size: self.input_size,
            hidden_size: self.hidden_size,
            w_input: c(&self.w_input),
            w_recurrent: c(&self.w_recurrent),
            bias: c(&self.bias),
            head_weight: c(&self.head_weight),
            head_bias: c(&self.head_bias),
        }
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(S::zero());
        }
    }
}

/// Cached values of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache<S> {
    /// Post-activation gate values, `[G*H]`.
    pub gates: Vec<S>,
    /// Recurrent pre-activation `W_rec * h_prev`, `[G*H]`.
    pub recurrent: Vec<S>,
    /// Cell state (LSTM only).
    pub cell: Vec<S>,
    /// `tanh(cell)` (LSTM only).
    pub cell_tanh: Vec<S>,
    pub hidden: Vec<S>,
}

/// Everything backpropagation needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<S> {
    pub steps: Vec<StepCache<S>>,
    pub prediction: S,
}

impl<S> ForwardTrace<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Gradients a cell hands back for one step.
pub struct StepGrads<'a, S> {
    /// Gradient w.r.t. the input pre-activation (and bias), `[G*H]`.
    pub d_input: &'a mut [S],
    /// Gradient w.r.t. the recurrent pre-activation, `[G*H]`.
    pub d_recurrent: &'a mut [S],
    /// Direct (non-matrix) contribution to the previous hidden state, `[H]`.
    pub d_hidden_prev: &'a mut [S],
    /// Gradient flowing into the previous cell state, `[H]`.
    pub d_cell_prev: &'a mut [S],
}

/// Gate nonlinearities of a recurrent cell. The affine maps around them are
/// shared by every cell kind.
pub trait RecurrentCell {
    const GATES: usize;

    /// Fills `cache.gates`, `cache.cell`, `cache.cell_tanh` and
    /// `cache.hidden` from the input pre-activation (with bias) and the
    /// already-stored `cache.recurrent`.
    fn activate<S: Scalar>(input_pre: &[S], h_prev: &[S], c_prev: &[S], cache: &mut StepCache<S>);

    /// Backpropagates `d_hidden` (into `h_t`) and `d_cell` (into `c_t` from
    /// later steps) through the gate nonlinearities.
    fn gate_grads<S: Scalar>(
        cache: &StepCache<S>,
        h_prev: &[S],
        c_prev: &[S],
        d_hidden: &[S],
        d_cell: &[S],
        out: StepGrads<'_, S>,
    );
}

fn check_inputs<S: Scalar>(params: &ModelParameters<S>, inputs: &[S]) -> Result<usize, NetError> {
    let d = params.input_size;
    if d == 0 || inputs.is_empty() || inputs.len() % d != 0 {
        return Err(NetError::ShapeMismatch(format!(
            "{} input values do not form whole steps of dimension {d}",
            inputs.len()
        )));
    }
    Ok(inputs.len() / d)
}

/// `out = b + W x` for a row-major `[rows][cols]` matrix.
#[inline]
fn affine<S: Scalar>(w: &[S], b: Option<&[S]>, x: &[S], out: &mut [S]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b.map_or(S::zero(), |b| b[r]);
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        *o = acc;
    }
}

fn forward_with<C: RecurrentCell, S: Scalar>(
    params: &ModelParameters<S>,
    inputs: &[S],
    steps: usize,
) -> ForwardTrace<S> {
    let (d, h) = (params.input_size, params.hidden_size);
    let rows = C::GATES * h;
    let zeros = vec![S::zero(); h];
    let mut input_pre = vec![S::zero(); rows];
    let mut trace: Vec<StepCache<S>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let (h_prev, c_prev) = match trace.last() {
            Some(prev) => (&prev.hidden[..], &prev.cell[..]),
            None => (&zeros[..], &zeros[..]),
        };
        let mut cache = StepCache {
            gates: vec![S::zero(); rows],
            recurrent: vec![S::zero(); rows],
            cell: vec![S::zero(); h],
            cell_tanh: vec![S::zero(); h],
            hidden: vec![S::zero(); h],
        };
        affine(&params.w_input, Some(&params.bias), &inputs[t * d..(t + 1) * d], &mut input_pre);
        affine(&params.w_recurrent, None, h_prev, &mut cache.recurrent);
        C::activate(&input_pre, h_prev, c_prev, &mut cache);
        trace.push(cache);
    }
    let last = &trace[steps - 1].hidden;
    let prediction = params.head_bias[0]
        + params
            .head_weight
            .iter()
            .zip(last)
            .map(|(w, v)| *w * *v)
            .sum::<S>();
    ForwardTrace {
        steps: trace,
        prediction,
    }
}

/// Runs the recurrent layer over `inputs` (row-major `[M][D]`) and maps the
/// final hidden state to one prediction.
pub fn forward<S: Scalar>(
    params: &ModelParameters<S>,
    inputs: &[S],
) -> Result<(S, ForwardTrace<S>), NetError> {
    params.check_consistent()?;
    let steps = check_inputs(params, inputs)?;
    let trace = match params.kind {
        CellKind::Lstm => forward_with::<Lstm, S>(params, inputs, steps),
        CellKind::Gru => forward_with::<Gru, S>(params, inputs, steps),
    };
    Ok((trace.prediction, trace))
}

pub fn predict<S: Scalar>(params: &ModelParameters<S>, inputs: &[S]) -> Result<S, NetError> {
    forward(params, inputs).map(|(y, _)| y)
}

fn backward_with<C: RecurrentCell, S: Scalar>(
    params: &ModelParameters<S>,
    trace: &ForwardTrace<S>,
    inputs: &[S],
    d_prediction: S,
    grads: &mut ModelParameters<S>,
) {
    let (d, h) = (params.input_size, params.hidden_size);
    let rows = C::GATES * h;
    let steps = trace.steps.len();
    let zeros = vec![S::zero(); h];

    grads.head_bias[0] += d_prediction;
    let mut d_hidden = vec![S::zero(); h];
    for (g, v) in grads.head_weight.iter_mut().zip(&trace.steps[steps - 1].hidden) {
        *g += d_prediction * *v;
    }
    for (dh, w) in d_hidden.iter_mut().zip(&params.head_weight) {
        *dh = d_prediction * *w;
    }

    let mut d_cell = vec![S::zero(); h];
    let mut d_input = vec![S::zero(); rows];
    let mut d_recurrent = vec![S::zero(); rows];
    let mut d_hidden_prev = vec![S::zero(); h];
    let mut d_cell_prev = vec![S::zero(); h];
    for t in (0..steps).rev() {
        let cache = &trace.steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&trace.steps[t - 1].hidden[..], &trace.steps[t - 1].cell[..])
        };
        C::gate_grads(
            cache,
            h_prev,
            c_prev,
            &d_hidden,
            &d_cell,
            StepGrads {
                d_input: &mut d_input,
                d_recurrent: &mut d_recurrent,
                d_hidden_prev: &mut d_hidden_prev,
                d_cell_prev: &mut d_cell_prev,
            },
        );
        let x = &inputs[t * d..(t + 1) * d];
        for r in 0..rows {
            let (gi, gr) = (d_input[r], d_recurrent[r]);
            grads.bias[r] += gi;
            for (g, xv) in grads.w_input[r * d..(r + 1) * d].iter_mut().zip(x) {
                *g += gi * *xv;
            }
            let w_row = &params.w_recurrent[r * h..(r + 1) * h];
            let g_row = &mut grads.w_recurrent[r * h..(r + 1) * h];
            for k in 0..h {
                g_row[k] += gr * h_prev[k];
                d_hidden_prev[k] += gr * w_row[k];
            }
        }
        std::mem::swap(&mut d_hidden, &mut d_hidden_prev);
        std::mem::swap(&mut d_cell, &mut d_cell_prev);
    }
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the prediction is `d_prediction`.
pub fn backward_from<S: Scalar>(
    params: &ModelParameters<S>,
    trace: &ForwardTrace<S>,
    inputs: &[S],
    d_prediction: S,
    grads: &mut ModelParameters<S>,
) -> Result<(), NetError> {
    params.check_same_shape(grads)?;
    let steps = check_inputs(params, inputs)?;
    if steps != trace.len() {
        return Err(NetError::ShapeMismatch(format!(
            "trace has {} steps but inputs have {steps}",
            trace.len()
        )));
    }
    match params.kind {
        CellKind::Lstm => backward_with::<Lstm, S>(params, trace, inputs, d_prediction, grads),
        CellKind::Gru => backward_with::<Gru, S>(params, trace, inputs, d_prediction, grads),
    }
    Ok(())
}

/// Gradient of the squared error `(prediction - target)^2` with respect to
/// every parameter.
pub fn backward<S: Scalar>(
    params: &ModelParameters<S>,
    trace: &ForwardTrace<S>,
    inputs: &[S],
    target: S,
) -> Result<ModelParameters<S>, NetError> {
    let mut grads = params.zeros_like();
    let d_prediction = S::of(2.0) * (trace.prediction - target);
    backward_from(params, trace, inputs, d_prediction, &mut grads)?;
    Ok(grads)
}

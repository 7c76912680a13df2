//! Layer library: dense, activations, dropout, recurrent layers
//! (simple RNN, LSTM, ConvLSTM2D) and the time-distributed wrapper.
//!
//! Layers are functions over a [`Tape`]; a sequential [`LayerConfig`]
//! stack is evaluated by [`apply_layers`] against parameters bound with
//! [`ParameterStore::bind`].
//!
//! LSTM gates are packed along the trailing axis in the order
//! input, forget, cell candidate, output:
//!
//! ```text
//! z  = x·W + h·U + b            (convolutions for ConvLSTM2D)
//! i  = σ(z[0:u])  f = σ(z[u:2u])  g = tanh(z[2u:3u])  o = σ(z[3u:4u])
//! c' = f⊙c + i⊙g
//! h' = o⊙tanh(c')
//! ```

mod config;
mod params;

pub use config::{layer_prefix, stack_output_shape, Init, LayerConfig, ParamSpec};
pub use params::{init_params, Bound, Parameter, ParameterStore};

use crate::error::{Error, Result};
use crate::tensor::{Padding, Rng, Scalar, Tape, Tensor, Var};

/// Whether stochastic layers are active.
pub enum Mode<'r> {
    Inference,
    Training(&'r mut Rng),
}

/// Weights of a recurrent layer.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentParams {
    pub kernel: Var,
    pub recurrent_kernel: Var,
    pub bias: Var,
}

impl RecurrentParams {
    fn bound(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(RecurrentParams {
            kernel: bound.get(&format!("{prefix}/kernel"))?,
            recurrent_kernel: bound.get(&format!("{prefix}/recurrent_kernel"))?,
            bias: bound.get(&format!("{prefix}/bias"))?,
        })
    }
}

/// `x·w + b` over the trailing axis of `x`.
pub fn dense<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    tape.linear(x, w, Some(b))
}

pub fn softmax<F: Scalar>(tape: &mut Tape<F>, logits: Var) -> Result<Var> {
    tape.softmax(logits)
}

fn seq_len<F: Scalar>(tape: &Tape<F>, seq: Var, rank: usize, op: &'static str) -> Result<usize> {
    let s = tape.shape(seq);
    if s.len() != rank {
        return Err(Error::shape(op, format!("expected rank-{rank} sequence, got {s:?}")));
    }
    Ok(s[0])
}

fn expect_shape<F: Scalar>(tape: &Tape<F>, v: Var, want: &[usize], op: &'static str, what: &str) -> Result<()> {
    if tape.shape(v) != want {
        return Err(Error::shape(op, format!("{what} {:?}, expected {want:?}", tape.shape(v))));
    }
    Ok(())
}

/// `h_t = tanh(x_t·Wx + h_{t-1}·Wh + b)` from a zero state over `seq: [T,D]`.
pub fn simple_rnn<F: Scalar>(
    tape: &mut Tape<F>,
    seq: Var,
    p: RecurrentParams,
    return_sequences: bool,
) -> Result<Var> {
    let steps = seq_len(tape, seq, 2, "simple_rnn")?;
    let d = tape.shape(seq)[1];
    let u = *tape.shape(p.bias).first().unwrap_or(&0);
    expect_shape(tape, p.kernel, &[d, u], "simple_rnn", "kernel")?;
    expect_shape(tape, p.recurrent_kernel, &[u, u], "simple_rnn", "recurrent kernel")?;
    let mut h = tape.constant(Tensor::zeros([u]));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.index(seq, t)?;
        let zx = tape.linear(x, p.kernel, Some(p.bias))?;
        let zh = tape.linear(h, p.recurrent_kernel, None)?;
        let z = tape.add(zx, zh)?;
        h = tape.tanh(z)?;
        outputs.push(h);
    }
    finish_sequence(tape, outputs, return_sequences)
}

fn finish_sequence<F: Scalar>(tape: &mut Tape<F>, outputs: Vec<Var>, return_sequences: bool) -> Result<Var> {
    if return_sequences {
        tape.stack(&outputs)
    } else {
        Ok(*outputs.last().expect("at least one step"))
    }
}

/// Gate nonlinearities and state update from packed pre-activations `z`.
fn lstm_cell<F: Scalar>(tape: &mut Tape<F>, z: Var, c: Var, units: usize) -> Result<(Var, Var)> {
    let packed = tape.lstm_cell(z, c)?;
    let h_next = tape.slice_last(packed, 0, units)?;
    let c_next = tape.slice_last(packed, units, units)?;
    Ok((h_next, c_next))
}

/// One LSTM step for `x: [D]` and state `(h, c)`, both `[U]`.
pub fn lstm_step<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    state: (Var, Var),
    p: RecurrentParams,
) -> Result<(Var, Var)> {
    let units = tape.shape(p.bias)[0] / 4;
    let zx = tape.linear(x, p.kernel, Some(p.bias))?;
    let zh = tape.linear(state.0, p.recurrent_kernel, None)?;
    let z = tape.add(zx, zh)?;
    lstm_cell(tape, z, state.1, units)
}

/// LSTM over `seq: [T,D]`, returning `[T,U]` or the final `[U]` state.
/// A missing initial state means zeros.
pub fn lstm<F: Scalar>(
    tape: &mut Tape<F>,
    seq: Var,
    state0: Option<(Var, Var)>,
    p: RecurrentParams,
    return_sequences: bool,
) -> Result<Var> {
    let steps = seq_len(tape, seq, 2, "lstm")?;
    let d = tape.shape(seq)[1];
    let four_u = *tape.shape(p.bias).first().unwrap_or(&0);
    if four_u == 0 || !four_u.is_multiple_of(4) {
        return Err(Error::shape("lstm", format!("bias {:?} is not 4 gates wide", tape.shape(p.bias))));
    }
    let u = four_u / 4;
    expect_shape(tape, p.kernel, &[d, four_u], "lstm", "kernel")?;
    expect_shape(tape, p.recurrent_kernel, &[u, four_u], "lstm", "recurrent kernel")?;
    let mut state = match state0 {
        Some(s) => {
            expect_shape(tape, s.0, &[u], "lstm", "initial h")?;
            expect_shape(tape, s.1, &[u], "lstm", "initial c")?;
            s
        }
        None => (tape.constant(Tensor::zeros([u])), tape.constant(Tensor::zeros([u]))),
    };
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.index(seq, t)?;
        state = lstm_step(tape, x, state, p)?;
        outputs.push(state.0);
    }
    finish_sequence(tape, outputs, return_sequences)
}

/// Convolutional LSTM over `seq: [T,H,W,C]` with same padding and unit
/// stride. Returns `[T,H,W,U]` or the final `[H,W,U]` hidden state.
pub fn convlstm2d<F: Scalar>(
    tape: &mut Tape<F>,
    seq: Var,
    p: RecurrentParams,
    return_sequences: bool,
) -> Result<Var> {
    let steps = seq_len(tape, seq, 4, "convlstm2d")?;
    let [_, h, w, cin] = tape.shape(seq).try_into().expect("rank checked");
    let ks = tape.shape(p.kernel).to_vec();
    let &[kh, kw, kcin, four_u] = &ks[..] else {
        return Err(Error::shape("convlstm2d", format!("kernel {ks:?}")));
    };
    if four_u % 4 != 0 || kcin != cin {
        return Err(Error::shape("convlstm2d", format!("kernel {ks:?} for {cin} input channels")));
    }
    let u = four_u / 4;
    expect_shape(tape, p.recurrent_kernel, &[kh, kw, u, four_u], "convlstm2d", "recurrent kernel")?;
    expect_shape(tape, p.bias, &[four_u], "convlstm2d", "bias")?;
    let mut hs = tape.constant(Tensor::zeros([h, w, u]));
    let mut cs = tape.constant(Tensor::zeros([h, w, u]));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.index(seq, t)?;
        let zx = tape.conv2d(x, p.kernel, Some(p.bias), Padding::Same, 1)?;
        let zh = tape.conv2d(hs, p.recurrent_kernel, None, Padding::Same, 1)?;
        let z = tape.add(zx, zh)?;
        (hs, cs) = lstm_cell(tape, z, cs, u)?;
        outputs.push(hs);
    }
    finish_sequence(tape, outputs, return_sequences)
}

/// Applies `frame_fn` to every `seq[t]` and stacks the results. Any
/// parameters `frame_fn` uses are the same tape nodes for every frame, so
/// their gradients sum over frames.
pub fn time_distributed<F: Scalar>(
    tape: &mut Tape<F>,
    seq: Var,
    mut frame_fn: impl FnMut(&mut Tape<F>, Var) -> Result<Var>,
) -> Result<Var> {
    let steps = *tape.shape(seq).first().ok_or(Error::EmptyInput("time_distributed"))?;
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let frame = tape.index(seq, t)?;
        outputs.push(frame_fn(tape, frame)?);
    }
    tape.stack(&outputs)
}

/// Evaluates a sequential stack. Parameters of layer `i` are looked up
/// under `{prefix}{i}` (for example `layer3/kernel`).
pub fn apply_layers<F: Scalar>(
    tape: &mut Tape<F>,
    layers: &[LayerConfig],
    prefix: &str,
    bound: &Bound,
    mut x: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    for (i, layer) in layers.iter().enumerate() {
        let name = format!("{prefix}{i}");
        x = apply_layer(tape, layer, &name, bound, x, mode)?;
    }
    Ok(x)
}

fn apply_layer<F: Scalar>(
    tape: &mut Tape<F>,
    layer: &LayerConfig,
    name: &str,
    bound: &Bound,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let param = |p: &str| bound.get(&format!("{name}/{p}"));
    match layer {
        LayerConfig::Dense { .. } => dense(tape, x, param("kernel")?, param("bias")?),
        LayerConfig::Relu => tape.relu(x),
        LayerConfig::Softmax => tape.softmax(x),
        LayerConfig::Flatten => tape.flatten(x),
        LayerConfig::Dropout { rate } => match mode {
            Mode::Inference => Ok(x),
            Mode::Training(rng) => tape.dropout(x, *rate, rng),
        },
        LayerConfig::Conv2d {
            stride, padding, ..
        } => tape.conv2d(x, param("kernel")?, Some(param("bias")?), *padding, *stride),
        LayerConfig::Conv3d {
            stride, padding, ..
        } => tape.conv3d(x, param("kernel")?, Some(param("bias")?), *padding, *stride),
        LayerConfig::Maxpool2d { window, stride } => tape.maxpool2d(x, *window, *stride),
        LayerConfig::Maxpool3d { window, stride } => tape.maxpool3d(x, *window, *stride),
        LayerConfig::SimpleRnn {
            return_sequences, ..
        } => simple_rnn(tape, x, RecurrentParams::bound(bound, name)?, *return_sequences),
        LayerConfig::Lstm {
            return_sequences, ..
        } => lstm(tape, x, None, RecurrentParams::bound(bound, name)?, *return_sequences),
        LayerConfig::Convlstm2d {
            return_sequences, ..
        } => convlstm2d(tape, x, RecurrentParams::bound(bound, name)?, *return_sequences),
        LayerConfig::TimeDistributed { layers, .. } => {
            let inner = format!("{name}/inner");
            time_distributed(tape, x, |tape, frame| {
                apply_layers(tape, layers, &inner, bound, frame, mode)
            })
        }
    }
}

//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation appends a node holding its output value and the ids of
//! its inputs, so node order is a topological order. `backward` walks the
//! nodes once in reverse, accumulating (`+=`) gradients into each input.

use super::kernels::{self, ConvGeom, Padding, PoolGeom};
use super::{Rng, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
    },
    MatMul(Var, Var),
    Conv {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Index {
        x: Var,
        at: usize,
    },
    Stack(Vec<Var>),
    SliceLast {
        x: Var,
        start: usize,
        len: usize,
    },
    Softmax(Var),
    CrossEntropy {
        pred: Var,
        truth: Tensor<F>,
    },
    Sum(Var),
    Mean(Var),
    Mask {
        x: Var,
        mask: Vec<F>,
    },
    LstmCell {
        z: Var,
        c: Var,
        /// Activated gates, packed like `z`.
        gates: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Lower clamp bound applied to probabilities inside the cross-entropy.
pub const PROB_EPSILON: f64 = 1e-7;

/// A recording of one forward computation.
#[derive(Debug)]
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("gradient shape"))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|&v| self.rg(v));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::add(self.value(a), self.value(b))?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::mul(self.value(a), self.value(b))?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.tanh_act());
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::matmul(self.value(a), self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `x · w (+ b)` over the trailing axis of `x`; `w: [K,N]`, `b: [N]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (&kx, lead) = xs.split_last().ok_or(Error::EmptyInput("linear"))?;
        let [k, n] = ws[..] else {
            return Err(Error::shape("linear", format!("weight must be rank 2, got {ws:?}")));
        };
        if kx != k {
            return Err(Error::shape("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(Error::shape("linear", format!("bias {:?} vs {n} units", self.shape(b))));
            }
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![F::zero(); rows * n];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bv);
            }
        }
        kernels::matmul_into(self.value(x).data(), self.value(w).data(), &mut out, rows, k, n);
        let mut shape = lead.to_vec();
        shape.push(n);
        let out = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", out, Op::Linear { x, w, b, rows }, &inputs)
    }

    /// Convolution of `x: [H,W,Cin]` with `k: [kH,kW,Cin,Cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        padding: Padding,
        stride: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let (&[h, w, cin], &[kh, kw, kcin, cout]) = (&xs[..], &ks[..]) else {
            return Err(Error::shape(
                "conv2d",
                format!("expected [H,W,C] input and [kH,kW,Cin,Cout] kernel, got {xs:?} and {ks:?}"),
            ));
        };
        let geom = ConvGeom::new(
            "conv2d",
            [1, h, w],
            cin,
            [1, kh, kw],
            kcin,
            cout,
            [1, stride, stride],
            padding,
        )?;
        let [_, oh, ow] = geom.output;
        self.conv(x, k, b, geom, vec![oh, ow, cout])
    }

    /// Convolution of `x: [T,H,W,Cin]` with `k: [kT,kH,kW,Cin,Cout]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        padding: Padding,
        stride: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let (&[t, h, w, cin], &[kt, kh, kw, kcin, cout]) = (&xs[..], &ks[..]) else {
            return Err(Error::shape(
                "conv3d",
                format!("expected [T,H,W,C] input and [kT,kH,kW,Cin,Cout] kernel, got {xs:?} and {ks:?}"),
            ));
        };
        let geom = ConvGeom::new(
            "conv3d",
            [t, h, w],
            cin,
            [kt, kh, kw],
            kcin,
            cout,
            [stride; 3],
            padding,
        )?;
        let [ot, oh, ow] = geom.output;
        self.conv(x, k, b, geom, vec![ot, oh, ow, cout])
    }

    fn conv(&mut self, x: Var, k: Var, b: Option<Var>, geom: ConvGeom, shape: Vec<usize>) -> Result<Var> {
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape("conv", format!("bias {:?} vs {} filters", self.shape(b), geom.cout)));
            }
        }
        let out = kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(k).data(),
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(shape, out)?;
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.push("conv", out, Op::Conv { x, k, b, geom }, &inputs)
    }

    /// Max pool of `x: [H,W,C]` with window and stride `(h,w)`.
    pub fn maxpool2d(&mut self, x: Var, window: [usize; 2], stride: [usize; 2]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [h, w, c] = xs[..] else {
            return Err(Error::shape("maxpool2d", format!("expected [H,W,C], got {xs:?}")));
        };
        let g = PoolGeom::new("maxpool2d", [1, h, w], c, [1, window[0], window[1]], [1, stride[0], stride[1]])?;
        self.maxpool(x, g, vec![g.output[1], g.output[2], c])
    }

    /// Max pool of `x: [T,H,W,C]` with window and stride `(t,h,w)`.
    pub fn maxpool3d(&mut self, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [t, h, w, c] = xs[..] else {
            return Err(Error::shape("maxpool3d", format!("expected [T,H,W,C], got {xs:?}")));
        };
        let g = PoolGeom::new("maxpool3d", [t, h, w], c, window, stride)?;
        self.maxpool(x, g, vec![g.output[0], g.output[1], g.output[2], c])
    }

    fn maxpool(&mut self, x: Var, g: PoolGeom, shape: Vec<usize>) -> Result<Var> {
        let (out, argmax) = kernels::maxpool_forward(&g, self.value(x).data());
        let out = Tensor::new(shape, out)?;
        self.push("maxpool", out, Op::MaxPool { x, argmax }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, [n])
    }

    /// `x[at]` along the leading axis.
    pub fn index(&mut self, x: Var, at: usize) -> Result<Var> {
        let out = self.value(x).index(at)?;
        self.push("index", out, Op::Index { x, at }, &[x])
    }

    /// Stacks equally-shaped nodes along a new leading axis.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let values: Vec<Tensor<F>> = items.iter().map(|&v| self.value(v).clone()).collect();
        let out = Tensor::stack(&values)?;
        self.push("stack", out, Op::Stack(items.to_vec()), items)
    }

    /// Channels `start..start+len` of the trailing axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let &c = shape.last().ok_or(Error::EmptyInput("slice_last"))?;
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_last", format!("{start}..{} of {c}", start + len)));
        }
        let data: Vec<F> = self
            .value(x)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let out = Tensor::new(out_shape, data)?;
        self.push("slice_last", out, Op::SliceLast { x, start, len }, &[x])
    }

    /// Softmax over the trailing axis, computed as `exp(z - max z) / sum`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x);
        if !value.all_finite() {
            return Err(Error::NonFinite("softmax"));
        }
        let out = softmax(value);
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Mean over rows of `-sum_c y_c ln(clamp(p_c, eps, 1 - eps))`.
    pub fn cross_entropy(&mut self, pred: Var, truth: &Tensor<F>) -> Result<Var> {
        let loss = cross_entropy(self.value(pred), truth)?;
        let out = Tensor::scalar(loss);
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                pred,
                truth: truth.clone(),
            },
            &[pred],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(super::reduce_sum(self.value(x)));
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(super::reduce_mean(self.value(x)));
        self.push("mean", out, Op::Mean(x), &[x])
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = F::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.value(x).len())
            .map(|_| if rng.next_f64() < rate { F::zero() } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push("dropout", out, Op::Mask { x, mask }, &[x])
    }

    /// Fused LSTM cell update. `z` holds packed gate pre-activations
    /// `[..., 4U]` in (input, forget, cell, output) order and `c` the
    /// previous cell state `[..., U]`. Returns `[..., 2U]` holding the new
    /// hidden state followed by the new cell state.
    pub fn lstm_cell(&mut self, z: Var, c: Var) -> Result<Var> {
        let zs = self.shape(z).to_vec();
        let cs = self.shape(c).to_vec();
        let (&four_u, lead) = zs.split_last().ok_or(Error::EmptyInput("lstm_cell"))?;
        let u = four_u / 4;
        if four_u % 4 != 0 || cs.split_last() != Some((&u, lead)) {
            return Err(Error::shape("lstm_cell", format!("gates {zs:?} vs state {cs:?}")));
        }
        let zv = self.value(z).data();
        let cv = self.value(c).data();
        let mut gates = vec![F::zero(); zv.len()];
        let mut out = vec![F::zero(); cv.len() * 2];
        for ((zr, gr), (cr, or)) in zv
            .chunks_exact(four_u)
            .zip(gates.chunks_exact_mut(four_u))
            .zip(cv.chunks_exact(u).zip(out.chunks_exact_mut(2 * u)))
        {
            for j in 0..u {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[u + j]);
                let g = zr[2 * u + j].tanh_act();
                let o = sigmoid(zr[3 * u + j]);
                let c_next = f * cr[j] + i * g;
                or[j] = o * c_next.tanh_act();
                or[u + j] = c_next;
                gr[j] = i;
                gr[u + j] = f;
                gr[2 * u + j] = g;
                gr[3 * u + j] = o;
            }
        }
        let mut shape = lead.to_vec();
        shape.push(2 * u);
        let out = Tensor::new(shape, out)?;
        self.push("lstm_cell", out, Op::LstmCell { z, c, gates }, &[z, c])
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires one. Gradients from an earlier call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            Backprop {
                nodes: &self.nodes,
                grads: &mut grads,
            }
            .propagate(id, &g);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

/// Gradient accumulation for one backward pass. Node values are borrowed
/// immutably while gradient buffers are written.
struct Backprop<'a, F> {
    nodes: &'a [Node<F>],
    grads: &'a mut [Option<Vec<F>>],
}

impl<F: Scalar> Backprop<'_, F> {
    fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&mut self, v: Var) -> Option<&mut [F]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn acc_with(&mut self, v: Var, f: impl Fn(usize) -> F) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(dst) => {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += f(i);
                }
            }
            slot => *slot = Some((0..self.nodes[v.0].value.len()).map(f).collect()),
        }
    }

    fn propagate(&mut self, id: usize, g: &[F]) {
        let nodes = self.nodes;
        let out = nodes[id].value.data();
        match &nodes[id].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.acc_with(a, |i| g[i]);
                self.acc_with(b, |i| g[i]);
            }
            &Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                self.acc_with(a, |i| g[i] * bv[i]);
                self.acc_with(b, |i| g[i] * av[i]);
            }
            &Op::Relu(x) => {
                self.acc_with(x, |i| if out[i] > F::zero() { g[i] } else { F::zero() });
            }
            &Op::Sigmoid(x) => {
                self.acc_with(x, |i| g[i] * out[i] * (F::one() - out[i]));
            }
            &Op::Tanh(x) => {
                self.acc_with(x, |i| g[i] * (F::one() - out[i] * out[i]));
            }
            &Op::Linear { x, w, b, rows } => {
                let ws = self.value(w).shape();
                let (k, n) = (ws[0], ws[1]);
                if let Some(gb) = b.and_then(|b| self.acc(b)) {
                    for row in g.chunks_exact(n) {
                        for (d, &v) in gb.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
                self.matmul_grads(x, w, g, rows, k, n);
            }
            &Op::MatMul(a, b) => {
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let n = self.value(b).shape()[1];
                self.matmul_grads(a, b, g, m, k, n);
            }
            &Op::Conv { x, k, b, ref geom } => {
                let xv = nodes[x.0].value.data();
                let kv = nodes[k.0].value.data();
                if let Some(gb) = b.and_then(|b| self.acc(b)) {
                    kernels::conv_backward_bias(geom, g, gb);
                }
                if let Some(gk) = self.acc(k) {
                    kernels::conv_backward_kernel(geom, xv, g, gk);
                }
                if let Some(gx) = self.acc(x) {
                    kernels::conv_backward_input(geom, kv, g, gx);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(dst) = self.acc(*x) {
                    kernels::maxpool_backward(argmax, g, dst);
                }
            }
            &Op::Reshape(x) => self.acc_with(x, |i| g[i]),
            &Op::Index { x, at } => {
                let n = g.len();
                if let Some(dst) = self.acc(x) {
                    for (d, &v) in dst[at * n..(at + 1) * n].iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
            Op::Stack(items) => {
                let n = g.len() / items.len();
                for (t, &v) in items.iter().enumerate() {
                    self.acc_with(v, |i| g[t * n + i]);
                }
            }
            &Op::SliceLast { x, start, len } => {
                let c = *self.value(x).shape().last().unwrap();
                if let Some(dst) = self.acc(x) {
                    for (row, grow) in dst.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                        for (d, &v) in row[start..start + len].iter_mut().zip(grow) {
                            *d += v;
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                let c = *self.value(x).shape().last().unwrap();
                if let Some(dst) = self.acc(x) {
                    for ((drow, yrow), grow) in
                        dst.chunks_exact_mut(c).zip(out.chunks_exact(c)).zip(g.chunks_exact(c))
                    {
                        let dot = yrow.iter().zip(grow).fold(F::zero(), |a, (&p, &q)| a + p * q);
                        for ((d, &p), &q) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += p * (q - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { pred, truth } => {
                let p = nodes[pred.0].value.data();
                let c = *nodes[pred.0].value.shape().last().unwrap();
                let rows = F::from_f64((p.len() / c) as f64);
                let lo = F::from_f64(PROB_EPSILON);
                let hi = F::one() - lo;
                let t = truth.data();
                self.acc_with(*pred, |i| {
                    if p[i] < lo || p[i] > hi {
                        F::zero()
                    } else {
                        -g[0] * t[i] / p[i] / rows
                    }
                });
            }
            &Op::Sum(x) => self.acc_with(x, |_| g[0]),
            &Op::Mean(x) => {
                let n = F::from_f64(self.value(x).len() as f64);
                self.acc_with(x, |_| g[0] / n);
            }
            Op::Mask { x, mask } => self.acc_with(*x, |i| g[i] * mask[i]),
            Op::LstmCell { z, c, gates } => {
                let (z, c) = (*z, *c);
                let four_u = *self.value(z).shape().last().unwrap();
                let u = four_u / 4;
                let cprev = nodes[c.0].value.data();
                let rows = cprev.len() / u;
                let mut dz = vec![F::zero(); rows * four_u];
                let mut dc = vec![F::zero(); rows * u];
                for r in 0..rows {
                    let gr = &gates[r * four_u..(r + 1) * four_u];
                    let orow = &out[r * 2 * u..(r + 1) * 2 * u];
                    let grow = &g[r * 2 * u..(r + 1) * 2 * u];
                    for j in 0..u {
                        let (i, f, gg, o) = (gr[j], gr[u + j], gr[2 * u + j], gr[3 * u + j]);
                        let tc = orow[u + j].tanh_act();
                        let dh = grow[j];
                        let dct = grow[u + j] + dh * o * (F::one() - tc * tc);
                        let dzr = &mut dz[r * four_u..(r + 1) * four_u];
                        dzr[j] = dct * gg * i * (F::one() - i);
                        dzr[u + j] = dct * cprev[r * u + j] * f * (F::one() - f);
                        dzr[2 * u + j] = dct * i * (F::one() - gg * gg);
                        dzr[3 * u + j] = dh * tc * o * (F::one() - o);
                        dc[r * u + j] = dct * f;
                    }
                }
                if let Some(dst) = self.acc(z) {
                    for (d, v) in dst.iter_mut().zip(dz) {
                        *d += v;
                    }
                }
                if let Some(dst) = self.acc(c) {
                    for (d, v) in dst.iter_mut().zip(dc) {
                        *d += v;
                    }
                }
            }
        }
    }

    fn matmul_grads(&mut self, a: Var, b: Var, g: &[F], m: usize, k: usize, n: usize) {
        let nodes = self.nodes;
        if self.rg(a) {
            let ga = self.acc(a).unwrap();
            kernels::matmul_grad_a(g, nodes[b.0].value.data(), ga, m, k, n);
        }
        if self.rg(b) {
            let gb = self.acc(b).unwrap();
            kernels::matmul_grad_b(nodes[a.0].value.data(), g, gb, m, k, n);
        }
    }
}

#[inline]
fn sigmoid<F: Scalar>(v: F) -> F {
    v.sigmoid()
}

/// Row-wise softmax over the trailing axis.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Tensor<F> {
    let c = *logits.shape().last().unwrap();
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(logits.shape().to_vec(), out).expect("softmax shape")
}

/// Mean over rows of `-sum_c y_c ln(clamp(p_c, eps, 1 - eps))`. Rank-1
/// inputs are treated as a single row.
pub fn cross_entropy<F: Scalar>(pred: &Tensor<F>, truth: &Tensor<F>) -> Result<F> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(
            "categorical_crossentropy",
            format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
        ));
    }
    let c = *pred.shape().last().unwrap();
    let lo = F::from_f64(PROB_EPSILON);
    let hi = F::one() - lo;
    let mut total = F::zero();
    let mut rows = 0usize;
    for (prow, trow) in pred.data().chunks_exact(c).zip(truth.data().chunks_exact(c)) {
        let ones = trow.iter().filter(|&&v| v == F::one()).count();
        let zeros = trow.iter().filter(|&&v| v == F::zero()).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::Label(format!("truth row {rows} is not one-hot")));
        }
        for (&p, &y) in prow.iter().zip(trow) {
            if y != F::zero() {
                let p = if p < lo { lo } else if p > hi { hi } else { p };
                total -= y * p.ln();
            }
        }
        rows += 1;
    }
    Ok(total / F::from_f64(rows as f64))
}

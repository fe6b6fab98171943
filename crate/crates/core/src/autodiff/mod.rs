//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every differentiable operation executed on it. Values
//! are immutable once recorded; only gradient buffers change. Each forward
//! pass (one image, one Monte-Carlo sample) gets its own tape, so tapes are
//! never shared between threads. Parameters enter a tape as leaves that share
//! storage with the parameter store through `Arc`.

mod conv;

use std::sync::Arc;

pub use conv::{conv_output_extent, same_padding, Padding};

use crate::error::{contract_err, shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Norms below this make `l2_normalize` fail instead of dividing.
pub const MIN_NORM: Real = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(Real),
    Silu,
    Sigmoid,
}

impl Activation {
    /// Negative slope used by the Leaky ReLU layers.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);

    pub fn apply(self, x: Real) -> Real {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn derivative(self, x: Real, y: Real) -> Real {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    AddScalar(Var),
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    MulChannel(Var, Var),
    Conv2d { input: Var, kernel: Var, geom: conv::ConvGeom },
    DepthwiseConv2d { input: Var, kernel: Var, geom: conv::ConvGeom },
    MeanRows(Var),
    Act(Var, Activation),
    Log(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize(Var),
    Sum(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Tile(Var),
    GatherRows { src: Var, width: usize, rows: Vec<usize> },
    Crop { src: Var, top: usize, left: usize },
}

struct Node {
    value: Arc<Tensor>,
    grad: Option<Vec<Real>>,
    requires_grad: bool,
    op: Op,
}

/// Record of executed operations, replayed backwards by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[Real]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value: Arc::new(value), grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(Real, Real) -> Real) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(Real) -> Real) -> Tensor {
        let x = self.value(a);
        Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip(a, b, |p, q| p + q);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip(a, b, |p, q| p - q);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip(a, b, |p, q| p * q);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let t = self.map(a, |v| v * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: Real) -> Var {
        let t = self.map(a, |v| v + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    /// Sum of several same-shape values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| contract_err!("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul: cannot multiply {:?} by {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (x, w) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let xv = x[i * k + p];
                if xv == 0.0 {
                    continue;
                }
                for (o, &wv) in row.iter_mut().zip(&w[p * n..(p + 1) * n]) {
                    *o += xv * wv;
                }
            }
        }
        let t = Tensor::new([m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds `bias[C]` along the trailing axis.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(bias) != [c] {
            return Err(shape_err!(
                "bias_add: bias {:?} does not match trailing extent of {:?}",
                self.shape(bias),
                self.shape(x)
            ));
        }
        let b = self.value(bias).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + b[i % c]).collect();
        let t = Tensor::new(xv.shape(), data)?;
        Ok(self.push(t, Op::BiasAdd(x, bias), &[x, bias]))
    }

    /// Multiplies every trailing-axis vector of `x` by `scale[C]`.
    pub fn mul_channel(&mut self, x: Var, scale: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(scale) != [c] {
            return Err(shape_err!(
                "mul_channel: scale {:?} does not match trailing extent of {:?}",
                self.shape(scale),
                self.shape(x)
            ));
        }
        let s = self.value(scale).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| v * s[i % c]).collect();
        let t = Tensor::new(xv.shape(), data)?;
        Ok(self.push(t, Op::MulChannel(x, scale), &[x, scale]))
    }

    /// Affine map over the last axis: `input[.., Cin] · weight[Cin, Cout] + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let cin = *shape.last().unwrap();
        let ws = self.shape(weight);
        if ws.len() != 2 || ws[0] != cin {
            return Err(shape_err!(
                "linear: input {:?} incompatible with weight {:?}",
                shape,
                ws
            ));
        }
        let cout = ws[1];
        let rows = shape.iter().product::<usize>() / cin;
        let flat = self.reshape(input, [rows, cin])?;
        let mut y = self.matmul(flat, weight)?;
        if let Some(b) = bias {
            y = self.bias_add(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = cout;
        self.reshape(y, out_shape)
    }

    /// 2-D convolution of an `[H, W, Cin]` map with a `[k, k, Cin, Cout]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = conv::ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding, false)?;
        let t = conv::conv2d_forward(self.value(input), self.value(kernel), &geom);
        Ok(self.push(t, Op::Conv2d { input, kernel, geom }, &[input, kernel]))
    }

    /// Depthwise convolution of `[H, W, C]` with a `[k, k, C]` kernel.
    pub fn depthwise_conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = conv::ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding, true)?;
        let t = conv::depthwise_forward(self.value(input), self.value(kernel), &geom);
        Ok(self.push(t, Op::DepthwiseConv2d { input, kernel, geom }, &[input, kernel]))
    }

    /// Mean over every axis but the last: `[.., C] -> [C]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let rows = xv.len() / c;
        let mut out = vec![0.0; c];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(&xv.data()[r * c..(r + 1) * c]) {
                *o += v;
            }
        }
        let inv = 1.0 / rows as Real;
        out.iter_mut().for_each(|o| *o *= inv);
        let t = Tensor::vector(out);
        Ok(self.push(t, Op::MeanRows(x), &[x]))
    }

    /// Global average pooling of an `[H, W, C]` map.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(shape_err!("gap expects an [H, W, C] map, got {:?}", self.shape(x)));
        }
        self.mean_rows(x)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let t = self.map(x, |v| act.apply(v));
        self.push(t, Op::Act(x, act), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: Real) -> Var {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Numeric("log of a non-positive or non-finite value".into()));
        }
        let t = self.map(x, Real::ln);
        Ok(self.push(t, Op::Log(x), &[x]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.map(x, Real::exp);
        self.push(t, Op::Exp(x), &[x])
    }

    fn check_finite(&self, x: Var, what: &str) -> Result<()> {
        if !self.value(x).all_finite() {
            return Err(Error::Numeric(format!("{what}: non-finite input")));
        }
        Ok(())
    }

    /// Softmax over the trailing axis, max-shifted for stability.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite(x, "softmax")?;
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::new(xv.shape(), out)?;
        Ok(self.push(t, Op::Softmax(x), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite(x, "log_softmax")?;
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<Real>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::new(xv.shape(), out)?;
        Ok(self.push(t, Op::LogSoftmax(x), &[x]))
    }

    /// Scales every trailing-axis vector to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.check_finite(x, "l2_normalize")?;
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            let norm = row.iter().map(|v| v * v).sum::<Real>().sqrt();
            if norm < MIN_NORM {
                return Err(Error::Numeric(format!(
                    "l2_normalize of a vector with norm {norm:e}"
                )));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let t = Tensor::new(xv.shape(), out)?;
        Ok(self.push(t, Op::L2Normalize(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as Real;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if self.shape(x) == shape.as_slice() {
            return Ok(x);
        }
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Concatenates along the trailing axis; leading shapes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract_err!("concat of nothing"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err!("concat: leading shape {:?} vs {:?}", s, lead));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec()), parts))
    }

    /// Stacks `[C]` vectors or `[r, C]` blocks into one `[R, C]` matrix.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract_err!("concat_rows of nothing"))?;
        let c = self.value(*first).last_dim();
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.last_dim() != c {
                return Err(shape_err!("concat_rows: width {} vs {}", v.last_dim(), c));
            }
            out.extend_from_slice(v.data());
        }
        let rows = out.len() / c;
        let t = Tensor::new([rows, c], out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Repeats a `[C]` vector into `[rows, C]`.
    pub fn tile(&mut self, x: Var, rows: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 1 {
            return Err(shape_err!("tile expects a vector, got {:?}", v.shape()));
        }
        let c = v.len();
        let data: Vec<Real> = (0..rows).flat_map(|_| v.data().iter().copied()).collect();
        let t = Tensor::new([rows, c], data)?;
        Ok(self.push(t, Op::Tile(x), &[x]))
    }

    /// Selects rows of `src` viewed as `[len / width, width]`.
    pub fn gather_rows(&mut self, src: Var, width: usize, rows: &[usize]) -> Result<Var> {
        let v = self.value(src);
        if width == 0 || !v.len().is_multiple_of(width) {
            return Err(shape_err!("gather_rows: width {} does not divide {:?}", width, v.shape()));
        }
        let nrows = v.len() / width;
        if let Some(&bad) = rows.iter().find(|&&r| r >= nrows) {
            return Err(shape_err!("gather_rows: row {} out of {}", bad, nrows));
        }
        if rows.is_empty() {
            return Err(contract_err!("gather_rows with no rows"));
        }
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&v.data()[r * width..(r + 1) * width]);
        }
        let t = Tensor::new([rows.len(), width], out)?;
        Ok(self.push(t, Op::GatherRows { src, width, rows: rows.to_vec() }, &[src]))
    }

    /// Picks single elements of a flattened value; result is a vector.
    pub fn pick(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let g = self.gather_rows(src, 1, indices)?;
        self.reshape(g, [indices.len()])
    }

    /// Spatial crop of an `[H, W, C]` map.
    pub fn crop(&mut self, src: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let v = self.value(src);
        let s = v.shape();
        if s.len() != 3 || top + h > s[0] || left + w > s[1] || h == 0 || w == 0 {
            return Err(shape_err!(
                "crop ({top},{left},{h},{w}) outside map {:?}",
                s
            ));
        }
        let (sw, c) = (s[1], s[2]);
        let mut out = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            out.extend_from_slice(&v.data()[(y * sw + left) * c..(y * sw + left + w) * c]);
        }
        let t = Tensor::new([h, w, c], out)?;
        Ok(self.push(t, Op::Crop { src, top, left }, &[src]))
    }

    /// `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let k = self.value(logits).len();
        if label >= k {
            return Err(contract_err!("label {label} outside {k} classes"));
        }
        let flat = self.reshape(logits, [k])?;
        let ls = self.log_softmax(flat)?;
        let picked = self.pick(ls, &[label])?;
        Ok(self.scale(picked, -1.0))
    }

    /// Accumulates `d loss / d v` into every node that requires a gradient.
    ///
    /// Calling this twice without [`Tape::zero_grad`] doubles every gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(contract_err!(
                "backward from non-scalar value of shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = self.nodes[i].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in [a, b].into_iter() {
                    if needs(p) {
                        accumulate(grads, p, |buf| axpy(buf, g, 1.0), g.len());
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, |buf| axpy(buf, g, 1.0), g.len());
                }
                if needs(*b) {
                    accumulate(grads, *b, |buf| axpy(buf, g, -1.0), g.len());
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if needs(*a) {
                    accumulate(grads, *a, |buf| {
                        buf.iter_mut().zip(g.iter().zip(y)).for_each(|(o, (gv, yv))| *o += gv * yv)
                    }, g.len());
                }
                if needs(*b) {
                    accumulate(grads, *b, |buf| {
                        buf.iter_mut().zip(g.iter().zip(x)).for_each(|(o, (gv, xv))| *o += gv * xv)
                    }, g.len());
                }
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, |buf| axpy(buf, g, *c), g.len());
            }
            Op::AddScalar(a) => {
                accumulate(grads, *a, |buf| axpy(buf, g, 1.0), g.len());
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (x, w) = (val(*a), val(*b));
                if needs(*a) {
                    accumulate(grads, *a, |buf| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let wrow = &w[p * n..(p + 1) * n];
                                buf[i * k + p] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<Real>();
                            }
                        }
                    }, m * k);
                }
                if needs(*b) {
                    accumulate(grads, *b, |buf| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let xv = x[i * k + p];
                                if xv == 0.0 {
                                    continue;
                                }
                                axpy(&mut buf[p * n..(p + 1) * n], grow, xv);
                            }
                        }
                    }, k * n);
                }
            }
            Op::BiasAdd(x, b) => {
                let c = self.nodes[b.0].value.len();
                if needs(*x) {
                    accumulate(grads, *x, |buf| axpy(buf, g, 1.0), g.len());
                }
                if needs(*b) {
                    accumulate(grads, *b, |buf| {
                        for row in g.chunks(c) {
                            axpy(buf, row, 1.0);
                        }
                    }, c);
                }
            }
            Op::MulChannel(x, s) => {
                let c = self.nodes[s.0].value.len();
                let (xv, sv) = (val(*x), val(*s));
                if needs(*x) {
                    accumulate(grads, *x, |buf| {
                        for (j, o) in buf.iter_mut().enumerate() {
                            *o += g[j] * sv[j % c];
                        }
                    }, g.len());
                }
                if needs(*s) {
                    accumulate(grads, *s, |buf| {
                        for j in 0..g.len() {
                            buf[j % c] += g[j] * xv[j];
                        }
                    }, c);
                }
            }
            Op::Conv2d { input, kernel, geom } => {
                let (x, k) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
                if needs(*input) {
                    accumulate(grads, *input, |buf| conv::conv2d_grad_input(buf, g, k, geom), x.len());
                }
                if needs(*kernel) {
                    accumulate(grads, *kernel, |buf| conv::conv2d_grad_kernel(buf, g, x, geom), k.len());
                }
            }
            Op::DepthwiseConv2d { input, kernel, geom } => {
                let (x, k) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
                if needs(*input) {
                    accumulate(grads, *input, |buf| conv::depthwise_grad_input(buf, g, k, geom), x.len());
                }
                if needs(*kernel) {
                    accumulate(grads, *kernel, |buf| conv::depthwise_grad_kernel(buf, g, x, geom), k.len());
                }
            }
            Op::MeanRows(x) => {
                let n = self.nodes[x.0].value.len();
                let c = g.len();
                let inv = 1.0 / (n / c) as Real;
                accumulate(grads, *x, |buf| {
                    for row in buf.chunks_mut(c) {
                        axpy(row, g, inv);
                    }
                }, n);
            }
            Op::Act(x, act) => {
                let xv = val(*x);
                accumulate(grads, *x, |buf| {
                    for j in 0..g.len() {
                        buf[j] += g[j] * act.derivative(xv[j], out[j]);
                    }
                }, g.len());
            }
            Op::Log(x) => {
                let xv = val(*x);
                accumulate(grads, *x, |buf| {
                    for j in 0..g.len() {
                        buf[j] += g[j] / xv[j];
                    }
                }, g.len());
            }
            Op::Exp(x) => {
                accumulate(grads, *x, |buf| {
                    for j in 0..g.len() {
                        buf[j] += g[j] * out[j];
                    }
                }, g.len());
            }
            Op::Softmax(x) => {
                let c = self.nodes[x.0].value.last_dim();
                accumulate(grads, *x, |buf| {
                    for ((b, gr), y) in buf.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: Real = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            b[j] += y[j] * (gr[j] - dot);
                        }
                    }
                }, g.len());
            }
            Op::LogSoftmax(x) => {
                let c = self.nodes[x.0].value.last_dim();
                accumulate(grads, *x, |buf| {
                    for ((b, gr), y) in buf.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let total: Real = gr.iter().sum();
                        for j in 0..c {
                            b[j] += gr[j] - y[j].exp() * total;
                        }
                    }
                }, g.len());
            }
            Op::L2Normalize(x) => {
                let c = self.nodes[x.0].value.last_dim();
                let xv = val(*x);
                accumulate(grads, *x, |buf| {
                    for (((b, gr), y), xr) in buf
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(out.chunks(c))
                        .zip(xv.chunks(c))
                    {
                        let norm = xr.iter().map(|v| v * v).sum::<Real>().sqrt();
                        let dot: Real = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            b[j] += (gr[j] - y[j] * dot) / norm;
                        }
                    }
                }, g.len());
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                accumulate(grads, *x, |buf| buf.iter_mut().for_each(|o| *o += g[0]), n);
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, |buf| axpy(buf, g, 1.0), g.len());
            }
            Op::Concat(parts) => {
                let total = self.nodes[i].value.last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.last_dim();
                    if needs(p) {
                        accumulate(grads, p, |buf| {
                            for r in 0..rows {
                                axpy(&mut buf[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w], 1.0);
                            }
                        }, rows * w);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if needs(p) {
                        accumulate(grads, p, |buf| axpy(buf, &g[offset..offset + n], 1.0), n);
                    }
                    offset += n;
                }
            }
            Op::Tile(x) => {
                let c = self.nodes[x.0].value.len();
                accumulate(grads, *x, |buf| {
                    for row in g.chunks(c) {
                        axpy(buf, row, 1.0);
                    }
                }, c);
            }
            Op::GatherRows { src, width, rows } => {
                let n = self.nodes[src.0].value.len();
                let w = *width;
                accumulate(grads, *src, |buf| {
                    for (j, &r) in rows.iter().enumerate() {
                        axpy(&mut buf[r * w..(r + 1) * w], &g[j * w..(j + 1) * w], 1.0);
                    }
                }, n);
            }
            Op::Crop { src, top, left } => {
                let s = self.nodes[src.0].value.shape();
                let o = self.nodes[i].value.shape();
                let (sw, c) = (s[1], s[2]);
                let (h, w) = (o[0], o[1]);
                accumulate(grads, *src, |buf| {
                    for y in 0..h {
                        let dst = ((y + top) * sw + left) * c;
                        axpy(&mut buf[dst..dst + w * c], &g[y * w * c..(y + 1) * w * c], 1.0);
                    }
                }, self.nodes[src.0].value.len());
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<Real>>], v: Var, f: impl FnOnce(&mut [Real]), len: usize) {
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn axpy(dst: &mut [Real], src: &[Real], a: Real) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Max-shifted softmax of a slice, in place.
pub fn softmax_in_place(row: &mut [Real]) {
    let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

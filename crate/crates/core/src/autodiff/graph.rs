use std::str::FromStr;

use super::tensor::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operator identifiers accepted by [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpTag {
    MatMul,
    /// Stride 1, zero "same" padding; input `[B, L, C_in]`, kernel `[K, C_in, C_out]`.
    Conv1d,
    Add,
    Sub,
    Mul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
    Softmax { axis: usize },
    Mean { axis: Option<usize> },
    Sum { axis: Option<usize> },
    Square,
    Sqrt,
    /// `(1 + gamma) * x + beta`, with gamma and beta broadcast to the shape of x.
    AffineModulate,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl FromStr for OpTag {
    type Err = Error;

    /// Parses `name` or `name(arg, ...)`, e.g. `softmax(1)` or `leaky_relu(0.1)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], &s[i + 1..s.len() - 1]),
            Some(_) => return Err(Error::Config(format!("malformed operator tag `{s}`"))),
            None => (s, ""),
        };
        let args: Vec<&str> = args
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .collect();
        let uint = |i: usize| -> Result<usize> {
            args.get(i)
                .ok_or_else(|| Error::Config(format!("`{name}` needs argument {i}")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad integer argument for `{name}`")))
        };
        let tag = match name {
            "matmul" => OpTag::MatMul,
            "conv1d" => OpTag::Conv1d,
            "add" => OpTag::Add,
            "sub" => OpTag::Sub,
            "mul" => OpTag::Mul,
            "concat" => OpTag::Concat { axis: uint(0)? },
            "slice" => OpTag::Slice {
                axis: uint(0)?,
                start: uint(1)?,
                len: uint(2)?,
            },
            "sigmoid" => OpTag::Sigmoid,
            "tanh" => OpTag::Tanh,
            "relu" => OpTag::Relu,
            "leaky_relu" => OpTag::LeakyRelu {
                slope: match args.first() {
                    Some(a) => a
                        .parse()
                        .map_err(|_| Error::Config("bad leaky_relu slope".into()))?,
                    None => DEFAULT_LEAKY_SLOPE,
                },
            },
            "softmax" => OpTag::Softmax { axis: uint(0)? },
            "mean" => OpTag::Mean {
                axis: if args.is_empty() { None } else { Some(uint(0)?) },
            },
            "sum" => OpTag::Sum {
                axis: if args.is_empty() { None } else { Some(uint(0)?) },
            },
            "square" => OpTag::Square,
            "sqrt" => OpTag::Sqrt,
            "affine_modulate" => OpTag::AffineModulate,
            other => return Err(Error::Config(format!("unknown operator `{other}`"))),
        };
        Ok(tag)
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv1d(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Softmax(Var, usize),
    Mean(Var, Option<usize>),
    Sum(Var, Option<usize>),
    Square(Var),
    Sqrt(Var),
    AffineModulate(Var, Var, Var),
    Reshape(Var),
    SwapLast2(Var),
    Embedding(Var, Vec<usize>),
    Scale(Var, T),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only tape of operations. Nodes are stored in creation order, which is
/// a topological order because every input must exist before its consumer.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source `inp`.
/// `None` when the shapes are identical.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Option<Vec<usize>> {
    if out == inp {
        return None;
    }
    let nd = out.len();
    let off = nd - inp.len();
    let total = numel(out);
    let n_in = numel(inp);
    // common case: inp is a trailing suffix of out (bias-like)
    if out[off..] == *inp {
        return Some((0..total).map(|i| i % n_in.max(1)).collect());
    }
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for d in (0..inp.len()).rev() {
        strides[d + off] = if inp[d] == 1 { 0 } else { s };
        s *= inp[d];
    }
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..nd).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    Some(map)
}

#[inline]
fn at(map: &Option<Vec<usize>>, i: usize) -> usize {
    match map {
        Some(m) => m[i],
        None => i,
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a tensor as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::Dimension {
                op: "constant",
                shapes: vec![shape, vec![data.len()]],
            });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::from_fn(n.shape.clone(), |i| n.value[i])
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Dispatches a tagged operator.
    pub fn apply(&mut self, tag: &OpTag, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::Contract(format!(
                    "{tag:?} expects {n} inputs, got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match *tag {
            OpTag::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpTag::Conv1d => {
                arity(2)?;
                self.conv1d(inputs[0], inputs[1])
            }
            OpTag::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpTag::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpTag::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpTag::Concat { axis } => self.concat(inputs, axis),
            OpTag::Slice { axis, start, len } => {
                arity(1)?;
                self.slice(inputs[0], axis, start, len)
            }
            OpTag::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpTag::Tanh => {
                arity(1)?;
                Ok(self.tanh(inputs[0]))
            }
            OpTag::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpTag::LeakyRelu { slope } => {
                arity(1)?;
                Ok(self.leaky_relu(inputs[0], T::lit(slope)))
            }
            OpTag::Softmax { axis } => {
                arity(1)?;
                self.softmax(inputs[0], axis)
            }
            OpTag::Mean { axis } => {
                arity(1)?;
                self.mean(inputs[0], axis)
            }
            OpTag::Sum { axis } => {
                arity(1)?;
                self.sum(inputs[0], axis)
            }
            OpTag::Square => {
                arity(1)?;
                Ok(self.square(inputs[0]))
            }
            OpTag::Sqrt => {
                arity(1)?;
                Ok(self.sqrt(inputs[0]))
            }
            OpTag::AffineModulate => {
                arity(3)?;
                self.affine_modulate(inputs[0], inputs[1], inputs[2])
            }
        }
    }

    /// `[..., m, n] x [n, p]` (shared right operand) or `[..., m, n] x [..., n, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let bad = || Error::Dimension {
            op: "matmul",
            shapes: vec![sa.clone(), sb.clone()],
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(bad());
        }
        let (m, n) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (n2, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_dims = &sa[..sa.len() - 2];
        let shared = sb.len() == 2;
        if n != n2 || (!shared && sb[..sb.len() - 2] != *batch_dims) {
            return Err(bad());
        }
        let batch: usize = batch_dims.iter().product();
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut out = vec![T::zero(); batch * m * p];
        for bi in 0..batch {
            let ao = bi * m * n;
            let bo = if shared { 0 } else { bi * n * p };
            let co = bi * m * p;
            for i in 0..m {
                let crow = &mut out[co + i * p..co + (i + 1) * p];
                for kk in 0..n {
                    let aik = av[ao + i * n + kk];
                    if aik == T::zero() {
                        continue;
                    }
                    let brow = &bv[bo + kk * p..bo + (kk + 1) * p];
                    for (c, &bval) in crow.iter_mut().zip(brow) {
                        *c = *c + aik * bval;
                    }
                }
            }
        }
        let mut shape = batch_dims.to_vec();
        shape.extend([m, p]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul(a, b), rg))
    }

    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] {
            return Err(Error::Dimension {
                op: "conv1d",
                shapes: vec![sx, sw],
            });
        }
        let (bsz, len, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sw[0], sw[2]);
        let pad = (k - 1) / 2;
        let xv = &self.node(x).value;
        let wv = &self.node(w).value;
        let mut out = vec![T::zero(); bsz * len * cout];
        for b in 0..bsz {
            for t in 0..len {
                let orow = &mut out[(b * len + t) * cout..(b * len + t + 1) * cout];
                for q in 0..k {
                    let s = t + q;
                    if s < pad || s - pad >= len {
                        continue;
                    }
                    let s = s - pad;
                    for c in 0..cin {
                        let xval = xv[(b * len + s) * cin + c];
                        let wrow = &wv[(q * cin + c) * cout..(q * cin + c + 1) * cout];
                        for (o, &wval) in orow.iter_mut().zip(wrow) {
                            *o = *o + xval * wval;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(vec![bsz, len, cout], out, Op::Conv1d(x, w), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let shape = broadcast_shape(sa, sb).ok_or_else(|| Error::Dimension {
            op: name,
            shapes: vec![sa.to_vec(), sb.to_vec()],
        })?;
        let ma = broadcast_map(&shape, sa);
        let mb = broadcast_map(&shape, sb);
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let out = (0..numel(&shape))
            .map(|i| f(av[at(&ma, i)], bv[at(&mb, i)]))
            .collect();
        Ok((shape, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Mul(a, b), rg))
    }

    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<Vec<usize>> = vars.iter().map(|&v| self.shape(v).to_vec()).collect();
        let bad = || Error::Dimension {
            op: "concat",
            shapes: shapes.clone(),
        };
        let first = shapes.first().ok_or_else(bad)?;
        if axis >= first.len() {
            return Err(bad());
        }
        for s in &shapes {
            if s.len() != first.len()
                || s.iter()
                    .zip(first)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(bad());
            }
        }
        let (outer, _, inner) = around(first, axis);
        let total_axis: usize = shapes.iter().map(|s| s[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (v, s) in vars.iter().zip(&shapes) {
                let chunk = s[axis] * inner;
                out.extend_from_slice(&self.node(*v).value[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total_axis;
        let rg = self.rg(vars);
        Ok(self.push(shape, out, Op::Concat(vars.to_vec(), axis), rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Dimension {
                op: "slice",
                shapes: vec![s, vec![axis, start, len]],
            });
        }
        let (outer, n, inner) = around(&s, axis);
        let xv = &self.node(x).value;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Slice(x, axis, start), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|&v| f(v)).collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        self.push(shape, out, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v * slope },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()).sqrt(), Op::Sqrt(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Dimension {
                op: "softmax",
                shapes: vec![s, vec![axis]],
            });
        }
        let (outer, n, inner) = around(&s, axis);
        let xv = &self.node(x).value;
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * n * inner + j * inner + i;
                let mx = (0..n).map(|j| xv[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for j in 0..n {
                    let e = (xv[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    z = z + e;
                }
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] / z;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(s, out, Op::Softmax(x, axis), rg))
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let xv = &self.node(x).value;
        let (shape, out) = match axis {
            None => {
                let total: T = xv.iter().copied().sum();
                let v = if mean {
                    total / T::lit(xv.len().max(1) as f64)
                } else {
                    total
                };
                (vec![], vec![v])
            }
            Some(ax) => {
                if ax >= s.len() {
                    return Err(Error::Dimension {
                        op: "reduce",
                        shapes: vec![s, vec![ax]],
                    });
                }
                let (outer, n, inner) = around(&s, ax);
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            out[o * inner + i] = out[o * inner + i] + xv[o * n * inner + j * inner + i];
                        }
                    }
                }
                if mean {
                    let d = T::lit(n as f64);
                    out.iter_mut().for_each(|v| *v = *v / d);
                }
                let mut shape = s.clone();
                shape.remove(ax);
                (shape, out)
            }
        };
        let rg = self.rg(&[x]);
        let op = if mean { Op::Mean(x, axis) } else { Op::Sum(x, axis) };
        Ok(self.push(shape, out, op, rg))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn affine_modulate(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let bad = |g: &Self| Error::Dimension {
            op: "affine_modulate",
            shapes: vec![sx.clone(), g.shape(gamma).to_vec(), g.shape(beta).to_vec()],
        };
        for v in [gamma, beta] {
            if broadcast_shape(&sx, self.shape(v)).as_deref() != Some(&sx[..]) {
                return Err(bad(self));
            }
        }
        let mg = broadcast_map(&sx, self.shape(gamma));
        let mb = broadcast_map(&sx, self.shape(beta));
        let (xv, gv, bv) = (
            &self.node(x).value,
            &self.node(gamma).value,
            &self.node(beta).value,
        );
        let out = (0..xv.len())
            .map(|i| (T::one() + gv[at(&mg, i)]) * xv[i] + bv[at(&mb, i)])
            .collect();
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(sx, out, Op::AffineModulate(x, gamma, beta), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n = self.node(x);
        if numel(&shape) != n.value.len() {
            return Err(Error::Dimension {
                op: "reshape",
                shapes: vec![n.shape.clone(), shape],
            });
        }
        let value = n.value.clone();
        let rg = n.requires_grad;
        Ok(self.push(shape, value, Op::Reshape(x), rg))
    }

    /// Swaps the last two axes.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Dimension {
                op: "swap_last2",
                shapes: vec![s],
            });
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = numel(&s) / (r * c).max(1);
        let xv = &self.node(x).value;
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            let o = b * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[o + j * r + i] = xv[o + i * c + j];
                }
            }
        }
        let mut shape = s;
        let nd = shape.len();
        shape.swap(nd - 2, nd - 1);
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::SwapLast2(x), rg))
    }

    /// Row gather from a `[V, D]` table; output `[indices.len(), D]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "embedding",
                shapes: vec![s],
            });
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "embedding code {bad} out of range for table with {rows} rows"
            )));
        }
        let tv = &self.node(table).value;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![indices.len(), d],
            out,
            Op::Embedding(table, indices.to_vec()),
            rg,
        ))
    }

    /// Reverse pass from a single-element `loss`. Afterwards every leaf that
    /// requires grad has a gradient; leaves unreachable from the loss get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let Graph { nodes, grads } = self;
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.0] = Some(vec![T::one()]);

        fn buf<'a, T: Scalar>(
            grads: &'a mut [Option<Vec<T>>],
            nodes: &[Node<T>],
            v: Var,
        ) -> Option<&'a mut Vec<T>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let n = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
        }

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let sa = &nodes[a.0].shape;
                    let sb = &nodes[b.0].shape;
                    let (m, n) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                    let p = sb[sb.len() - 1];
                    let shared = sb.len() == 2;
                    let batch = numel(sa) / (m * n).max(1);
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    if let Some(ga) = buf(grads, nodes, *a) {
                        for bi in 0..batch {
                            let bo = if shared { 0 } else { bi * n * p };
                            for r in 0..m {
                                let grow = &g[(bi * m + r) * p..(bi * m + r + 1) * p];
                                for kk in 0..n {
                                    let brow = &bv[bo + kk * p..bo + (kk + 1) * p];
                                    let s: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                                    ga[(bi * m + r) * n + kk] = ga[(bi * m + r) * n + kk] + s;
                                }
                            }
                        }
                    }
                    if let Some(gb) = buf(grads, nodes, *b) {
                        for bi in 0..batch {
                            let bo = if shared { 0 } else { bi * n * p };
                            for r in 0..m {
                                let grow = &g[(bi * m + r) * p..(bi * m + r + 1) * p];
                                for kk in 0..n {
                                    let aik = av[(bi * m + r) * n + kk];
                                    if aik == T::zero() {
                                        continue;
                                    }
                                    let gbrow = &mut gb[bo + kk * p..bo + (kk + 1) * p];
                                    for (d, &gv) in gbrow.iter_mut().zip(grow) {
                                        *d = *d + aik * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Conv1d(x, w) => {
                    let sx = &nodes[x.0].shape;
                    let sw = &nodes[w.0].shape;
                    let (bsz, len, cin) = (sx[0], sx[1], sx[2]);
                    let (k, cout) = (sw[0], sw[2]);
                    let pad = (k - 1) / 2;
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for b in 0..bsz {
                            for t in 0..len {
                                let grow = &g[(b * len + t) * cout..(b * len + t + 1) * cout];
                                for q in 0..k {
                                    let s = t + q;
                                    if s < pad || s - pad >= len {
                                        continue;
                                    }
                                    let s = s - pad;
                                    for c in 0..cin {
                                        let wrow = &wv[(q * cin + c) * cout..(q * cin + c + 1) * cout];
                                        let d: T = grow.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
                                        gx[(b * len + s) * cin + c] = gx[(b * len + s) * cin + c] + d;
                                    }
                                }
                            }
                        }
                    }
                    if let Some(gw) = buf(grads, nodes, *w) {
                        for b in 0..bsz {
                            for t in 0..len {
                                let grow = &g[(b * len + t) * cout..(b * len + t + 1) * cout];
                                for q in 0..k {
                                    let s = t + q;
                                    if s < pad || s - pad >= len {
                                        continue;
                                    }
                                    let s = s - pad;
                                    for c in 0..cin {
                                        let xval = xv[(b * len + s) * cin + c];
                                        let wrow = &mut gw[(q * cin + c) * cout..(q * cin + c + 1) * cout];
                                        for (d, &gv) in wrow.iter_mut().zip(grow) {
                                            *d = *d + xval * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                    let shape = &node.shape;
                    let ma = broadcast_map(shape, &nodes[a.0].shape);
                    let mb = broadcast_map(shape, &nodes[b.0].shape);
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let is_mul = matches!(node.op, Op::Mul(..));
                    let is_sub = matches!(node.op, Op::Sub(..));
                    if let Some(ga) = buf(grads, nodes, *a) {
                        for (idx, &gi) in g.iter().enumerate() {
                            let d = if is_mul { gi * bv[at(&mb, idx)] } else { gi };
                            let j = at(&ma, idx);
                            ga[j] = ga[j] + d;
                        }
                    }
                    if let Some(gb) = buf(grads, nodes, *b) {
                        for (idx, &gi) in g.iter().enumerate() {
                            let d = if is_mul {
                                gi * av[at(&ma, idx)]
                            } else if is_sub {
                                -gi
                            } else {
                                gi
                            };
                            let j = at(&mb, idx);
                            gb[j] = gb[j] + d;
                        }
                    }
                }
                Op::Concat(vars, axis) => {
                    let (outer, _, inner) = around(&node.shape, *axis);
                    let total = node.shape[*axis] * inner;
                    let mut offset = 0;
                    for v in vars {
                        let chunk = nodes[v.0].shape[*axis] * inner;
                        if let Some(gv) = buf(grads, nodes, *v) {
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + chunk];
                                for (d, &s) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *d = *d + s;
                                }
                            }
                        }
                        offset += chunk;
                    }
                }
                Op::Slice(x, axis, start) => {
                    let (outer, n, inner) = around(&nodes[x.0].shape, *axis);
                    let len = node.shape[*axis];
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for o in 0..outer {
                            let base = o * n * inner + start * inner;
                            let src = &g[o * len * inner..(o + 1) * len * inner];
                            for (d, &s) in gx[base..base + len * inner].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for ((d, &gi), &yi) in gx.iter_mut().zip(&g).zip(y) {
                            *d = *d + gi * yi * (T::one() - yi);
                        }
                    }
                }
                Op::Tanh(x) => {
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for ((d, &gi), &yi) in gx.iter_mut().zip(&g).zip(y) {
                            *d = *d + gi * (T::one() - yi * yi);
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for ((d, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                            if xi > T::zero() {
                                *d = *d + gi;
                            }
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = &nodes[x.0].value;
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for ((d, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                            *d = *d + if xi > T::zero() { gi } else { gi * *slope };
                        }
                    }
                }
                Op::Square(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for ((d, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                            *d = *d + gi * (xi + xi);
                        }
                    }
                }
                Op::Sqrt(x) => {
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for ((d, &gi), &yi) in gx.iter_mut().zip(&g).zip(y) {
                            // derivative undefined at 0; treat as 0
                            if yi > T::zero() {
                                *d = *d + gi / (yi + yi);
                            }
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for (d, &gi) in gx.iter_mut().zip(&g) {
                            *d = *d + gi * *c;
                        }
                    }
                }
                Op::Softmax(x, axis) => {
                    let (outer, n, inner) = around(&node.shape, *axis);
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |j: usize| o * n * inner + j * inner + i;
                                let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                                for j in 0..n {
                                    gx[idx(j)] = gx[idx(j)] + y[idx(j)] * (g[idx(j)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Mean(x, axis) | Op::Sum(x, axis) => {
                    let is_mean = matches!(node.op, Op::Mean(..));
                    let sx = nodes[x.0].shape.clone();
                    if let Some(gx) = buf(grads, nodes, *x) {
                        match axis {
                            None => {
                                let d = if is_mean {
                                    g[0] / T::lit(gx.len().max(1) as f64)
                                } else {
                                    g[0]
                                };
                                gx.iter_mut().for_each(|v| *v = *v + d);
                            }
                            Some(ax) => {
                                let (outer, n, inner) = around(&sx, *ax);
                                let scale = if is_mean { T::one() / T::lit(n as f64) } else { T::one() };
                                for o in 0..outer {
                                    for j in 0..n {
                                        for i in 0..inner {
                                            let k = o * n * inner + j * inner + i;
                                            gx[k] = gx[k] + g[o * inner + i] * scale;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::AffineModulate(x, gamma, beta) => {
                    let shape = &node.shape;
                    let mg = broadcast_map(shape, &nodes[gamma.0].shape);
                    let mb = broadcast_map(shape, &nodes[beta.0].shape);
                    let xv = &nodes[x.0].value;
                    let gv = &nodes[gamma.0].value;
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for (idx, &gi) in g.iter().enumerate() {
                            gx[idx] = gx[idx] + gi * (T::one() + gv[at(&mg, idx)]);
                        }
                    }
                    if let Some(gg) = buf(grads, nodes, *gamma) {
                        for (idx, &gi) in g.iter().enumerate() {
                            let j = at(&mg, idx);
                            gg[j] = gg[j] + gi * xv[idx];
                        }
                    }
                    if let Some(gb) = buf(grads, nodes, *beta) {
                        for (idx, &gi) in g.iter().enumerate() {
                            let j = at(&mb, idx);
                            gb[j] = gb[j] + gi;
                        }
                    }
                }
                Op::Reshape(x) => {
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for (d, &gi) in gx.iter_mut().zip(&g) {
                            *d = *d + gi;
                        }
                    }
                }
                Op::SwapLast2(x) => {
                    let s = &nodes[x.0].shape;
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    let batch = numel(s) / (r * c).max(1);
                    if let Some(gx) = buf(grads, nodes, *x) {
                        for b in 0..batch {
                            let o = b * r * c;
                            for i in 0..r {
                                for j in 0..c {
                                    gx[o + i * c + j] = gx[o + i * c + j] + g[o + j * r + i];
                                }
                            }
                        }
                    }
                }
                Op::Embedding(table, indices) => {
                    let d = nodes[table.0].shape[1];
                    if let Some(gt) = buf(grads, nodes, *table) {
                        for (row, &i) in indices.iter().enumerate() {
                            for c in 0..d {
                                gt[i * d + c] = gt[i * d + c] + g[row * d + c];
                            }
                        }
                    }
                }
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copies the gradient of `v` into the grad slot of `t`.
    pub fn write_grad(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        let g = self
            .grad(v)
            .ok_or_else(|| Error::Contract("no gradient recorded for variable".into()))?;
        t.accumulate_grad(g)
    }
}

//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every forward op appends a node to the [`Tape`]; [`Tape::backward`] walks
//! the nodes in exact reverse order and accumulates gradients additively, so a
//! value consumed twice receives the sum of both contributions. Matrices are
//! row-major and most ops treat a tensor as `rows × cols` over its last axis.

mod gradcheck;
mod kernels;
mod tensor;

pub use gradcheck::{grad_check, grad_check_on, GradCheckReport};
pub use kernels::log_sum_exp;
pub use tensor::{Real, Tensor};

use crate::error::{shape_err, Error, Result};
use kernels::{log_sigmoid, mm, mm_t, sigmoid, splitmix64, t_mm};

/// Additive mask value standing in for −∞.
pub const MASK_NEG: f64 = -1e9;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Rows { x: Var, start: usize },
    StackRows(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, rstd: Vec<F> },
    Dropout { x: Var, mask: Vec<F> },
    Sdp { q: Var, k: Var, v: Var, mask: Var, scale: F, probs: Vec<F> },
    Sum(Var),
    SumLast(Var),
    Pick { x: Var, idx: Vec<usize> },
    GatherCols { x: Var, idx: Vec<Option<usize>> },
    Reshape(Var),
    Map { x: Var, df: fn(f64) -> f64 },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records forward operations for a single backward pass. Single-threaded;
/// independent tapes may run on separate threads.
pub struct Tape<F: Real = f32> {
    nodes: Vec<Node<F>>,
    train: bool,
    dropout_seed: u64,
    dropout_counter: u64,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<F: Real>(op: &'static str, data: &[F]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl<F: Real> Tape<F> {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            dropout_seed: 0,
            dropout_counter: 0,
        }
    }

    /// Training-mode tape whose dropout masks are drawn from a counter-based
    /// generator keyed by `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            train: true,
            dropout_seed: seed,
            dropout_counter: 0,
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        check_finite(name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return shape_err(op, format!("expected a matrix, got shape {:?}", s));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]"));
        }
        let mut out = vec![F::zero(); m * n];
        mm(self.data(a), self.data(b), m, k, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_t", a)?;
        let (n, k2) = self.dims2("matmul_t", b)?;
        if k != k2 {
            return shape_err("matmul_t", format!("[{m},{k}] x [{n},{k2}]^T"));
        }
        let mut out = vec![F::zero(); m * n];
        mm_t(self.data(a), self.data(b), m, k, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul_t", t, Op::MatMulT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", a)?;
        let d = self.data(a);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.push("transpose", t, Op::Transpose(a), &[a])
    }

    /// Elementwise sum; `b` may also be a vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
            let t = Tensor::new(sa, out)?;
            return self.push("add", t, Op::Add(a, b), &[a, b]);
        }
        let cols = self.value(a).cols();
        if sb.len() == 1 && sb[0] == cols {
            let bd = self.data(b);
            let out = self
                .data(a)
                .chunks(cols)
                .flat_map(|row| row.iter().zip(bd).map(|(&x, &y)| x + y))
                .collect();
            let t = Tensor::new(sa, out)?;
            return self.push("add", t, Op::AddRow(a, b), &[a, b]);
        }
        shape_err("add", format!("{:?} + {:?}", sa, sb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return shape_err("sub", format!("{:?} - {:?}", sa, sb));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        let t = Tensor::new(sa, out)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return shape_err("mul", format!("{:?} * {:?}", sa, sb));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(sa, out)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = F::of(s);
        let out = self.data(a).iter().map(|&x| x * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("scale", t, Op::Scale(a, s), &[a])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return shape_err("concat", format!("incompatible part {:?}", s));
            }
            cols += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(cols);
        let t = Tensor::new(shape, out)?;
        self.push("concat", t, Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let cols = self.value(x).cols();
        if start + len > cols || self.shape(x).is_empty() {
            return shape_err("slice", format!("{}..{} of {}", start, start + len, cols));
        }
        let out = self
            .data(x)
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("non-scalar") = len;
        let t = Tensor::new(shape, out)?;
        self.push("slice", t, Op::Slice { x, start }, &[x])
    }

    /// Rows `start..start+len` of a matrix.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2("rows", x)?;
        if start + len > m {
            return shape_err("rows", format!("{}..{} of {}", start, start + len, m));
        }
        let out = self.data(x)[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(vec![len, n], out)?;
        self.push("rows", t, Op::Rows { x, start }, &[x])
    }

    /// Concatenation of matrices along the first axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("stack_rows", "no inputs");
        };
        let (_, n) = self.dims2("stack_rows", first)?;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.dims2("stack_rows", p)?;
            if pn != n {
                return shape_err("stack_rows", format!("width {} vs {}", pn, n));
            }
            m += pm;
            out.extend_from_slice(self.data(p));
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push("stack_rows", t, Op::StackRows(parts.to_vec()), parts)
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = self.dims2("embedding_gather", table)?;
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::IdOutOfRange { id, size: v });
            }
            out.extend_from_slice(&self.data(table)[id * e..(id + 1) * e]);
        }
        let t = Tensor::new(vec![ids.len(), e], out)?;
        self.push(
            "embedding_gather",
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(name, t, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, F::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(F::zero()), Op::Relu(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("log_sigmoid", x, log_sigmoid, Op::LogSigmoid(x))
    }

    /// Elementwise `f` with derivative `df`, both evaluated in `f64`.
    pub fn map(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Result<Var> {
        self.unary("map", x, |v| F::of(f(v.f64())), Op::Map { x, df })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        let mut out = vec![F::zero(); self.value(x).len()];
        for (o, r) in out.chunks_mut(cols).zip(self.data(x).chunks(cols)) {
            kernels::softmax_row(r, o);
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("softmax", t, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        let mut out = vec![F::zero(); self.value(x).len()];
        for (o, r) in out.chunks_mut(cols).zip(self.data(x).chunks(cols)) {
            kernels::log_softmax_row(r, o);
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("log_softmax", t, Op::LogSoftmax(x), &[x])
    }

    /// Layer normalization over the last axis with gain `gamma` and bias `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return shape_err("layer_norm", format!("gain/bias must be [{}]", cols));
        }
        let eps = F::of(LAYER_NORM_EPS);
        let n = F::of(cols as f64);
        let rows = self.value(x).rows();
        let mut xhat = vec![F::zero(); rows * cols];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * cols];
        let (g, b) = (self.data(gamma), self.data(beta));
        for (r, row) in self.data(x).chunks(cols).enumerate() {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = g[c] * h + b[c];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout with drop probability `p`; identity on evaluation tapes.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::InvalidArgument(format!("dropout probability {p}")));
        }
        let keep = F::of(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mut mask = Vec::with_capacity(n);
        for _ in 0..n {
            let r = splitmix64(self.dropout_seed ^ splitmix64(self.dropout_counter));
            self.dropout_counter += 1;
            let u = (r >> 11) as f64 / (1u64 << 53) as f64;
            mask.push(if u < p { F::zero() } else { keep });
        }
        let out = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("dropout", t, Op::Dropout { x, mask }, &[x])
    }

    /// `softmax(scale · q kᵀ + mask) v` for `q: [tq,d]`, `k: [tk,d]`,
    /// `v: [tk,dv]` and an additive `mask: [tq,tk]` (which may itself carry
    /// gradient, e.g. position scores).
    pub fn scaled_dot_product(&mut self, q: Var, k: Var, v: Var, mask: Var, scale: f64) -> Result<Var> {
        let (tq, d) = self.dims2("scaled_dot_product", q)?;
        let (tk, d2) = self.dims2("scaled_dot_product", k)?;
        let (tk2, dv) = self.dims2("scaled_dot_product", v)?;
        if d != d2 || tk != tk2 || self.shape(mask) != [tq, tk] {
            return shape_err(
                "scaled_dot_product",
                format!(
                    "q {:?} k {:?} v {:?} mask {:?}",
                    self.shape(q),
                    self.shape(k),
                    self.shape(v),
                    self.shape(mask)
                ),
            );
        }
        let s = F::of(scale);
        let mut scores = vec![F::zero(); tq * tk];
        mm_t(self.data(q), self.data(k), tq, d, tk, &mut scores);
        for (x, &m) in scores.iter_mut().zip(self.data(mask)) {
            *x = *x * s + m;
        }
        let mut probs = vec![F::zero(); tq * tk];
        for (o, r) in probs.chunks_mut(tk).zip(scores.chunks(tk)) {
            kernels::softmax_row(r, o);
        }
        let mut out = vec![F::zero(); tq * dv];
        mm(&probs, self.data(v), tq, tk, dv, &mut out);
        let t = Tensor::new(vec![tq, dv], out)?;
        self.push(
            "scaled_dot_product",
            t,
            Op::Sdp {
                q,
                k,
                v,
                mask,
                scale: s,
                probs,
            },
            &[q, k, v, mask],
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        let out: Vec<F> = self.data(x).chunks(cols).map(|r| r.iter().copied().sum()).collect();
        let shape = self.shape(x)[..self.shape(x).len().saturating_sub(1)].to_vec();
        let t = Tensor::new(shape, out)?;
        self.push("sum_last", t, Op::SumLast(x), &[x])
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2("pick", x)?;
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return shape_err("pick", format!("{} indices into [{m},{n}]", idx.len()));
        }
        let d = self.data(x);
        let out = idx.iter().enumerate().map(|(i, &j)| d[i * n + j]).collect();
        let t = Tensor::new(vec![m], out)?;
        self.push("pick", t, Op::Pick { x, idx: idx.to_vec() }, &[x])
    }

    /// `out[i, c] = x[i, idx[i*cols + c]]`, or zero where the index is `None`.
    pub fn gather_cols(&mut self, x: Var, idx: &[Option<usize>], cols: usize) -> Result<Var> {
        let (m, n) = self.dims2("gather_cols", x)?;
        if idx.len() != m * cols || idx.iter().flatten().any(|&j| j >= n) {
            return shape_err("gather_cols", format!("{} indices into [{m},{n}]", idx.len()));
        }
        let d = self.data(x);
        let out = idx
            .iter()
            .enumerate()
            .map(|(p, j)| j.map_or(F::zero(), |j| d[(p / cols) * n + j]))
            .collect();
        let t = Tensor::new(vec![m, cols], out)?;
        self.push("gather_cols", t, Op::GatherCols { x, idx: idx.to_vec() }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Reverse pass from a scalar `loss`. Every leaf that requires a gradient
    /// gets an entry, zero when it is not connected to `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return shape_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss)));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !nodes[i].requires_grad {
                continue;
            }
            let node = &nodes[i];
            let y = node.value.data();
            let val = |v: Var| nodes[v.0].value.data();
            macro_rules! slot {
                ($v:expr) => {{
                    let v: Var = $v;
                    if nodes[v.0].requires_grad {
                        let n = nodes[v.0].value.len();
                        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
                    } else {
                        None
                    }
                }};
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                    let n = nodes[b.0].value.shape()[1];
                    if let Some(ga) = slot!(*a) {
                        mm_t(&g, val(*b), m, n, k, ga);
                    }
                    if let Some(gb) = slot!(*b) {
                        t_mm(val(*a), &g, m, k, n, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                    let n = nodes[b.0].value.shape()[0];
                    if let Some(ga) = slot!(*a) {
                        mm(&g, val(*b), m, n, k, ga);
                    }
                    if let Some(gb) = slot!(*b) {
                        t_mm(&g, val(*a), m, n, k, gb);
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                    if let Some(ga) = slot!(*a) {
                        for i in 0..m {
                            for j in 0..n {
                                ga[i * n + j] = ga[i * n + j] + g[j * m + i];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(gv) = slot!(v) {
                            for (o, &d) in gv.iter_mut().zip(&g) {
                                *o = *o + d;
                            }
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    if let Some(ga) = slot!(*a) {
                        for (o, &d) in ga.iter_mut().zip(&g) {
                            *o = *o + d;
                        }
                    }
                    if let Some(gb) = slot!(*b) {
                        let cols = gb.len();
                        for row in g.chunks(cols) {
                            for (o, &d) in gb.iter_mut().zip(row) {
                                *o = *o + d;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(ga) = slot!(*a) {
                        for (o, &d) in ga.iter_mut().zip(&g) {
                            *o = *o + d;
                        }
                    }
                    if let Some(gb) = slot!(*b) {
                        for (o, &d) in gb.iter_mut().zip(&g) {
                            *o = *o - d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(ga) = slot!(*a) {
                        for ((o, &d), &bv) in ga.iter_mut().zip(&g).zip(val(*b)) {
                            *o = *o + d * bv;
                        }
                    }
                    if let Some(gb) = slot!(*b) {
                        for ((o, &d), &av) in gb.iter_mut().zip(&g).zip(val(*a)) {
                            *o = *o + d * av;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if let Some(ga) = slot!(*a) {
                        for (o, &d) in ga.iter_mut().zip(&g) {
                            *o = *o + d * *s;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let cols = node.value.cols();
                    let mut off = 0;
                    for &p in parts {
                        let pc = nodes[p.0].value.cols();
                        if let Some(gp) = slot!(p) {
                            for (r, grow) in g.chunks(cols).enumerate() {
                                for c in 0..pc {
                                    gp[r * pc + c] = gp[r * pc + c] + grow[off + c];
                                }
                            }
                        }
                        off += pc;
                    }
                }
                Op::Slice { x, start } => {
                    let len = node.value.cols();
                    let cols = nodes[x.0].value.cols();
                    if let Some(gx) = slot!(*x) {
                        for (r, grow) in g.chunks(len).enumerate() {
                            let row = &mut gx[r * cols + start..][..len];
                            for (a, &b) in row.iter_mut().zip(grow) {
                                *a = *a + b;
                            }
                        }
                    }
                }
                Op::Rows { x, start } => {
                    let n = node.value.cols();
                    if let Some(gx) = slot!(*x) {
                        for (o, &d) in gx[start * n..].iter_mut().zip(&g) {
                            *o = *o + d;
                        }
                    }
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(gp) = slot!(p) {
                            for (o, &d) in gp.iter_mut().zip(&g[off..off + len]) {
                                *o = *o + d;
                            }
                        }
                        off += len;
                    }
                }
                Op::Gather { table, ids } => {
                    let e = nodes[table.0].value.cols();
                    if let Some(gt) = slot!(*table) {
                        for (r, &id) in ids.iter().enumerate() {
                            for c in 0..e {
                                gt[id * e + c] = gt[id * e + c] + g[r * e + c];
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if let Some(gx) = slot!(*x) {
                        for ((o, &d), &s) in gx.iter_mut().zip(&g).zip(y) {
                            *o = *o + d * s * (F::one() - s);
                        }
                    }
                }
                Op::Tanh(x) => {
                    if let Some(gx) = slot!(*x) {
                        for ((o, &d), &t) in gx.iter_mut().zip(&g).zip(y) {
                            *o = *o + d * (F::one() - t * t);
                        }
                    }
                }
                Op::Relu(x) => {
                    if let Some(gx) = slot!(*x) {
                        for ((o, &d), &v) in gx.iter_mut().zip(&g).zip(val(*x)) {
                            if v > F::zero() {
                                *o = *o + d;
                            }
                        }
                    }
                }
                Op::LogSigmoid(x) => {
                    if let Some(gx) = slot!(*x) {
                        for ((o, &d), &v) in gx.iter_mut().zip(&g).zip(val(*x)) {
                            *o = *o + d * sigmoid(-v);
                        }
                    }
                }
                Op::Map { x, df } => {
                    if let Some(gx) = slot!(*x) {
                        for ((o, &d), &v) in gx.iter_mut().zip(&g).zip(val(*x)) {
                            *o = *o + d * F::of(df(v.f64()));
                        }
                    }
                }
                Op::Softmax(x) => {
                    let cols = node.value.cols();
                    if let Some(gx) = slot!(*x) {
                        for ((o, grow), yrow) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                            let dot: F = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for c in 0..cols {
                                o[c] = o[c] + yrow[c] * (grow[c] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let cols = node.value.cols();
                    if let Some(gx) = slot!(*x) {
                        for ((o, grow), yrow) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                            let total: F = grow.iter().copied().sum();
                            for c in 0..cols {
                                o[c] = o[c] + grow[c] - yrow[c].exp() * total;
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let cols = node.value.cols();
                    let n = F::of(cols as f64);
                    let gam = val(*gamma);
                    if let Some(gg) = slot!(*gamma) {
                        for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                            for c in 0..cols {
                                gg[c] = gg[c] + grow[c] * hrow[c];
                            }
                        }
                    }
                    if let Some(gb) = slot!(*beta) {
                        for grow in g.chunks(cols) {
                            for c in 0..cols {
                                gb[c] = gb[c] + grow[c];
                            }
                        }
                    }
                    if let Some(gx) = slot!(*x) {
                        for (r, (grow, hrow)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                            let dh: Vec<F> = (0..cols).map(|c| grow[c] * gam[c]).collect();
                            let mean_dh = dh.iter().copied().sum::<F>() / n;
                            let mean_dhh = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<F>() / n;
                            for c in 0..cols {
                                let p = r * cols + c;
                                gx[p] = gx[p] + rstd[r] * (dh[c] - mean_dh - hrow[c] * mean_dhh);
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(gx) = slot!(*x) {
                        for ((o, &d), &m) in gx.iter_mut().zip(&g).zip(mask) {
                            *o = *o + d * m;
                        }
                    }
                }
                Op::Sdp {
                    q,
                    k,
                    v,
                    mask,
                    scale,
                    probs,
                } => {
                    let (tq, d) = (nodes[q.0].value.shape()[0], nodes[q.0].value.shape()[1]);
                    let tk = nodes[k.0].value.shape()[0];
                    let dv = nodes[v.0].value.shape()[1];
                    if let Some(gv) = slot!(*v) {
                        t_mm(probs, &g, tq, tk, dv, gv);
                    }
                    let mut dp = vec![F::zero(); tq * tk];
                    mm_t(&g, val(*v), tq, dv, tk, &mut dp);
                    let mut ds = vec![F::zero(); tq * tk];
                    for r in 0..tq {
                        let prow = &probs[r * tk..(r + 1) * tk];
                        let dprow = &dp[r * tk..(r + 1) * tk];
                        let dot: F = prow.iter().zip(dprow).map(|(&a, &b)| a * b).sum();
                        for c in 0..tk {
                            ds[r * tk + c] = prow[c] * (dprow[c] - dot);
                        }
                    }
                    if let Some(gm) = slot!(*mask) {
                        for (o, &d) in gm.iter_mut().zip(&ds) {
                            *o = *o + d;
                        }
                    }
                    for x in ds.iter_mut() {
                        *x = *x * *scale;
                    }
                    if let Some(gq) = slot!(*q) {
                        mm(&ds, val(*k), tq, tk, d, gq);
                    }
                    if let Some(gk) = slot!(*k) {
                        t_mm(&ds, val(*q), tq, tk, d, gk);
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = slot!(*x) {
                        for o in gx.iter_mut() {
                            *o = *o + g[0];
                        }
                    }
                }
                Op::SumLast(x) => {
                    let cols = nodes[x.0].value.cols();
                    if let Some(gx) = slot!(*x) {
                        for (orow, &d) in gx.chunks_mut(cols).zip(&g) {
                            for o in orow {
                                *o = *o + d;
                            }
                        }
                    }
                }
                Op::Pick { x, idx } => {
                    let n = nodes[x.0].value.cols();
                    if let Some(gx) = slot!(*x) {
                        for (i, &j) in idx.iter().enumerate() {
                            gx[i * n + j] = gx[i * n + j] + g[i];
                        }
                    }
                }
                Op::GatherCols { x, idx } => {
                    let n = nodes[x.0].value.cols();
                    let cols = node.value.cols();
                    if let Some(gx) = slot!(*x) {
                        for (p, j) in idx.iter().enumerate() {
                            if let Some(j) = j {
                                let t = (p / cols) * n + j;
                                gx[t] = gx[t] + g[p];
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    if let Some(gx) = slot!(*x) {
                        for (o, &d) in gx.iter_mut().zip(&g) {
                            *o = *o + d;
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        for (i, n) in nodes.iter().enumerate() {
            if matches!(n.op, Op::Leaf) && n.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![F::zero(); n.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of a node; always present for leaves created with `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every forward operation as a node holding its value.
//! [`Tape::backward`] walks the nodes in reverse and accumulates adjoints.
//! Tensors are rank 0, 1 or 2. Rank-1 tensors behave as row vectors for
//! concatenation and slicing, and as column vectors on the right-hand side
//! of a matrix product.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Dense row-major array of doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "tensors are at most rank 2, got shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "from_rows",
                lhs: vec![rows.len(), cols],
                rhs: vec![bad.len()],
            });
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` view; rank-1 tensors are a single row, scalars are 1x1.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    /// Row `r` of a rank-2 tensor (or the whole rank-1 tensor).
    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let (r, _) = self.dims2();
        (0..r).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Operation kinds understood by [`Tape::record`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// `a @ b`
    MatMul,
    /// `a @ b^T`
    MatMulT,
    Add,
    Sub,
    Mul,
    Relu,
    Square,
    /// Square root; the derivative at 0 is taken as 0.
    Sqrt,
    Scale(f64),
    Sum,
    Mean,
    /// Row sums: `[m, n] -> [m, 1]`.
    SumCols,
    /// Concatenate along the last axis.
    Concat,
    /// Columns `start..end` of the last axis.
    Slice { start: usize, end: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    Full,
    Scalar,
    Row(usize),
}

impl Bcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Full => i,
            Bcast::Scalar => 0,
            Bcast::Row(cols) => i % cols,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    MatMulT { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize, ba: Bcast, bb: Bcast },
    Sub { a: usize, b: usize, ba: Bcast, bb: Bcast },
    Mul { a: usize, b: usize, ba: Bcast, bb: Bcast },
    Relu(usize),
    Square(usize),
    Sqrt(usize),
    Scale(usize, f64),
    Sum(usize),
    Mean(usize),
    SumCols { a: usize, n: usize },
    Concat { parts: Vec<(usize, usize)>, rows: usize, cols: usize },
    Slice { a: usize, start: usize, end: usize, cols: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    param: bool,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Append-only record of forward operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose adjoint is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, param: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push(Op::Leaf, value, param, param))
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, param: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            param,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    /// Records `kind` applied to `inputs` and returns the new node.
    pub fn record(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<_>>()?;
        let arity = match kind {
            OpKind::MatMul | OpKind::MatMulT | OpKind::Add | OpKind::Sub | OpKind::Mul => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if idx.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{kind:?} expects {n} inputs, got {}",
                    idx.len()
                )));
            }
        } else if idx.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let needs_grad = idx.iter().any(|&i| self.nodes[i].needs_grad);
        let (op, value, name) = match kind {
            OpKind::MatMul => {
                let (a, b) = (&self.nodes[idx[0]].value, &self.nodes[idx[1]].value);
                let (m, k) = a.dims2();
                let (k2, n, out_shape) = match b.shape() {
                    [k2] => (*k2, 1, rank_out(a.shape().len(), m, 1, true)),
                    [k2, n] => (*k2, *n, rank_out(a.shape().len(), m, *n, false)),
                    _ => (0, 0, vec![]),
                };
                if a.shape().is_empty() || b.shape().is_empty() || k != k2 {
                    return Err(shape_err("matmul", a, b));
                }
                let mut out = vec![0.0; m * n];
                matmul_into(a.data(), b.data(), &mut out, m, k, n);
                (
                    Op::MatMul { a: idx[0], b: idx[1], m, k, n },
                    Tensor { shape: out_shape, data: out },
                    "matmul",
                )
            }
            OpKind::MatMulT => {
                let (a, b) = (&self.nodes[idx[0]].value, &self.nodes[idx[1]].value);
                if a.shape().len() != 2 || b.shape().len() != 2 {
                    return Err(shape_err("matmul_t", a, b));
                }
                let (m, k) = a.dims2();
                let (n, k2) = b.dims2();
                if k != k2 {
                    return Err(shape_err("matmul_t", a, b));
                }
                let mut out = vec![0.0; m * n];
                matmul_t_into(a.data(), b.data(), &mut out, m, k, n);
                (
                    Op::MatMulT { a: idx[0], b: idx[1], m, k, n },
                    Tensor { shape: vec![m, n], data: out },
                    "matmul_t",
                )
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let (a, b) = (&self.nodes[idx[0]].value, &self.nodes[idx[1]].value);
                let name = match kind {
                    OpKind::Add => "add",
                    OpKind::Sub => "sub",
                    _ => "mul",
                };
                let (shape, ba, bb) = broadcast(a, b).ok_or_else(|| shape_err(name, a, b))?;
                let numel: usize = shape.iter().product();
                let (ad, bd) = (a.data(), b.data());
                let data: Vec<f64> = match kind {
                    OpKind::Add => (0..numel).map(|i| ad[ba.index(i)] + bd[bb.index(i)]).collect(),
                    OpKind::Sub => (0..numel).map(|i| ad[ba.index(i)] - bd[bb.index(i)]).collect(),
                    _ => (0..numel).map(|i| ad[ba.index(i)] * bd[bb.index(i)]).collect(),
                };
                let (a, b) = (idx[0], idx[1]);
                let op = match kind {
                    OpKind::Add => Op::Add { a, b, ba, bb },
                    OpKind::Sub => Op::Sub { a, b, ba, bb },
                    _ => Op::Mul { a, b, ba, bb },
                };
                (op, Tensor { shape, data }, name)
            }
            OpKind::Relu => {
                let v = map(&self.nodes[idx[0]].value, |x| x.max(0.0));
                (Op::Relu(idx[0]), v, "relu")
            }
            OpKind::Square => {
                let v = map(&self.nodes[idx[0]].value, |x| x * x);
                (Op::Square(idx[0]), v, "square")
            }
            OpKind::Sqrt => {
                let v = map(&self.nodes[idx[0]].value, f64::sqrt);
                (Op::Sqrt(idx[0]), v, "sqrt")
            }
            OpKind::Scale(c) => {
                if !c.is_finite() {
                    return Err(Error::NonFinite("scale factor"));
                }
                let v = map(&self.nodes[idx[0]].value, |x| c * x);
                (Op::Scale(idx[0], c), v, "scale")
            }
            OpKind::Sum => {
                let s = self.nodes[idx[0]].value.data().iter().sum();
                (Op::Sum(idx[0]), Tensor::scalar(s), "sum")
            }
            OpKind::Mean => {
                let a = &self.nodes[idx[0]].value;
                if a.numel() == 0 {
                    return Err(Error::InvalidArgument("mean of empty tensor".into()));
                }
                let s = a.data().iter().sum::<f64>() / a.numel() as f64;
                (Op::Mean(idx[0]), Tensor::scalar(s), "mean")
            }
            OpKind::SumCols => {
                let a = &self.nodes[idx[0]].value;
                let (m, n) = a.dims2();
                let data = (0..m).map(|r| a.row(r).iter().sum()).collect();
                (
                    Op::SumCols { a: idx[0], n },
                    Tensor { shape: vec![m, 1], data },
                    "sum_cols",
                )
            }
            OpKind::Concat => {
                let first = &self.nodes[idx[0]].value;
                let rank = first.shape().len();
                let (rows, _) = first.dims2();
                let mut parts = Vec::with_capacity(idx.len());
                for &i in &idx {
                    let t = &self.nodes[i].value;
                    if t.shape().len() != rank || t.dims2().0 != rows || rank == 0 {
                        return Err(shape_err("concat", first, t));
                    }
                    parts.push((i, t.dims2().1));
                }
                let cols: usize = parts.iter().map(|p| p.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &(i, _) in &parts {
                        data.extend_from_slice(self.nodes[i].value.row(r));
                    }
                }
                let shape = if rank == 1 { vec![cols] } else { vec![rows, cols] };
                (Op::Concat { parts, rows, cols }, Tensor { shape, data }, "concat")
            }
            OpKind::Slice { start, end } => {
                let a = &self.nodes[idx[0]].value;
                let (rows, cols) = a.dims2();
                if a.shape().is_empty() || start >= end || end > cols {
                    return Err(Error::Shape {
                        op: "slice",
                        lhs: a.shape().to_vec(),
                        rhs: vec![start, end],
                    });
                }
                let mut data = Vec::with_capacity(rows * (end - start));
                for r in 0..rows {
                    data.extend_from_slice(&a.row(r)[start..end]);
                }
                let shape = if a.shape().len() == 1 {
                    vec![end - start]
                } else {
                    vec![rows, end - start]
                };
                (
                    Op::Slice { a: idx[0], start, end, cols },
                    Tensor { shape, data },
                    "slice",
                )
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok(self.push(op, value, needs_grad, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::MatMul, &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::MatMulT, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Mul, &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Relu, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Square, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Sqrt, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(OpKind::Scale(c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Mean, &[a])
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::SumCols, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.record(OpKind::Slice { start, end }, &[a])
    }

    /// Reverse accumulation from a scalar root.
    ///
    /// Adjoint buffers are allocated per call, so repeated calls return
    /// identical results.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.check(root)?;
        if self.nodes[r].value.numel() != 1 {
            return Err(Error::NotScalar(self.nodes[r].value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        adj[r] = Some(vec![1.0]);
        for i in (0..=r).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if node.param {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut adj);
        }
        let adjoints = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.param.then(|| {
                    let data = adj
                        .get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| vec![0.0; n.value.numel()]);
                    Tensor {
                        shape: n.value.shape().to_vec(),
                        data,
                    }
                })
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            adjoints,
        })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| self.nodes[i].value.data();
        let wants = |i: usize| self.nodes[i].needs_grad;
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if wants(a) {
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    matmul_t_into(g, val(b), &mut da, m, n, k);
                    accumulate(adj, a, &da);
                }
                if wants(b) {
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    let av = val(a);
                    for r in 0..m {
                        for p in 0..k {
                            let s = av[r * k + p];
                            if s == 0.0 {
                                continue;
                            }
                            let row = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in row.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *d += s * gv;
                            }
                        }
                    }
                    accumulate(adj, b, &db);
                }
            }
            Op::MatMulT { a, b, m, k, n } => {
                if wants(a) {
                    // dA = G B, with B stored [n, k]
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, val(b), &mut da, m, n, k);
                    accumulate(adj, a, &da);
                }
                if wants(b) {
                    // dB = G^T A
                    let mut db = vec![0.0; n * k];
                    let av = val(a);
                    for r in 0..m {
                        let arow = &av[r * k..(r + 1) * k];
                        for j in 0..n {
                            let s = g[r * n + j];
                            if s == 0.0 {
                                continue;
                            }
                            for (d, &x) in db[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                *d += s * x;
                            }
                        }
                    }
                    accumulate(adj, b, &db);
                }
            }
            Op::Add { a, b, ba, bb } => {
                if wants(a) {
                    reduce_into(adj, a, self.nodes[a].value.numel(), ba, g.iter().copied());
                }
                if wants(b) {
                    reduce_into(adj, b, self.nodes[b].value.numel(), bb, g.iter().copied());
                }
            }
            Op::Sub { a, b, ba, bb } => {
                if wants(a) {
                    reduce_into(adj, a, self.nodes[a].value.numel(), ba, g.iter().copied());
                }
                if wants(b) {
                    reduce_into(adj, b, self.nodes[b].value.numel(), bb, g.iter().map(|x| -x));
                }
            }
            Op::Mul { a, b, ba, bb } => {
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    let it = g.iter().enumerate().map(|(i, gv)| gv * bv[bb.index(i)]);
                    reduce_into(adj, a, av.len(), ba, it);
                }
                if wants(b) {
                    let it = g.iter().enumerate().map(|(i, gv)| gv * av[ba.index(i)]);
                    reduce_into(adj, b, bv.len(), bb, it);
                }
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(a))
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(adj, a, &d);
            }
            Op::Square(a) => {
                let d: Vec<f64> = g.iter().zip(val(a)).map(|(gv, x)| 2.0 * x * gv).collect();
                accumulate(adj, a, &d);
            }
            Op::Sqrt(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, &y)| if y > 0.0 { gv * 0.5 / y } else { 0.0 })
                    .collect();
                accumulate(adj, a, &d);
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|gv| c * gv).collect();
                accumulate(adj, a, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.nodes[a].value.numel()];
                accumulate(adj, a, &d);
            }
            Op::Mean(a) => {
                let n = self.nodes[a].value.numel();
                let d = vec![g[0] / n as f64; n];
                accumulate(adj, a, &d);
            }
            Op::SumCols { a, n } => {
                let d: Vec<f64> = g.iter().flat_map(|&gv| std::iter::repeat_n(gv, n)).collect();
                accumulate(adj, a, &d);
            }
            Op::Concat { ref parts, rows, cols } => {
                let mut offset = 0;
                for &(p, w) in parts {
                    if wants(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * cols + offset..r * cols + offset + w]);
                        }
                        accumulate(adj, p, &d);
                    }
                    offset += w;
                }
            }
            Op::Slice { a, start, end, cols } => {
                let w = end - start;
                let rows = g.len() / w;
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                accumulate(adj, a, &d);
            }
        }
    }
}

/// Adjoints of the parameter leaves of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of a parameter leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.adjoints.get(v.index).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.adjoints
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|t| (i, t)))
    }
}

fn rank_out(a_rank: usize, m: usize, n: usize, b_is_vec: bool) -> Vec<usize> {
    match (a_rank, b_is_vec) {
        (1, true) => vec![1],
        (1, false) => vec![n],
        (_, true) => vec![m],
        _ => vec![m, n],
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn broadcast(a: &Tensor, b: &Tensor) -> Option<(Vec<usize>, Bcast, Bcast)> {
    if a.shape() == b.shape() {
        return Some((a.shape().to_vec(), Bcast::Full, Bcast::Full));
    }
    if b.numel() == 1 {
        return Some((a.shape().to_vec(), Bcast::Full, Bcast::Scalar));
    }
    if a.numel() == 1 {
        return Some((b.shape().to_vec(), Bcast::Scalar, Bcast::Full));
    }
    let is_row = |t: &Tensor, cols: usize| t.dims2() == (1, cols);
    if a.shape().len() == 2 && is_row(b, a.dims2().1) {
        return Some((a.shape().to_vec(), Bcast::Full, Bcast::Row(a.dims2().1)));
    }
    if b.shape().len() == 2 && is_row(a, b.dims2().1) {
        return Some((b.shape().to_vec(), Bcast::Row(b.dims2().1), Bcast::Full));
    }
    None
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], i: usize, d: &[f64]) {
    match &mut adj[i] {
        Some(buf) => buf.iter_mut().zip(d).for_each(|(b, x)| *b += x),
        slot @ None => *slot = Some(d.to_vec()),
    }
}

fn reduce_into(
    adj: &mut [Option<Vec<f64>>],
    i: usize,
    len: usize,
    bc: Bcast,
    g: impl Iterator<Item = f64>,
) {
    let buf = adj[i].get_or_insert_with(|| vec![0.0; len]);
    for (k, gv) in g.enumerate() {
        buf[bc.index(k)] += gv;
    }
}

/// `out[m, n] += a[m, k] @ b[k, n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let s = a[r * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += s * bv;
            }
        }
    }
}

/// `out[m, n] += a[m, k] @ b[n, k]^T`
fn matmul_t_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[r * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every primitive appends a node to the [`Tape`] holding its forward value
//! and the parents it needs for the backward rule. [`Tape::backward`] walks
//! the tape in exact reverse and accumulates into per-node gradients.
//! Binary elementwise ops broadcast a `1×c` row, an `r×1` column or a `1×1`
//! scalar right operand; nothing more general.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match {rows}x{cols}");
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn column(values: Vec<f64>) -> Self {
        Tensor { rows: values.len(), cols: 1, data: values }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn select_rows(&self, index: &[usize]) -> Tensor {
        let mut out = Vec::with_capacity(index.len() * self.cols);
        for &i in index {
            out.extend_from_slice(self.row(i));
        }
        Tensor { rows: index.len(), cols: self.cols, data: out }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b`
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows);
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { rows: n, cols: m, data: out }
}

/// `a · bᵀ`
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        if arow.iter().all(|&x| x == 0.0) {
            continue;
        }
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor { rows: n, cols: m, data: out }
}

/// `aᵀ · b`
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = &a.data[p * n..(p + 1) * n];
        let brow = &b.data[p * m..(p + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { rows: n, cols: m, data: out }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast, AdError> {
    match b.shape() {
        s if s == a.shape() => Ok(Broadcast::Same),
        (1, 1) => Ok(Broadcast::Scalar),
        (1, c) if c == a.cols => Ok(Broadcast::Row),
        (r, 1) if r == a.rows => Ok(Broadcast::Col),
        _ => Err(AdError::ShapeMismatch { op, lhs: a.shape(), rhs: b.shape() }),
    }
}

#[inline]
fn bidx(kind: Broadcast, cols: usize, r: usize, c: usize) -> usize {
    match kind {
        Broadcast::Same => r * cols + c,
        Broadcast::Row => c,
        Broadcast::Col => r,
        Broadcast::Scalar => 0,
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    SegmentSoftmax(Var, Vec<usize>, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    PickCols(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// Leaf that accumulates a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn emit(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFiniteValue { op: name });
        }
        let rg = self.rg(parents);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.rows {
            return Err(AdError::ShapeMismatch { op: "matmul", lhs: av.shape(), rhs: bv.shape() });
        }
        let out = matmul(av, bv);
        self.emit("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Broadcast), AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = broadcast_kind(name, av, bv)?;
        let mut out = av.clone();
        let cols = av.cols;
        for r in 0..av.rows {
            for c in 0..cols {
                let o = &mut out.data[r * cols + c];
                *o = f(*o, bv.data[bidx(kind, cols, r, c)]);
            }
        }
        Ok((out, kind))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (out, kind) = self.binary("add", a, b, |x, y| x + y)?;
        self.emit("add", out, Op::Add(a, b, kind), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (out, kind) = self.binary("sub", a, b, |x, y| x - y)?;
        self.emit("sub", out, Op::Sub(a, b, kind), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (out, kind) = self.binary("mul", a, b, |x, y| x * y)?;
        self.emit("mul", out, Op::Mul(a, b, kind), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| x * k);
        self.emit("scale", out, Op::Scale(a, k), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows {
            return Err(AdError::ShapeMismatch { op: "concat_cols", lhs: av.shape(), rhs: bv.shape() });
        }
        let cols = av.cols + bv.cols;
        let mut data = Vec::with_capacity(av.rows * cols);
        for r in 0..av.rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor { rows: av.rows, cols, data };
        self.emit("concat_cols", out, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.emit("leaky_relu", out, Op::LeakyRelu(a, slope), &[a])
    }

    /// ELU with unit alpha.
    pub fn elu(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.emit("elu", out, Op::Elu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(f64::exp);
        self.emit("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AdError> {
        let out = self.value(a).map(f64::ln);
        self.emit("log", out, Op::Log(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let out = Tensor::scalar(self.value(a).data.iter().sum());
        self.emit("sum", out, Op::Sum(a), &[a])
    }

    /// Softmax of an `E×1` score column within each segment. Segments with
    /// no members are simply absent from the output.
    pub fn segment_softmax(&mut self, scores: Var, segments: &[usize], count: usize) -> Result<Var, AdError> {
        let sv = self.value(scores);
        if sv.cols != 1 || sv.rows != segments.len() {
            return Err(AdError::ShapeMismatch {
                op: "segment_softmax",
                lhs: sv.shape(),
                rhs: (segments.len(), 1),
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= count) {
            return Err(AdError::ShapeMismatch { op: "segment_softmax", lhs: (bad, 1), rhs: (count, 1) });
        }
        let mut max = vec![f64::NEG_INFINITY; count];
        for (&s, &x) in segments.iter().zip(&sv.data) {
            if x > max[s] {
                max[s] = x;
            }
        }
        let mut out: Vec<f64> = segments.iter().zip(&sv.data).map(|(&s, &x)| (x - max[s]).exp()).collect();
        let mut denom = vec![0.0; count];
        for (&s, &e) in segments.iter().zip(&out) {
            denom[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(segments) {
            *o /= denom[s];
        }
        let out = Tensor::column(out);
        self.emit("segment_softmax", out, Op::SegmentSoftmax(scores, segments.to_vec(), count), &[scores])
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AdError> {
        let av = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= av.rows) {
            return Err(AdError::ShapeMismatch { op: "gather_rows", lhs: av.shape(), rhs: (bad, 0) });
        }
        let out = av.select_rows(index);
        self.emit("gather_rows", out, Op::GatherRows(a, index.to_vec()), &[a])
    }

    /// `out[index[k]] += a[k]` into a `size`-row result.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], size: usize) -> Result<Var, AdError> {
        let av = self.value(a);
        if av.rows != index.len() {
            return Err(AdError::ShapeMismatch { op: "scatter_add_rows", lhs: av.shape(), rhs: (index.len(), 0) });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= size) {
            return Err(AdError::ShapeMismatch { op: "scatter_add_rows", lhs: (bad, 0), rhs: (size, 0) });
        }
        let cols = av.cols;
        let mut out = Tensor::zeros(size, cols);
        for (k, &i) in index.iter().enumerate() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(av.row(k)) {
                *o += x;
            }
        }
        self.emit("scatter_add_rows", out, Op::ScatterAddRows(a, index.to_vec()), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AdError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.emit("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, AdError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.emit("log_softmax_rows", out, Op::LogSoftmaxRows(a), &[a])
    }

    /// `out[r] = a[r, cols[r]]`, an `r×1` column.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var, AdError> {
        let av = self.value(a);
        if cols.len() != av.rows || cols.iter().any(|&c| c >= av.cols) {
            return Err(AdError::ShapeMismatch { op: "pick_cols", lhs: av.shape(), rhs: (cols.len(), 1) });
        }
        let out = Tensor::column(cols.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect());
        self.emit("pick_cols", out, Op::PickCols(a, cols.to_vec()), &[a])
    }

    /// Accumulates `∂loss/∂v` into every node on a gradient path. Calling it
    /// again without [`Tape::zero_grad`] adds to the existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), AdError> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(AdError::NotScalar { rows, cols });
        }
        // upstream gradients for this pass only, kept apart from the
        // accumulated ones so repeated calls add instead of compounding
        let mut upstream: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        upstream[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = upstream[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            for (parent, pg) in self.local_grads(idx, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut upstream[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            match &mut self.grads[idx] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut r = Vec::with_capacity(2);
                if needs(a) {
                    r.push((*a, matmul_nt(g, val(b))));
                }
                if needs(b) {
                    r.push((*b, matmul_tn(val(a), g)));
                }
                r
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let mut r = vec![(*a, g.clone())];
                if needs(b) {
                    let mut gb = reduce_broadcast(g, *kind, val(b).shape());
                    if sign < 0.0 {
                        gb.data.iter_mut().for_each(|x| *x = -*x);
                    }
                    r.push((*b, gb));
                }
                r
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (val(a), val(b));
                let cols = av.cols;
                let mut r = Vec::with_capacity(2);
                if needs(a) {
                    let mut ga = g.clone();
                    for rr in 0..av.rows {
                        for c in 0..cols {
                            ga.data[rr * cols + c] *= bv.data[bidx(*kind, cols, rr, c)];
                        }
                    }
                    r.push((*a, ga));
                }
                if needs(b) {
                    let mut prod = g.clone();
                    for (p, x) in prod.data.iter_mut().zip(&av.data) {
                        *p *= x;
                    }
                    r.push((*b, reduce_broadcast(&prod, *kind, bv.shape())));
                }
                r
            }
            Op::Scale(a, k) => vec![(*a, g.map(|x| x * k))],
            Op::ConcatCols(a, b) => {
                let ac = val(a).cols;
                let bc = val(b).cols;
                let mut ga = Tensor::zeros(g.rows, ac);
                let mut gb = Tensor::zeros(g.rows, bc);
                for rr in 0..g.rows {
                    ga.row_mut(rr).copy_from_slice(&g.row(rr)[..ac]);
                    gb.row_mut(rr).copy_from_slice(&g.row(rr)[ac..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::LeakyRelu(a, slope) => {
                let mut ga = g.clone();
                for (x, &inp) in ga.data.iter_mut().zip(&val(a).data) {
                    if inp <= 0.0 {
                        *x *= slope;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Elu(a) => {
                let mut ga = g.clone();
                for ((x, &inp), &o) in ga.data.iter_mut().zip(&val(a).data).zip(&out.data) {
                    if inp <= 0.0 {
                        *x *= o + 1.0;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Exp(a) => {
                let mut ga = g.clone();
                ga.data.iter_mut().zip(&out.data).for_each(|(x, o)| *x *= o);
                vec![(*a, ga)]
            }
            Op::Log(a) => {
                let mut ga = g.clone();
                ga.data.iter_mut().zip(&val(a).data).for_each(|(x, i)| *x /= i);
                vec![(*a, ga)]
            }
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                vec![(*a, Tensor::filled(r, c, g.item()))]
            }
            Op::SegmentSoftmax(a, seg, count) => {
                let mut dot = vec![0.0; *count];
                for ((&s, &gy), &y) in seg.iter().zip(&g.data).zip(&out.data) {
                    dot[s] += gy * y;
                }
                let data = seg
                    .iter()
                    .zip(&g.data)
                    .zip(&out.data)
                    .map(|((&s, &gy), &y)| y * (gy - dot[s]))
                    .collect();
                vec![(*a, Tensor::column(data))]
            }
            Op::GatherRows(a, index) => {
                let (r, c) = val(a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in index.iter().enumerate() {
                    for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                vec![(*a, ga)]
            }
            Op::ScatterAddRows(a, index) => vec![(*a, g.select_rows(index))],
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..g.rows {
                    let y = out.row(r);
                    let d: f64 = g.row(r).iter().zip(y).map(|(a, b)| a * b).sum();
                    for (x, &yy) in ga.row_mut(r).iter_mut().zip(y) {
                        *x = yy * (*x - d);
                    }
                }
                vec![(*a, ga)]
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..g.rows {
                    let s: f64 = g.row(r).iter().sum();
                    for (x, &ly) in ga.row_mut(r).iter_mut().zip(out.row(r)) {
                        *x -= ly.exp() * s;
                    }
                }
                vec![(*a, ga)]
            }
            Op::PickCols(a, cols) => {
                let (r, c) = val(a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (rr, &cc) in cols.iter().enumerate() {
                    ga.set(rr, cc, g.data[rr]);
                }
                vec![(*a, ga)]
            }
        }
    }
}

fn reduce_broadcast(g: &Tensor, kind: Broadcast, shape: (usize, usize)) -> Tensor {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor::scalar(g.data.iter().sum()),
        Broadcast::Row => {
            let mut out = Tensor::zeros(1, shape.1);
            for r in 0..g.rows {
                for (o, x) in out.data.iter_mut().zip(g.row(r)) {
                    *o += x;
                }
            }
            out
        }
        Broadcast::Col => Tensor::column((0..g.rows).map(|r| g.row(r).iter().sum()).collect()),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// Absolute differences below this are judged against it instead of the
/// gradient magnitude, so vanishing gradients do not inflate the ratio.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, flat element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub within_tolerance: bool,
}

/// Compares tape gradients with central differences for every parameter
/// element. `forward` must be deterministic and return a `1×1` loss.
pub fn grad_check<F>(forward: F, params: &[Tensor], epsilon: f64, tolerance: f64) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let eval = |ps: &[Tensor]| -> Result<f64, AdError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = forward(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut worst = None;
    let mut max_err = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let (r, c) = params[pi].shape();
        let analytic = tape.grad(*var).cloned().unwrap_or_else(|| Tensor::zeros(r, c));
        for k in 0..r * c {
            let orig = probe[pi].data[k];
            probe[pi].data[k] = orig + epsilon;
            let up = eval(&probe)?;
            probe[pi].data[k] = orig - epsilon;
            let down = eval(&probe)?;
            probe[pi].data[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.data[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((pi, k));
            }
        }
    }
    Ok(GradCheckReport { max_relative_error: max_err, worst, within_tolerance: max_err <= tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn single_member_segment_is_one() {
        let mut t = Tape::new();
        let s = t.constant(Tensor::column(vec![3.7]));
        let a = t.segment_softmax(s, &[0], 1).unwrap();
        assert_eq!(t.value(a).item(), 1.0);
    }

    #[test]
    fn leaky_relu_value_and_slope() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(-1.0));
        let y = t.leaky_relu(x, 0.2).unwrap();
        assert!((t.value(y).item() + 0.2).abs() < 1e-15);
        t.backward(y).unwrap();
        assert!((t.grad(x).unwrap().item() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let s = t.sum(w).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn square_sum_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let sq = t.mul(w, w).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &Tensor::from_rows(&[vec![2.0, 4.0], vec![6.0, 8.0]]));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let s = t.sum(w).unwrap();
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &Tensor::filled(1, 2, 2.0));
        t.zero_grad();
        assert!(t.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.param(Tensor::zeros(2, 2));
        assert_eq!(t.backward(w), Err(AdError::NotScalar { rows: 2, cols: 2 }));
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(AdError::ShapeMismatch { op: "matmul", .. })));
        let c = t.constant(Tensor::zeros(3, 2));
        assert!(matches!(t.add(a, c), Err(AdError::ShapeMismatch { .. })));
        let z = t.constant(Tensor::scalar(0.0));
        assert!(matches!(t.log(z), Err(AdError::NonFiniteValue { op: "log" })));
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let report = grad_check(
            |t, p| {
                let m = t.matmul(p[0], p[1])?;
                let sq = t.mul(m, m)?;
                t.sum(sq)
            },
            &[a, b],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.within_tolerance, "{report:?}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg = vec![0, 0, 1, 2, 2, 2];
        let idx = vec![2, 0, 0, 1, 3, 3];
        let picks = vec![1, 0, 2, 1];
        for _ in 0..5 {
            let x = random(&mut rng, 4, 3);
            let row = random(&mut rng, 1, 3);
            let col = random(&mut rng, 4, 1);
            // keep leaky_relu inputs off the kink
            let mut s = random(&mut rng, 6, 1);
            s.data_mut().iter_mut().for_each(|v| {
                if v.abs() < 1e-3 {
                    *v = 0.5
                }
            });
            let pos = random(&mut rng, 4, 3).map(|v| v.abs() + 0.1);
            let report = grad_check(
                |t, p| {
                    let (x, row, col, s, pos) = (p[0], p[1], p[2], p[3], p[4]);
                    let a = t.add(x, row)?;
                    let b = t.mul(a, col)?;
                    let c = t.sub(b, x)?;
                    let d = t.elu(c)?;
                    let e = t.concat_cols(d, x)?;
                    let f = t.softmax_rows(e)?;
                    let g = t.log_softmax_rows(d)?;
                    let h = t.pick_cols(g, &picks)?;
                    let lr = t.leaky_relu(s, 0.2)?;
                    let sm = t.segment_softmax(lr, &seg, 3)?;
                    let gathered = t.gather_rows(x, &idx)?;
                    let weighted = t.mul(gathered, sm)?;
                    let scattered = t.scatter_add_rows(weighted, &seg, 3)?;
                    let ex = t.exp(scattered)?;
                    let lg = t.log(pos)?;
                    let sc = t.scale(lg, -0.7)?;
                    let mut total = t.sum(f)?;
                    for v in [h, ex, sc] {
                        let sq = t.mul(v, v)?;
                        let s = t.sum(sq)?;
                        total = t.add(total, s)?;
                    }
                    let sq = t.mul(f, f)?;
                    let s = t.sum(sq)?;
                    t.add(total, s)
                },
                &[x, row, col, s, pos],
                1e-5,
                1e-5,
            )
            .unwrap();
            assert!(report.within_tolerance, "{report:?}");
        }
    }

    #[test]
    fn segment_softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seg: Vec<usize> = (0..50).map(|_| rng.gen_range(0..7)).collect();
        let mut t = Tape::new();
        let s = t.constant(random(&mut rng, 50, 1).map(|v| v * 40.0));
        let a = t.segment_softmax(s, &seg, 7).unwrap();
        let mut sums = [0.0; 7];
        for (&k, &v) in seg.iter().zip(t.value(a).data()) {
            assert!(v >= 0.0);
            sums[k] += v;
        }
        for (k, total) in sums.iter().enumerate() {
            if seg.contains(&k) {
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_subexpressions_sum_gradients() {
        // y = sum(x*x + x*x) evaluated with a shared node vs a duplicated one
        let x0 = Tensor::from_rows(&[vec![0.5, -1.5], vec![2.0, 0.25]]);
        let mut shared = Tape::new();
        let x = shared.param(x0.clone());
        let sq = shared.mul(x, x).unwrap();
        let y = shared.add(sq, sq).unwrap();
        let l = shared.sum(y).unwrap();
        shared.backward(l).unwrap();

        let mut dup = Tape::new();
        let x2 = dup.param(x0.clone());
        let a = dup.mul(x2, x2).unwrap();
        let b = dup.mul(x2, x2).unwrap();
        let y = dup.add(a, b).unwrap();
        let l = dup.sum(y).unwrap();
        dup.backward(l).unwrap();

        assert_eq!(shared.grad(x), dup.grad(x2));
        assert_eq!(shared.grad(x).unwrap(), &x0.map(|v| 4.0 * v));
    }

    #[test]
    fn zero_parameter_grad_check() {
        let r = grad_check(|t, _| Ok(t.constant(Tensor::scalar(1.0))), &[], 1e-5, 1e-6).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
        assert!(r.within_tolerance);
    }
}

//! Wengert-style tape: every primitive is evaluated eagerly and appended to
//! an ordered node list, so the list is topologically sorted by
//! construction. `backward` walks it in reverse; `evaluate` replays it
//! forward with substituted leaf values.

use std::collections::BTreeMap;

use super::tensor::{log_sum_exp, softmax_into, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    L2Normalize(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize> },
    Concat(Vec<Var>),
    IndexSelect { x: Var, indices: Vec<usize> },
    SegmentMean { x: Var, segments: Vec<(usize, usize)> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::L2Normalize(_) => "l2_normalize",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Concat(_) => "concat",
            Op::IndexSelect { .. } => "index_select",
            Op::SegmentMean { .. } => "segment_mean",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::L2Normalize(a) => vec![*a],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Concat(parts) => parts.clone(),
            Op::IndexSelect { x, .. } | Op::SegmentMean { x, .. } => vec![*x],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }
}

#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    norm_floor: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

pub const DEFAULT_NORM_FLOOR: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::with_norm_floor(DEFAULT_NORM_FLOOR)
    }

    /// `floor` is added to every norm computed by [`Tape::l2_normalize`].
    pub fn with_norm_floor(floor: f64) -> Self {
        Tape {
            nodes: Vec::new(),
            norm_floor: floor,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Leaves that will receive gradients, in registration order.
    pub fn grad_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.requires_grad)
            .map(|(i, _)| Var(i))
            .collect()
    }

    /// Register an input; its `requires_grad` flag decides whether it is
    /// differentiated.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_grad(false))
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_grad(true))
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = compute(&op, |v| &self.nodes[v.0].value, self.norm_floor)?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `[m,k]·[k,n]` or `[m,k]·[k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    /// `[n,d] + [d]`, the one broadcast the tape supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.push(Op::Scale(x, factor))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Log(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    /// Normalize a vector, or each row of a matrix, to unit L2 norm. The
    /// tape's norm floor is added to the norm; an exactly-zero input errors.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.push(Op::L2Normalize(x))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        self.push(Op::SoftmaxCrossEntropy { logits, targets })
    }

    /// Concatenate along the first axis.
    pub fn concat(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.push(Op::Concat(parts))
    }

    /// Gather rows (or elements of a vector).
    pub fn index_select(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        self.push(Op::IndexSelect { x, indices })
    }

    /// Mean of each half-open row range `start..end`; an empty range yields
    /// a zero row.
    pub fn segment_mean(&mut self, x: Var, segments: Vec<(usize, usize)>) -> Result<Var> {
        self.push(Op::SegmentMean { x, segments })
    }

    /// Replay the tape with some leaves replaced and return the value of
    /// `output`. Identical inputs give bitwise-identical results.
    pub fn evaluate(&self, output: Var, inputs: &[(Var, Tensor)]) -> Result<Tensor> {
        let mut replaced: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        for (var, t) in inputs {
            let node = self
                .nodes
                .get(var.0)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown var {}", var.0)))?;
            if !matches!(node.op, Op::Leaf) {
                return Err(Error::InvalidArgument(format!("var {} is not a leaf", var.0)));
            }
            if node.value.shape() != t.shape() {
                return Err(Error::shape(
                    "evaluate",
                    format!("leaf {} has shape {:?}, got {:?}", var.0, node.value.shape(), t.shape()),
                ));
            }
            if var.0 <= output.0 {
                replaced[var.0] = Some(t.clone());
            }
        }
        // Nodes before the first substituted leaf are unaffected.
        let Some(first) = replaced.iter().position(Option::is_some) else {
            return Ok(self.nodes[output.0].value.clone());
        };
        let mut fresh: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        for i in first..=output.0 {
            let value = match (&self.nodes[i].op, replaced[i].take()) {
                (Op::Leaf, Some(t)) => t,
                (Op::Leaf, None) => continue,
                (op, _) => compute(
                    op,
                    |v| fresh[v.0].as_ref().unwrap_or(&self.nodes[v.0].value),
                    self.norm_floor,
                )?,
            };
            fresh[i] = Some(value);
        }
        Ok(fresh[output.0].take().unwrap_or_else(|| self.nodes[output.0].value.clone()))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// `requires_grad` leaf. Leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
            // Keep the adjoint of interior nodes out of the result.
            adj[i] = None;
        }

        let mut grads = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                continue;
            }
            let data = adj
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of leaf {i}")));
            }
            grads.insert(Var(i), Tensor::from_parts(node.value.shape().to_vec(), data));
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = av.dims2("matmul")?;
                let n = if bv.shape().len() == 2 { bv.shape()[1] } else { 1 };
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let bp = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = dot(gi, bp);
                        }
                    }
                    accumulate(adj, *a, &da);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av.data()[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                    accumulate(adj, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims2("transpose")?;
                accumulate(adj, *a, &transpose(g, r, c));
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g);
                }
                if wants(*b) {
                    accumulate(adj, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g);
                }
                if wants(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(adj, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    let d: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    accumulate(adj, *a, &d);
                }
                if wants(*b) {
                    let d: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(adj, *b, &d);
                }
            }
            Op::AddBias(x, bias) => {
                if wants(*x) {
                    accumulate(adj, *x, g);
                }
                if wants(*bias) {
                    let (rows, cols) = out.dims2("add_bias")?;
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for (d, &gv) in db.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *d += gv;
                        }
                    }
                    accumulate(adj, *bias, &db);
                }
            }
            Op::Scale(x, f) => {
                let d: Vec<f64> = g.iter().map(|v| v * f).collect();
                accumulate(adj, *x, &d);
            }
            Op::Tanh(x) => {
                let d: Vec<f64> = g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(adj, *x, &d);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(adj, *x, &d);
            }
            Op::Exp(x) => {
                let d: Vec<f64> = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                accumulate(adj, *x, &d);
            }
            Op::Log(x) => {
                let d: Vec<f64> = g.iter().zip(val(*x).data()).map(|(g, x)| g / x).collect();
                accumulate(adj, *x, &d);
            }
            Op::Sum(x) => {
                accumulate(adj, *x, &vec![g[0]; val(*x).numel()]);
            }
            Op::Mean(x) => {
                let n = val(*x).numel();
                accumulate(adj, *x, &vec![g[0] / n as f64; n]);
            }
            Op::L2Normalize(x) => {
                let xv = val(*x);
                let cols = *xv.shape().last().unwrap_or(&1);
                let rows = xv.numel() / cols;
                let mut d = vec![0.0; xv.numel()];
                for r in 0..rows {
                    let xs = &xv.data()[r * cols..(r + 1) * cols];
                    let gs = &g[r * cols..(r + 1) * cols];
                    let norm = dot(xs, xs).sqrt();
                    let denom = norm + self.norm_floor;
                    let proj = dot(xs, gs) / (norm * denom * denom);
                    for ((d, &xv), &gv) in d[r * cols..(r + 1) * cols].iter_mut().zip(xs).zip(gs) {
                        *d = gv / denom - xv * proj;
                    }
                }
                accumulate(adj, *x, &d);
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let lv = val(*logits);
                let (n, k) = lv.dims2("softmax_cross_entropy")?;
                let mut d = vec![0.0; n * k];
                let scale = g[0] / n as f64;
                for (r, &t) in targets.iter().enumerate() {
                    let row = &mut d[r * k..(r + 1) * k];
                    softmax_into(lv.row(r), row);
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(adj, *logits, &d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).numel();
                    if wants(*p) {
                        accumulate(adj, *p, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::IndexSelect { x, indices } => {
                let xv = val(*x);
                let cols = row_width(xv);
                let mut d = vec![0.0; xv.numel()];
                for (o, &i) in indices.iter().enumerate() {
                    for (dv, &gv) in d[i * cols..(i + 1) * cols].iter_mut().zip(&g[o * cols..(o + 1) * cols]) {
                        *dv += gv;
                    }
                }
                accumulate(adj, *x, &d);
            }
            Op::SegmentMean { x, segments } => {
                let xv = val(*x);
                let (_, cols) = xv.dims2("segment_mean")?;
                let mut d = vec![0.0; xv.numel()];
                for (s, &(start, end)) in segments.iter().enumerate() {
                    if end == start {
                        continue;
                    }
                    let w = 1.0 / (end - start) as f64;
                    let gs = &g[s * cols..(s + 1) * cols];
                    for r in start..end {
                        for (dv, &gv) in d[r * cols..(r + 1) * cols].iter_mut().zip(gs) {
                            *dv += gv * w;
                        }
                    }
                }
                accumulate(adj, *x, &d);
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], var: Var, delta: &[f64]) {
    match &mut adj[var.0] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn row_width(t: &Tensor) -> usize {
    if t.shape().len() >= 2 {
        t.shape()[1..].iter().product()
    } else {
        1
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>) {
    (t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

/// Forward kernel shared by eager recording and replay.
fn compute<'a>(op: &Op, val: impl Fn(Var) -> &'a Tensor, floor: f64) -> Result<Tensor> {
    let (shape, data): (Vec<usize>, Vec<f64>) = match op {
        Op::Leaf => unreachable!("leaves are not recomputed"),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims2("matmul")?;
            let (k2, n, out_shape) = match bv.shape() {
                [k2, n] => (*k2, *n, vec![m, *n]),
                [k2] => (*k2, 1, vec![m]),
                s => return Err(Error::shape("matmul", format!("rhs shape {s:?}"))),
            };
            if k != k2 {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} · {:?}", av.shape(), bv.shape()),
                ));
            }
            let mut out = vec![0.0; m * n];
            let (ad, bd) = (av.data(), bv.data());
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let a_ip = ad[i * k + p];
                    for (o, &b) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o += a_ip * b;
                    }
                }
            }
            (out_shape, out)
        }
        Op::Transpose(a) => {
            let av = val(*a);
            let (r, c) = av.dims2("transpose")?;
            (vec![c, r], transpose(av.data(), r, c))
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            same_shape(op.name(), av, bv)?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                _ => |x, y| x * y,
            };
            (
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            )
        }
        Op::AddBias(x, bias) => {
            let (xv, bv) = (val(*x), val(*bias));
            let (rows, cols) = xv.dims2("add_bias")?;
            if bv.shape() != [cols] {
                return Err(Error::shape(
                    "add_bias",
                    format!("{:?} + {:?}", xv.shape(), bv.shape()),
                ));
            }
            let mut out = xv.data().to_vec();
            for r in 0..rows {
                for (o, b) in out[r * cols..(r + 1) * cols].iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            (vec![rows, cols], out)
        }
        Op::Scale(x, f) => map(val(*x), |v| v * f),
        Op::Tanh(x) => map(val(*x), f64::tanh),
        Op::Relu(x) => map(val(*x), |v| v.max(0.0)),
        Op::Exp(x) => map(val(*x), f64::exp),
        Op::Log(x) => map(val(*x), f64::ln),
        Op::Sum(x) => (Vec::new(), vec![val(*x).data().iter().sum()]),
        Op::Mean(x) => {
            let xv = val(*x);
            (Vec::new(), vec![xv.data().iter().sum::<f64>() / xv.numel() as f64])
        }
        Op::L2Normalize(x) => {
            let xv = val(*x);
            if xv.shape().len() > 2 {
                return Err(Error::shape("l2_normalize", format!("{:?}", xv.shape())));
            }
            let cols = *xv.shape().last().unwrap_or(&1);
            let mut out = xv.data().to_vec();
            for row in out.chunks_mut(cols) {
                let norm = dot(row, row).sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                let denom = norm + floor;
                for v in row.iter_mut() {
                    *v /= denom;
                }
            }
            (xv.shape().to_vec(), out)
        }
        Op::SoftmaxCrossEntropy { logits, targets } => {
            let lv = val(*logits);
            let (n, k) = lv.dims2("softmax_cross_entropy")?;
            if targets.len() != n {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("{n} rows, {} targets", targets.len()),
                ));
            }
            if let Some(&t) = targets.iter().find(|&&t| t >= k) {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("target {t} out of range for {k} classes"),
                ));
            }
            let total: f64 = targets
                .iter()
                .enumerate()
                .map(|(r, &t)| {
                    let row = lv.row(r);
                    log_sum_exp(row) - row[t]
                })
                .sum();
            (Vec::new(), vec![total / n as f64])
        }
        Op::Concat(parts) => {
            let first = parts
                .first()
                .ok_or_else(|| Error::shape("concat", "no inputs"))?;
            let tail: Vec<usize> = val(*first).shape().get(1..).unwrap_or(&[]).to_vec();
            let mut rows = 0;
            let mut out = Vec::new();
            for p in parts {
                let pv = val(*p);
                if pv.shape().is_empty() || pv.shape()[1..] != tail[..] {
                    return Err(Error::shape(
                        "concat",
                        format!("{:?} vs trailing {:?}", pv.shape(), tail),
                    ));
                }
                rows += pv.shape()[0];
                out.extend_from_slice(pv.data());
            }
            let mut shape = vec![rows];
            shape.extend(tail);
            (shape, out)
        }
        Op::IndexSelect { x, indices } => {
            let xv = val(*x);
            if xv.shape().is_empty() {
                return Err(Error::shape("index_select", "scalar input"));
            }
            if indices.is_empty() {
                return Err(Error::shape("index_select", "no indices"));
            }
            let n = xv.shape()[0];
            let cols = row_width(xv);
            let mut out = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                if i >= n {
                    return Err(Error::shape("index_select", format!("index {i} >= {n}")));
                }
                out.extend_from_slice(&xv.data()[i * cols..(i + 1) * cols]);
            }
            let mut shape = xv.shape().to_vec();
            shape[0] = indices.len();
            (shape, out)
        }
        Op::SegmentMean { x, segments } => {
            let xv = val(*x);
            let (rows, cols) = xv.dims2("segment_mean")?;
            if segments.is_empty() {
                return Err(Error::shape("segment_mean", "no segments"));
            }
            let mut out = vec![0.0; segments.len() * cols];
            for (s, &(start, end)) in segments.iter().enumerate() {
                if start > end || end > rows {
                    return Err(Error::shape(
                        "segment_mean",
                        format!("segment {start}..{end} outside {rows} rows"),
                    ));
                }
                if end == start {
                    continue;
                }
                let acc = &mut out[s * cols..(s + 1) * cols];
                for r in start..end {
                    for (a, &v) in acc.iter_mut().zip(xv.row(r)) {
                        *a += v;
                    }
                }
                let inv = (end - start) as f64;
                for a in acc.iter_mut() {
                    *a /= inv;
                }
            }
            (vec![segments.len(), cols], out)
        }
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op.name().to_string()));
    }
    Ok(Tensor::from_parts(shape, data))
}

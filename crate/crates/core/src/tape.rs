//! Reverse-mode differentiation over a linear op tape.
//!
//! Every op appends one node holding its forward value. [`Tape::backward`]
//! walks the nodes in exact reverse order of recording and accumulates
//! adjoints; nodes that do not influence the output keep a zero gradient.

use crate::error::{Error, Result};
use crate::ops::{self, LAYER_NORM_EPS};
use crate::tensor::{check_matrix, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `[n, d] + [d]`, bias broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant (dropout masks).
    MulConst(Var, Vec<f64>),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    /// Rows divided by their clamped L2 norm; raw norms kept for the adjoint.
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    MeanRows(Var),
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the differentiated output with respect to `v`; zeros when
    /// `v` does not feed the output.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(&shape),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        check_matrix("transpose", self.value(a))?;
        let out = self.value(a).transpose();
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.len() != c {
            return Err(Error::dim("add_row", format!("{c} columns vs bias {}", tb.len())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if factors.len() != ta.len() {
            return Err(Error::dim("mul_const", format!("{} vs {}", ta.len(), factors.len())));
        }
        let data = ta.data().iter().zip(&factors).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::MulConst(a, factors)))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = ops::gelu(self.value(a));
        self.push(out, Op::Gelu(a))
    }

    /// Softmax across the last axis of every row.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            ops::softmax_in_place(row);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let c = tx.cols();
        if tg.len() != c || tb.len() != c {
            return Err(Error::dim(
                "layer_norm",
                format!("{c} columns vs gain {} / bias {}", tg.len(), tb.len()),
            ));
        }
        let (xhat, inv_std) = ops::normalize_rows(tx.data(), c, LAYER_NORM_EPS);
        let mut y = xhat.clone();
        for row in y.chunks_mut(c) {
            for ((v, g), b) in row.iter_mut().zip(tg.data()).zip(tb.data()) {
                *v = *v * g + b;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), y);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = ops::embedding_lookup(self.value(table), ids)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = check_matrix("slice_cols", tx)?;
        if start + len > c {
            return Err(Error::dim("slice_cols", format!("{start}+{len} > {c}")));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&tx.row(i)[start..start + len]);
        }
        let out = Tensor::from_parts(vec![r, len], data);
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let r = check_matrix("concat_cols", self.value(*first))?.0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = check_matrix("concat_cols", self.value(p))?;
            if pr != r {
                return Err(Error::dim("concat_cols", format!("{pr} rows vs {r}")));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_parts(vec![r, total], data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = check_matrix("gather_rows", tx)?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::dim("gather_rows", format!("row {i} of {r}")));
            }
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::from_parts(vec![rows.len(), c], data);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Divides each row by `max(‖row‖₂, COSINE_EPS)`.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.cols();
        let mut data = tx.data().to_vec();
        let mut norms = Vec::with_capacity(tx.rows());
        for row in data.chunks_mut(c) {
            let norm = ops::l2_norm(row);
            let denom = norm.max(ops::COSINE_EPS);
            for v in row.iter_mut() {
                *v /= denom;
            }
            norms.push(norm);
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(out, Op::NormalizeRows { x, norms })
    }

    /// Column means, giving a `1 x cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = check_matrix("mean_rows", tx)?;
        if r == 0 {
            return Err(Error::dim("mean_rows", "no rows"));
        }
        let mut acc = vec![0.0; c];
        for row in tx.data().chunks(c) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= r as f64;
        }
        Ok(self.push(Tensor::row_vector(acc), Op::MeanRows(x)))
    }

    /// Sum of the elementwise product, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("dot", ta, tb)?;
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean over rows of `-log softmax(logits_i)[targets_i]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (r, c) = check_matrix("softmax_cross_entropy", tl)?;
        if targets.len() != r || r == 0 {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{r} rows vs {} targets", targets.len()),
            ));
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let t = targets[i];
            if t >= c {
                return Err(Error::dim("softmax_cross_entropy", format!("target {t} of {c}")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        loss /= r as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Cosine similarity of two row vectors.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let nu = self.normalize_rows(u);
        let nv = self.normalize_rows(v);
        self.dot(nu, nv)
    }

    /// Differentiates the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("output must be scalar, got {:?}", self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                gemm_nt(g, tb.data(), slot(grads, nodes, *a), m, n, k);
                gemm_tn(ta.data(), g, slot(grads, nodes, *b), k, m, n);
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let ga = slot(grads, nodes, *a);
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, nodes, *a), g);
                add_into(slot(grads, nodes, *b), g);
            }
            Op::AddRow(x, bias) => {
                add_into(slot(grads, nodes, *x), g);
                let gb = slot(grads, nodes, *bias);
                for row in g.chunks(gb.len()) {
                    add_into(gb, row);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                for ((o, gi), y) in slot(grads, nodes, *a).iter_mut().zip(g).zip(vb) {
                    *o += gi * y;
                }
                for ((o, gi), x) in slot(grads, nodes, *b).iter_mut().zip(g).zip(va) {
                    *o += gi * x;
                }
            }
            Op::Scale(a, factor) => {
                for (o, gi) in slot(grads, nodes, *a).iter_mut().zip(g) {
                    *o += gi * factor;
                }
            }
            Op::MulConst(a, factors) => {
                for ((o, gi), f) in slot(grads, nodes, *a).iter_mut().zip(g).zip(factors) {
                    *o += gi * f;
                }
            }
            Op::Gelu(a) => {
                let xa = nodes[a.0].value.data();
                for ((o, gi), &x) in slot(grads, nodes, *a).iter_mut().zip(g).zip(xa) {
                    *o += gi * ops::gelu_derivative(x);
                }
            }
            Op::Softmax(a) => {
                let c = node.value.cols();
                let ga = slot(grads, nodes, *a);
                for ((y, gr), out) in node
                    .value
                    .data()
                    .chunks(c)
                    .zip(g.chunks(c))
                    .zip(ga.chunks_mut(c))
                {
                    let inner: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in out.iter_mut().zip(y).zip(gr) {
                        *o += p * (q - inner);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gain_v = nodes[gain.0].value.data();
                {
                    let gg = slot(grads, nodes, *gain);
                    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, gi), xh) in gg.iter_mut().zip(gr).zip(xr) {
                            *o += gi * xh;
                        }
                    }
                }
                {
                    let gb = slot(grads, nodes, *bias);
                    for gr in g.chunks(c) {
                        add_into(gb, gr);
                    }
                }
                let gx = slot(grads, nodes, *x);
                let n = c as f64;
                let mut dxhat = vec![0.0; c];
                for (r, (gr, xr)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                    for ((d, gi), gv) in dxhat.iter_mut().zip(gr).zip(gain_v) {
                        *d = gi * gv;
                    }
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(xr).map(|(d, x)| d * x).sum();
                    let scale = inv_std[r] / n;
                    for ((o, d), xh) in gx[r * c..(r + 1) * c].iter_mut().zip(&dxhat).zip(xr) {
                        *o += scale * (n * d - sum_d - xh * sum_dx);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let c = node.value.cols();
                let gt = slot(grads, nodes, *table);
                for (row, &id) in g.chunks(c).zip(ids) {
                    add_into(&mut gt[id * c..(id + 1) * c], row);
                }
            }
            Op::SliceCols { x, start } => {
                let len = node.value.cols();
                let c = nodes[x.0].value.cols();
                let gx = slot(grads, nodes, *x);
                for (i, row) in g.chunks(len).enumerate() {
                    add_into(&mut gx[i * c + start..i * c + start + len], row);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.cols();
                    let gp = slot(grads, nodes, p);
                    for (i, row) in gp.chunks_mut(pc).enumerate() {
                        add_into(row, &g[i * total + offset..i * total + offset + pc]);
                    }
                    offset += pc;
                }
            }
            Op::GatherRows { x, rows } => {
                let c = node.value.cols();
                let gx = slot(grads, nodes, *x);
                for (gr, &i) in g.chunks(c).zip(rows) {
                    add_into(&mut gx[i * c..(i + 1) * c], gr);
                }
            }
            Op::NormalizeRows { x, norms } => {
                let c = node.value.cols();
                let gx = slot(grads, nodes, *x);
                for (r, (y, gr)) in node.value.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let out = &mut gx[r * c..(r + 1) * c];
                    let norm = norms[r];
                    if norm > ops::COSINE_EPS {
                        let inner: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in out.iter_mut().zip(gr).zip(y) {
                            *o += (gi - inner * yi) / norm;
                        }
                    } else {
                        for (o, gi) in out.iter_mut().zip(gr) {
                            *o += gi / ops::COSINE_EPS;
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let r = nodes[x.0].value.rows() as f64;
                let c = node.value.cols();
                for row in slot(grads, nodes, *x).chunks_mut(c) {
                    for (o, gi) in row.iter_mut().zip(g) {
                        *o += gi / r;
                    }
                }
            }
            Op::Dot(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                for (o, y) in slot(grads, nodes, *a).iter_mut().zip(vb) {
                    *o += g[0] * y;
                }
                for (o, x) in slot(grads, nodes, *b).iter_mut().zip(va) {
                    *o += g[0] * x;
                }
            }
            Op::Sum(a) => {
                for o in slot(grads, nodes, *a).iter_mut() {
                    *o += g[0];
                }
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.len() as f64;
                for o in slot(grads, nodes, *a).iter_mut() {
                    *o += g[0] / n;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = nodes[logits.0].value.cols();
                let scale = g[0] / targets.len() as f64;
                let gl = slot(grads, nodes, *logits);
                for (i, (o, p)) in gl.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                    for (j, (oj, pj)) in o.iter_mut().zip(p).enumerate() {
                        let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                        *oj += scale * (pj - onehot);
                    }
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in insertion
//! order, which is a topological order by construction. [`Tape::backward`]
//! walks the record in reverse exactly once and returns [`Gradients`] for
//! every tracked leaf. A tape can be consumed only once; a second backward
//! pass fails with [`Error::TapeConsumed`].

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Shared, immutable index vector used by gather and segment operations.
pub type Indices = Rc<[usize]>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Log(usize),
    Concat(Vec<usize>),
    Gather(usize, Indices),
    SegmentSum(usize, Indices),
    SegmentMean(usize, Indices, Rc<[f64]>),
    SegmentSoftmax(usize, Indices),
    Sum(usize),
    Mean(usize),
    SoftmaxCrossEntropy(usize, Indices, Vec<f64>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf whose gradient is wanted.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that is never differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// `input > 0` for every element fed to a ReLU or leaky ReLU, in
    /// recording order.
    pub fn rectifier_pattern(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut out = Vec::new();
        for node in nodes.iter() {
            if let Op::Relu(a) | Op::LeakyRelu(a, _) = node.op {
                out.extend(nodes[a].value.data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(self, loss.tape),
            "loss belongs to a different tape"
        );
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if !loss_value.is_scalar() {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let mut acc = |input: usize, contribution: Vec<f64>| {
                if !nodes[input].tracked {
                    return;
                }
                match &mut grads[input] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(contribution) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            };
            let val = |i: usize| -> &Tensor { &nodes[i].value };

            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (n, k) = (av.shape()[0], av.shape()[1]);
                    let m = bv.shape()[1];
                    if nodes[*a].tracked {
                        // dA = dC * B^T
                        let mut ga = vec![0.0; n * k];
                        for i in 0..n {
                            for p in 0..k {
                                let brow = &bv.data()[p * m..(p + 1) * m];
                                let grow = &g[i * m..(i + 1) * m];
                                ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            }
                        }
                        acc(*a, ga);
                    }
                    if nodes[*b].tracked {
                        // dB = A^T * dC
                        let mut gb = vec![0.0; k * m];
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let aip = av.data()[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for (o, &gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                    *o += aip * gv;
                                }
                            }
                        }
                        acc(*b, gb);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                    let gb = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::AddBias(a, bias) => {
                    let m = val(*bias).len();
                    let mut gbias = vec![0.0; m];
                    if m > 0 {
                        for row in g.chunks(m) {
                            for (o, v) in gbias.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    acc(*a, g);
                    acc(*bias, gbias);
                }
                Op::MulCol(a, w) => {
                    let (av, wv) = (val(*a), val(*w));
                    let f = av.cols();
                    let mut ga = vec![0.0; g.len()];
                    let mut gw = vec![0.0; wv.len()];
                    if f > 0 {
                        for (r, (grow, arow)) in g.chunks(f).zip(av.data().chunks(f)).enumerate() {
                            let wr = wv.data()[r];
                            for c in 0..f {
                                ga[r * f + c] = grow[c] * wr;
                                gw[r] += grow[c] * arow[c];
                            }
                        }
                    }
                    acc(*a, ga);
                    acc(*w, gw);
                }
                Op::Scale(a, s) => acc(*a, g.iter().map(|x| x * s).collect()),
                Op::Relu(a) => {
                    let ga = g
                        .iter()
                        .zip(val(*a).data())
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    acc(*a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ga = g
                        .iter()
                        .zip(val(*a).data())
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { gv * slope })
                        .collect();
                    acc(*a, ga);
                }
                Op::Exp(a) => {
                    let ga = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, y)| x * y)
                        .collect();
                    acc(*a, ga);
                }
                Op::Log(a) => {
                    let ga = g.iter().zip(val(*a).data()).map(|(x, y)| x / y).collect();
                    acc(*a, ga);
                }
                Op::Concat(parts) => {
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = val(p).cols();
                        let mut gp = Vec::with_capacity(val(p).len());
                        if total > 0 {
                            for grow in g.chunks(total) {
                                gp.extend_from_slice(&grow[offset..offset + pc]);
                            }
                        }
                        offset += pc;
                        acc(p, gp);
                    }
                }
                Op::Gather(a, idx) => {
                    let av = val(*a);
                    let f = av.cols();
                    let mut ga = vec![0.0; av.len()];
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..f {
                            ga[src * f + c] += g[r * f + c];
                        }
                    }
                    acc(*a, ga);
                }
                Op::SegmentSum(a, seg) => {
                    let f = val(*a).cols();
                    let mut ga = Vec::with_capacity(val(*a).len());
                    for &s in seg.iter() {
                        ga.extend_from_slice(&g[s * f..(s + 1) * f]);
                    }
                    acc(*a, ga);
                }
                Op::SegmentMean(a, seg, inv) => {
                    let f = val(*a).cols();
                    let mut ga = Vec::with_capacity(val(*a).len());
                    for &s in seg.iter() {
                        ga.extend(g[s * f..(s + 1) * f].iter().map(|x| x * inv[s]));
                    }
                    acc(*a, ga);
                }
                Op::SegmentSoftmax(a, seg) => {
                    let out = &node.value;
                    let f = out.cols();
                    let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n_seg * f];
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..f {
                            dot[s * f + c] += g[r * f + c] * out.data()[r * f + c];
                        }
                    }
                    let mut ga = vec![0.0; g.len()];
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..f {
                            ga[r * f + c] = out.data()[r * f + c] * (g[r * f + c] - dot[s * f + c]);
                        }
                    }
                    acc(*a, ga);
                }
                Op::Sum(a) => acc(*a, vec![g[0]; val(*a).len()]),
                Op::Mean(a) => {
                    let n = val(*a).len();
                    acc(*a, vec![g[0] / n as f64; n]);
                }
                Op::SoftmaxCrossEntropy(a, labels, probs) => {
                    let c = val(*a).cols();
                    let scale = g[0] / labels.len() as f64;
                    let mut ga: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &y) in labels.iter().enumerate() {
                        ga[i * c + y] -= scale;
                    }
                    acc(*a, ga);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| g.map(|data| Tensor::from_parts(node.value.shape().to_vec(), data)))
            .collect();
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; a zero tensor when `var`
    /// does not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => Tensor::zeros(var.value().shape()),
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_segments(seg: &[usize], rows: usize, n_segments: usize, op: &str) -> Result<()> {
    if seg.len() != rows {
        return Err(Error::Shape(format!(
            "{op}: {} segment ids for {rows} rows",
            seg.len()
        )));
    }
    if let Some(&bad) = seg.iter().find(|&&s| s >= n_segments) {
        return Err(Error::BadIndex(format!(
            "{op}: segment {bad} >= {n_segments}"
        )));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.tape.tracked(self.id);
        self.tape.push(value, op, tracked)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
        let tracked = self.tape.tracked(self.id) || self.tape.tracked(other.id);
        self.tape.push(value, op, tracked)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (n, k) = a.require_matrix("matmul")?;
        let (k2, m) = b.require_matrix("matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out = Tensor::from_parts(vec![n, m], matmul_raw(a.data(), b.data(), n, k, m));
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "add")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.binary(other, out, Op::Add(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mul")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.binary(other, out, Op::Mul(self.id, other.id)))
    }

    /// Adds a length-`m` bias vector to every row of an `n x m` matrix.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), bias.value());
        let (_, m) = a.require_matrix("add_bias")?;
        if b.len() != m {
            return Err(Error::Shape(format!(
                "add_bias: bias of {} for {m} columns",
                b.len()
            )));
        }
        let mut data = a.data().to_vec();
        if m > 0 {
            for row in data.chunks_mut(m) {
                for (x, bv) in row.iter_mut().zip(b.data()) {
                    *x += bv;
                }
            }
        }
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.binary(bias, out, Op::AddBias(self.id, bias.id)))
    }

    /// Multiplies row `i` of an `n x f` matrix by `w[i]`, with `w` of shape `n x 1`.
    pub fn mul_col(self, w: Var<'t>) -> Result<Var<'t>> {
        let (a, wv) = (self.value(), w.value());
        let (n, f) = a.require_matrix("mul_col")?;
        if wv.len() != n {
            return Err(Error::Shape(format!(
                "mul_col: {} weights for {n} rows",
                wv.len()
            )));
        }
        let mut data = a.data().to_vec();
        if f > 0 {
            for (row, &s) in data.chunks_mut(f).zip(wv.data()) {
                row.iter_mut().for_each(|x| *x *= s);
            }
        }
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.binary(w, out, Op::MulCol(self.id, w.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x * s).collect());
        self.unary(out, Op::Scale(self.id, s))
    }

    pub fn relu(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_parts(
            a.shape().to_vec(),
            a.data()
                .iter()
                .map(|&x| if x > 0.0 { x } else { 0.0 })
                .collect(),
        );
        self.unary(out, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_parts(
            a.shape().to_vec(),
            a.data()
                .iter()
                .map(|&x| if x > 0.0 { x } else { x * slope })
                .collect(),
        );
        self.unary(out, Op::LeakyRelu(self.id, slope))
    }

    pub fn exp(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_parts(
            a.shape().to_vec(),
            a.data().iter().map(|x| x.exp()).collect(),
        );
        self.unary(out, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_parts(
            a.shape().to_vec(),
            a.data().iter().map(|x| x.ln()).collect(),
        );
        self.unary(out, Op::Log(self.id))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let mut rows = None;
        for v in &values {
            let (r, _) = v.require_matrix("concat_cols")?;
            if *rows.get_or_insert(r) != r {
                return Err(Error::Shape("concat_cols: row counts differ".into()));
            }
        }
        let rows = rows.unwrap_or(0);
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let tracked = parts.iter().any(|p| tape.tracked(p.id));
        let out = Tensor::from_parts(vec![rows, total], data);
        Ok(tape.push(
            out,
            Op::Concat(parts.iter().map(|p| p.id).collect()),
            tracked,
        ))
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(self, idx: &Indices) -> Result<Var<'t>> {
        let a = self.value();
        let (n, f) = a.require_matrix("gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::BadIndex(format!("gather_rows: row {bad} >= {n}")));
        }
        let mut data = Vec::with_capacity(idx.len() * f);
        for &i in idx.iter() {
            data.extend_from_slice(a.row(i));
        }
        let out = Tensor::from_parts(vec![idx.len(), f], data);
        Ok(self.unary(out, Op::Gather(self.id, Rc::clone(idx))))
    }

    /// Sums rows into `n_segments` buckets given by `seg`.
    pub fn segment_sum(self, seg: &Indices, n_segments: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (rows, f) = a.require_matrix("segment_sum")?;
        check_segments(seg, rows, n_segments, "segment_sum")?;
        let data = segment_accumulate(&a, seg, n_segments);
        let out = Tensor::from_parts(vec![n_segments, f], data);
        Ok(self.unary(out, Op::SegmentSum(self.id, Rc::clone(seg))))
    }

    /// Row means per segment; empty segments yield zero rows.
    pub fn segment_mean(self, seg: &Indices, n_segments: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (rows, f) = a.require_matrix("segment_mean")?;
        check_segments(seg, rows, n_segments, "segment_mean")?;
        let mut counts = vec![0usize; n_segments];
        for &s in seg.iter() {
            counts[s] += 1;
        }
        let inv: Rc<[f64]> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();
        let mut data = segment_accumulate(&a, seg, n_segments);
        if f > 0 {
            for (row, s) in data.chunks_mut(f).zip(inv.iter()) {
                row.iter_mut().for_each(|x| *x *= s);
            }
        }
        let out = Tensor::from_parts(vec![n_segments, f], data);
        Ok(self.unary(out, Op::SegmentMean(self.id, Rc::clone(seg), inv)))
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(self, seg: &Indices, n_segments: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (rows, f) = a.require_matrix("segment_softmax")?;
        check_segments(seg, rows, n_segments, "segment_softmax")?;
        let mut max = vec![f64::NEG_INFINITY; n_segments * f];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..f {
                let m = &mut max[s * f + c];
                *m = m.max(a.data()[r * f + c]);
            }
        }
        let mut data = vec![0.0; rows * f];
        let mut denom = vec![0.0; n_segments * f];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..f {
                let e = (a.data()[r * f + c] - max[s * f + c]).exp();
                data[r * f + c] = e;
                denom[s * f + c] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..f {
                data[r * f + c] /= denom[s * f + c];
            }
        }
        let out = Tensor::from_parts(vec![rows, f], data);
        Ok(self.unary(out, Op::SegmentSoftmax(self.id, Rc::clone(seg))))
    }

    pub fn sum(self) -> Var<'t> {
        let total = self.value().data().iter().sum();
        self.unary(Tensor::scalar(total), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let total: f64 = a.data().iter().sum();
        self.unary(Tensor::scalar(total / a.len() as f64), Op::Mean(self.id))
    }

    /// Mean negative log-likelihood of `labels` under a row-wise softmax of
    /// the `n x c` logits, stabilized by subtracting each row's maximum.
    pub fn softmax_cross_entropy(self, labels: &Indices) -> Result<Var<'t>> {
        let a = self.value();
        let (n, c) = a.require_matrix("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {} labels for {n} rows",
                labels.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyData(
                "softmax_cross_entropy on zero rows".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::BadIndex(format!(
                "softmax_cross_entropy: label {bad} >= {c} classes"
            )));
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = a.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            total += log_z - row[y];
            for (p, x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
        }
        let out = Tensor::scalar(total / n as f64);
        Ok(self.unary(
            out,
            Op::SoftmaxCrossEntropy(self.id, Rc::clone(labels), probs),
        ))
    }
}

fn segment_accumulate(a: &Tensor, seg: &[usize], n_segments: usize) -> Vec<f64> {
    let f = a.cols();
    let mut data = vec![0.0; n_segments * f];
    for (r, &s) in seg.iter().enumerate() {
        for (o, v) in data[s * f..(s + 1) * f].iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    data
}

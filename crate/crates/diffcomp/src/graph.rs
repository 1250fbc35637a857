//! Batched reverse-mode tape.
//!
//! Every node holds a matrix whose rows are independent samples. Parameter
//! leaves are read straight from the borrowed [`ParamBundle`]; `backward`
//! returns a bundle of gradients with the same names and order.

use crate::error::{Error, Result};
use crate::kernels;
use crate::layers::Activation;
use crate::params::ParamBundle;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Act(NodeId, Activation),
    Square(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Sum(NodeId),
    Mean(NodeId),
    /// Rows of the input grouped by `offsets`; `argmax[g * cols + c]` is the
    /// winning input row (or `usize::MAX` for an empty group).
    MaxPoolGroups { x: NodeId, argmax: Vec<usize> },
    MeanPoolGroups { x: NodeId, offsets: Vec<usize> },
    GatherRows(NodeId, Vec<usize>),
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

struct Node {
    op: Op,
    value: Value,
}

pub struct Graph<'p> {
    params: &'p ParamBundle,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamBundle) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamBundle {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => self.params.tensor(*i),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value: Value::Owned(value) });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    /// Leaf bound to parameter `idx` of the bundle. Repeated calls share a node.
    pub fn param(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        self.nodes.push(Node { op: Op::Leaf, value: Value::Param(idx) });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[idx] = Some(id);
        id
    }

    /// `x W^T + b` with `W` shaped (out, in) and `b` of length `out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (rows, in_dim) = self.value(x).expect_matrix("linear input")?;
        let (out_dim, w_in) = self.value(w).expect_matrix("linear weight")?;
        if w_in != in_dim {
            return Err(Error::Shape(format!("linear: input width {in_dim}, weight expects {w_in}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != out_dim {
                return Err(Error::Shape(format!(
                    "linear: bias has {} entries, expected {out_dim}",
                    self.value(b).len()
                )));
            }
        }
        let mut out = vec![0.0; rows * out_dim];
        kernels::linear_forward(
            self.value(x).data(),
            rows,
            self.value(w).data(),
            out_dim,
            in_dim,
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let t = Tensor::matrix(rows, out_dim, out)?;
        Ok(self.push(Op::Linear { x, w, b }, t))
    }

    fn zip_with(&self, a: NodeId, b: NodeId, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect()).unwrap()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = self.map(a, |x| c * x);
        self.push(Op::Scale(a, c), t)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = self.map(a, |x| x + c);
        self.push(Op::AddScalar(a), t)
    }

    pub fn activation(&mut self, a: NodeId, act: Activation) -> NodeId {
        let t = self.map(a, |x| act.apply(x));
        self.push(Op::Act(a, act), t)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Tanh)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let t = self.map(a, |x| x * x);
        self.push(Op::Square(a), t)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let rows = self.value(*first).expect_matrix("concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).expect_matrix("concat")?;
            if r != rows {
                return Err(Error::Shape(format!("concat: {r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::matrix(rows, total, out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), t))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.value(a).expect_matrix("slice_cols")?;
        if start > end || end > cols {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {cols}")));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&src.row(r)[start..end]);
        }
        let t = Tensor::matrix(rows, end - start, out)?;
        Ok(self.push(Op::SliceCols(a, start), t))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.value(a).expect_matrix("slice_rows")?;
        if start > end || end > rows {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {rows}")));
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        let t = Tensor::matrix(end - start, cols, data)?;
        Ok(self.push(Op::SliceRows(a, start), t))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Mean over all elements; an empty input yields 0.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let m = if t.is_empty() { 0.0 } else { t.data().iter().sum::<f64>() / t.len() as f64 };
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    fn check_offsets(&self, a: NodeId, offsets: &[usize]) -> Result<(usize, usize)> {
        let (rows, cols) = self.value(a).expect_matrix("pool")?;
        let ok = offsets.first() == Some(&0)
            && offsets.last() == Some(&rows)
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(Error::Shape(format!("pool offsets {offsets:?} do not partition {rows} rows")));
        }
        Ok((rows, cols))
    }

    /// Elementwise max over each row group `offsets[g]..offsets[g+1]`.
    /// Empty groups produce zeros.
    pub fn max_pool_groups(&mut self, a: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let (_, cols) = self.check_offsets(a, offsets)?;
        let groups = offsets.len() - 1;
        let src = self.value(a);
        let mut out = vec![0.0; groups * cols];
        let mut argmax = vec![usize::MAX; groups * cols];
        for g in 0..groups {
            for r in offsets[g]..offsets[g + 1] {
                let row = src.row(r);
                for c in 0..cols {
                    let k = g * cols + c;
                    if argmax[k] == usize::MAX || row[c] > out[k] {
                        out[k] = row[c];
                        argmax[k] = r;
                    }
                }
            }
        }
        let t = Tensor::matrix(groups, cols, out)?;
        Ok(self.push(Op::MaxPoolGroups { x: a, argmax }, t))
    }

    /// Mean over each row group; empty groups produce zeros.
    pub fn mean_pool_groups(&mut self, a: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let (_, cols) = self.check_offsets(a, offsets)?;
        let groups = offsets.len() - 1;
        let src = self.value(a);
        let mut out = vec![0.0; groups * cols];
        for g in 0..groups {
            let n = offsets[g + 1] - offsets[g];
            if n == 0 {
                continue;
            }
            let dst = &mut out[g * cols..(g + 1) * cols];
            for r in offsets[g]..offsets[g + 1] {
                kernels::axpy(1.0 / n as f64, src.row(r), dst);
            }
        }
        let t = Tensor::matrix(groups, cols, out)?;
        Ok(self.push(Op::MeanPoolGroups { x: a, offsets: offsets.to_vec() }, t))
    }

    /// Output row `i` is input row `indices[i]`.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.value(a).expect_matrix("gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("gather_rows index {bad} of {rows}")));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(src.row(i));
        }
        let t = Tensor::matrix(indices.len(), cols, out)?;
        Ok(self.push(Op::GatherRows(a, indices.to_vec()), t))
    }

    /// Reverse sweep from a 1x1 `loss`. Parameters the loss does not touch get
    /// zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<ParamBundle> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (rows, in_dim) = (xv.rows(), xv.cols());
                    let out_dim = wv.rows();
                    let mut dx = self.wants(*x).then(|| vec![0.0; xv.len()]);
                    let mut dw = self.wants(*w).then(|| vec![0.0; wv.len()]);
                    let mut db = b.filter(|b| self.wants(*b)).map(|_| vec![0.0; out_dim]);
                    kernels::linear_backward(
                        xv.data(),
                        rows,
                        wv.data(),
                        out_dim,
                        in_dim,
                        &g,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, *w, dw);
                    }
                    if let (Some(db), Some(b)) = (db, b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| c * v).collect());
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Act(a, act) => {
                    let y = self.value(NodeId(id)).data();
                    let ga = g.iter().zip(y).map(|(g, &y)| g * act.derivative_from_output(y)).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let x = self.value(*a).data();
                    accumulate(&mut grads, *a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
                }
                Op::ConcatCols(parts) => {
                    let rows = self.value(NodeId(id)).rows();
                    let total = self.value(NodeId(id)).cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut grads, p, gp);
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let (rows, cols) = (src.rows(), src.cols());
                    let w = self.value(NodeId(id)).cols();
                    let mut ga = vec![0.0; rows * cols];
                    for r in 0..rows {
                        ga[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let cols = src.cols();
                    let mut ga = vec![0.0; src.len()];
                    ga[start * cols..start * cols + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    if n > 0 {
                        accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                    }
                }
                Op::MaxPoolGroups { x, argmax } => {
                    let src = self.value(*x);
                    let cols = src.cols();
                    let mut ga = vec![0.0; src.len()];
                    for (k, &r) in argmax.iter().enumerate() {
                        if r != usize::MAX {
                            ga[r * cols + k % cols] += g[k];
                        }
                    }
                    accumulate(&mut grads, *x, ga);
                }
                Op::MeanPoolGroups { x, offsets } => {
                    let src = self.value(*x);
                    let cols = src.cols();
                    let mut ga = vec![0.0; src.len()];
                    for gi in 0..offsets.len() - 1 {
                        let n = offsets[gi + 1] - offsets[gi];
                        for r in offsets[gi]..offsets[gi + 1] {
                            kernels::axpy(
                                1.0 / n as f64,
                                &g[gi * cols..(gi + 1) * cols],
                                &mut ga[r * cols..(r + 1) * cols],
                            );
                        }
                    }
                    accumulate(&mut grads, *x, ga);
                }
                Op::GatherRows(a, indices) => {
                    let src = self.value(*a);
                    let cols = src.cols();
                    let mut ga = vec![0.0; src.len()];
                    for (i, &r) in indices.iter().enumerate() {
                        kernels::axpy(1.0, &g[i * cols..(i + 1) * cols], &mut ga[r * cols..(r + 1) * cols]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }

        let mut out = self.params.zeros_like();
        for (idx, node) in self.param_nodes.iter().enumerate() {
            if let Some(NodeId(n)) = node {
                if let Some(Some(g)) = grads.get(*n) {
                    out.tensor_mut(idx).data_mut().copy_from_slice(g);
                }
            }
        }
        Ok(out)
    }

    /// Whether gradient flow into `id` is needed: parameters and anything
    /// computed from them.
    fn wants(&self, id: NodeId) -> bool {
        match (&self.nodes[id.0].op, &self.nodes[id.0].value) {
            (Op::Leaf, Value::Param(_)) => true,
            (Op::Leaf, Value::Owned(_)) => false,
            _ => true,
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(acc) => kernels::axpy(1.0, &g, acc),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(entries: &[(&str, Tensor)]) -> ParamBundle {
        let mut b = ParamBundle::new();
        for (n, t) in entries {
            b.push(*n, t.clone()).unwrap();
        }
        b
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        // loss = sum(W v + b): dL/dW[i, :] = v for every row i.
        let params = bundle(&[
            ("w", Tensor::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap()),
            ("b", Tensor::new(vec![3], vec![0.0; 3]).unwrap()),
        ]);
        let mut g = Graph::new(&params);
        let v = g.input(Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap());
        let (w, b) = (g.param(0), g.param(1));
        let y = g.linear(v, w, Some(b)).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        for i in 0..3 {
            assert_eq!(grads.tensor(0).row(i), &[1.5, -2.0]);
        }
        assert_eq!(grads.tensor(1).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let params = bundle(&[("w", Tensor::full(&[2, 2], 0.7))]);
        let mut g = Graph::new(&params);
        let w = g.param(0);
        let c = g.input(Tensor::scalar(0.0));
        let _unused = g.square(w);
        let loss = g.sum(c);
        let grads = g.backward(loss).unwrap();
        assert!(grads.tensor(0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let params = ParamBundle::new();
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let params = bundle(&[("x", Tensor::matrix(3, 2, vec![1.0, 5.0, 3.0, 2.0, -1.0, 0.0]).unwrap())]);
        let mut g = Graph::new(&params);
        let x = g.param(0);
        let p = g.max_pool_groups(x, &[0, 2, 2, 3]).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 5.0, 0.0, 0.0, -1.0, 0.0]);
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.tensor(0).data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn bad_pool_offsets_rejected() {
        let params = ParamBundle::new();
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::zeros(&[3, 1]));
        assert!(g.mean_pool_groups(x, &[0, 2]).is_err());
        assert!(g.max_pool_groups(x, &[1, 3]).is_err());
    }
}

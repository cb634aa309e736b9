//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its output value and enough state
//! to run its backward rule. Nodes only ever reference earlier nodes, so the
//! tape is topologically ordered by construction and [`Tape::backward`] is a
//! single reverse sweep. Gradient contributions are summed in that fixed
//! order, which makes results bit-reproducible.
//!
//! ```
//! use gcec::tape::Tape;
//! use gcec::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let w = tape.param(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
//! let x = tape.constant(Tensor::from_rows(&[[1.0, 1.0], [1.0, 1.0]]));
//! let y = tape.matmul(w, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap(), &[2.0, 2.0, 2.0, 2.0]);
//! ```

use std::sync::Arc;

use crate::error::TensorError;
use crate::sparse::{spmm_kernel, CsrPattern, NormalizationLayout, SparseMatrix};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Scalar, Shape, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    GatherRows { src: Var, index: Arc<[usize]> },
    ConcatCols(Var, Var),
    /// `argmax[s * cols + f]` is the source row that won, `usize::MAX` for an
    /// empty segment.
    SegmentMax { src: Var, argmax: Vec<usize> },
    SegmentMean { src: Var, offsets: Arc<[usize]> },
    NormalizeEdges { weights: Var, layout: Arc<NormalizationLayout>, degrees: Vec<T> },
    Spmm { pattern: Arc<CsrPattern>, values: Var, x: Var },
    Reshape(Var),
    Sum(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Single-writer recording of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: Shape, right: Shape) -> TensorError {
    TensorError::DimensionMismatch { op, left, right }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn matrix(&self, op: &'static str, v: Var, other: Var) -> Result<(usize, usize), TensorError> {
        self.shape(v)
            .as_matrix()
            .ok_or_else(|| mismatch(op, self.shape(v), self.shape(other)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix("matmul", a, b)?;
        let (k2, n) = self.matrix("matmul", b, a)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(Shape::Matrix(m, n), out)?, rg, Op::MatMul(a, b)))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (_, n) = self.matrix("add_bias", a, bias)?;
        if self.shape(bias) != Shape::Vector(n) {
            return Err(mismatch("add_bias", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        if n > 0 {
            for row in out.chunks_exact_mut(n) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        let shape = self.shape(a);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::AddBias(a, bias)))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let out = Tensor::new(self.shape(a), data).expect("same length");
        let rg = self.rg(a);
        self.push(out, rg, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let out = Tensor::new(self.shape(a), data).expect("same length");
        let rg = self.rg(a);
        self.push(out, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let out = Tensor::new(self.shape(a), data).expect("same length");
        let rg = self.rg(a);
        self.push(out, rg, Op::Sigmoid(a))
    }

    /// Output row `r` is row `index[r]` of `src`.
    pub fn gather_rows(&mut self, src: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let (rows, cols) = self.matrix("gather_rows", src, src)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange { index: bad, len: rows });
        }
        let s = self.value(src).data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            out.extend_from_slice(&s[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(src);
        let t = Tensor::new(Shape::Matrix(index.len(), cols), out)?;
        Ok(self.push(t, rg, Op::GatherRows { src, index }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, ca) = self.matrix("concat_cols", a, b)?;
        let (m2, cb) = self.matrix("concat_cols", b, a)?;
        if m != m2 {
            return Err(mismatch("concat_cols", self.shape(a), self.shape(b)));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        let t = Tensor::new(Shape::Matrix(m, ca + cb), out)?;
        Ok(self.push(t, rg, Op::ConcatCols(a, b)))
    }

    fn check_offsets(&self, op: &'static str, src: Var, offsets: &[usize]) -> Result<(usize, usize), TensorError> {
        let (rows, cols) = self.matrix(op, src, src)?;
        let bad = offsets.is_empty()
            || offsets[0] != 0
            || offsets.windows(2).any(|w| w[0] > w[1])
            || *offsets.last().unwrap() != rows;
        if bad {
            return Err(mismatch(op, self.shape(src), Shape::Vector(offsets.len())));
        }
        Ok((offsets.len() - 1, cols))
    }

    /// Column-wise max over consecutive row segments `offsets[s]..offsets[s+1]`.
    /// Empty segments produce zeros; ties go to the earliest row.
    pub fn segment_max(&mut self, src: Var, offsets: &[usize]) -> Result<Var, TensorError> {
        let (segments, cols) = self.check_offsets("segment_max", src, offsets)?;
        let s = self.value(src).data();
        let mut out = vec![T::zero(); segments * cols];
        let mut argmax = vec![usize::MAX; segments * cols];
        for seg in 0..segments {
            let (lo, hi) = (offsets[seg], offsets[seg + 1]);
            if lo == hi {
                continue;
            }
            let o = &mut out[seg * cols..(seg + 1) * cols];
            let am = &mut argmax[seg * cols..(seg + 1) * cols];
            o.copy_from_slice(&s[lo * cols..(lo + 1) * cols]);
            am.fill(lo);
            for r in lo + 1..hi {
                for (f, &v) in s[r * cols..(r + 1) * cols].iter().enumerate() {
                    if v > o[f] {
                        o[f] = v;
                        am[f] = r;
                    }
                }
            }
        }
        let rg = self.rg(src);
        let t = Tensor::new(Shape::Matrix(segments, cols), out)?;
        Ok(self.push(t, rg, Op::SegmentMax { src, argmax }))
    }

    /// Column-wise mean over row segments. Empty segments produce zeros.
    pub fn segment_mean(&mut self, src: Var, offsets: Arc<[usize]>) -> Result<Var, TensorError> {
        let (segments, cols) = self.check_offsets("segment_mean", src, &offsets)?;
        let s = self.value(src).data();
        let mut out = vec![T::zero(); segments * cols];
        for seg in 0..segments {
            let (lo, hi) = (offsets[seg], offsets[seg + 1]);
            if lo == hi {
                continue;
            }
            let o = &mut out[seg * cols..(seg + 1) * cols];
            for r in lo..hi {
                for (ov, &v) in o.iter_mut().zip(&s[r * cols..(r + 1) * cols]) {
                    *ov += v;
                }
            }
            let inv = T::from_f64(1.0 / (hi - lo) as f64);
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let rg = self.rg(src);
        let t = Tensor::new(Shape::Matrix(segments, cols), out)?;
        Ok(self.push(t, rg, Op::SegmentMean { src, offsets }))
    }

    /// Nonzero values of `D̃^{-1/2}(A_w + I)D̃^{-1/2}` from per-edge weights.
    pub fn normalize_edges(&mut self, weights: Var, layout: &Arc<NormalizationLayout>) -> Result<Var, TensorError> {
        if self.value(weights).len() != layout.n_edges() {
            return Err(mismatch(
                "normalize_edges",
                self.shape(weights),
                Shape::Vector(layout.n_edges()),
            ));
        }
        let w = self.value(weights).data();
        let degrees = layout.degrees(Some(w));
        let values = layout.values(Some(w), &degrees);
        let rg = self.rg(weights);
        let t = Tensor::vector(values);
        Ok(self.push(
            t,
            rg,
            Op::NormalizeEdges {
                weights,
                layout: Arc::clone(layout),
                degrees,
            },
        ))
    }

    /// Sparse × dense product with the sparse values taken from a tape tensor.
    pub fn spmm(&mut self, pattern: &Arc<CsrPattern>, values: Var, x: Var) -> Result<Var, TensorError> {
        let s_shape = Shape::Matrix(pattern.rows(), pattern.cols());
        let (xr, f) = self.shape(x).as_matrix().ok_or_else(|| mismatch("spmm", s_shape, self.shape(x)))?;
        if xr != pattern.cols() {
            return Err(mismatch("spmm", s_shape, self.shape(x)));
        }
        if self.value(values).len() != pattern.nnz() {
            return Err(mismatch("spmm", Shape::Vector(pattern.nnz()), self.shape(values)));
        }
        let mut out = vec![T::zero(); pattern.rows() * f];
        spmm_kernel(pattern, self.value(values).data(), self.value(x).data(), f, &mut out);
        let rg = self.rg(values) || self.rg(x);
        let t = Tensor::new(Shape::Matrix(pattern.rows(), f), out)?;
        Ok(self.push(
            t,
            rg,
            Op::Spmm {
                pattern: Arc::clone(pattern),
                values,
                x,
            },
        ))
    }

    /// [`Tape::spmm`] against a fixed matrix.
    pub fn spmm_const(&mut self, s: &SparseMatrix<T>, x: Var) -> Result<Var, TensorError> {
        let values = self.constant(Tensor::vector(s.values().to_vec()));
        self.spmm(s.pattern(), values, x)
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::Reshape(a)))
    }

    /// Sum of all elements, as a length-1 vector.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::vector(vec![total]), rg, Op::Sum(a))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let (b, c) = self.matrix("softmax_cross_entropy", logits, logits)?;
        if labels.len() != b {
            return Err(mismatch("softmax_cross_entropy", self.shape(logits), Shape::Vector(labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: c });
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); b * c];
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &z[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            total += lse - row[label];
        }
        let loss = total / T::from_f64(b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::vector(vec![loss]),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    ///
    /// Gradients are retained for leaves only. A tape can be swept once;
    /// call [`Tape::reset`] before recording again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::UnknownVar(loss.0));
        }
        if self.shape(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss)));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }

        let nodes = &self.nodes;
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(nodes[i].value.shape(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.shape().as_matrix().unwrap();
                let (_, n) = nodes[b.0].value.shape().as_matrix().unwrap();
                if let Some(ga) = slot(nodes, grads, *a) {
                    gemm_nt_acc(m, n, k, g, nodes[b.0].value.data(), ga);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gemm_tn_acc(m, k, n, nodes[a.0].value.data(), g, gb);
                }
            }
            Op::AddBias(a, bias) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, T::one());
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    let n = gb.len();
                    if n > 0 {
                        for row in g.chunks_exact(n) {
                            axpy(gb, row, T::one());
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, T::one());
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    axpy(gb, g, T::one());
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, T::one());
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    axpy(gb, g, -T::one());
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, *c);
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(node.value.data()) {
                        if y > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, &gv), &s) in ga.iter_mut().zip(g).zip(node.value.data()) {
                        *d += gv * s * (T::one() - s);
                    }
                }
            }
            Op::GatherRows { src, index } => {
                if let Some(gs) = slot(nodes, grads, *src) {
                    let cols = node.value.shape().as_matrix().unwrap().1;
                    for (r, &i) in index.iter().enumerate() {
                        axpy(&mut gs[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols], T::one());
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, ca) = nodes[a.0].value.shape().as_matrix().unwrap();
                let cb = nodes[b.0].value.shape().as_matrix().unwrap().1;
                let w = ca + cb;
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..m {
                        axpy(&mut ga[i * ca..(i + 1) * ca], &g[i * w..i * w + ca], T::one());
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for i in 0..m {
                        axpy(&mut gb[i * cb..(i + 1) * cb], &g[i * w + ca..(i + 1) * w], T::one());
                    }
                }
            }
            Op::SegmentMax { src, argmax } => {
                if let Some(gs) = slot(nodes, grads, *src) {
                    let cols = node.value.shape().as_matrix().unwrap().1;
                    for (k, (&r, &gv)) in argmax.iter().zip(g).enumerate() {
                        if r != usize::MAX {
                            gs[r * cols + k % cols] += gv;
                        }
                    }
                }
            }
            Op::SegmentMean { src, offsets } => {
                if let Some(gs) = slot(nodes, grads, *src) {
                    let cols = node.value.shape().as_matrix().unwrap().1;
                    for seg in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[seg], offsets[seg + 1]);
                        if lo == hi {
                            continue;
                        }
                        let inv = T::from_f64(1.0 / (hi - lo) as f64);
                        let gseg = &g[seg * cols..(seg + 1) * cols];
                        for r in lo..hi {
                            axpy(&mut gs[r * cols..(r + 1) * cols], gseg, inv);
                        }
                    }
                }
            }
            Op::NormalizeEdges { weights, layout, degrees } => {
                if let Some(gw) = slot(nodes, grads, *weights) {
                    layout.backward(degrees, node.value.data(), g, gw);
                }
            }
            Op::Spmm { pattern, values, x } => {
                let f = node.value.shape().as_matrix().unwrap().1;
                let vals = nodes[values.0].value.data();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for i in 0..pattern.rows() {
                        let gi = &g[i * f..(i + 1) * f];
                        for k in pattern.row_range(i) {
                            let j = pattern.col_indices()[k];
                            axpy(&mut gx[j * f..(j + 1) * f], gi, vals[k]);
                        }
                    }
                }
                if let Some(gv) = slot(nodes, grads, *values) {
                    let xd = nodes[x.0].value.data();
                    for i in 0..pattern.rows() {
                        let gi = &g[i * f..(i + 1) * f];
                        for k in pattern.row_range(i) {
                            let j = pattern.col_indices()[k];
                            gv[k] += dot(gi, &xd[j * f..(j + 1) * f]);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, g, T::one());
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let gv = g[0];
                    ga.iter_mut().for_each(|d| *d += gv);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let c = probs.len() / labels.len();
                    let scale = g[0] / T::from_f64(labels.len() as f64);
                    for (r, &label) in labels.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == label { T::one() } else { T::zero() };
                            gl[r * c + k] += scale * (probs[r * c + k] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Gradient buffer for `v`, created on first use; `None` when `v` is
/// not differentiable.
fn slot<'g, T: Scalar>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], x: &[T], a: T) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-shifted `ln Σ exp(row)`.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Row-wise softmax of a `b×c` score matrix.
pub fn softmax_rows<T: Scalar>(logits: &[T], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(c) {
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    out
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`; `None` when `v` is unreachable from the loss or does
    /// not require a gradient.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_ref()).map(|t| t.data())
    }

    pub fn tensor(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `len` elements when none flowed.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}

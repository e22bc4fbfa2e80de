use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use super::{ParamId, ParamStore, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutodiffError {
    #[error("backward from a non-scalar tensor of shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("tensor does not belong to this tape")]
    ForeignTensor,
}

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Stack vertically / reduce over rows.
    Rows,
    /// Stack horizontally / reduce over columns.
    Cols,
}

/// Boolean keep-mask with the same shape as the tensor it applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Mask {
        assert_eq!(keep.len(), rows * cols, "mask length does not match {rows}x{cols}");
        Mask { rows, cols, keep }
    }

    pub fn all(rows: usize, cols: usize) -> Mask {
        Mask::new(rows, cols, vec![true; rows * cols])
    }

    /// Lower-triangular mask: row `i` keeps columns `0..=i`.
    pub fn causal(n: usize) -> Mask {
        Mask::new(n, n, (0..n * n).map(|k| k % n <= k / n).collect())
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn keep(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, keep: bool) {
        self.keep[r * self.cols + c] = keep;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }
}

/// One weighted term `-weight * log p[row][class]` of a cross-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub row: usize,
    pub class: usize,
    pub weight: f64,
}

impl Target {
    pub fn new(row: usize, class: usize) -> Target {
        Target { row, class, weight: 1.0 }
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    OuterSum(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>, Axis),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Transpose(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Elu(usize),
    Softmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather(usize, Vec<usize>),
    GatherEntries(usize, Vec<Option<usize>>),
    Mean(usize, Axis),
    Sum(usize),
    CrossEntropy { logits: usize, targets: Vec<Target>, probs: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording tape. Every op appends a node; [`Graph::backward`] walks the
/// nodes in reverse.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Grads {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` does not
    /// influence the loss or does not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[track_caller]
    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "tensor does not belong to this tape");
        v.index
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, &[]);
        self.nodes[v.index].requires_grad = true;
        v
    }

    /// Binds a parameter, reusing the node if it is already on this tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var { tape: self.id, index: i };
        }
        let v = self.variable(store.value(id).clone());
        self.params.insert(id, v.index);
        v
    }

    /// Gradients of bound parameters, in parameter-id order.
    pub fn param_grads<'a>(&self, grads: &'a Grads) -> Vec<(ParamId, &'a Tensor)> {
        let mut out: Vec<(ParamId, &Tensor)> =
            self.params.iter().filter_map(|(&p, &i)| grads.grads[i].as_ref().map(|g| (p, g))).collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }

    #[track_caller]
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.matmul(&self.nodes[ib].value);
        self.push(v, Op::MatMul(ia, ib), &[ia, ib])
    }

    /// `a · bᵀ`.
    #[track_caller]
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.matmul_nt(&self.nodes[ib].value);
        self.push(v, Op::MatMulNt(ia, ib), &[ia, ib])
    }

    #[track_caller]
    fn zip(&self, ia: usize, ib: usize, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (a, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(a.shape(), b.shape(), "{what} shape mismatch");
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.rows(), a.cols(), data)
    }

    #[track_caller]
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.zip(ia, ib, "add", |x, y| x + y);
        self.push(v, Op::Add(ia, ib), &[ia, ib])
    }

    /// Elementwise product.
    #[track_caller]
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.zip(ia, ib, "mul", |x, y| x * y);
        self.push(v, Op::Mul(ia, ib), &[ia, ib])
    }

    /// `a (r x c) + row (1 x c)`, broadcast over rows.
    #[track_caller]
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(row));
        let (x, r) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(r.shape(), [1, x.cols()], "add_row shape mismatch: {:?} + {:?}", x.shape(), r.shape());
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_slice_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(ia, ib), &[ia, ib])
    }

    /// `a (r x c) + col (r x 1)`, broadcast over columns.
    #[track_caller]
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(col));
        let (x, c) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(c.shape(), [x.rows(), 1], "add_col shape mismatch: {:?} + {:?}", x.shape(), c.shape());
        let mut v = x.clone();
        for i in 0..v.rows() {
            let b = c.data()[i];
            v.row_slice_mut(i).iter_mut().for_each(|o| *o += b);
        }
        self.push(v, Op::AddCol(ia, ib), &[ia, ib])
    }

    /// `out[i][j] = s[i] + t[j]` for column vectors `s (n x 1)`, `t (m x 1)`.
    #[track_caller]
    pub fn outer_sum(&mut self, s: Var, t: Var) -> Var {
        let (ia, ib) = (self.idx(s), self.idx(t));
        let (a, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert!(a.cols() == 1 && b.cols() == 1, "outer_sum expects column vectors");
        let mut data = Vec::with_capacity(a.rows() * b.rows());
        for &x in a.data() {
            data.extend(b.data().iter().map(|y| x + y));
        }
        let v = Tensor::new(a.rows(), b.rows(), data);
        self.push(v, Op::OuterSum(ia, ib), &[ia, ib])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(|x| x * s);
        self.push(v, Op::Scale(ia, s), &[ia])
    }

    #[track_caller]
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let vals: Vec<&Tensor> = ids.iter().map(|&i| &self.nodes[i].value).collect();
        let v = match axis {
            Axis::Rows => {
                let cols = vals[0].cols();
                assert!(vals.iter().all(|t| t.cols() == cols), "concat shape mismatch");
                let mut data = Vec::new();
                vals.iter().for_each(|t| data.extend_from_slice(t.data()));
                Tensor::new(data.len() / cols.max(1), cols, data)
            }
            Axis::Cols => {
                let rows = vals[0].rows();
                assert!(vals.iter().all(|t| t.rows() == rows), "concat shape mismatch");
                let cols: usize = vals.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    vals.iter().for_each(|t| data.extend_from_slice(t.row_slice(r)));
                }
                Tensor::new(rows, cols, data)
            }
        };
        self.push(v, Op::Concat(ids.clone(), axis), &ids)
    }

    /// Rows `start..start + len`.
    #[track_caller]
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        assert!(start + len <= x.rows(), "slice_rows out of range");
        let v = Tensor::new(len, x.cols(), x.data()[start * x.cols()..(start + len) * x.cols()].to_vec());
        self.push(v, Op::SliceRows(ia, start), &[ia])
    }

    /// Columns `start..start + len`.
    #[track_caller]
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..start + len]);
        }
        let v = Tensor::new(x.rows(), len, data);
        self.push(v, Op::SliceCols(ia, start), &[ia])
    }

    /// Splits into consecutive pieces of the given sizes along `axis`.
    pub fn split(&mut self, a: Var, sizes: &[usize], axis: Axis) -> Vec<Var> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let v = match axis {
                    Axis::Rows => self.slice_rows(a, start, n),
                    Axis::Cols => self.slice_cols(a, start, n),
                };
                start += n;
                v
            })
            .collect()
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.transpose();
        self.push(v, Op::Transpose(ia), &[ia])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(|x| x.max(0.0));
        self.push(v, Op::Relu(ia), &[ia])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(ia, slope), &[ia])
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(v, Op::Elu(ia), &[ia])
    }

    /// Row-wise softmax. Masked-out entries get probability exactly 0.
    ///
    /// # Panics
    /// On a shape mismatch with `mask` or when a row is fully masked.
    #[track_caller]
    pub fn softmax_masked(&mut self, a: Var, mask: Option<&Mask>) -> Var {
        let ia = self.idx(a);
        let v = softmax_rows(&self.nodes[ia].value, mask);
        self.push(v, Op::Softmax(ia), &[ia])
    }

    /// Row-wise layer normalization with `gain` and `bias` of shape `1 x c`.
    #[track_caller]
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (ix, ig, ib) = (self.idx(x), self.idx(gain), self.idx(bias));
        let (t, g, b) = (&self.nodes[ix].value, &self.nodes[ig].value, &self.nodes[ib].value);
        let c = t.cols();
        assert!(g.shape() == [1, c] && b.shape() == [1, c], "layer_norm shape mismatch");
        let mut out = Tensor::zeros(t.rows(), c);
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let o = out.row_slice_mut(r);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat.push(h);
                o[j] = h * g.data()[j] + b.data()[j];
            }
        }
        self.push(out, Op::LayerNorm { x: ix, gain: ig, bias: ib, xhat, inv_std }, &[ix, ig, ib])
    }

    /// Rows of `table` selected by `ids`.
    #[track_caller]
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let it = self.idx(table);
        let t = &self.nodes[it].value;
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            assert!(i < t.rows(), "gather index {i} out of range for {} rows", t.rows());
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(ids.len(), t.cols(), data);
        self.push(v, Op::Gather(it, ids.to_vec()), &[it])
    }

    /// `rows x cols` tensor whose entry `k` is `table[index[k]]` (a `1 x n`
    /// table), or 0 where the index is `None`.
    #[track_caller]
    pub fn gather_entries(&mut self, table: Var, index: &[Option<usize>], rows: usize, cols: usize) -> Var {
        let it = self.idx(table);
        let t = &self.nodes[it].value;
        assert_eq!(t.rows(), 1, "gather_entries expects a 1 x n table");
        assert_eq!(index.len(), rows * cols, "gather_entries index length mismatch");
        let data = index
            .iter()
            .map(|k| match *k {
                Some(k) => {
                    assert!(k < t.cols(), "gather index {k} out of range for {} entries", t.cols());
                    t.data()[k]
                }
                None => 0.0,
            })
            .collect();
        self.push(Tensor::new(rows, cols, data), Op::GatherEntries(it, index.to_vec()), &[it])
    }

    /// Mean over rows (`Axis::Rows`, giving `1 x c`) or columns (`r x 1`).
    #[track_caller]
    pub fn mean_pool(&mut self, a: Var, axis: Axis) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        assert!(!x.is_empty(), "mean_pool over an empty tensor");
        let v = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; x.cols()];
                for r in 0..x.rows() {
                    out.iter_mut().zip(x.row_slice(r)).for_each(|(o, v)| *o += v);
                }
                let n = x.rows() as f64;
                Tensor::new(1, x.cols(), out.into_iter().map(|s| s / n).collect())
            }
            Axis::Cols => {
                let n = x.cols() as f64;
                Tensor::new(x.rows(), 1, (0..x.rows()).map(|r| x.row_slice(r).iter().sum::<f64>() / n).collect())
            }
        };
        self.push(v, Op::Mean(ia, axis), &[ia])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = Tensor::scalar(self.nodes[ia].value.sum());
        self.push(v, Op::Sum(ia), &[ia])
    }

    /// `sum_k -w_k log softmax(logits[row_k])[class_k]`, with the softmax
    /// restricted to `mask` when given.
    ///
    /// # Panics
    /// When a target is out of range or masked out, or a row is fully masked.
    #[track_caller]
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Target], mask: Option<&Mask>) -> Var {
        let il = self.idx(logits);
        let x = &self.nodes[il].value;
        let probs = softmax_rows(x, mask);
        let mut loss = 0.0;
        for t in targets {
            assert!(t.row < x.rows() && t.class < x.cols(), "cross_entropy target out of range");
            assert!(
                mask.is_none_or(|m| m.keep(t.row, t.class)),
                "cross_entropy target {} in row {} is masked out",
                t.class,
                t.row
            );
            let keep = mask.map(|m| &m.as_slice()[t.row * x.cols()..(t.row + 1) * x.cols()]);
            loss -= t.weight * log_softmax(x.row_slice(t.row), keep)[t.class];
        }
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits: il, targets: targets.to_vec(), probs }, &[il])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads, AutodiffError> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignTensor);
        }
        let shape = self.nodes[loss.index].value.shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.index).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Grads { tape: self.id, grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        if !self.nodes[i].requires_grad {
            return;
        }
        match &mut grads[i] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |i: usize| &self.nodes[i].value;
        let need = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if need(a) {
                    self.acc(grads, a, dy.matmul_nt(val(b)));
                }
                if need(b) {
                    self.acc(grads, b, val(a).matmul_tn(dy));
                }
            }
            &Op::MatMulNt(a, b) => {
                if need(a) {
                    self.acc(grads, a, dy.matmul(val(b)));
                }
                if need(b) {
                    self.acc(grads, b, dy.matmul_tn(val(a)));
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, dy.clone());
                self.acc(grads, b, dy.clone());
            }
            &Op::Mul(a, b) => {
                if need(a) {
                    self.acc(grads, a, hadamard(dy, val(b)));
                }
                if need(b) {
                    self.acc(grads, b, hadamard(dy, val(a)));
                }
            }
            &Op::AddRow(a, r) => {
                self.acc(grads, a, dy.clone());
                if need(r) {
                    let mut g = Tensor::zeros(1, dy.cols());
                    for i in 0..dy.rows() {
                        g.data_mut().iter_mut().zip(dy.row_slice(i)).for_each(|(o, v)| *o += v);
                    }
                    self.acc(grads, r, g);
                }
            }
            &Op::AddCol(a, c) => {
                self.acc(grads, a, dy.clone());
                if need(c) {
                    let g = (0..dy.rows()).map(|i| dy.row_slice(i).iter().sum()).collect();
                    self.acc(grads, c, Tensor::new(dy.rows(), 1, g));
                }
            }
            &Op::OuterSum(s, t) => {
                if need(s) {
                    let g = (0..dy.rows()).map(|i| dy.row_slice(i).iter().sum()).collect();
                    self.acc(grads, s, Tensor::new(dy.rows(), 1, g));
                }
                if need(t) {
                    let mut g = vec![0.0; dy.cols()];
                    for i in 0..dy.rows() {
                        g.iter_mut().zip(dy.row_slice(i)).for_each(|(o, v)| *o += v);
                    }
                    self.acc(grads, t, Tensor::new(dy.cols(), 1, g));
                }
            }
            &Op::Scale(a, s) => self.acc(grads, a, dy.map(|x| x * s)),
            Op::Concat(ids, axis) => {
                let mut offset = 0;
                for &p in ids {
                    let [r, c] = val(p).shape();
                    if need(p) {
                        let g = match axis {
                            Axis::Rows => Tensor::new(r, c, dy.data()[offset * c..(offset + r) * c].to_vec()),
                            Axis::Cols => {
                                let mut data = Vec::with_capacity(r * c);
                                for i in 0..r {
                                    data.extend_from_slice(&dy.row_slice(i)[offset..offset + c]);
                                }
                                Tensor::new(r, c, data)
                            }
                        };
                        self.acc(grads, p, g);
                    }
                    offset += match axis {
                        Axis::Rows => r,
                        Axis::Cols => c,
                    };
                }
            }
            &Op::SliceRows(a, start) => {
                let mut g = Tensor::zeros(val(a).rows(), val(a).cols());
                let c = g.cols();
                g.data_mut()[start * c..start * c + dy.len()].copy_from_slice(dy.data());
                self.acc(grads, a, g);
            }
            &Op::SliceCols(a, start) => {
                let mut g = Tensor::zeros(val(a).rows(), val(a).cols());
                for i in 0..dy.rows() {
                    g.row_slice_mut(i)[start..start + dy.cols()].copy_from_slice(dy.row_slice(i));
                }
                self.acc(grads, a, g);
            }
            &Op::Transpose(a) => self.acc(grads, a, dy.transpose()),
            &Op::Relu(a) => {
                let g = zip_map(dy, val(a), |d, x| if x > 0.0 { d } else { 0.0 });
                self.acc(grads, a, g);
            }
            &Op::LeakyRelu(a, slope) => {
                let g = zip_map(dy, val(a), |d, x| if x > 0.0 { d } else { slope * d });
                self.acc(grads, a, g);
            }
            &Op::Elu(a) => {
                let g = zip_map(dy, val(a), |d, x| if x > 0.0 { d } else { d * x.exp() });
                self.acc(grads, a, g);
            }
            &Op::Softmax(a) => {
                let y = &node.value;
                let mut g = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row_slice(r), dy.row_slice(r));
                    let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                    for (o, (p, d)) in g.row_slice_mut(r).iter_mut().zip(yr.iter().zip(dr)) {
                        *o = p * (d - dot);
                    }
                }
                self.acc(grads, a, g);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let c = dy.cols();
                let gv = val(gain).data();
                if need(x) {
                    let mut g = Tensor::zeros(dy.rows(), c);
                    for r in 0..dy.rows() {
                        let h = &xhat[r * c..(r + 1) * c];
                        let dh: Vec<f64> = dy.row_slice(r).iter().zip(gv).map(|(d, g)| d * g).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / c as f64;
                        for (j, o) in g.row_slice_mut(r).iter_mut().enumerate() {
                            *o = k * (c as f64 * dh[j] - s1 - h[j] * s2);
                        }
                    }
                    self.acc(grads, x, g);
                }
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for r in 0..dy.rows() {
                    for j in 0..c {
                        let d = dy.get(r, j);
                        dg[j] += d * xhat[r * c + j];
                        db[j] += d;
                    }
                }
                self.acc(grads, gain, Tensor::new(1, c, dg));
                self.acc(grads, bias, Tensor::new(1, c, db));
            }
            Op::Gather(t, ids) => {
                let t = *t;
                let mut g = Tensor::zeros(val(t).rows(), val(t).cols());
                for (r, &i) in ids.iter().enumerate() {
                    g.row_slice_mut(i).iter_mut().zip(dy.row_slice(r)).for_each(|(o, v)| *o += v);
                }
                self.acc(grads, t, g);
            }
            Op::GatherEntries(t, index) => {
                let t = *t;
                let mut g = Tensor::zeros(1, val(t).cols());
                for (k, i) in index.iter().enumerate() {
                    if let Some(i) = *i {
                        g.data_mut()[i] += dy.data()[k];
                    }
                }
                self.acc(grads, t, g);
            }
            &Op::Mean(a, axis) => {
                let [r, c] = val(a).shape();
                let mut g = Tensor::zeros(r, c);
                match axis {
                    Axis::Rows => {
                        for i in 0..r {
                            g.row_slice_mut(i).iter_mut().zip(dy.data()).for_each(|(o, d)| *o = d / r as f64);
                        }
                    }
                    Axis::Cols => {
                        for i in 0..r {
                            let d = dy.data()[i] / c as f64;
                            g.row_slice_mut(i).iter_mut().for_each(|o| *o = d);
                        }
                    }
                }
                self.acc(grads, a, g);
            }
            &Op::Sum(a) => {
                let [r, c] = val(a).shape();
                self.acc(grads, a, Tensor::full(r, c, dy.item()));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let d = dy.item();
                let mut g = Tensor::zeros(probs.rows(), probs.cols());
                for t in targets {
                    let w = t.weight * d;
                    for (o, p) in g.row_slice_mut(t.row).iter_mut().zip(probs.row_slice(t.row)) {
                        *o += w * p;
                    }
                    *g.data_mut().get_mut(t.row * probs.cols() + t.class).unwrap() -= w;
                }
                self.acc(grads, *logits, g);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(a.rows(), a.cols(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

#[track_caller]
fn softmax_rows(x: &Tensor, mask: Option<&Mask>) -> Tensor {
    if let Some(m) = mask {
        assert_eq!(m.shape(), x.shape(), "softmax mask shape mismatch");
    }
    let c = x.cols();
    let mut out = Tensor::zeros(x.rows(), c);
    for r in 0..x.rows() {
        let keep = |j: usize| mask.is_none_or(|m| m.keep(r, j));
        let row = x.row_slice(r);
        let max = (0..c).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        assert!(max > f64::NEG_INFINITY, "softmax over a fully masked row {r}");
        let o = out.row_slice_mut(r);
        let mut z = 0.0;
        for j in 0..c {
            if keep(j) {
                o[j] = (row[j] - max).exp();
                z += o[j];
            }
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Log-probabilities of one row under an optional keep mask; masked entries
/// are `-inf`.
pub fn log_softmax(row: &[f64], keep: Option<&[bool]>) -> Vec<f64> {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let max = (0..row.len()).filter(|&j| kept(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (0..row.len()).filter(|&j| kept(j)).map(|j| (row[j] - max).exp()).sum();
    let lz = max + z.ln();
    (0..row.len()).map(|j| if kept(j) { row[j] - lz } else { f64::NEG_INFINITY }).collect()
}

//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation eagerly (values are computed on
//! insertion) and [`Graph::backward`] walks the tape in reverse. Leaves are
//! either constants or gradient-carrying inputs; nodes that depend only on
//! constants never receive a gradient buffer.

use crate::scalar::Scalar;
use crate::tensor::{self, Matrix};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    ClampMin(Var, T),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sigmoid(Var),
    Nll(Var, Vec<Option<usize>>),
    WeightedSum(Vec<(Var, T)>),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    slots: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.slots.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.slots.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Gradient-carrying leaf.
    pub fn input(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape mismatch");
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width mismatch");
        let r = r.row(0).to_vec();
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(&r) {
                *x = *x + b;
            }
        }
        let ng = self.any_grad(&[a, row]);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|v| v * s);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Gelu(a), ng)
    }

    /// Row-wise layer normalization with `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, d) = xv.shape();
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        let mut xhat = Matrix::zeros(rows, d);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Matrix::zeros(rows, d);
        let n = T::of(d as f64);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / n;
            let inv = T::one() / (var + T::of(LN_EPS)).sqrt();
            inv_std.push(inv);
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                value.set(r, c, g[c] * h + b[c]);
            }
        }
        let ng = self.any_grad(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            tensor::softmax_in_place(value.row_mut(r));
        }
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Softmax(a), ng)
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`; masked
    /// entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        assert!(value.cols() >= value.rows(), "causal mask needs cols >= rows");
        let offset = value.cols() - value.rows();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let visible = r + offset + 1;
            tensor::softmax_in_place(&mut row[..visible]);
            for v in &mut row[visible..] {
                *v = T::zero();
            }
        }
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Softmax(a), ng)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            tensor::log_softmax_in_place(value.row_mut(r));
        }
        let ng = self.any_grad(&[a]);
        self.push(value, Op::LogSoftmax(a), ng)
    }

    /// Elementwise `max(a, lo)`; the gradient is zero wherever clamping applied.
    pub fn clamp_min(&mut self, a: Var, lo: T) -> Var {
        let value = self.value(a).map(|v| if v < lo { lo } else { v });
        let ng = self.any_grad(&[a]);
        self.push(value, Op::ClampMin(a, lo), ng)
    }

    /// Selects rows of `table` by index.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(t.row(id));
        }
        let value = Matrix::from_vec(ids.len(), d, data);
        let ng = self.any_grad(&[table]);
        self.push(value, Op::Gather(table, ids.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let value = Matrix::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        let ng = self.any_grad(&[a]);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let ng = self.any_grad(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Column means, `1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.rows() > 0, "mean over zero rows");
        let n = T::of(av.rows() as f64);
        let mut out = Matrix::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, &v) in out.row_mut(0).iter_mut().zip(av.row(r)) {
                *o = *o + v;
            }
        }
        out.scale_assign(T::one() / n);
        let ng = self.any_grad(&[a]);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Sigmoid(a), ng)
    }

    /// Mean negative log-likelihood over rows with a target; rows whose
    /// target is `None` are masked out. Panics if every row is masked.
    pub fn nll_mean(&mut self, log_probs: Var, targets: &[Option<usize>]) -> Var {
        let lp = self.value(log_probs);
        assert_eq!(lp.rows(), targets.len(), "nll target length mismatch");
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                total = total - lp.get(r, t);
                count += 1;
            }
        }
        assert!(count > 0, "nll over zero unmasked positions");
        let value = Matrix::scalar(total / T::of(count as f64));
        let ng = self.any_grad(&[log_probs]);
        self.push(value, Op::Nll(log_probs, targets.to_vec()), ng)
    }

    /// `Σ wᵢ · termᵢ` over same-shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let (r, c) = self.value(terms[0].0).shape();
        let mut value = Matrix::zeros(r, c);
        for &(v, w) in terms {
            let tv = self.value(v);
            assert_eq!(tv.shape(), (r, c), "weighted_sum shape mismatch");
            for (o, &x) in value.data_mut().iter_mut().zip(tv.data()) {
                *o = *o + w * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let ng = self.any_grad(&vars);
        self.push(value, Op::WeightedSum(terms.to_vec()), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sq_norm());
        let ng = self.any_grad(&[a]);
        self.push(value, Op::SumSquares(a), ng)
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Grads<T> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward from non-scalar");
        let mut slots: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        slots[output.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut slots);
            slots[idx] = Some(g);
        }
        Grads { slots }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, slots: &mut [Option<Matrix<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs_grad(*a) {
                    let bv = self.value(*b);
                    let slot = self.slot(slots, *a);
                    tensor::matmul_bt_acc(g, bv, slot);
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a);
                    let slot = self.slot(slots, *b);
                    tensor::matmul_at_acc(av, g, slot);
                }
            }
            Op::MatMulBt(a, b) => {
                if self.needs_grad(*a) {
                    let bv = self.value(*b);
                    let slot = self.slot(slots, *a);
                    tensor::matmul_acc(g, bv, slot);
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a);
                    let slot = self.slot(slots, *b);
                    tensor::matmul_at_acc(g, av, slot);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs_grad(v) {
                        self.slot(slots, v).add_assign(g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.needs_grad(*a) {
                    self.slot(slots, *a).add_assign(g);
                }
                if self.needs_grad(*row) {
                    let slot = self.slot(slots, *row);
                    for r in 0..g.rows() {
                        for (s, &gv) in slot.row_mut(0).iter_mut().zip(g.row(r)) {
                            *s = *s + gv;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.needs_grad(*a) {
                    let s = *s;
                    accumulate_with(self.slot(slots, *a), g, |gv| gv * s);
                }
            }
            Op::Gelu(a) => {
                if self.needs_grad(*a) {
                    let x = self.value(*a).clone();
                    let slot = self.slot(slots, *a);
                    for ((s, &gv), &xv) in slot.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *s = *s + gv * gelu_grad(xv);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, d) = xhat.shape();
                if self.needs_grad(*gamma) {
                    let slot = self.slot(slots, *gamma);
                    for r in 0..rows {
                        for c in 0..d {
                            let v = slot.get(0, c) + g.get(r, c) * xhat.get(r, c);
                            slot.set(0, c, v);
                        }
                    }
                }
                if self.needs_grad(*beta) {
                    let slot = self.slot(slots, *beta);
                    for r in 0..rows {
                        for (s, &gv) in slot.row_mut(0).iter_mut().zip(g.row(r)) {
                            *s = *s + gv;
                        }
                    }
                }
                if self.needs_grad(*x) {
                    let gam = self.value(*gamma).row(0).to_vec();
                    let n = T::of(d as f64);
                    let slot = self.slot(slots, *x);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in 0..d {
                            dxhat[c] = g.get(r, c) * gam[c];
                            sum_d = sum_d + dxhat[c];
                            sum_dx = sum_dx + dxhat[c] * xhat.get(r, c);
                        }
                        let k = inv_std[r] / n;
                        for c in 0..d {
                            let v = k * (n * dxhat[c] - sum_d - xhat.get(r, c) * sum_dx);
                            slot.set(r, c, slot.get(r, c) + v);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if self.needs_grad(*a) {
                    let y = &node.value;
                    let slot = self.slot(slots, *a);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = tensor::dot(yr, gr);
                        for ((s, &yv), &gv) in slot.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *s = *s + yv * (gv - inner);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if self.needs_grad(*a) {
                    let y = &node.value;
                    let slot = self.slot(slots, *a);
                    for r in 0..y.rows() {
                        let gr = g.row(r);
                        let gsum = gr.iter().fold(T::zero(), |acc, &v| acc + v);
                        for ((s, &yv), &gv) in slot.row_mut(r).iter_mut().zip(y.row(r)).zip(gr) {
                            *s = *s + gv - yv.exp() * gsum;
                        }
                    }
                }
            }
            Op::ClampMin(a, lo) => {
                if self.needs_grad(*a) {
                    let lo = *lo;
                    let x = self.value(*a).clone();
                    let slot = self.slot(slots, *a);
                    for ((s, &gv), &xv) in slot.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if xv >= lo {
                            *s = *s + gv;
                        }
                    }
                }
            }
            Op::Gather(table, ids) => {
                if self.needs_grad(*table) {
                    let slot = self.slot(slots, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, &gv) in slot.row_mut(id).iter_mut().zip(g.row(r)) {
                            *s = *s + gv;
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if self.needs_grad(*a) {
                    let start = *start;
                    let slot = self.slot(slots, *a);
                    for r in 0..g.rows() {
                        let dst = &mut slot.row_mut(r)[start..start + g.cols()];
                        for (s, &gv) in dst.iter_mut().zip(g.row(r)) {
                            *s = *s + gv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs_grad(p) {
                        let slot = self.slot(slots, p);
                        for r in 0..g.rows() {
                            for (s, &gv) in slot.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *s = *s + gv;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::MeanRows(a) => {
                if self.needs_grad(*a) {
                    let slot = self.slot(slots, *a);
                    let inv = T::one() / T::of(slot.rows() as f64);
                    for r in 0..slot.rows() {
                        for (s, &gv) in slot.row_mut(r).iter_mut().zip(g.row(0)) {
                            *s = *s + gv * inv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.needs_grad(*a) {
                    let y = &node.value;
                    let slot = self.slot(slots, *a);
                    for ((s, &gv), &yv) in slot.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *s = *s + gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::Nll(lp, targets) => {
                if self.needs_grad(*lp) {
                    let count = targets.iter().filter(|t| t.is_some()).count();
                    let k = g.item() / T::of(count as f64);
                    let slot = self.slot(slots, *lp);
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            slot.set(r, t, slot.get(r, t) - k);
                        }
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if self.needs_grad(v) {
                        accumulate_with(self.slot(slots, v), g, |gv| gv * w);
                    }
                }
            }
            Op::SumSquares(a) => {
                if self.needs_grad(*a) {
                    let gv = g.item();
                    let x = self.value(*a).clone();
                    let two = T::of(2.0);
                    let slot = self.slot(slots, *a);
                    for (s, &xv) in slot.data_mut().iter_mut().zip(x.data()) {
                        *s = *s + two * xv * gv;
                    }
                }
            }
        }
    }

    fn slot<'s>(&self, slots: &'s mut [Option<Matrix<T>>], v: Var) -> &'s mut Matrix<T> {
        let (r, c) = self.value(v).shape();
        slots[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }
}

fn accumulate_with<T: Scalar>(slot: &mut Matrix<T>, g: &Matrix<T>, f: impl Fn(T) -> T) {
    for (s, &gv) in slot.data_mut().iter_mut().zip(g.data()) {
        *s = *s + f(gv);
    }
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_K) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn layer_norm_row<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], out: &mut [T]) {
    let n = T::of(x.len() as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    let inv = T::one() / (var + T::of(LN_EPS)).sqrt();
    for i in 0..x.len() {
        out[i] = gamma[i] * (x[i] - mean) * inv + beta[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Central differences of `f` with respect to every entry of `inputs[k]`.
    fn check(inputs: Vec<Matrix<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out);
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            for i in 0..m.len() {
                let eval = |delta: f64| {
                    let mut perturbed = inputs.clone();
                    perturbed[k].data_mut()[i] += delta;
                    let mut g = Graph::new();
                    let vs: Vec<Var> = perturbed.into_iter().map(|m| g.input(m)).collect();
                    let o = f(&mut g, &vs);
                    g.value(o).item()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "input {k} entry {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_matrix(&mut rng, 3, 4);
        let b = rand_matrix(&mut rng, 4, 5);
        let c = rand_matrix(&mut rng, 5, 4);
        let row = rand_matrix(&mut rng, 1, 5);
        check(vec![a.clone(), b.clone(), row.clone()], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let m = g.add_row(m, v[2]);
            let m = g.gelu(m);
            g.sum_squares(m)
        });
        check(vec![a.clone(), c.clone()], |g, v| {
            let m = g.matmul_bt(v[0], v[1]);
            let m = g.causal_softmax(m);
            let m = g.scale(m, 1.7);
            g.sum_squares(m)
        });
        let gamma = rand_matrix(&mut rng, 1, 4);
        let beta = rand_matrix(&mut rng, 1, 4);
        let w = rand_matrix(&mut rng, 4, 6);
        check(vec![a.clone(), gamma, beta, w], |g, v| {
            let n = g.layer_norm(v[0], v[1], v[2]);
            let l = g.matmul(n, v[3]);
            let l = g.log_softmax(l);
            g.nll_mean(l, &[Some(1), None, Some(5)])
        });
        check(vec![a.clone(), b.clone()], |g, v| {
            let left = g.slice_cols(v[0], 1, 2);
            let right = g.slice_cols(v[0], 0, 1);
            let cat = g.concat_cols(&[right, left, v[0]]);
            let m = g.mean_rows(cat);
            let s = g.sigmoid(m);
            let t = g.gather_rows(v[1], &[0, 2, 2]);
            let t = g.mean_rows(t);
            let t = g.softmax(t);
            let a = g.sum_squares(s);
            let b = g.sum_squares(t);
            g.weighted_sum(&[(a, 0.3), (b, -2.0)])
        });
        check(vec![a, b], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let m = g.log_softmax(m);
            let m = g.clamp_min(m, -2.5);
            let other = g.add(m, m);
            g.sum_squares(other)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Matrix::filled(2, 2, 1.0));
        let x = g.input(Matrix::filled(2, 2, 0.5));
        let y = g.matmul(c, x);
        let out = g.sum_squares(y);
        let grads = g.backward(out);
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Matrix::from_fn(3, 3, |r, c| (r + c) as f64));
        let y = g.causal_softmax(x);
        let v = g.value(y);
        assert_eq!(v.get(0, 0), 1.0);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 2), 0.0);
        assert!((v.row(2).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

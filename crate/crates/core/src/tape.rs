//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every primitive appends one node holding its output value and the ids of
//! its inputs. Nodes are only ever appended, so the tape is topologically
//! ordered by construction and `backward` is a single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{LntError, Result};
use crate::tensor::{Real, Tensor};

/// Lower clamp on vector norms before division.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, transpose_b: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Sum(usize),
    Reshape(usize),
    Transpose(usize),
    GatherRows { a: usize, idx: Rc<[usize]> },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    RowNormalize(usize),
    RowDot(usize, usize),
    ContrastNll(usize),
    GatherPerRow { a: usize, idx: Rc<[usize]> },
    Conv1d { x: usize, w: usize, b: Option<usize>, stride: usize },
    ConvTranspose1d { x: usize, w: usize, b: Option<usize>, stride: usize },
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
///
/// A tape is confined to the thread that builds it; values read out of it
/// are plain tensors and can be shared freely.
pub struct Tape<S: Real = f32> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Real = f32> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Real> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar loss with respect to every node that needed one.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when the loss does not reach it.
    pub fn wrt(&self, var: Var<'_, S>) -> Tensor<S> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(rows, cols)` view used by the row-wise primitives; vectors are one row.
fn rows_cols(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [n] => Ok((1, *n)),
        [m, n] => Ok((*m, *n)),
        s => Err(LntError::shape(op, format!("expected rank 1 or 2, got {s:?}"))),
    }
}

/// `[B, C, T]` view of a rank-2 or rank-3 sequence tensor.
fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, t] => Ok((1, *c, *t)),
        [b, c, t] => Ok((*b, *c, *t)),
        s => Err(LntError::shape(op, format!("expected [C,T] or [B,C,T], got {s:?}"))),
    }
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `-l[0] + logsumexp(l)` for one row of logits.
pub(crate) fn contrast_nll_row<S: Real>(row: &[S]) -> S {
    let mx = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
    let s: S = row.iter().map(|&x| (x - mx).exp()).sum();
    mx + s.ln() - row[0]
}

fn im2col<S: Real>(x: &[S], b: usize, c: usize, t: usize, f: usize, stride: usize, t_out: usize) -> Vec<S> {
    let width = c * f;
    let mut cols = vec![S::zero(); b * t_out * width];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * t..(bi * c + ci + 1) * t];
            for to in 0..t_out {
                let dst = (bi * t_out + to) * width + ci * f;
                cols[dst..dst + f].copy_from_slice(&src[to * stride..to * stride + f]);
            }
        }
    }
    cols
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, name: &'static str, value: Tensor<S>, op: Op, inputs: &[usize]) -> Result<Var<'_, S>> {
        if !value.is_finite() {
            return Err(LntError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|&i| nodes[i].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn check_owner(&self, v: Var<'_, S>) {
        assert!(std::ptr::eq(self, v.tape), "variable belongs to a different tape");
    }

    /// Concatenation along the leading axis; trailing shapes must agree.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let first = parts
            .first()
            .ok_or_else(|| LntError::shape("concat_rows", "no inputs"))?
            .shape();
        let tail = first[1..].to_vec();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            self.check_owner(*p);
            let v = p.value();
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(LntError::shape(
                    "concat_rows",
                    format!("{:?} vs {:?}", v.shape(), first),
                ));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push("concat_rows", Tensor::from_parts(shape, data), Op::ConcatRows(ids.clone()), &ids)
    }

    /// Side-by-side concatenation of `[m]` or `[m, n_i]` inputs into `[m, sum n_i]`.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        if parts.is_empty() {
            return Err(LntError::shape("concat_cols", "no inputs"));
        }
        let vals: Vec<Rc<Tensor<S>>> = parts
            .iter()
            .map(|p| {
                self.check_owner(*p);
                p.value()
            })
            .collect();
        let mut widths = Vec::with_capacity(vals.len());
        let mut m = None;
        for v in &vals {
            let (rows, w) = match v.shape() {
                [r] => (*r, 1),
                [r, w] => (*r, *w),
                s => return Err(LntError::shape("concat_cols", format!("rank {s:?}"))),
            };
            if *m.get_or_insert(rows) != rows {
                return Err(LntError::shape("concat_cols", "row counts differ"));
            }
            widths.push(w);
        }
        let m = m.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut data = vec![S::zero(); m * total];
        let mut off = 0;
        for (v, &w) in vals.iter().zip(&widths) {
            for i in 0..m {
                data[i * total + off..i * total + off + w].copy_from_slice(&v.data()[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push(
            "concat_cols",
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(ids.clone()),
            &ids,
        )
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        self.check_owner(loss);
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(LntError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.needs_grad {
            return Err(LntError::DetachedGraph);
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                propagate(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Real>(nodes: &[Node<S>], grads: &mut [Option<Tensor<S>>], id: usize, g: Tensor<S>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn propagate<S: Real>(nodes: &[Node<S>], id: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let like = |shape: &[usize], data: Vec<S>| Tensor::from_parts(shape.to_vec(), data);
    let gd = g.data();

    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul { a, b, transpose_b } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = out.shape()[1];
            if nodes[*a].needs_grad {
                let mut da = vec![S::zero(); m * k];
                if *transpose_b {
                    // dA = dC * B  with B stored n x k
                    S::gemm(m, n, k, gd, n as isize, 1, bv.data(), k as isize, 1, S::zero(), &mut da);
                } else {
                    // dA = dC * B^T  with B stored k x n
                    S::gemm(m, n, k, gd, n as isize, 1, bv.data(), 1, n as isize, S::zero(), &mut da);
                }
                accumulate(nodes, grads, *a, like(av.shape(), da));
            }
            if nodes[*b].needs_grad {
                if *transpose_b {
                    // dB (n x k) = dC^T * A
                    let mut db = vec![S::zero(); n * k];
                    S::gemm(n, m, k, gd, 1, n as isize, av.data(), k as isize, 1, S::zero(), &mut db);
                    accumulate(nodes, grads, *b, like(bv.shape(), db));
                } else {
                    // dB (k x n) = A^T * dC
                    let mut db = vec![S::zero(); k * n];
                    S::gemm(k, m, n, av.data(), 1, k as isize, gd, n as isize, 1, S::zero(), &mut db);
                    accumulate(nodes, grads, *b, like(bv.shape(), db));
                }
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if nodes[*a].needs_grad {
                let d = gd.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                accumulate(nodes, grads, *a, like(av.shape(), d));
            }
            if nodes[*b].needs_grad {
                let d = gd.iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                accumulate(nodes, grads, *b, like(bv.shape(), d));
            }
        }
        Op::Scale(a, s) => {
            let s = S::lit(*s);
            accumulate(nodes, grads, *a, g.map(|x| x * s));
        }
        Op::AddBias(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            if nodes[*b].needs_grad {
                let n = val(*b).numel();
                let mut db = vec![S::zero(); n];
                for row in gd.chunks(n) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d = *d + x;
                    }
                }
                accumulate(nodes, grads, *b, like(val(*b).shape(), db));
            }
        }
        Op::Sigmoid(a) => {
            let d = gd
                .iter()
                .zip(out.data())
                .map(|(&g, &y)| g * y * (S::one() - y))
                .collect();
            accumulate(nodes, grads, *a, like(out.shape(), d));
        }
        Op::Tanh(a) => {
            let d = gd
                .iter()
                .zip(out.data())
                .map(|(&g, &y)| g * (S::one() - y * y))
                .collect();
            accumulate(nodes, grads, *a, like(out.shape(), d));
        }
        Op::Relu(a) => {
            let d = gd
                .iter()
                .zip(val(*a).data())
                .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                .collect();
            accumulate(nodes, grads, *a, like(out.shape(), d));
        }
        Op::Exp(a) => {
            let d = gd.iter().zip(out.data()).map(|(&g, &y)| g * y).collect();
            accumulate(nodes, grads, *a, like(out.shape(), d));
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), gd[0]));
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, like(val(*a).shape(), gd.to_vec()));
        }
        Op::Transpose(a) => {
            let shape = out.shape();
            let (b, r, c) = match shape {
                [r, c] => (1, *r, *c),
                [b, r, c] => (*b, *r, *c),
                _ => unreachable!(),
            };
            // g has shape [.., r, c]; input had [.., c, r]
            let mut d = vec![S::zero(); g.numel()];
            for bi in 0..b {
                for i in 0..r {
                    for j in 0..c {
                        d[bi * r * c + j * r + i] = gd[bi * r * c + i * c + j];
                    }
                }
            }
            accumulate(nodes, grads, *a, like(val(*a).shape(), d));
        }
        Op::GatherRows { a, idx } => {
            let av = val(*a);
            let w = av.numel() / av.shape()[0];
            let mut d = vec![S::zero(); av.numel()];
            for (r, &src) in idx.iter().enumerate() {
                for j in 0..w {
                    d[src * w + j] = d[src * w + j] + gd[r * w + j];
                }
            }
            accumulate(nodes, grads, *a, like(av.shape(), d));
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = val(p).numel();
                accumulate(nodes, grads, p, like(val(p).shape(), gd[off..off + n].to_vec()));
                off += n;
            }
        }
        Op::ConcatCols(parts) => {
            let (m, total) = (out.shape()[0], out.shape()[1]);
            let mut off = 0;
            for &p in parts {
                let pv = val(p);
                let w = pv.numel() / m;
                let mut d = Vec::with_capacity(pv.numel());
                for i in 0..m {
                    d.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                }
                accumulate(nodes, grads, p, like(pv.shape(), d));
                off += w;
            }
        }
        Op::RowNormalize(a) => {
            let av = val(*a);
            let n = *av.shape().last().unwrap();
            let eps = S::lit(NORM_EPS);
            let mut d = vec![S::zero(); av.numel()];
            for r in 0..av.numel() / n {
                let x = &av.data()[r * n..(r + 1) * n];
                let y = &out.data()[r * n..(r + 1) * n];
                let gy = &gd[r * n..(r + 1) * n];
                let norm = x.iter().map(|&v| v * v).sum::<S>().sqrt();
                let dst = &mut d[r * n..(r + 1) * n];
                if norm > eps {
                    let proj: S = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for i in 0..n {
                        dst[i] = (gy[i] - y[i] * proj) / norm;
                    }
                } else {
                    for i in 0..n {
                        dst[i] = gy[i] / eps;
                    }
                }
            }
            accumulate(nodes, grads, *a, like(av.shape(), d));
        }
        Op::RowDot(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = *av.shape().last().unwrap();
            let scale_rows = |src: &Tensor<S>| {
                let mut d = vec![S::zero(); src.numel()];
                for (r, &gr) in gd.iter().enumerate() {
                    for j in 0..n {
                        d[r * n + j] = gr * src.data()[r * n + j];
                    }
                }
                d
            };
            if nodes[*a].needs_grad {
                accumulate(nodes, grads, *a, like(av.shape(), scale_rows(bv)));
            }
            if nodes[*b].needs_grad {
                accumulate(nodes, grads, *b, like(bv.shape(), scale_rows(av)));
            }
        }
        Op::ContrastNll(a) => {
            let av = val(*a);
            let n = *av.shape().last().unwrap();
            let mut d = vec![S::zero(); av.numel()];
            for (r, &gr) in gd.iter().enumerate() {
                let row = &av.data()[r * n..(r + 1) * n];
                let mx = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
                let z: S = row.iter().map(|&x| (x - mx).exp()).sum();
                for j in 0..n {
                    let p = (row[j] - mx).exp() / z;
                    let t = if j == 0 { p - S::one() } else { p };
                    d[r * n + j] = gr * t;
                }
            }
            accumulate(nodes, grads, *a, like(av.shape(), d));
        }
        Op::GatherPerRow { a, idx } => {
            let av = val(*a);
            let n = av.shape()[1];
            let w = out.shape()[1];
            let mut d = vec![S::zero(); av.numel()];
            for (p, &j) in idx.iter().enumerate() {
                let i = p / w;
                d[i * n + j] = d[i * n + j] + gd[p];
            }
            accumulate(nodes, grads, *a, like(av.shape(), d));
        }
        Op::Conv1d { x, w, b, stride } => {
            let (xv, wv) = (val(*x), val(*w));
            let (bsz, cin, t) = seq_dims("conv1d", xv.shape()).expect("checked in forward");
            let (cout, f) = (wv.shape()[0], wv.shape()[2]);
            let t_out = *out.shape().last().unwrap();
            let width = cin * f;
            let rows = bsz * t_out;
            // d_bt[(b,t), o]
            let mut d_bt = vec![S::zero(); rows * cout];
            for bi in 0..bsz {
                for o in 0..cout {
                    for to in 0..t_out {
                        d_bt[(bi * t_out + to) * cout + o] = gd[(bi * cout + o) * t_out + to];
                    }
                }
            }
            if let Some(b) = b {
                if nodes[*b].needs_grad {
                    let mut db = vec![S::zero(); cout];
                    for row in d_bt.chunks(cout) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    accumulate(nodes, grads, *b, like(&[cout], db));
                }
            }
            if nodes[*w].needs_grad {
                let cols = im2col(xv.data(), bsz, cin, t, f, *stride, t_out);
                let mut dw = vec![S::zero(); cout * width];
                S::gemm(cout, rows, width, &d_bt, 1, cout as isize, &cols, width as isize, 1, S::zero(), &mut dw);
                accumulate(nodes, grads, *w, like(wv.shape(), dw));
            }
            if nodes[*x].needs_grad {
                let mut dcols = vec![S::zero(); rows * width];
                S::gemm(rows, cout, width, &d_bt, cout as isize, 1, wv.data(), width as isize, 1, S::zero(), &mut dcols);
                let mut dx = vec![S::zero(); xv.numel()];
                for bi in 0..bsz {
                    for ci in 0..cin {
                        let base = (bi * cin + ci) * t;
                        for to in 0..t_out {
                            let src = (bi * t_out + to) * width + ci * f;
                            for fi in 0..f {
                                let dst = base + to * stride + fi;
                                dx[dst] = dx[dst] + dcols[src + fi];
                            }
                        }
                    }
                }
                accumulate(nodes, grads, *x, like(xv.shape(), dx));
            }
        }
        Op::ConvTranspose1d { x, w, b, stride } => {
            let (xv, wv) = (val(*x), val(*w));
            let (bsz, cin, t_in) = seq_dims("conv_transpose1d", xv.shape()).expect("checked in forward");
            let (cout, f) = (wv.shape()[1], wv.shape()[2]);
            let len = *out.shape().last().unwrap();
            let width = cout * f;
            let rows = bsz * t_in;
            let mut dcols = vec![S::zero(); rows * width];
            for bi in 0..bsz {
                for ti in 0..t_in {
                    for o in 0..cout {
                        for fi in 0..f {
                            let pos = ti * stride + fi;
                            if pos < len {
                                dcols[(bi * t_in + ti) * width + o * f + fi] = gd[(bi * cout + o) * len + pos];
                            }
                        }
                    }
                }
            }
            if let Some(b) = b {
                if nodes[*b].needs_grad {
                    let mut db = vec![S::zero(); cout];
                    for bi in 0..bsz {
                        for (o, acc) in db.iter_mut().enumerate() {
                            let s: S = gd[(bi * cout + o) * len..(bi * cout + o + 1) * len].iter().copied().sum();
                            *acc = *acc + s;
                        }
                    }
                    accumulate(nodes, grads, *b, like(&[cout], db));
                }
            }
            if nodes[*w].needs_grad {
                let xbt = to_time_major(xv.data(), bsz, cin, t_in);
                let mut dw = vec![S::zero(); cin * width];
                S::gemm(cin, rows, width, &xbt, 1, cin as isize, &dcols, width as isize, 1, S::zero(), &mut dw);
                accumulate(nodes, grads, *w, like(wv.shape(), dw));
            }
            if nodes[*x].needs_grad {
                let mut dxbt = vec![S::zero(); rows * cin];
                S::gemm(rows, width, cin, &dcols, width as isize, 1, wv.data(), 1, width as isize, S::zero(), &mut dxbt);
                let mut dx = vec![S::zero(); xv.numel()];
                for bi in 0..bsz {
                    for ci in 0..cin {
                        for ti in 0..t_in {
                            dx[(bi * cin + ci) * t_in + ti] = dxbt[(bi * t_in + ti) * cin + ci];
                        }
                    }
                }
                accumulate(nodes, grads, *x, like(xv.shape(), dx));
            }
        }
    }
}

/// `[B, C, T]` to `[(B T), C]`.
fn to_time_major<S: Real>(x: &[S], b: usize, c: usize, t: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                out[(bi * t + ti) * c + ci] = x[(bi * c + ci) * t + ti];
            }
        }
    }
    out
}

impl<'t, S: Real> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> Result<S> {
        self.value().item()
    }

    fn same_tape(&self, other: Var<'t, S>) {
        self.tape.check_owner(other);
    }

    fn unary(self, name: &'static str, op: Op, f: impl Fn(S) -> S) -> Result<Self> {
        let v = self.value();
        self.tape.push(name, v.map(f), op, &[self.id])
    }

    fn zip(self, rhs: Self, name: &'static str, op: Op, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return Err(LntError::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.tape
            .push(name, Tensor::from_parts(a.shape().to_vec(), data), op, &[self.id, rhs.id])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, rhs: Self) -> Result<Self> {
        self.matmul_impl(rhs, false)
    }

    /// `[m, k] x [n, k]^T -> [m, n]`; weights stored `out x in` multiply this way.
    pub fn matmul_t(self, rhs: Self) -> Result<Self> {
        self.matmul_impl(rhs, true)
    }

    fn matmul_impl(self, rhs: Self, transpose_b: bool) -> Result<Self> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        let (m, k) = a.as_matrix("matmul")?;
        let (br, bc) = b.as_matrix("matmul")?;
        let (k2, n) = if transpose_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(LntError::shape(
                "matmul",
                format!("{:?} x {:?}{}", a.shape(), b.shape(), if transpose_b { "^T" } else { "" }),
            ));
        }
        let mut c = vec![S::zero(); m * n];
        let (rsb, csb) = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
        S::gemm(m, k, n, a.data(), k as isize, 1, b.data(), rsb, csb, S::zero(), &mut c);
        self.tape.push(
            "matmul",
            Tensor::from_parts(vec![m, n], c),
            Op::MatMul {
                a: self.id,
                b: rhs.id,
                transpose_b,
            },
            &[self.id, rhs.id],
        )
    }

    pub fn add(self, rhs: Self) -> Result<Self> {
        self.zip(rhs, "add", Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(self, rhs: Self) -> Result<Self> {
        self.zip(rhs, "sub", Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    pub fn mul(self, rhs: Self) -> Result<Self> {
        self.zip(rhs, "mul", Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    pub fn scale(self, s: f64) -> Result<Self> {
        let k = S::lit(s);
        self.unary("scale", Op::Scale(self.id, s), move |x| x * k)
    }

    /// Adds `bias[n]` to every row of `self[m, n]`.
    pub fn add_bias(self, bias: Self) -> Result<Self> {
        self.same_tape(bias);
        let (a, b) = (self.value(), bias.value());
        let n = b.numel();
        if b.rank() != 1 || a.shape().last() != Some(&n) {
            return Err(LntError::shape("add_bias", format!("{:?} + {:?}", a.shape(), b.shape())));
        }
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b.data()[i % n])
            .collect();
        self.tape.push(
            "add_bias",
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::AddBias(self.id, bias.id),
            &[self.id, bias.id],
        )
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary("tanh", Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn relu(self) -> Result<Self> {
        self.unary("relu", Op::Relu(self.id), |x| x.max(S::zero()))
    }

    pub fn exp(self) -> Result<Self> {
        self.unary("exp", Op::Exp(self.id), |x| x.exp())
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Result<Self> {
        let v = self.value();
        self.tape.push("sum", Tensor::scalar(v.sum()), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Self> {
        let n = self.value().numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let v = self.value();
        let t = Tensor::new(shape, v.data().to_vec())?;
        self.tape.push("reshape", t, Op::Reshape(self.id), &[self.id])
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(self) -> Result<Self> {
        let v = self.value();
        let (b, r, c) = match v.shape() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            s => return Err(LntError::shape("transpose", format!("{s:?}"))),
        };
        let mut d = vec![S::zero(); v.numel()];
        for bi in 0..b {
            for i in 0..r {
                for j in 0..c {
                    d[bi * r * c + j * r + i] = v.data()[bi * r * c + i * c + j];
                }
            }
        }
        let mut shape = v.shape().to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        self.tape
            .push("transpose", Tensor::from_parts(shape, d), Op::Transpose(self.id), &[self.id])
    }

    /// Selects entries of the leading axis.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Self> {
        let v = self.value();
        if v.rank() == 0 || idx.is_empty() {
            return Err(LntError::shape("gather_rows", "needs rank >= 1 and indices"));
        }
        let m = v.shape()[0];
        let w = v.numel() / m;
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= m {
                return Err(LntError::shape("gather_rows", format!("index {i} >= {m}")));
            }
            data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = idx.len();
        self.tape.push(
            "gather_rows",
            Tensor::from_parts(shape, data),
            Op::GatherRows {
                a: self.id,
                idx: idx.into(),
            },
            &[self.id],
        )
    }

    /// Scales each row to unit Euclidean norm (norm clamped below at 1e-12).
    pub fn row_normalize(self) -> Result<Self> {
        let v = self.value();
        let (m, n) = rows_cols("row_normalize", v.shape())?;
        let eps = S::lit(NORM_EPS);
        let mut d = v.data().to_vec();
        for r in 0..m {
            let row = &mut d[r * n..(r + 1) * n];
            let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt().max(eps);
            for x in row.iter_mut() {
                *x = *x / norm;
            }
        }
        self.tape.push(
            "row_normalize",
            Tensor::from_parts(v.shape().to_vec(), d),
            Op::RowNormalize(self.id),
            &[self.id],
        )
    }

    /// Per-row inner product: `[m, n] . [m, n] -> [m]` (vectors give a scalar).
    pub fn row_dot(self, rhs: Self) -> Result<Self> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return Err(LntError::shape("row_dot", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let (m, n) = rows_cols("row_dot", a.shape())?;
        let data: Vec<S> = (0..m)
            .map(|r| {
                a.data()[r * n..(r + 1) * n]
                    .iter()
                    .zip(&b.data()[r * n..(r + 1) * n])
                    .map(|(&x, &y)| x * y)
                    .sum()
            })
            .collect();
        let shape = if a.rank() == 1 { vec![] } else { vec![m] };
        self.tape.push(
            "row_dot",
            Tensor::from_parts(shape, data),
            Op::RowDot(self.id, rhs.id),
            &[self.id, rhs.id],
        )
    }

    /// Row-wise `-l[0] + logsumexp(l)`: the negative log-probability of the
    /// first (positive) entry under a softmax over the row.
    pub fn contrast_nll(self) -> Result<Self> {
        let v = self.value();
        let (m, n) = rows_cols("contrast_nll", v.shape())?;
        if n < 2 {
            return Err(LntError::EmptyNegatives);
        }
        let data: Vec<S> = (0..m).map(|r| contrast_nll_row(&v.data()[r * n..(r + 1) * n])).collect();
        let shape = if v.rank() == 1 { vec![] } else { vec![m] };
        self.tape.push(
            "contrast_nll",
            Tensor::from_parts(shape, data),
            Op::ContrastNll(self.id),
            &[self.id],
        )
    }

    /// `out[i, j] = self[i, idx[i * width + j]]`.
    pub fn gather_per_row(self, idx: &[usize], width: usize) -> Result<Self> {
        let v = self.value();
        let (m, n) = v.as_matrix("gather_per_row")?;
        if width == 0 || idx.len() != m * width {
            return Err(LntError::shape("gather_per_row", format!("{} indices for {m} rows", idx.len())));
        }
        let mut data = Vec::with_capacity(idx.len());
        for (p, &j) in idx.iter().enumerate() {
            if j >= n {
                return Err(LntError::shape("gather_per_row", format!("column {j} >= {n}")));
            }
            data.push(v.data()[(p / width) * n + j]);
        }
        self.tape.push(
            "gather_per_row",
            Tensor::from_parts(vec![m, width], data),
            Op::GatherPerRow {
                a: self.id,
                idx: idx.into(),
            },
            &[self.id],
        )
    }

    /// Valid (unpadded) strided convolution.
    ///
    /// `self` is `[C_in, T]` or `[B, C_in, T]`, `weight` is `[C_out, C_in, F]`,
    /// `bias` is `[C_out]`. Output length is `(T - F) / stride + 1`.
    pub fn conv1d(self, weight: Self, bias: Option<Self>, stride: usize) -> Result<Self> {
        self.same_tape(weight);
        let (xv, wv) = (self.value(), weight.value());
        let (bsz, cin, t) = seq_dims("conv1d", xv.shape())?;
        let [cout, wcin, f] = *wv.shape() else {
            return Err(LntError::shape("conv1d", format!("weight {:?}", wv.shape())));
        };
        if wcin != cin {
            return Err(LntError::shape("conv1d", format!("input has {cin} channels, weight expects {wcin}")));
        }
        if stride == 0 {
            return Err(LntError::Config("conv1d stride must be >= 1".into()));
        }
        if t < f {
            return Err(LntError::TooShort { needed: f, got: t });
        }
        let bv = match bias {
            Some(b) => {
                self.same_tape(b);
                let bv = b.value();
                if bv.shape() != [cout] {
                    return Err(LntError::shape("conv1d", format!("bias {:?}", bv.shape())));
                }
                Some(bv)
            }
            None => None,
        };
        let t_out = (t - f) / stride + 1;
        let width = cin * f;
        let rows = bsz * t_out;
        let cols = im2col(xv.data(), bsz, cin, t, f, stride, t_out);
        let mut out_bt = vec![S::zero(); rows * cout];
        S::gemm(rows, width, cout, &cols, width as isize, 1, wv.data(), 1, width as isize, S::zero(), &mut out_bt);
        let mut y = vec![S::zero(); rows * cout];
        for bi in 0..bsz {
            for o in 0..cout {
                let bo = bv.as_ref().map_or(S::zero(), |b| b.data()[o]);
                for to in 0..t_out {
                    y[(bi * cout + o) * t_out + to] = out_bt[(bi * t_out + to) * cout + o] + bo;
                }
            }
        }
        let shape = if xv.rank() == 2 { vec![cout, t_out] } else { vec![bsz, cout, t_out] };
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        self.tape.push(
            "conv1d",
            Tensor::from_parts(shape, y),
            Op::Conv1d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                stride,
            },
            &inputs,
        )
    }

    /// Transposed convolution producing exactly `T_in * stride` frames.
    ///
    /// `self` is `[C_in, T_in]` or `[B, C_in, T_in]`, `weight` is
    /// `[C_in, C_out, F]`. Frames past `T_in * stride` are cropped.
    pub fn conv_transpose1d(self, weight: Self, bias: Option<Self>, stride: usize) -> Result<Self> {
        self.same_tape(weight);
        let (xv, wv) = (self.value(), weight.value());
        let (bsz, cin, t_in) = seq_dims("conv_transpose1d", xv.shape())?;
        let [wcin, cout, f] = *wv.shape() else {
            return Err(LntError::shape("conv_transpose1d", format!("weight {:?}", wv.shape())));
        };
        if wcin != cin {
            return Err(LntError::shape(
                "conv_transpose1d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(LntError::Config("conv_transpose1d stride must be >= 1".into()));
        }
        let bv = match bias {
            Some(b) => {
                self.same_tape(b);
                let bv = b.value();
                if bv.shape() != [cout] {
                    return Err(LntError::shape("conv_transpose1d", format!("bias {:?}", bv.shape())));
                }
                Some(bv)
            }
            None => None,
        };
        let len = t_in * stride;
        let width = cout * f;
        let rows = bsz * t_in;
        let xbt = to_time_major(xv.data(), bsz, cin, t_in);
        let mut cols = vec![S::zero(); rows * width];
        S::gemm(rows, cin, width, &xbt, cin as isize, 1, wv.data(), width as isize, 1, S::zero(), &mut cols);
        let mut y = vec![S::zero(); bsz * cout * len];
        for bi in 0..bsz {
            for o in 0..cout {
                let dst = &mut y[(bi * cout + o) * len..(bi * cout + o + 1) * len];
                if let Some(b) = &bv {
                    dst.iter_mut().for_each(|v| *v = b.data()[o]);
                }
                for ti in 0..t_in {
                    let src = &cols[(bi * t_in + ti) * width + o * f..(bi * t_in + ti) * width + (o + 1) * f];
                    for (fi, &c) in src.iter().enumerate() {
                        let pos = ti * stride + fi;
                        if pos < len {
                            dst[pos] = dst[pos] + c;
                        }
                    }
                }
            }
        }
        let shape = if xv.rank() == 2 { vec![cout, len] } else { vec![bsz, cout, len] };
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        self.tape.push(
            "conv_transpose1d",
            Tensor::from_parts(shape, y),
            Op::ConvTranspose1d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                stride,
            },
            &inputs,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    fn assert_grad_ok(inputs: Vec<Tensor<f64>>, f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>) {
        let report = check_gradients(&inputs, 1e-4, f).unwrap();
        assert!(report.max_rel_error <= 1e-4, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn matmul_identity_and_selector() {
        let tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::identity(2));
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        assert_eq!(*i.matmul(a).unwrap().value(), *a.value());
        let sel = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let col = tape.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
        assert_eq!(sel.matmul(col).unwrap().value().data(), &[5.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(a.matmul(b), Err(LntError::Shape { .. })));
        assert!(a.matmul_t(b).is_ok());
    }

    #[test]
    fn matmul_gradient_of_sum_is_ones_times_bt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let tape = Tape::<f64>::new();
        let av = tape.param(a.clone());
        let bv = tape.constant(b.clone());
        let loss = av.matmul(bv).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap().wrt(av);
        let expected = Tensor::<f64>::ones(vec![3, 2])
            .matmul(&Tensor::from_fn(vec![2, 4], |i| b.data()[(i % 4) * 2 + i / 4]))
            .unwrap();
        for (x, y) in g.data().iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_grad_ok(vec![a, b], |_, v| v[0].matmul(v[1])?.sum());
    }

    #[test]
    fn matmul_t_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[5, 4])];
        assert_grad_ok(inputs, |_, v| v[0].matmul_t(v[1])?.tanh()?.sum());
    }

    #[test]
    fn conv1d_sums_adjacent_pairs() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 10], (1..=10).map(f64::from).collect()).unwrap());
        let w = tape.constant(Tensor::ones(vec![1, 1, 2]));
        let y = x.conv1d(w, None, 2).unwrap();
        assert_eq!(y.value().data(), &[3.0, 7.0, 11.0, 15.0, 19.0]);
    }

    #[test]
    fn conv1d_rejects_short_input_and_channel_mismatch() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2]));
        let w = tape.constant(Tensor::zeros(vec![1, 1, 3]));
        assert!(matches!(x.conv1d(w, None, 1), Err(LntError::TooShort { .. })));
        let x2 = tape.constant(Tensor::zeros(vec![2, 8]));
        assert!(matches!(x2.conv1d(w, None, 1), Err(LntError::Shape { .. })));
    }

    #[test]
    fn conv1d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![
            rand_tensor(&mut rng, &[2, 3, 11]),
            rand_tensor(&mut rng, &[4, 3, 3]),
            rand_tensor(&mut rng, &[4]),
        ];
        assert_grad_ok(inputs, |_, v| v[0].conv1d(v[1], Some(v[2]), 2)?.tanh()?.sum());
    }

    #[test]
    fn conv_transpose1d_gradients_and_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![
            rand_tensor(&mut rng, &[2, 3, 5]),
            rand_tensor(&mut rng, &[3, 2, 4]),
            rand_tensor(&mut rng, &[2]),
        ];
        {
            let tape = Tape::<f64>::new();
            let v: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let y = v[0].conv_transpose1d(v[1], Some(v[2]), 3).unwrap();
            assert_eq!(y.shape(), vec![2, 2, 15]);
        }
        assert_grad_ok(inputs, |_, v| v[0].conv_transpose1d(v[1], Some(v[2]), 3)?.tanh()?.sum());
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for matching weights and F == stride.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[3, 12]);
        let y = rand_tensor(&mut rng, &[2, 4]);
        let w = rand_tensor(&mut rng, &[2, 3, 3]);
        // conv weight [Cout=2, Cin=3, F]; the transposed op needs [Cin=2, Cout=3, F]
        let tape = Tape::<f64>::new();
        let cx = tape.constant(x.clone()).conv1d(tape.constant(w.clone()), None, 3).unwrap();
        let lhs: f64 = cx.value().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let ty = tape.constant(y).conv_transpose1d(tape.constant(w), None, 3).unwrap();
        let rhs: f64 = ty.value().data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_and_relu_values() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![0.0]));
        let s = x.sigmoid().unwrap();
        assert_eq!(s.value().data(), &[0.5]);
        let g = tape.backward(s.sum().unwrap()).unwrap().wrt(x);
        assert_eq!(g.data(), &[0.25]);
        let r = tape.constant(Tensor::vector(vec![-1.0, 2.0])).relu().unwrap();
        assert_eq!(r.value().data(), &[0.0, 2.0]);
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs = vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4])];
        assert_grad_ok(inputs, |_, v| {
            let a = v[0].mul(v[1])?.add(v[0].sigmoid()?)?.sub(v[1].tanh()?)?;
            a.add_bias(v[2])?.exp()?.scale(0.3)?.mean()
        });
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let inputs = vec![Tensor::vector(vec![-0.7, 0.4, 1.3, -0.2])];
        assert_grad_ok(inputs, |_, v| v[0].relu()?.mul(v[0])?.sum());
    }

    #[test]
    fn gather_concat_transpose_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs = vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[2, 3])];
        assert_grad_ok(inputs, |tape, v| {
            let c = tape.concat_rows(&[v[0], v[1]])?;
            let g = c.gather_rows(&[5, 0, 0, 2])?;
            let t = g.transpose()?; // [3, 4]
            let cols = tape.concat_cols(&[t, v[0].transpose()?])?; // [3, 8]
            cols.mul(cols)?.reshape(vec![2, 12])?.sum()
        });
    }

    #[test]
    fn row_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs = vec![rand_tensor(&mut rng, &[5, 4]), rand_tensor(&mut rng, &[5, 4]), rand_tensor(&mut rng, &[5, 6])];
        assert_grad_ok(inputs, |tape, v| {
            let cos = v[0].row_normalize()?.row_dot(v[1].row_normalize()?)?;
            let logits = tape.concat_cols(&[cos, v[2]])?;
            let picked = logits.gather_per_row(&[0, 3, 1, 1, 2, 6, 0, 0, 4, 5, 5, 1, 2, 3, 6], 3)?;
            picked.contrast_nll()?.sum()
        });
    }

    #[test]
    fn row_normalize_guards_zero_rows() {
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(vec![2, 3]));
        let n = z.row_normalize().unwrap();
        assert!(n.value().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn contrast_nll_uniform_is_log_n() {
        let tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::full(vec![2, 7], 0.3));
        let v = l.contrast_nll().unwrap();
        for x in v.value().data() {
            assert!((x - 7f64.ln()).abs() < 1e-12);
        }
        let single = tape.constant(Tensor::zeros(vec![3, 1]));
        assert!(matches!(single.contrast_nll(), Err(LntError::EmptyNegatives)));
    }

    #[test]
    fn backward_of_sum_and_square() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let g = tape.backward(x.sum().unwrap()).unwrap().wrt(x);
        assert_eq!(g.data(), &[1.0, 1.0, 1.0]);
        let g2 = tape.backward(x.mul(x).unwrap().sum().unwrap()).unwrap().wrt(x);
        assert_eq!(g2.data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(LntError::NotScalar(_))));
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0])).sum().unwrap();
        assert!(matches!(tape.backward(c), Err(LntError::DetachedGraph)));
    }

    #[test]
    fn non_finite_outputs_are_errors() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::vector(vec![100.0f32]));
        assert!(matches!(x.exp(), Err(LntError::NonFinite { op: "exp" })));
    }

    #[test]
    fn ops_are_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f32>::from_fn(vec![2, 3, 24], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::<f32>::from_fn(vec![5, 3, 4], |_| rng.random_range(-1.0..1.0));
        let run = || {
            let tape = Tape::<f32>::new();
            let y = tape.constant(x.clone()).conv1d(tape.param(w.clone()), None, 4).unwrap();
            let y = y.tanh().unwrap();
            (y.value().as_ref().clone(), tape.backward(y.sum().unwrap()).unwrap().grads[1].clone())
        };
        assert_eq!(run(), run());
    }
}

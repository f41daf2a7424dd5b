//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every forward op pushes a node holding its value and the recipe needed to
//! push gradients back to its inputs. `Tape::backward` replays the list in
//! reverse from a scalar loss.

use std::cell::RefCell;
use std::rc::Rc;

use super::dropout::DropoutMask;
use super::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Embedding { table: usize, ids: Vec<usize> },
    Softmax(usize),
    LogSoftmax(usize),
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Ln(usize),
    Exp(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout { x: usize, mask: Rc<DropoutMask> },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
        sizes: Vec<usize>,
    },
    Slice { x: usize, axis: usize, start: usize },
    Sum(usize),
    Mean(usize),
    Transpose(usize),
    Pick { x: usize, idx: Vec<usize> },
    Clamp { x: usize, lo: f64, hi: f64 },
    Reshape(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph. Values are immutable once pushed.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
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

    /// Leaf that receives gradients.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives gradients, sharing storage with the caller.
    pub fn param_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Accumulated gradient of `var`, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(var.id)?.as_ref()?;
        let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
        Some(Tensor::new(shape, g.clone()).expect("gradient matches value shape"))
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Propagates d(loss)/d(node) to every node that requires grad. Gradients
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<f64>>> = Vec::new();
        local.resize_with(loss.id + 1, || None);
        local[loss.id] = Some(vec![1.0]);

        let mut store = self.grads.borrow_mut();
        if store.len() < nodes.len() {
            store.resize_with(nodes.len(), || None);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, node, &node.value, &g, &mut local);
            match &mut store[id] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = &mut grads[id];
    let buf = slot.get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(buf);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn propagate(nodes: &[Node], node: &Node, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (n, k) = (av.shape()[0], av.shape()[1]);
            let m = bv.shape()[1];
            accumulate(nodes, grads, a, |da| {
                let bd = bv.data();
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for kk in 0..k {
                        let brow = &bd[kk * m..(kk + 1) * m];
                        let mut s = 0.0;
                        for j in 0..m {
                            s += gi[j] * brow[j];
                        }
                        da[i * k + kk] += s;
                    }
                }
            });
            accumulate(nodes, grads, b, |db| {
                let ad = av.data();
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for kk in 0..k {
                        let aik = ad[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let drow = &mut db[kk * m..(kk + 1) * m];
                        for j in 0..m {
                            drow[j] += aik * gi[j];
                        }
                    }
                }
            });
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, |da| add_into(da, g));
            accumulate(nodes, grads, b, |db| add_into(db, g));
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, |da| add_into(da, g));
            accumulate(nodes, grads, b, |db| {
                db.iter_mut().zip(g).for_each(|(d, s)| *d -= s)
            });
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            accumulate(nodes, grads, a, |da| {
                for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv.data()) {
                    *d += gi * bi;
                }
            });
            accumulate(nodes, grads, b, |db| {
                for ((d, gi), ai) in db.iter_mut().zip(g).zip(av.data()) {
                    *d += gi * ai;
                }
            });
        }
        &Op::AddRow(a, b) => {
            accumulate(nodes, grads, a, |da| add_into(da, g));
            let m = val(b).numel();
            accumulate(nodes, grads, b, |db| {
                for row in g.chunks(m) {
                    add_into(db, row);
                }
            });
        }
        &Op::Scale(a, c) => {
            accumulate(nodes, grads, a, |da| {
                da.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi)
            });
        }
        &Op::AddScalar(a) => accumulate(nodes, grads, a, |da| add_into(da, g)),
        Op::Embedding { table, ids } => {
            let d = val(*table).shape()[1];
            accumulate(nodes, grads, *table, |dt| {
                for (row, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * d..(id + 1) * d], &g[row * d..(row + 1) * d]);
                }
            });
        }
        &Op::Softmax(a) => {
            let d = out.last_dim();
            accumulate(nodes, grads, a, |da| {
                for (r, (gy, y)) in g.chunks(d).zip(out.data().chunks(d)).enumerate() {
                    let dot: f64 = gy.iter().zip(y).map(|(u, v)| u * v).sum();
                    let dst = &mut da[r * d..(r + 1) * d];
                    for j in 0..d {
                        dst[j] += y[j] * (gy[j] - dot);
                    }
                }
            });
        }
        &Op::LogSoftmax(a) => {
            let d = out.last_dim();
            accumulate(nodes, grads, a, |da| {
                for (r, (gy, y)) in g.chunks(d).zip(out.data().chunks(d)).enumerate() {
                    let total: f64 = gy.iter().sum();
                    let dst = &mut da[r * d..(r + 1) * d];
                    for j in 0..d {
                        dst[j] += gy[j] - y[j].exp() * total;
                    }
                }
            });
        }
        &Op::Sigmoid(a) => accumulate(nodes, grads, a, |da| {
            for ((d, gi), s) in da.iter_mut().zip(g).zip(out.data()) {
                *d += gi * s * (1.0 - s);
            }
        }),
        &Op::Tanh(a) => accumulate(nodes, grads, a, |da| {
            for ((d, gi), t) in da.iter_mut().zip(g).zip(out.data()) {
                *d += gi * (1.0 - t * t);
            }
        }),
        &Op::Gelu(a) => {
            let xv = val(a);
            accumulate(nodes, grads, a, |da| {
                for ((d, gi), &x) in da.iter_mut().zip(g).zip(xv.data()) {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    *d += gi * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                }
            });
        }
        &Op::Ln(a) => {
            let xv = val(a);
            accumulate(nodes, grads, a, |da| {
                for ((d, gi), x) in da.iter_mut().zip(g).zip(xv.data()) {
                    *d += gi / x;
                }
            });
        }
        &Op::Exp(a) => accumulate(nodes, grads, a, |da| {
            for ((d, gi), y) in da.iter_mut().zip(g).zip(out.data()) {
                *d += gi * y;
            }
        }),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = out.last_dim();
            let gv = val(*gamma);
            accumulate(nodes, grads, *x, |dx| {
                let gm = gv.data();
                for (r, gy) in g.chunks(d).enumerate() {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut mean_gg = 0.0;
                    let mut mean_ggx = 0.0;
                    for j in 0..d {
                        let gg = gy[j] * gm[j];
                        mean_gg += gg;
                        mean_ggx += gg * xh[j];
                    }
                    mean_gg /= d as f64;
                    mean_ggx /= d as f64;
                    let dst = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        dst[j] += rstd[r] * (gy[j] * gm[j] - mean_gg - xh[j] * mean_ggx);
                    }
                }
            });
            accumulate(nodes, grads, *gamma, |dg| {
                for (gy, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dg[j] += gy[j] * xh[j];
                    }
                }
            });
            accumulate(nodes, grads, *beta, |db| {
                for gy in g.chunks(d) {
                    add_into(db, gy);
                }
            });
        }
        Op::Dropout { x, mask } => accumulate(nodes, grads, *x, |dx| {
            for ((d, gi), m) in dx.iter_mut().zip(g).zip(mask.scales()) {
                *d += gi * m;
            }
        }),
        Op::Concat {
            inputs,
            axis,
            sizes,
        } => {
            let (outer, total, inner) = axis_split(out.shape(), *axis);
            let mut offset = 0;
            for (&id, &size) in inputs.iter().zip(sizes) {
                accumulate(nodes, grads, id, |dx| {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + size) * inner];
                        add_into(&mut dx[o * size * inner..(o + 1) * size * inner], src);
                    }
                });
                offset += size;
            }
        }
        &Op::Slice { x, axis, start } => {
            let xs = val(x).shape().to_vec();
            let (outer, total, inner) = axis_split(&xs, axis);
            let len = out.shape()[axis];
            accumulate(nodes, grads, x, |dx| {
                for o in 0..outer {
                    let dst = &mut dx[(o * total + start) * inner..(o * total + start + len) * inner];
                    add_into(dst, &g[o * len * inner..(o + 1) * len * inner]);
                }
            });
        }
        &Op::Sum(a) => accumulate(nodes, grads, a, |da| da.iter_mut().for_each(|d| *d += g[0])),
        &Op::Mean(a) => {
            let n = val(a).numel() as f64;
            accumulate(nodes, grads, a, |da| da.iter_mut().for_each(|d| *d += g[0] / n));
        }
        &Op::Transpose(a) => {
            let (r, c) = (out.shape()[1], out.shape()[0]);
            accumulate(nodes, grads, a, |da| {
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::Pick { x, idx } => {
            let m = val(*x).last_dim();
            accumulate(nodes, grads, *x, |dx| {
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * m + j] += g[i];
                }
            });
        }
        &Op::Clamp { x, lo, hi } => {
            let xv = val(x);
            accumulate(nodes, grads, x, |dx| {
                for ((d, gi), &v) in dx.iter_mut().zip(g).zip(xv.data()) {
                    if (lo..=hi).contains(&v) {
                        *d += gi;
                    }
                }
            });
        }
        &Op::Reshape(a) => accumulate(nodes, grads, a, |da| add_into(da, g)),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.data().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let x = self.value();
        let out = f(&x)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(out, op, rg))
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        self.unary(op, |x| {
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        })
    }

    fn binary_same(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, op, rg))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; n * m];
        let (ad, bd) = (a.data(), b.data());
        for i in 0..n {
            let crow = &mut c[i * m..(i + 1) * m];
            for kk in 0..k {
                let aik = ad[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[kk * m..(kk + 1) * m];
                for j in 0..m {
                    crow[j] += aik * brow[j];
                }
            }
        }
        let out = Tensor::new(vec![n, m], c)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a vector of length `last_dim` to every row.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let (a, b) = (self.value(), bias.value());
        let m = a.last_dim();
        if b.numel() != m {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let bd = b.data();
        let data = a
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(bd).map(|(x, y)| x + y))
            .collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(out, Op::AddRow(self.id, bias.id), rg))
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.map(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.map(Op::AddScalar(self.id), |v| v + c)
    }

    /// Row lookup: `table[V, d]`, `ids` in `[0, V)` -> `[ids.len(), d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var<'t>> {
        let table = self.value();
        if table.ndim() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "embedding",
                lhs: table.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (v, d) = (table.shape()[0], table.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                bound: v,
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(table.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.tape.push(
            out,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            self.requires_grad(),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        self.unary(Op::Softmax(self.id), |x| {
            let d = x.last_dim();
            let mut data = Vec::with_capacity(x.numel());
            for row in x.data().chunks(d) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let start = data.len();
                let mut sum = 0.0;
                for &v in row {
                    let e = (v - max).exp();
                    sum += e;
                    data.push(e);
                }
                data[start..].iter_mut().for_each(|e| *e /= sum);
            }
            Tensor::new(x.shape().to_vec(), data)
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Var<'t>> {
        self.unary(Op::LogSoftmax(self.id), |x| {
            let d = x.last_dim();
            let mut data = Vec::with_capacity(x.numel());
            for row in x.data().chunks(d) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                data.extend(row.iter().map(|&v| v - lse));
            }
            Tensor::new(x.shape().to_vec(), data)
        })
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.map(Op::Tanh(self.id), f64::tanh)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Result<Var<'t>> {
        self.map(Op::Gelu(self.id), |x| {
            0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
        })
    }

    /// Natural logarithm. Fails on any non-positive entry.
    pub fn ln(&self) -> Result<Var<'t>> {
        self.unary(Op::Ln(self.id), |x| {
            if let Some(&bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(TensorError::Domain {
                    op: "ln",
                    value: bad,
                });
            }
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.ln()).collect())
        })
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.map(Op::Exp(self.id), f64::exp)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let d = x.last_dim();
        if gv.numel() != d || bv.numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = x.outer_len();
        let mut xhat = Vec::with_capacity(x.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat.push(h);
                data.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Applies a precomputed inverted-dropout mask.
    pub fn dropout(&self, mask: Rc<DropoutMask>) -> Result<Var<'t>> {
        let x = self.value();
        if mask.shape() != x.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "dropout",
                lhs: x.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let data = x.data().iter().zip(mask.scales()).map(|(a, m)| a * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.tape.push(
            out,
            Op::Dropout { x: self.id, mask },
            self.requires_grad(),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                ndim: base.len(),
            });
        }
        for v in &values[1..] {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let mut shape = base.clone();
        shape[axis] = sizes.iter().sum();
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for (v, &size) in values.iter().zip(&sizes) {
                data.extend_from_slice(&v.data()[o * size * inner..(o + 1) * size * inner]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(tape.push(
            out,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
                sizes,
            },
            rg,
        ))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(TensorError::AxisOutOfRange {
                op: "slice",
                axis,
                ndim: x.ndim(),
            });
        }
        if start >= end || end > x.shape()[axis] {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                lhs: x.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let (outer, total, inner) = axis_split(x.shape(), axis);
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[(o * total + start) * inner..(o * total + end) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.tape.push(
            out,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            self.requires_grad(),
        ))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |x| Ok(Tensor::scalar(x.data().iter().sum())))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |x| {
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
        })
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), |x| {
            if x.ndim() != 2 {
                return Err(TensorError::ShapeMismatch {
                    op: "transpose",
                    lhs: x.shape().to_vec(),
                    rhs: vec![],
                });
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], data)
        })
    }

    /// Selects `x[i, idx[i]]` for each row of a 2-D tensor.
    pub fn pick(&self, idx: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let m = x.last_dim();
        if x.outer_len() != idx.len() {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                lhs: x.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(TensorError::IndexOutOfRange {
                op: "pick",
                index: bad,
                bound: m,
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| x.data()[i * m + j]).collect();
        let out = Tensor::new(vec![idx.len()], data)?;
        Ok(self.tape.push(
            out,
            Op::Pick {
                x: self.id,
                idx: idx.to_vec(),
            },
            self.requires_grad(),
        ))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.map(Op::Clamp { x: self.id, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::Reshape(self.id), |x| x.reshaped(shape.to_vec()))
    }

    /// Sum of scalars (or equal-shaped tensors).
    pub fn sum_all(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let (first, rest) = parts.split_first().ok_or(TensorError::Empty { op: "sum_all" })?;
        rest.iter().try_fold(*first, |acc, v| acc.add(*v))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

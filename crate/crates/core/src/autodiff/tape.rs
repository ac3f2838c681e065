//! Reverse-mode tape.
//!
//! Backward rules are expressed with the same differentiable operations as
//! the forward pass, so a gradient returned by [`Tape::grad`] is itself a
//! node on the tape and can be differentiated again (double backprop).

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize),
    AddRow(usize, usize),
    SumRows(usize),
    SumCols(usize),
    SumAll(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    Expand(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Clamp(usize, T, T),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize, usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterRows(usize, Rc<[usize]>),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddRow(a, b) => vec![*a, *b],
            Transpose(a) | Neg(a) | Scale(a, _) | AddScalar(a) | SumRows(a) | SumCols(a) | SumAll(a)
            | BroadcastRows(a) | BroadcastCols(a) | Expand(a) | Relu(a) | Sigmoid(a)
            | Tanh(a) | Exp(a) | Ln(a) | Sqrt(a) | Square(a) | Clamp(a, _, _) | SliceCols(a, _, _)
            | GatherRows(a, _) | ScatterRows(a, _) => vec![*a],
            ConcatCols(parts) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Arena of recorded operations. One tape per training step.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Record a leaf (parameter, input, or constant).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.leaf(Tensor::scalar(v))
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn op(&self, id: usize) -> Op<T> {
        self.nodes.borrow()[id].op.clone()
    }

    /// Column-wise concatenation of equal-height tensors.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let rows = parts
            .first()
            .map(|p| p.shape()[0])
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if parts.iter().any(|p| p.shape()[0] != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let value = {
            let vals: Vec<Ref<'_, Tensor<T>>> = parts.iter().map(|p| self.value(p.id)).collect();
            let cols: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(i));
                }
            }
            Tensor::new([rows, cols], data)?
        };
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    /// Gradients of a scalar `loss` with respect to `wrt`, as new tape nodes.
    /// Inputs not connected to the loss get a zero gradient.
    pub fn grad<'t>(&'t self, loss: Var<'t, T>, wrt: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        if loss.shape() != [1, 1] {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let n = loss.id + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.id < n {
                needs[w.id] = true;
            }
        }
        for id in 0..n {
            if !needs[id] && self.op(id).parents().iter().any(|&p| needs[p]) {
                needs[id] = true;
            }
        }

        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; n];
        grads[loss.id] = Some(self.leaf(Tensor::ones([1, 1])));
        for id in (0..n).rev() {
            if !needs[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let this = Var { tape: self, id };
            for (parent, contrib) in self.backward_rule(this, g, &needs) {
                grads[parent] = Some(match grads[parent] {
                    Some(acc) => acc.add(contrib).expect("gradient shapes agree"),
                    None => contrib,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.leaf(Tensor::zeros(w.shape())),
            })
            .collect())
    }

    /// Gradient values of `loss` with respect to `wrt`.
    pub fn backward<'t>(&'t self, loss: Var<'t, T>, wrt: &[Var<'t, T>]) -> Result<Vec<Tensor<T>>> {
        Ok(self.grad(loss, wrt)?.into_iter().map(|g| g.value()).collect())
    }

    fn backward_rule<'t>(&'t self, y: Var<'t, T>, g: Var<'t, T>, needs: &[bool]) -> Vec<(usize, Var<'t, T>)> {
        use Op::*;
        let var = |id: usize| Var { tape: self, id };
        let mut out = Vec::with_capacity(2);
        let mut emit = |p: usize, f: &dyn Fn() -> Var<'t, T>| {
            if needs[p] {
                out.push((p, f()));
            }
        };
        const OK: &str = "backward shapes are consistent";
        match self.op(y.id) {
            Leaf => {}
            MatMul(a, b) => {
                emit(a, &|| g.matmul(var(b).t()).expect(OK));
                emit(b, &|| var(a).t().matmul(g).expect(OK));
            }
            Transpose(a) => emit(a, &|| g.t()),
            Add(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g);
            }
            Sub(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g.neg());
            }
            Mul(a, b) => {
                emit(a, &|| g.mul(var(b)).expect(OK));
                emit(b, &|| g.mul(var(a)).expect(OK));
            }
            Div(a, b) => {
                emit(a, &|| g.div(var(b)).expect(OK));
                emit(b, &|| g.mul(y).expect(OK).div(var(b)).expect(OK).neg());
            }
            Neg(a) => emit(a, &|| g.neg()),
            Scale(a, c) => emit(a, &|| g.scale(c)),
            AddScalar(a) => emit(a, &|| g),
            AddRow(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g.sum_rows());
            }
            SumRows(a) => {
                let m = var(a).shape()[0];
                emit(a, &|| g.broadcast_rows(m).expect(OK));
            }
            SumCols(a) => {
                let n = var(a).shape()[1];
                emit(a, &|| g.broadcast_cols(n).expect(OK));
            }
            SumAll(a) => {
                let shape = var(a).shape();
                emit(a, &|| g.expand(shape).expect(OK));
            }
            BroadcastRows(a) => emit(a, &|| g.sum_rows()),
            BroadcastCols(a) => emit(a, &|| g.sum_cols()),
            Expand(a) => emit(a, &|| g.sum()),
            Relu(a) => emit(a, &|| {
                let mask = self.value(a).map(|v| if v > T::zero() { T::one() } else { T::zero() });
                g.mul(self.leaf(mask)).expect(OK)
            }),
            Sigmoid(a) => emit(a, &|| {
                let dy = y.mul(y.neg().add_scalar(T::one())).expect(OK);
                g.mul(dy).expect(OK)
            }),
            Tanh(a) => emit(a, &|| {
                let dy = y.square().neg().add_scalar(T::one());
                g.mul(dy).expect(OK)
            }),
            Exp(a) => emit(a, &|| g.mul(y).expect(OK)),
            Ln(a) => emit(a, &|| g.div(var(a)).expect(OK)),
            Sqrt(a) => emit(a, &|| g.div(y).expect(OK).scale(T::of(0.5))),
            Square(a) => emit(a, &|| g.mul(var(a)).expect(OK).scale(T::of(2.0))),
            Clamp(a, lo, hi) => emit(a, &|| {
                let mask = self
                    .value(a)
                    .map(|v| if v >= lo && v <= hi { T::one() } else { T::zero() });
                g.mul(self.leaf(mask)).expect(OK)
            }),
            ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = var(p).shape()[1];
                    let start = offset;
                    emit(p, &|| g.slice_cols(start, start + w).expect(OK));
                    offset += w;
                }
            }
            SliceCols(a, start, end) => emit(a, &|| {
                let [m, n] = var(a).shape();
                let mut parts = Vec::with_capacity(3);
                if start > 0 {
                    parts.push(self.leaf(Tensor::zeros([m, start])));
                }
                parts.push(g);
                if end < n {
                    parts.push(self.leaf(Tensor::zeros([m, n - end])));
                }
                self.concat_cols(&parts).expect(OK)
            }),
            GatherRows(a, idx) => {
                let rows = var(a).shape()[0];
                emit(a, &|| g.scatter_rows(idx.clone(), rows));
            }
            ScatterRows(a, idx) => emit(a, &|| g.gather_rows(idx.clone())),
        }
        out
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.value(self.id).shape()
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id).clone()
    }

    /// Value of a scalar node.
    pub fn item(&self) -> T {
        self.tape.value(self.id).item()
    }

    fn unary(self, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Tensor<T>) -> Self {
        let value = f(&self.tape.value(self.id));
        self.tape.push(value, op)
    }

    fn same_shape(self, other: Self, what: &str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
        }
        Ok(())
    }

    fn zip(self, other: Self, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, what)?;
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            a.zip_map(&b, f)
        };
        Ok(self.tape.push(value, op))
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            a.matmul(&b)?
        };
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id)))
    }

    pub fn t(self) -> Self {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.zip(other, Op::Add(self.id, other.id), "add", |a, b| a + b)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.zip(other, Op::Sub(self.id, other.id), "sub", |a, b| a - b)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.zip(other, Op::Mul(self.id, other.id), "mul", |a, b| a * b)
    }

    pub fn div(self, other: Self) -> Result<Self> {
        self.zip(other, Op::Div(self.id, other.id), "div", |a, b| a / b)
    }

    pub fn neg(self) -> Self {
        self.unary(Op::Neg(self.id), |t| t.map(|v| -v))
    }

    pub fn scale(self, c: T) -> Self {
        self.unary(Op::Scale(self.id, c), |t| t.map(|v| v * c))
    }

    pub fn add_scalar(self, c: T) -> Self {
        self.unary(Op::AddScalar(self.id), |t| t.map(|v| v + c))
    }

    /// `[m, n] + [1, n]`, the only broadcasting add.
    pub fn add_bias(self, bias: Self) -> Result<Self> {
        let [m, n] = self.shape();
        if bias.shape() != [1, n] {
            return Err(Error::Shape(format!(
                "bias {:?} for input [{m}, {n}]",
                bias.shape()
            )));
        }
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(bias.id);
            let mut out = a.clone();
            for i in 0..m {
                for j in 0..n {
                    out.data_mut()[i * n + j] = a.get(i, j) + b.get(0, j);
                }
            }
            out
        };
        Ok(self.tape.push(value, Op::AddRow(self.id, bias.id)))
    }

    /// Column sums, `[m, n] -> [1, n]`.
    pub fn sum_rows(self) -> Self {
        self.unary(Op::SumRows(self.id), |t| {
            let [m, n] = t.shape();
            let mut out = vec![T::zero(); n];
            for i in 0..m {
                for (o, &v) in out.iter_mut().zip(t.row(i)) {
                    *o = *o + v;
                }
            }
            Tensor::row_vector(out)
        })
    }

    /// Row sums, `[m, n] -> [m, 1]`.
    pub fn sum_cols(self) -> Self {
        self.unary(Op::SumCols(self.id), |t| {
            Tensor::column_vector((0..t.rows()).map(|i| t.row(i).iter().copied().sum()).collect())
        })
    }

    pub fn sum(self) -> Self {
        self.unary(Op::SumAll(self.id), |t| Tensor::scalar(t.sum()))
    }

    pub fn mean(self) -> Self {
        let n = self.shape()[0] * self.shape()[1];
        self.sum().scale(T::one() / T::of_usize(n.max(1)))
    }

    /// Per-column mean, `[m, n] -> [1, n]`.
    pub fn mean_rows(self) -> Self {
        let m = self.shape()[0];
        self.sum_rows().scale(T::one() / T::of_usize(m.max(1)))
    }

    pub fn broadcast_rows(self, m: usize) -> Result<Self> {
        let [r, n] = self.shape();
        if r != 1 {
            return Err(Error::Shape(format!("broadcast_rows on {r} rows")));
        }
        Ok(self.unary(Op::BroadcastRows(self.id), |t| {
            Tensor::new([m, n], t.data().repeat(m)).expect("consistent shape")
        }))
    }

    pub fn broadcast_cols(self, n: usize) -> Result<Self> {
        let [m, c] = self.shape();
        if c != 1 {
            return Err(Error::Shape(format!("broadcast_cols on {c} columns")));
        }
        Ok(self.unary(Op::BroadcastCols(self.id), |t| {
            let data = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
            Tensor::new([m, n], data).expect("consistent shape")
        }))
    }

    /// Broadcast a scalar to `shape`.
    pub fn expand(self, shape: [usize; 2]) -> Result<Self> {
        if self.shape() != [1, 1] {
            return Err(Error::Shape(format!("expand of {:?}", self.shape())));
        }
        Ok(self.unary(Op::Expand(self.id), |t| Tensor::full(shape, t.item())))
    }

    pub fn relu(self) -> Self {
        self.unary(Op::Relu(self.id), |t| t.map(|v| v.max(T::zero())))
    }

    pub fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid(self.id), |t| {
            t.map(|v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            })
        })
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.id), |t| t.map(T::tanh))
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp(self.id), |t| t.map(T::exp))
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Ln(self.id), |t| t.map(T::ln))
    }

    pub fn sqrt(self) -> Self {
        self.unary(Op::Sqrt(self.id), |t| t.map(T::sqrt))
    }

    pub fn square(self) -> Self {
        self.unary(Op::Square(self.id), |t| t.map(|v| v * v))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: T, hi: T) -> Self {
        self.unary(Op::Clamp(self.id, lo, hi), |t| t.map(|v| v.max(lo).min(hi)))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Self> {
        let [m, n] = self.shape();
        if start > end || end > n {
            return Err(Error::Shape(format!("slice {start}..{end} of {n} columns")));
        }
        Ok(self.unary(Op::SliceCols(self.id, start, end), |t| {
            let mut data = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                data.extend_from_slice(&t.row(i)[start..end]);
            }
            Tensor::new([m, end - start], data).expect("consistent shape")
        }))
    }

    /// Rows `idx[k]` of `self`, e.g. an embedding lookup.
    pub fn gather_rows(self, idx: Rc<[usize]>) -> Self {
        let op = Op::GatherRows(self.id, idx.clone());
        self.unary(op, |t| t.select_rows(&idx))
    }

    /// Adjoint of [`gather_rows`](Self::gather_rows): row `k` is added into
    /// output row `idx[k]` of an `n_rows`-row zero tensor.
    pub fn scatter_rows(self, idx: Rc<[usize]>, n_rows: usize) -> Self {
        let op = Op::ScatterRows(self.id, idx.clone());
        self.unary(op, |t| {
            let n = t.cols();
            let mut out = Tensor::zeros([n_rows, n]);
            for (k, &r) in idx.iter().enumerate() {
                let dst = &mut out.data_mut()[r * n..(r + 1) * n];
                for (d, &v) in dst.iter_mut().zip(t.row(k)) {
                    *d = *d + v;
                }
            }
            out
        })
    }

    /// Euclidean norm of each row, `[m, n] -> [m, 1]`.
    pub fn l2_norm_rows(self) -> Self {
        self.square().sum_cols().add_scalar(T::of(1e-12)).sqrt()
    }
}

/// Mean squared error.
pub fn mse<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(pred.sub(target)?.square().mean())
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross-entropy of probabilities `p` against targets `y` in {0, 1},
/// with `p` clamped into `[1e-7, 1 - 1e-7]`.
pub fn bce<'t, T: Scalar>(p: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
    p.same_shape(y, "bce")?;
    let eps = T::of(BCE_CLAMP);
    let p = p.clamp(eps, T::one() - eps);
    let pos = y.mul(p.ln())?;
    let neg = y.neg().add_scalar(T::one()).mul(p.neg().add_scalar(T::one()).ln())?;
    Ok(pos.add(neg)?.mean().neg())
}

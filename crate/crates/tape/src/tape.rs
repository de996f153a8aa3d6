//! Define-by-run tape.
//!
//! Every operation on a [`Var`] appends a node holding its forward value and
//! the ids of its operands. Node ids are assigned in creation order, so the
//! node vector is already a topological order and [`Tape::backward`] is a
//! single reverse sweep. Adjoints are accumulated in that fixed order, which
//! makes gradients bit-reproducible.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::TapeError;
use crate::kernels;
use crate::param::Parameter;
use crate::shape::{axis_split, broadcast_to, sum_to_shape, zip_broadcast};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Tanh(usize),
    Softplus(usize),
    Sigmoid(usize),
    Square(usize),
    SumAll(usize),
    SumAxis(usize),
    LogSumExp(usize),
    Broadcast(usize),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        src: usize,
        axis: usize,
        index: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Records operations for one forward pass. Rebuild per training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    differentiated: Cell<bool>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Adjoints of the leaves that required gradients, indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when no adjoint reached it.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros of the right shape when it was unreachable.
    pub fn wrt_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.wrt(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }

    /// Stores the gradient for `v` into `param`.
    pub fn write_into(&self, param: &mut Parameter, v: Var<'_>) {
        param.set_grad(self.wrt_or_zeros(v));
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

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that never receives an adjoint.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Binds a parameter's current value as a leaf.
    pub fn param(&self, p: &Parameter) -> Var<'_> {
        self.leaf(p.value().clone(), p.requires_grad())
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn check<'t>(&'t self, v: Var<'t>) -> Result<(), TapeError> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(TapeError::ForeignVar)
        }
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, TapeError> {
        if parts.is_empty() {
            return Err(TapeError::ShapeMismatch {
                op: "concat",
                lhs: Vec::new(),
                rhs: Vec::new(),
            });
        }
        for p in parts {
            self.check(*p)?;
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value_of(p.id)).collect();
        let base = values[0].shape().to_vec();
        let (outer, _, inner) = axis_split("concat", &base, axis)?;
        let mut extent = 0;
        for v in &values {
            let s = v.shape();
            let same_rest = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(TapeError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            extent += s[axis];
        }
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for v in &values {
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = extent;
        let rg = parts.iter().any(|p| self.requires(p.id));
        Ok(self.push(
            Op::Concat(parts.iter().map(|p| p.id).collect(), axis),
            Tensor::from_parts(shape, data),
            rg,
        ))
    }

    /// Reverse sweep from a one-element output. A tape can be differentiated once.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, TapeError> {
        self.check(output)?;
        if self.differentiated.replace(true) {
            return Err(TapeError::AlreadyDifferentiated);
        }
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            self.differentiated.set(false);
            return Err(TapeError::NotScalar(out.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.id + 1];
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        adj[output.id] = Some(Tensor::ones(out.value.shape()));

        for id in (0..=output.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (parent, contribution) in local_adjoints(&nodes, node, &g) {
                match &mut adj[parent] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoint contributions of one node to each operand that requires a gradient.
fn local_adjoints(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let wants = |id: usize| nodes[id].requires_grad;
    let out = &*node.value;
    let mut res = Vec::with_capacity(2);
    let elementwise = |res: &mut Vec<(usize, Tensor)>, a: usize, f: &dyn Fn(f64, usize) -> f64| {
        if wants(a) {
            let data = g.data().iter().enumerate().map(|(i, &gi)| f(gi, i)).collect();
            res.push((a, Tensor::from_parts(g.shape().to_vec(), data)));
        }
    };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants(*a) {
                res.push((*a, sum_to_shape(g, val(*a).shape())));
            }
            if wants(*b) {
                res.push((*b, sum_to_shape(g, val(*b).shape())));
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                res.push((*a, sum_to_shape(g, val(*a).shape())));
            }
            if wants(*b) {
                res.push((*b, sum_to_shape(&g.map(|v| -v), val(*b).shape())));
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                let t = zip_broadcast("mul", g, val(*b), |x, y| x * y).expect("shapes recorded");
                res.push((*a, sum_to_shape(&t, val(*a).shape())));
            }
            if wants(*b) {
                let t = zip_broadcast("mul", g, val(*a), |x, y| x * y).expect("shapes recorded");
                res.push((*b, sum_to_shape(&t, val(*b).shape())));
            }
        }
        Op::Div(a, b) => {
            if wants(*a) {
                let t = zip_broadcast("div", g, val(*b), |x, y| x / y).expect("shapes recorded");
                res.push((*a, sum_to_shape(&t, val(*a).shape())));
            }
            if wants(*b) {
                // d(a/b)/db = -out / b
                let go = zip_broadcast("div", g, out, |x, y| -x * y).expect("shapes recorded");
                let t = zip_broadcast("div", &go, val(*b), |x, y| x / y).expect("shapes recorded");
                res.push((*b, sum_to_shape(&t, val(*b).shape())));
            }
        }
        Op::Neg(a) => elementwise(&mut res, *a, &|gi, _| -gi),
        Op::Scale(a, c) => elementwise(&mut res, *a, &|gi, _| gi * c),
        Op::Offset(a) => elementwise(&mut res, *a, &|gi, _| gi),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                res.push((*a, kernels::matmul_nt(g, bv)));
            }
            if wants(*b) {
                res.push((*b, kernels::matmul_tn(av, g)));
            }
        }
        Op::Exp(a) => elementwise(&mut res, *a, &|gi, i| gi * out.data()[i]),
        Op::Log(a) => {
            let x = val(*a);
            elementwise(&mut res, *a, &|gi, i| gi / x.data()[i])
        }
        Op::Sqrt(a) => elementwise(&mut res, *a, &|gi, i| gi / (2.0 * out.data()[i])),
        Op::Tanh(a) => elementwise(&mut res, *a, &|gi, i| {
            let t = out.data()[i];
            gi * (1.0 - t * t)
        }),
        Op::Softplus(a) => {
            let x = val(*a);
            elementwise(&mut res, *a, &|gi, i| gi * kernels::sigmoid(x.data()[i]))
        }
        Op::Sigmoid(a) => elementwise(&mut res, *a, &|gi, i| {
            let s = out.data()[i];
            gi * s * (1.0 - s)
        }),
        Op::Square(a) => {
            let x = val(*a);
            elementwise(&mut res, *a, &|gi, i| 2.0 * gi * x.data()[i])
        }
        Op::SumAll(a) => {
            if wants(*a) {
                res.push((*a, Tensor::full(val(*a).shape(), g.data()[0])));
            }
        }
        Op::SumAxis(a) => {
            if wants(*a) {
                res.push((*a, broadcast_to(g, val(*a).shape()).expect("keepdim shape")));
            }
        }
        Op::LogSumExp(a) => {
            if wants(*a) {
                let x = val(*a);
                let gb = broadcast_to(g, x.shape()).expect("keepdim shape");
                let ob = broadcast_to(out, x.shape()).expect("keepdim shape");
                let data = x
                    .data()
                    .iter()
                    .zip(gb.data())
                    .zip(ob.data())
                    .map(|((&xi, &gi), &li)| {
                        if li == f64::NEG_INFINITY {
                            0.0
                        } else {
                            gi * (xi - li).exp()
                        }
                    })
                    .collect();
                res.push((*a, Tensor::from_parts(x.shape().to_vec(), data)));
            }
        }
        Op::Broadcast(a) => {
            if wants(*a) {
                res.push((*a, sum_to_shape(g, val(*a).shape())));
            }
        }
        Op::Reshape(a) => {
            if wants(*a) {
                res.push((*a, Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec())));
            }
        }
        Op::Concat(parts, axis) => {
            let (outer, extent, inner) =
                axis_split("concat", g.shape(), *axis).expect("shape recorded");
            let mut offset = 0;
            for &p in parts {
                let ps = val(p).shape().to_vec();
                let len = ps[*axis];
                if wants(p) {
                    let mut data = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * extent + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    res.push((p, Tensor::from_parts(ps, data)));
                }
                offset += len;
            }
        }
        Op::Slice { src, axis, start } => {
            if wants(*src) {
                let s = val(*src).shape().to_vec();
                let (outer, extent, inner) = axis_split("slice", &s, *axis).expect("shape recorded");
                let len = g.shape()[*axis];
                let mut data = vec![0.0; s.iter().product()];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let srcb = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g.data()[srcb..srcb + len * inner]);
                }
                res.push((*src, Tensor::from_parts(s, data)));
            }
        }
        Op::IndexSelect { src, axis, index } => {
            if wants(*src) {
                let s = val(*src).shape().to_vec();
                let (outer, extent, inner) =
                    axis_split("index_select", &s, *axis).expect("shape recorded");
                let mut data = vec![0.0; s.iter().product()];
                let gd = g.data();
                for o in 0..outer {
                    for (k, &ix) in index.iter().enumerate() {
                        let dst = (o * extent + ix) * inner;
                        let srcb = (o * index.len() + k) * inner;
                        for j in 0..inner {
                            data[dst + j] += gd[srcb + j];
                        }
                    }
                }
                res.push((*src, Tensor::from_parts(s, data)));
            }
        }
    }
    res
}

macro_rules! unary {
    ($(#[$doc:meta])* $name:ident, $variant:ident, $f:expr) => {
        $(#[$doc])*
        pub fn $name(self) -> Var<'t> {
            let v = self.value().map($f);
            let rg = self.requires_grad();
            self.tape.push(Op::$variant(self.id), v, rg)
        }
    };
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The value of a one-element variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor of shape {:?}", v.shape());
        v.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn binary(
        self,
        other: Var<'t>,
        op: &'static str,
        make: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var<'t>, TapeError> {
        self.tape.check(other)?;
        let v = zip_broadcast(op, &self.value(), &other.value(), f)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(make(self.id, other.id), v, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TapeError> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TapeError> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TapeError> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    /// Elementwise quotient; a zero anywhere in the divisor is a domain error.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, TapeError> {
        if other.value().data().iter().any(|&v| v == 0.0) {
            return Err(TapeError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TapeError> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let v = kernels::matmul(&a, &b);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Op::MatMul(self.id, other.id), v, rg))
    }

    unary!(neg, Neg, |x| -x);
    unary!(exp, Exp, f64::exp);
    unary!(tanh, Tanh, f64::tanh);
    unary!(
        /// `ln(1 + e^x)`, evaluated without overflow.
        softplus,
        Softplus,
        kernels::softplus
    );
    unary!(sigmoid, Sigmoid, kernels::sigmoid);
    unary!(square, Square, |x| x * x);

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| c * x);
        let rg = self.requires_grad();
        self.tape.push(Op::Scale(self.id, c), v, rg)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        let rg = self.requires_grad();
        self.tape.push(Op::Offset(self.id), v, rg)
    }

    /// Natural log; non-positive entries are a domain error.
    pub fn log(self) -> Result<Var<'t>, TapeError> {
        let x = self.value();
        if let Some(bad) = x.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(TapeError::Domain {
                op: "log",
                detail: format!("log of {bad}"),
            });
        }
        let v = x.map(f64::ln);
        Ok(self.tape.push(Op::Log(self.id), v, self.requires_grad()))
    }

    /// Square root; negative entries are a domain error.
    pub fn sqrt(self) -> Result<Var<'t>, TapeError> {
        let x = self.value();
        if let Some(bad) = x.data().iter().find(|&&v| !(v >= 0.0)) {
            return Err(TapeError::Domain {
                op: "sqrt",
                detail: format!("sqrt of {bad}"),
            });
        }
        let v = x.map(f64::sqrt);
        Ok(self.tape.push(Op::Sqrt(self.id), v, self.requires_grad()))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.tape
            .push(Op::SumAll(self.id), Tensor::scalar(s), self.requires_grad())
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, TapeError> {
        let x = self.value();
        let (outer, extent, inner) = axis_split("sum_axis", x.shape(), axis)?;
        let mut data = vec![0.0; outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for k in 0..extent {
                let base = (o * extent + k) * inner;
                for j in 0..inner {
                    data[o * inner + j] += xd[base + j];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        Ok(self.tape.push(
            Op::SumAxis(self.id),
            Tensor::from_parts(shape, data),
            self.requires_grad(),
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>, TapeError> {
        let n = self.value().shape().get(axis).copied().unwrap_or(1).max(1) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// `log Σ exp` along `axis`, keeping it with extent 1.
    pub fn logsumexp_axis(self, axis: usize) -> Result<Var<'t>, TapeError> {
        let x = self.value();
        let (outer, extent, inner) = axis_split("logsumexp", x.shape(), axis)?;
        let xd = x.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..inner {
                let at = |k: usize| xd[(o * extent + k) * inner + j];
                data[o * inner + j] = kernels::logsumexp((0..extent).map(at));
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        Ok(self.tape.push(
            Op::LogSumExp(self.id),
            Tensor::from_parts(shape, data),
            self.requires_grad(),
        ))
    }

    /// `log Σ exp` over every element, as a rank-0 tensor.
    pub fn logsumexp(self) -> Var<'t> {
        let n = self.value().len();
        self.reshape(&[n])
            .and_then(|v| v.logsumexp_axis(0))
            .and_then(|v| v.reshape(&[]))
            .expect("flattened shapes are consistent")
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>, TapeError> {
        let v = broadcast_to(&self.value(), shape)?;
        Ok(self
            .tape
            .push(Op::Broadcast(self.id), v, self.requires_grad()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, TapeError> {
        let v = self.value().reshaped(shape)?;
        Ok(self.tape.push(Op::Reshape(self.id), v, self.requires_grad()))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>, TapeError> {
        let x = self.value();
        let (outer, extent, inner) = axis_split("slice", x.shape(), axis)?;
        if start + len > extent {
            return Err(TapeError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                extent,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        Ok(self.tape.push(
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
            Tensor::from_parts(shape, data),
            self.requires_grad(),
        ))
    }

    /// Gathers entries along `axis` by index; repeated indices are allowed.
    pub fn index_select(self, axis: usize, index: &[usize]) -> Result<Var<'t>, TapeError> {
        let x = self.value();
        let (outer, extent, inner) = axis_split("index_select", x.shape(), axis)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= extent) {
            return Err(TapeError::IndexOutOfRange {
                op: "index_select",
                index: bad,
                extent,
            });
        }
        let mut data = Vec::with_capacity(outer * index.len() * inner);
        for o in 0..outer {
            for &ix in index {
                let base = (o * extent + ix) * inner;
                data.extend_from_slice(&x.data()[base..base + inner]);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = index.len();
        Ok(self.tape.push(
            Op::IndexSelect {
                src: self.id,
                axis,
                index: index.to_vec(),
            },
            Tensor::from_parts(shape, data),
            self.requires_grad(),
        ))
    }

    /// Same value, no adjoint flow.
    pub fn stop_gradient(self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let t = Tape::new();
        let y = t.scalar(0.0).softplus();
        assert!(close(y.item(), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn logsumexp_of_two_zeros_is_ln2() {
        let t = Tape::new();
        let x = t.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        assert!(close(x.logsumexp().item(), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn stop_gradient_times_x_gives_x() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0), true);
        let y = x.stop_gradient().mul(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn square_derivative() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0), true);
        let g = t.backward(x.square()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let t = Tape::new();
        let (a, b) = (0.3, -1.2);
        let x = t.leaf(Tensor::new(vec![2], vec![a, b]).unwrap(), true);
        let g = t.backward(x.logsumexp()).unwrap();
        let z = a.exp() + b.exp();
        let got = g.wrt(x).unwrap().data().to_vec();
        assert!(close(got[0], a.exp() / z, 1e-14));
        assert!(close(got[1], b.exp() / z, 1e-14));
    }

    #[test]
    fn shape_mismatch_is_structured() {
        let t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(a.add(b), Err(TapeError::ShapeMismatch { .. })));
        assert!(matches!(a.matmul(a), Err(TapeError::ShapeMismatch { .. })));
    }

    #[test]
    fn domain_errors() {
        let t = Tape::new();
        let z = t.constant(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(z.log(), Err(TapeError::Domain { .. })));
        assert!(matches!(z.div(z), Err(TapeError::Domain { .. })));
        assert!(matches!(t.scalar(-1.0).sqrt(), Err(TapeError::Domain { .. })));
    }

    #[test]
    fn backward_contract() {
        let t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]), true);
        assert!(matches!(t.backward(x), Err(TapeError::NotScalar(_))));
        let s = x.sum();
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(TapeError::AlreadyDifferentiated)));
    }

    #[test]
    fn foreign_var_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.scalar(1.0);
        let b = t2.scalar(1.0);
        assert!(matches!(a.add(b), Err(TapeError::ForeignVar)));
    }

    #[test]
    fn stop_gradient_blocks_everything() {
        let t = Tape::new();
        let x = t.leaf(Tensor::row(&[0.5, -0.7]), true);
        let y = x.tanh().stop_gradient().exp().sum();
        let g = t.backward(y).unwrap();
        assert!(g.wrt(x).is_none());
        assert_eq!(g.wrt_or_zeros(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn index_select_accumulates_repeats() {
        let t = Tape::new();
        let x = t.leaf(Tensor::new(vec![3, 1], vec![1., 2., 3.]).unwrap(), true);
        let y = x.index_select(0, &[2, 0, 2]).unwrap();
        assert_eq!(y.value().data(), &[3., 1., 3.]);
        let g = t.backward(y.sum()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1., 0., 2.]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 1], vec![1., 2.]).unwrap());
        let b = t.constant(Tensor::new(vec![2, 2], vec![3., 4., 5., 6.]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1., 3., 4., 2., 5., 6.]);
        assert_eq!(c.slice(1, 1, 2).unwrap().value().data(), b.value().data());
    }
}

//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation as a node in an arena. Node indices
//! are assigned in creation order, which is a topological order, so the
//! backward pass is a single reverse sweep that visits each node once.
//!
//! ```
//! use bilbo_core::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let loss = tape.sum(tape.square(x));
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```
//!
//! ReLU uses the subgradient 0 at the kink.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a[r, c] + v[c]`
    AddRow(Var, Var),
    /// `a[r, c] * v[c]`
    MulRow(Var, Var),
    /// `a[r, c] * s[r]`
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Recip(Var),
    ClampMin(Var, f64),
    Sum(Var),
    /// column sums: `[r, c] -> [c]`
    SumRows(Var),
    /// row sums: `[r, c] -> [r]`
    SumCols(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of one scalar with respect to every node that needed them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes.borrow()[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies `v`'s value into a new constant, cutting the gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.matmul(&nodes[b.0].value)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(&self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            x.check_same(y, name)?;
            x.zip_map(y, f)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    fn row_broadcast(&self, a: Var, v: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[v.0].value);
            let (r, c) = x.dims2();
            if y.len() != c {
                return Err(Error::Shape {
                    op: name,
                    lhs: x.shape().to_vec(),
                    rhs: y.shape().to_vec(),
                });
            }
            let mut out = x.clone();
            for i in 0..r {
                for (o, &w) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(y.data()) {
                    *o = f(*o, w);
                }
            }
            out
        };
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(value, op, rg))
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&self, a: Var, v: Var) -> Result<Var> {
        self.row_broadcast(a, v, Op::AddRow(a, v), "add_row", |x, y| x + y)
    }

    /// Multiplies every row of `a` elementwise by a row vector.
    pub fn mul_row(&self, a: Var, v: Var) -> Result<Var> {
        self.row_broadcast(a, v, Op::MulRow(a, v), "mul_row", |x, y| x * y)
    }

    /// Multiplies row `r` of `a` by `s[r]`.
    pub fn mul_col(&self, a: Var, s: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[s.0].value);
            let (r, c) = x.dims2();
            if y.len() != r {
                return Err(Error::Shape {
                    op: "mul_col",
                    lhs: x.shape().to_vec(),
                    rhs: y.shape().to_vec(),
                });
            }
            let mut out = x.clone();
            for i in 0..r {
                let w = y.data()[i];
                for o in &mut out.data_mut()[i * c..(i + 1) * c] {
                    *o *= w;
                }
            }
            out
        };
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(value, Op::MulCol(a, s), rg))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    /// `max(a, floor)`; values at or below the floor get zero gradient.
    pub fn clamp_min(&self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |x| if x > floor { x } else { floor })
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self, a: Var) -> Var {
        let value = {
            let x = self.value(a);
            let (r, c) = x.dims2();
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            Tensor::vector(out)
        };
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Row sums of a matrix.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = {
            let x = self.value(a);
            let r = x.rows();
            Tensor::vector((0..r).map(|i| x.row(i).iter().sum()).collect())
        };
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Column means of a matrix.
    pub fn mean_rows(&self, a: Var) -> Var {
        let r = self.value(a).rows() as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / r)
    }

    /// Runs the backward pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.requires_grad {
                propagate(&nodes, node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: Var| &nodes[v.0].value;
    let elementwise = |a: Var, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
        // f(input, upstream)
        val(a).zip_map(g, f).expect("shapes recorded on the tape agree")
    };
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(a).dims2();
            let n = val(b).cols();
            if nodes[a.0].requires_grad {
                let mut ga = Tensor::zeros(val(a).shape());
                gemm(false, true, m, n, k, 1.0, g.data(), val(b).data(), 0.0, ga.data_mut());
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b.0].requires_grad {
                let mut gb = Tensor::zeros(val(b).shape());
                gemm(true, false, k, m, n, 1.0, val(a).data(), g.data(), 0.0, gb.data_mut());
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, a, elementwise(b, &|y, u| y * u));
            accumulate(nodes, grads, b, elementwise(a, &|x, u| x * u));
        }
        Op::Div(a, b) => {
            accumulate(nodes, grads, a, elementwise(b, &|y, u| u / y));
            let gb = {
                let (x, y) = (val(a), val(b));
                let mut out = g.clone();
                for ((o, &xv), &yv) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *o = -*o * xv / (yv * yv);
                }
                out
            };
            accumulate(nodes, grads, b, gb);
        }
        Op::AddRow(a, v) => {
            accumulate(nodes, grads, a, g.clone());
            if nodes[v.0].requires_grad {
                let gv = column_sums(g).reshape(val(v).shape()).expect("row length");
                accumulate(nodes, grads, v, gv);
            }
        }
        Op::MulRow(a, v) => {
            let (r, c) = g.dims2();
            if nodes[a.0].requires_grad {
                let mut ga = g.clone();
                for i in 0..r {
                    for (o, &w) in ga.data_mut()[i * c..(i + 1) * c].iter_mut().zip(val(v).data()) {
                        *o *= w;
                    }
                }
                accumulate(nodes, grads, a, ga);
            }
            if nodes[v.0].requires_grad {
                let prod = val(a).zip_map(g, |x, u| x * u).expect("same shape");
                let gv = column_sums(&prod).reshape(val(v).shape()).expect("row length");
                accumulate(nodes, grads, v, gv);
            }
        }
        Op::MulCol(a, s) => {
            let (r, c) = g.dims2();
            if nodes[a.0].requires_grad {
                let mut ga = g.clone();
                for i in 0..r {
                    let w = val(s).data()[i];
                    for o in &mut ga.data_mut()[i * c..(i + 1) * c] {
                        *o *= w;
                    }
                }
                accumulate(nodes, grads, a, ga);
            }
            if nodes[s.0].requires_grad {
                let x = val(a);
                let gs: Vec<f64> = (0..r)
                    .map(|i| x.row(i).iter().zip(g.row(i)).map(|(p, q)| p * q).sum())
                    .collect();
                let gs = Tensor::vector(gs).reshape(val(s).shape()).expect("column length");
                accumulate(nodes, grads, s, gs);
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, a, g.map(|u| u * c)),
        Op::AddScalar(a) => accumulate(nodes, grads, a, g.clone()),
        Op::Relu(a) => accumulate(nodes, grads, a, elementwise(a, &|x, u| if x > 0.0 { u } else { 0.0 })),
        Op::Softplus(a) => accumulate(nodes, grads, a, elementwise(a, &|x, u| u * sigmoid(x))),
        Op::Exp(a) => {
            let ga = node.value.zip_map(g, |y, u| y * u).expect("same shape");
            accumulate(nodes, grads, a, ga);
        }
        Op::Ln(a) => accumulate(nodes, grads, a, elementwise(a, &|x, u| u / x)),
        Op::Square(a) => accumulate(nodes, grads, a, elementwise(a, &|x, u| 2.0 * x * u)),
        Op::Sqrt(a) => {
            let ga = node.value.zip_map(g, |y, u| 0.5 * u / y).expect("same shape");
            accumulate(nodes, grads, a, ga);
        }
        Op::Recip(a) => {
            let ga = node.value.zip_map(g, |y, u| -u * y * y).expect("same shape");
            accumulate(nodes, grads, a, ga);
        }
        Op::ClampMin(a, floor) => {
            accumulate(nodes, grads, a, elementwise(a, &|x, u| if x > floor { u } else { 0.0 }))
        }
        Op::Sum(a) => {
            let u = g.data()[0];
            accumulate(nodes, grads, a, Tensor::full(val(a).shape(), u));
        }
        Op::SumRows(a) => {
            let (r, c) = val(a).dims2();
            let mut ga = Tensor::zeros(val(a).shape());
            for i in 0..r {
                ga.data_mut()[i * c..(i + 1) * c].copy_from_slice(g.data());
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::SumCols(a) => {
            let (r, c) = val(a).dims2();
            let mut ga = Tensor::zeros(val(a).shape());
            for i in 0..r {
                let u = g.data()[i];
                for o in &mut ga.data_mut()[i * c..(i + 1) * c] {
                    *o = u;
                }
            }
            accumulate(nodes, grads, a, ga);
        }
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(t.row(i)) {
            *o += v;
        }
    }
    Tensor::vector(out)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.wrt(loss).data(), &[1.0]);
    }

    #[test]
    fn squared_norm_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = tape.sum(tape.square(x));
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_sum_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.leaf(Tensor::matrix(3, 2, vec![0.5, -1., 2., 0., 1., 3.]).unwrap());
        let loss = tape.sum(tape.matmul(a, b).unwrap());
        let g = tape.backward(loss).unwrap();
        // grad_a = ones(2x2) * bᵀ: each row is the row sums of b
        assert_eq!(g.wrt(a).data(), &[-0.5, 2.0, 4.0, -0.5, 2.0, 4.0]);
        // grad_b = aᵀ * ones: each column is the column sums of a
        assert_eq!(g.wrt(b).data(), &[5., 5., 7., 7., 9., 9.]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let loss = tape.sum(tape.mul(c, x).unwrap());
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum(tape.add(y, x).unwrap());
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).item(), 7.0);
    }

    #[test]
    fn relu_kink_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let loss = tape.sum(tape.relu(x));
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(100.0), 100.0);
        // high-precision reference: ln(1 + e^-3)
        assert!((softplus(-3.0) - 0.048_587_351_573_741_97).abs() < 1e-15);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(800.0).is_finite());
    }
}

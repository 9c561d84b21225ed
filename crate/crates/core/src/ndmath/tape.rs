//! Tape-based reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] consumes the tape and returns the gradients of a scalar
//! loss with respect to every recorded node that depends on a trainable leaf.
//!
//! Broadcasting is limited to two cases: equal shapes, and a single-element
//! operand against any shape. Bias addition over a batch goes through the
//! explicit [`Tape::add_rowwise`] op instead.

use crate::error::{Error, Result};
use crate::ndmath::ParamTensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation kinds accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Minimum,
    Tanh,
    Relu,
    Exp,
    Log,
    Neg,
    Square,
    Softplus,
    Clamp { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Tanh,
    Relu,
    Exp,
    Log,
    Neg,
    Square,
    Softplus,
    Clamp { lo: f64, hi: f64 },
    Scale(f64),
    Offset(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: Var, b: Var },
    Unary { kind: UnaryKind, x: Var },
    MatMul { a: Var, b: Var },
    AddRowwise { x: Var, row: Var },
    Sum { x: Var },
    Mean { x: Var },
    SumCols { x: Var },
    ConcatCols { a: Var, b: Var },
    SliceCols { x: Var, start: usize, end: usize },
    Reshape { x: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn as_matrix(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::Dimension {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> ParamTensor {
        let n = self.node(v);
        ParamTensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold valid shapes")
    }

    /// Records a parameter. Gradients flow to it iff `requires_grad` is set.
    pub fn leaf(&mut self, t: &ParamTensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, t: &ParamTensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        if numel(&shape) != values.len() {
            return Err(Error::Dimension {
                op: "constant",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.push(Vec::new(), vec![v], Op::Leaf, false)
    }

    /// Copies a node's value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, inputs: &[Var]) -> Result<Var> {
        let binary = |kind| -> Result<(BinaryKind, Var, Var)> {
            match inputs {
                [a, b] => Ok((kind, *a, *b)),
                _ => Err(Error::contract(format!(
                    "{op:?} expects 2 inputs, got {}",
                    inputs.len()
                ))),
            }
        };
        let unary = |kind| -> Result<(UnaryKind, Var)> {
            match inputs {
                [x] => Ok((kind, *x)),
                _ => Err(Error::contract(format!(
                    "{op:?} expects 1 input, got {}",
                    inputs.len()
                ))),
            }
        };
        match op {
            ElementwiseOp::Add => binary(BinaryKind::Add).and_then(|(k, a, b)| self.binary(k, a, b)),
            ElementwiseOp::Sub => binary(BinaryKind::Sub).and_then(|(k, a, b)| self.binary(k, a, b)),
            ElementwiseOp::Mul => binary(BinaryKind::Mul).and_then(|(k, a, b)| self.binary(k, a, b)),
            ElementwiseOp::Div => binary(BinaryKind::Div).and_then(|(k, a, b)| self.binary(k, a, b)),
            ElementwiseOp::Minimum => {
                binary(BinaryKind::Minimum).and_then(|(k, a, b)| self.binary(k, a, b))
            }
            ElementwiseOp::Tanh => unary(UnaryKind::Tanh).and_then(|(k, x)| self.unary(k, x)),
            ElementwiseOp::Relu => unary(UnaryKind::Relu).and_then(|(k, x)| self.unary(k, x)),
            ElementwiseOp::Exp => unary(UnaryKind::Exp).and_then(|(k, x)| self.unary(k, x)),
            ElementwiseOp::Log => unary(UnaryKind::Log).and_then(|(k, x)| self.unary(k, x)),
            ElementwiseOp::Neg => unary(UnaryKind::Neg).and_then(|(k, x)| self.unary(k, x)),
            ElementwiseOp::Square => unary(UnaryKind::Square).and_then(|(k, x)| self.unary(k, x)),
            ElementwiseOp::Softplus => {
                unary(UnaryKind::Softplus).and_then(|(k, x)| self.unary(k, x))
            }
            ElementwiseOp::Clamp { lo, hi } => {
                if lo > hi {
                    return Err(Error::Domain {
                        op: "clamp",
                        detail: format!("lo {lo} > hi {hi}"),
                    });
                }
                unary(UnaryKind::Clamp { lo, hi }).and_then(|(k, x)| self.unary(k, x))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Minimum, a, b)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x).expect("tanh is total")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x).expect("relu is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x).expect("exp is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x).expect("neg is total")
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x).expect("square is total")
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x).expect("softplus is total")
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.elementwise(ElementwiseOp::Clamp { lo, hi }, &[x])
    }

    /// `x * c` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x).expect("scale is total")
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Offset(c), x).expect("offset is total")
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let shape = if na.shape == nb.shape || (na.value.len() == 1 && nb.value.len() == 1) {
            if na.shape.len() >= nb.shape.len() {
                na.shape.clone()
            } else {
                nb.shape.clone()
            }
        } else if na.value.len() == 1 {
            nb.shape.clone()
        } else if nb.value.len() == 1 {
            na.shape.clone()
        } else {
            return Err(Error::Dimension {
                op: "elementwise",
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        };
        let n = numel(&shape);
        let (va, vb) = (&na.value, &nb.value);
        let sa = usize::from(va.len() != 1);
        let sb = usize::from(vb.len() != 1);
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
            BinaryKind::Minimum => |x, y| if y < x { y } else { x },
        };
        let value: Vec<f64> = (0..n).map(|i| f(va[i * sa], vb[i * sb])).collect();
        let needs_grad = na.needs_grad || nb.needs_grad;
        Ok(self.push(shape, value, Op::Binary { kind, a, b }, needs_grad))
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let nx = self.node(x);
        if kind == UnaryKind::Log {
            if let Some(bad) = nx.value.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        let value: Vec<f64> = nx
            .value
            .iter()
            .map(|&v| match kind {
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::Exp => v.exp(),
                UnaryKind::Log => v.ln(),
                UnaryKind::Neg => -v,
                UnaryKind::Square => v * v,
                UnaryKind::Softplus => softplus(v),
                UnaryKind::Clamp { lo, hi } => v.clamp(lo, hi),
                UnaryKind::Scale(c) => v * c,
                UnaryKind::Offset(c) => v + c,
            })
            .collect();
        let (shape, needs_grad) = (nx.shape.clone(), nx.needs_grad);
        Ok(self.push(shape, value, Op::Unary { kind, x }, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let dim_err = || Error::Dimension {
            op: "matmul",
            lhs: na.shape.clone(),
            rhs: nb.shape.clone(),
        };
        let (m, k) = as_matrix("matmul", &na.shape).map_err(|_| dim_err())?;
        let (k2, n) = as_matrix("matmul", &nb.shape).map_err(|_| dim_err())?;
        if k != k2 {
            return Err(dim_err());
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&na.value, &nb.value, &mut out, m, k, n);
        let needs_grad = na.needs_grad || nb.needs_grad;
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }, needs_grad))
    }

    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_rowwise(&mut self, x: Var, row: Var) -> Result<Var> {
        let (nx, nr) = (self.node(x), self.node(row));
        let (m, n) = as_matrix("add_rowwise", &nx.shape)?;
        if nr.value.len() != n || nr.shape.len() > 2 {
            return Err(Error::Dimension {
                op: "add_rowwise",
                lhs: nx.shape.clone(),
                rhs: nr.shape.clone(),
            });
        }
        let mut value = nx.value.clone();
        for r in 0..m {
            value[r * n..(r + 1) * n]
                .iter_mut()
                .zip(&nr.value)
                .for_each(|(v, b)| *v += b);
        }
        let needs_grad = nx.needs_grad || nr.needs_grad;
        Ok(self.push(vec![m, n], value, Op::AddRowwise { x, row }, needs_grad))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let nx = self.node(x);
        let s = nx.value.iter().sum();
        let ng = nx.needs_grad;
        self.push(Vec::new(), vec![s], Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let nx = self.node(x);
        let s = nx.value.iter().sum::<f64>() / nx.value.len() as f64;
        let ng = nx.needs_grad;
        self.push(Vec::new(), vec![s], Op::Mean { x }, ng)
    }

    /// Row sums: `m×n → m`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let nx = self.node(x);
        let (m, n) = as_matrix("sum_cols", &nx.shape)?;
        let value = nx.value.chunks(n).map(|r| r.iter().sum()).collect();
        let ng = nx.needs_grad;
        Ok(self.push(vec![m], value, Op::SumCols { x }, ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let (m, p) = as_matrix("concat_cols", &na.shape)?;
        let (m2, q) = as_matrix("concat_cols", &nb.shape)?;
        if m != m2 {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let mut value = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            value.extend_from_slice(&na.value[r * p..(r + 1) * p]);
            value.extend_from_slice(&nb.value[r * q..(r + 1) * q]);
        }
        let needs_grad = na.needs_grad || nb.needs_grad;
        Ok(self.push(vec![m, p + q], value, Op::ConcatCols { a, b }, needs_grad))
    }

    /// Columns `start..end` of an `m×n` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let nx = self.node(x);
        let (m, n) = as_matrix("slice_cols", &nx.shape)?;
        if start >= end || end > n {
            return Err(Error::contract(format!(
                "slice_cols range {start}..{end} outside 0..{n}"
            )));
        }
        let w = end - start;
        let mut value = Vec::with_capacity(m * w);
        for r in 0..m {
            value.extend_from_slice(&nx.value[r * n + start..r * n + end]);
        }
        let ng = nx.needs_grad;
        Ok(self.push(vec![m, w], value, Op::SliceCols { x, start, end }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let nx = self.node(x);
        if numel(&shape) != nx.value.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: nx.shape.clone(),
                rhs: shape,
            });
        }
        let (value, ng) = (nx.value.clone(), nx.needs_grad);
        Ok(self.push(shape, value, Op::Reshape { x }, ng))
    }

    /// Diagonal-Gaussian log density.
    ///
    /// For 1-D inputs of length `d` the result is a scalar; for `B×d` inputs it
    /// is a length-`B` vector of per-row log densities. `std` may be a single
    /// element shared by every dimension.
    pub fn gaussian_log_prob(&mut self, x: Var, mean: Var, std: Var) -> Result<Var> {
        if let Some(bad) = self.value(std).iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Domain {
                op: "gaussian_log_prob",
                detail: format!("std must be strictly positive, got {bad}"),
            });
        }
        if self.shape(x) != self.shape(mean) {
            return Err(Error::Dimension {
                op: "gaussian_log_prob",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(mean).to_vec(),
            });
        }
        if self.value(std).len() != 1 && self.shape(std) != self.shape(x) {
            return Err(Error::Dimension {
                op: "gaussian_log_prob",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(std).to_vec(),
            });
        }
        let diff = self.sub(x, mean)?;
        let z = self.div(diff, std)?;
        let z2 = self.square(z);
        let quad = self.scale(z2, -0.5);
        let log_std = self.log(std)?;
        let per_dim = self.sub(quad, log_std)?;
        let per_dim = self.offset(per_dim, -HALF_LN_2PI);
        match self.shape(x).len() {
            2 => self.sum_cols(per_dim),
            _ => Ok(self.sum(per_dim)),
        }
    }

    /// Runs the reverse pass from a single-element `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Tape { nodes } = self;
        if loss.0 >= nodes.len() {
            return Err(Error::contract("backward: loss is not on this tape"));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, node, &g, &mut grads);
        }
        // Interior gradients were consumed above; only leaves remain populated.
        Ok(Gradients { grads })
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(buf);
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => {
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let sa = usize::from(va.len() != 1);
            let sb = usize::from(vb.len() != 1);
            let n = g.len();
            accumulate(grads, nodes, a, |ga| {
                for i in 0..n {
                    let (x, y) = (va[i * sa], vb[i * sb]);
                    ga[i * sa] += g[i]
                        * match kind {
                            BinaryKind::Add | BinaryKind::Sub => 1.0,
                            BinaryKind::Mul => y,
                            BinaryKind::Div => 1.0 / y,
                            BinaryKind::Minimum => f64::from(u8::from(!(y < x))),
                        };
                }
            });
            accumulate(grads, nodes, b, |gb| {
                for i in 0..n {
                    let (x, y) = (va[i * sa], vb[i * sb]);
                    gb[i * sb] += g[i]
                        * match kind {
                            BinaryKind::Add => 1.0,
                            BinaryKind::Sub => -1.0,
                            BinaryKind::Mul => x,
                            BinaryKind::Div => -x / (y * y),
                            BinaryKind::Minimum => f64::from(u8::from(y < x)),
                        };
                }
            });
        }
        Op::Unary { kind, x } => {
            let vx = &nodes[x.0].value;
            let out = &node.value;
            accumulate(grads, nodes, x, |gx| {
                for i in 0..g.len() {
                    let d = match kind {
                        UnaryKind::Tanh => 1.0 - out[i] * out[i],
                        UnaryKind::Relu => f64::from(u8::from(vx[i] > 0.0)),
                        UnaryKind::Exp => out[i],
                        UnaryKind::Log => 1.0 / vx[i],
                        UnaryKind::Neg => -1.0,
                        UnaryKind::Square => 2.0 * vx[i],
                        UnaryKind::Softplus => sigmoid(vx[i]),
                        UnaryKind::Clamp { lo, hi } => {
                            f64::from(u8::from(vx[i] >= lo && vx[i] <= hi))
                        }
                        UnaryKind::Scale(c) => c,
                        UnaryKind::Offset(_) => 1.0,
                    };
                    gx[i] += g[i] * d;
                }
            });
        }
        Op::MatMul { a, b } => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            // dA = dC · Bᵀ
            accumulate(grads, nodes, a, |ga| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &vb[p * n..(p + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            // dB = Aᵀ · dC
            accumulate(grads, nodes, b, |gb| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = va[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        gb[p * n..(p + 1) * n]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, x)| *o += av * x);
                    }
                }
            });
        }
        Op::AddRowwise { x, row } => {
            let n = nodes[x.0].shape[1];
            accumulate(grads, nodes, x, |gx| {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            });
            accumulate(grads, nodes, row, |gr| {
                for chunk in g.chunks(n) {
                    gr.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
                }
            });
        }
        Op::Sum { x } => accumulate(grads, nodes, x, |gx| gx.iter_mut().for_each(|o| *o += g[0])),
        Op::Mean { x } => {
            let scale = g[0] / nodes[x.0].value.len() as f64;
            accumulate(grads, nodes, x, |gx| gx.iter_mut().for_each(|o| *o += scale));
        }
        Op::SumCols { x } => {
            let n = nodes[x.0].shape[1];
            accumulate(grads, nodes, x, |gx| {
                for (r, chunk) in gx.chunks_mut(n).enumerate() {
                    chunk.iter_mut().for_each(|o| *o += g[r]);
                }
            });
        }
        Op::ConcatCols { a, b } => {
            let p = nodes[a.0].shape[1];
            let q = nodes[b.0].shape[1];
            accumulate(grads, nodes, a, |ga| {
                for (r, chunk) in ga.chunks_mut(p).enumerate() {
                    chunk
                        .iter_mut()
                        .zip(&g[r * (p + q)..r * (p + q) + p])
                        .for_each(|(o, v)| *o += v);
                }
            });
            accumulate(grads, nodes, b, |gb| {
                for (r, chunk) in gb.chunks_mut(q).enumerate() {
                    chunk
                        .iter_mut()
                        .zip(&g[r * (p + q) + p..(r + 1) * (p + q)])
                        .for_each(|(o, v)| *o += v);
                }
            });
        }
        Op::SliceCols { x, start, end } => {
            let n = nodes[x.0].shape[1];
            let w = end - start;
            accumulate(grads, nodes, x, |gx| {
                for (r, chunk) in g.chunks(w).enumerate() {
                    gx[r * n + start..r * n + end]
                        .iter_mut()
                        .zip(chunk)
                        .for_each(|(o, v)| *o += v);
                }
            });
        }
        Op::Reshape { x } => {
            accumulate(grads, nodes, x, |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v));
        }
    }
}

/// `out = a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            orow.iter_mut()
                .zip(&b[p * n..(p + 1) * n])
                .for_each(|(o, bv)| *o += av * bv);
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no gradient reached it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the gradient of `v` into `t.grad`; a missing gradient adds zeros.
    pub fn write_into(&self, v: Var, t: &mut ParamTensor) -> Result<()> {
        match self.wrt(v) {
            Some(g) => t.accumulate_grad(g),
            None => t.accumulate_grad(&vec![0.0; t.len()]),
        }
    }
}

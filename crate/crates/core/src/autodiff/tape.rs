use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::{self, Tensor};
use super::{AutodiffError, SMOOTH_EPS};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul,
    Transpose,
    BroadcastTo,
    SumTo,
    Square,
    Sqrt,
    AbsSmooth,
    Log,
    Exp,
    Tanh,
    LeakyRelu(f64),
    Slice { start: usize },
    Pad { start: usize },
    Concat,
    WindowSum(usize),
    WindowSumAdjoint(usize),
    Gather(Rc<[usize]>),
    ScatterAdd(Rc<[usize]>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<Var>,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to the tape's trainable leaves.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Reverse-mode tape. Every value is computed eagerly when its node is
/// recorded. Backward passes are themselves recorded as ordinary nodes, so
/// a gradient can be differentiated again (used by the gradient penalty).
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

type Result<T> = std::result::Result<T, AutodiffError>;

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

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that gradients are taken with respect to (parameters, inputs).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- elementwise binary ops with broadcasting ----

    fn broadcast_pair(&mut self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            return Ok((a, b));
        }
        let out = tensor::broadcast_shape(&sa, &sb).ok_or(AutodiffError::ShapeMismatch {
            op,
            left: sa,
            right: sb,
        })?;
        Ok((self.broadcast_to(a, &out)?, self.broadcast_to(b, &out)?))
    }

    fn binary(&mut self, name: &'static str, op: Op, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Var> {
        let (a, b) = self.broadcast_pair(name, a, b)?;
        let v = self.value(a).zip(self.value(b), f);
        Ok(self.push(op, vec![a, b], v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", Op::Div, a, b, |x, y| x / y)
    }

    // ---- unary ops ----

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        self.push(op, vec![a], v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Op::Neg, a, |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::Scale(c), a, |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::AddScalar, a, |x| x + c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Op::Square, a, |x| x * x)
    }

    /// `sqrt(x + eps)`.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Op::Sqrt, a, |x| (x + SMOOTH_EPS).sqrt())
    }

    /// `sqrt(x^2 + eps)`, a smooth stand-in for `|x|`.
    pub fn abs_smooth(&mut self, a: Var) -> Var {
        self.unary(Op::AbsSmooth, a, |x| (x * x + SMOOTH_EPS).sqrt())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Op::Log, a, f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp, a, f64::exp)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh, a, f64::tanh)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(Op::LeakyRelu(slope), a, move |x| if x > 0.0 { x } else { slope * x })
    }

    // ---- linear algebra and reductions ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let v = tensor::matmul(self.value(a), self.value(b));
        Ok(self.push(Op::MatMul, vec![a, b], v))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(AutodiffError::InvalidShape(self.shape(a).to_vec()));
        }
        let v = tensor::transpose(self.value(a));
        Ok(self.push(Op::Transpose, vec![a], v))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if sa == shape {
            return Ok(a);
        }
        if tensor::broadcast_shape(sa, shape).as_deref() != Some(shape) {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_to",
                left: sa.to_vec(),
                right: shape.to_vec(),
            });
        }
        let v = tensor::broadcast_to(self.value(a), shape);
        Ok(self.push(Op::BroadcastTo, vec![a], v))
    }

    /// Sums over the dimensions along which `shape` would broadcast to `a`.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if sa == shape {
            return Ok(a);
        }
        if tensor::broadcast_shape(sa, shape).as_deref() != Some(sa) || shape.len() > sa.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "sum_to",
                left: sa.to_vec(),
                right: shape.to_vec(),
            });
        }
        let v = tensor::sum_to(self.value(a), shape);
        Ok(self.push(Op::SumTo, vec![a], v))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        self.sum_to(a, &[]).expect("any shape reduces to a scalar")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum along the last axis keeping it as size 1.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let mut shape = self.shape(a).to_vec();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        self.sum_to(a, &shape).expect("last-axis reduction is always valid")
    }

    pub fn mean_last(&mut self, a: Var) -> Var {
        let n = *self.shape(a).last().unwrap_or(&1) as f64;
        let s = self.sum_last(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows of a rank-2 tensor, giving shape `[1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(AutodiffError::InvalidShape(shape));
        }
        let s = self.sum_to(a, &[1, shape[1]])?;
        Ok(self.scale(s, 1.0 / shape[0] as f64))
    }

    // ---- indexing along the last axis ----

    fn last_len(&self, a: Var) -> Result<usize> {
        self.shape(a)
            .last()
            .copied()
            .ok_or_else(|| AutodiffError::InvalidShape(vec![]))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.last_len(a)?;
        if len == 0 || start + len > n {
            return Err(AutodiffError::SliceOutOfRange { start, len, size: n });
        }
        if start == 0 && len == n {
            return Ok(a);
        }
        let v = tensor::slice_last(self.value(a), start, len);
        Ok(self.push(Op::Slice { start }, vec![a], v))
    }

    /// Embeds `a` at offset `start` of a zero tensor whose last axis is `total`.
    pub fn pad(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let n = self.last_len(a)?;
        if start + n > total {
            return Err(AutodiffError::SliceOutOfRange {
                start,
                len: n,
                size: total,
            });
        }
        let v = tensor::pad_last(self.value(a), start, total);
        Ok(self.push(Op::Pad { start }, vec![a], v))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutodiffError::InvalidShape(vec![]))?;
        let lead = self.shape(*first);
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(*first).to_vec(),
                    right: s.to_vec(),
                });
            }
        }
        let v = {
            let vals: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
            tensor::concat_last(&vals)
        };
        Ok(self.push(Op::Concat, parts.to_vec(), v))
    }

    /// Rolling sums of width `w` along the last axis.
    pub fn window_sum(&mut self, a: Var, w: usize) -> Result<Var> {
        let n = self.last_len(a)?;
        if w == 0 || w > n {
            return Err(AutodiffError::SliceOutOfRange { start: 0, len: w, size: n });
        }
        let v = tensor::window_sum(self.value(a), w);
        Ok(self.push(Op::WindowSum(w), vec![a], v))
    }

    fn window_sum_adjoint(&mut self, g: Var, w: usize) -> Var {
        let v = tensor::window_sum_adjoint(self.value(g), w);
        self.push(Op::WindowSumAdjoint(w), vec![g], v)
    }

    /// Selects entries of the flattened tensor. Gradients flow to the picked
    /// values only; the index choice itself is treated as fixed.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(a).numel();
        if idx.is_empty() {
            return Err(AutodiffError::InvalidShape(vec![0]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(AutodiffError::SliceOutOfRange {
                start: bad,
                len: 1,
                size: n,
            });
        }
        let idx: Rc<[usize]> = idx.into();
        let v = tensor::gather(self.value(a), &idx);
        Ok(self.push(Op::Gather(idx), vec![a], v))
    }

    fn scatter_add(&mut self, g: Var, idx: Rc<[usize]>, shape: &[usize]) -> Var {
        let v = tensor::scatter_add(self.value(g), &idx, shape);
        self.push(Op::ScatterAdd(idx), vec![g], v)
    }

    // ---- reverse pass ----

    /// Differentiates the scalar `root` with respect to `wrt`. The returned
    /// gradients are nodes on this tape and can be differentiated again.
    pub fn grad(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(root).numel() != 1 {
            return Err(AutodiffError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut adj: Vec<Option<Var>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            let seed = Tensor::ones(self.shape(root));
            adj[root.0] = Some(self.constant(seed));
        }
        for id in (0..=root.0).rev() {
            let Some(g) = adj[id] else { continue };
            if !self.nodes[id].requires_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            for (input, gi) in self.vjp(Var(id), g)? {
                adj[input.0] = Some(match adj[input.0] {
                    None => gi,
                    Some(prev) => self.add(prev, gi)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.shape(*w));
                    self.constant(z)
                }
            })
            .collect())
    }

    /// Numeric gradients of `root` for every trainable leaf.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        let leaves: Vec<Var> = (0..=root.0)
            .filter(|&i| self.nodes[i].requires_grad && matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect();
        let gs = self.grad(root, &leaves)?;
        let grads = leaves
            .into_iter()
            .zip(gs)
            .map(|(l, g)| (l, self.value(g).clone()))
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products for the inputs of `y` that require grad.
    fn vjp(&mut self, y: Var, g: Var) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[y.0].op.clone();
        let inputs = self.nodes[y.0].inputs.clone();
        let rg: Vec<bool> = inputs.iter().map(|v| self.requires_grad(*v)).collect();
        let a = inputs[0];
        let mut out = Vec::with_capacity(inputs.len());
        match op {
            Op::Leaf => {}
            Op::Add => {
                for (i, &inp) in inputs.iter().enumerate() {
                    if rg[i] {
                        out.push((inp, g));
                    }
                }
            }
            Op::Sub => {
                if rg[0] {
                    out.push((a, g));
                }
                if rg[1] {
                    let n = self.neg(g);
                    out.push((inputs[1], n));
                }
            }
            Op::Mul => {
                let b = inputs[1];
                if rg[0] {
                    out.push((a, self.mul(g, b)?));
                }
                if rg[1] {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Div => {
                let b = inputs[1];
                if rg[0] {
                    out.push((a, self.div(g, b)?));
                }
                if rg[1] {
                    let gy = self.mul(g, y)?;
                    let q = self.div(gy, b)?;
                    out.push((b, self.neg(q)));
                }
            }
            Op::Neg => out.push((a, self.neg(g))),
            Op::Scale(c) => out.push((a, self.scale(g, c))),
            Op::AddScalar => out.push((a, g)),
            Op::MatMul => {
                let b = inputs[1];
                if rg[0] {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if rg[1] {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose => out.push((a, self.transpose(g)?)),
            Op::BroadcastTo => {
                let s = self.shape(a).to_vec();
                out.push((a, self.sum_to(g, &s)?));
            }
            Op::SumTo => {
                let s = self.shape(a).to_vec();
                out.push((a, self.broadcast_to(g, &s)?));
            }
            Op::Square => {
                let two_a = self.scale(a, 2.0);
                out.push((a, self.mul(g, two_a)?));
            }
            Op::Sqrt => {
                let half = self.scale(g, 0.5);
                out.push((a, self.div(half, y)?));
            }
            Op::AbsSmooth => {
                let d = self.div(a, y)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Log => out.push((a, self.div(g, a)?)),
            Op::Exp => out.push((a, self.mul(g, y)?)),
            Op::Tanh => {
                let y2 = self.square(y);
                let ny2 = self.neg(y2);
                let d = self.add_scalar(ny2, 1.0);
                out.push((a, self.mul(g, d)?));
            }
            Op::LeakyRelu(slope) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                let m = self.constant(mask);
                out.push((a, self.mul(g, m)?));
            }
            Op::Slice { start } => {
                let total = self.last_len(a)?;
                out.push((a, self.pad(g, start, total)?));
            }
            Op::Pad { start } => {
                let len = self.last_len(a)?;
                out.push((a, self.slice(g, start, len)?));
            }
            Op::Concat => {
                let mut offset = 0;
                for (i, &inp) in inputs.iter().enumerate() {
                    let len = self.last_len(inp)?;
                    if rg[i] {
                        out.push((inp, self.slice(g, offset, len)?));
                    }
                    offset += len;
                }
            }
            Op::WindowSum(w) => out.push((a, self.window_sum_adjoint(g, w))),
            Op::WindowSumAdjoint(w) => out.push((a, self.window_sum(g, w)?)),
            Op::Gather(idx) => {
                let s = self.shape(a).to_vec();
                out.push((a, self.scatter_add(g, idx, &s)));
            }
            Op::ScatterAdd(idx) => out.push((a, self.gather(g, &idx)?)),
        }
        Ok(out)
    }
}

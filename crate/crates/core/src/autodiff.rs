//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`CompGraph`] records every operation applied to its nodes in creation
//! order, so node indices are already a topological order. Leaves created
//! with [`CompGraph::param`] receive gradients; [`CompGraph::constant`]
//! leaves do not, and subgraphs that depend only on constants are skipped
//! during the backward sweep.
//!
//! Broadcasting is limited to scalar-with-tensor for binary elementwise ops.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Exponent clamp used by the band-stop gate.
pub const GATE_EXPONENT_CLAMP: f64 = 700.0;

/// Kernels farther than this many widths from a bin center are skipped by
/// the soft histogram; `exp(-144)` is below double resolution of any sum.
pub const HISTOGRAM_KERNEL_RADIUS: f64 = 12.0;

/// Handle to a node of a [`CompGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The elementwise operations exposed through [`CompGraph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Exp,
    Log,
    Neg,
    Square,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Square(Var),
    Recip(Var),
    Relu(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    BlockLeftMatMul(Var, Var),
    BandStop { input: Var, a: f64, sigma: f64 },
    KernelHistogram { inputs: Vec<Var>, centers: Vec<f64>, widths: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// A computation graph built during one forward pass.
#[derive(Clone, Debug, Default)]
pub struct CompGraph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`CompGraph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zero if the root does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn binary_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(shape_err(op, format!("{:?} vs {:?} (only scalar broadcasting)", a.shape(), b.shape())))
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let (ad, bd) = (a.data(), b.data());
    let n = ad.len().max(bd.len());
    (0..n)
        .map(|i| {
            let x = if ad.len() == 1 { ad[0] } else { ad[i] };
            let y = if bd.len() == 1 { bd[0] } else { bd[i] };
            f(x, y)
        })
        .collect()
}

/// Accumulates an upstream gradient into an operand, summing over the
/// broadcast axis when the operand is a scalar.
fn reduce_into(target: &mut [f64], upstream: impl Iterator<Item = f64>) {
    if target.len() == 1 {
        let mut acc = 0.0;
        for g in upstream {
            acc += g;
        }
        target[0] += acc;
    } else {
        for (t, g) in target.iter_mut().zip(upstream) {
            *t += g;
        }
    }
}

/// `ψ(w) = 1 / (1 + σ exp(a² − w²))` with the exponent clamped to ±700.
pub fn band_stop_value(w: f64, a: f64, sigma: f64) -> f64 {
    let z = (a * a - w * w).clamp(-GATE_EXPONENT_CLAMP, GATE_EXPONENT_CLAMP);
    1.0 / (1.0 + sigma * math::exp(z))
}

fn band_stop_derivative(w: f64, a: f64, sigma: f64) -> f64 {
    let raw = a * a - w * w;
    if raw.abs() > GATE_EXPONENT_CLAMP {
        return 0.0;
    }
    let e = sigma * math::exp(raw);
    let psi = 1.0 / (1.0 + e);
    2.0 * w * e * psi * psi
}

/// Index range of centers within `radius` of `w` (centers sorted ascending).
fn center_window(centers: &[f64], w: f64, radius: f64) -> (usize, usize) {
    let lo = centers.partition_point(|&c| c < w - radius);
    let hi = centers.partition_point(|&c| c <= w + radius);
    (lo, hi)
}

impl CompGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, is_param: false });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, is_param: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is treated as data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.nodes[v.0].is_param
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: fn(Var, Var) -> Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = binary_shape(op, ta, tb)?;
        let data = broadcast_zip(ta, tb, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, mk(a, b), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    /// Natural logarithm; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, math::log, Op::Log(a)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().contains(&0.0) {
            return Err(Error::Domain("reciprocal of zero".into()));
        }
        Ok(self.unary(a, |x| 1.0 / x, Op::Recip(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// `max(a, floor)` entrywise; the gradient is zero where the floor binds.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| if x > floor { x } else { floor }, Op::ClampMin(a, floor))
    }

    /// Dispatches one of the spec-level elementwise ops.
    pub fn elementwise(&mut self, op: ElementwiseOp, args: &[Var]) -> Result<Var> {
        let arity = match op {
            ElementwiseOp::Add | ElementwiseOp::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Contract(format!("{op:?} takes {arity} argument(s), got {}", args.len())));
        }
        match op {
            ElementwiseOp::Add => self.add(args[0], args[1]),
            ElementwiseOp::Mul => self.mul(args[0], args[1]),
            ElementwiseOp::Exp => Ok(self.exp(args[0])),
            ElementwiseOp::Log => self.log(args[0]),
            ElementwiseOp::Neg => Ok(self.neg(args[0])),
            ElementwiseOp::Square => Ok(self.square(args[0])),
        }
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        let k = self.scalar(1.0 / n);
        self.mul(s, k)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Applies the n×n matrix `a` to every consecutive block of n rows of `x`.
    ///
    /// This is the batched form of `A · X` for a stack of per-graph node
    /// feature matrices sharing one adjacency.
    pub fn block_left_matmul(&mut self, a: Var, x: Var) -> Result<Var> {
        let (n, n2) = self.value(a).dims2()?;
        let (rows, d) = self.value(x).dims2()?;
        if n != n2 || rows % n != 0 {
            return Err(shape_err("block_left_matmul", format!("{n}x{n2} applied to {rows}x{d}")));
        }
        let (av, xv) = (self.value(a).data(), self.value(x).data());
        let mut out = vec![0.0; rows * d];
        for b in 0..rows / n {
            let span = b * n * d..(b + 1) * n * d;
            matmul_into(av, &xv[span.clone()], &mut out[span], n, n, d);
        }
        let rg = self.rg(a) || self.rg(x);
        Ok(self.push(Tensor::new(vec![rows, d], out)?, Op::BlockLeftMatMul(a, x), rg))
    }

    /// Band-stop gate `ψ_{a,σ}` applied entrywise.
    pub fn band_stop(&mut self, w: Var, a: f64, sigma: f64) -> Var {
        self.unary(w, |x| band_stop_value(x, a, sigma), Op::BandStop { input: w, a, sigma })
    }

    /// Unnormalized Gaussian-kernel histogram over all entries of `inputs`:
    /// `out[k] = Σ_w exp(−(w − c_k)² / β_k²)`.
    pub fn kernel_histogram(&mut self, inputs: &[Var], centers: &[f64], widths: &[f64]) -> Result<Var> {
        if centers.is_empty() || centers.len() != widths.len() {
            return Err(Error::Contract("kernel_histogram needs one width per center".into()));
        }
        if centers.windows(2).any(|p| !(p[0] < p[1])) || widths.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Contract("centers must increase strictly and widths be positive".into()));
        }
        let radius = HISTOGRAM_KERNEL_RADIUS * widths.iter().copied().fold(0.0, f64::max);
        let mut mass = vec![0.0; centers.len()];
        for &v in inputs {
            for &w in self.value(v).data() {
                let (lo, hi) = center_window(centers, w, radius);
                for k in lo..hi {
                    let d = (w - centers[k]) / widths[k];
                    mass[k] += math::exp(-d * d);
                }
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        let op = Op::KernelHistogram { inputs: inputs.to_vec(), centers: centers.to_vec(), widths: widths.to_vec() };
        Ok(self.push(Tensor::vector(mass), op, rg))
    }

    /// Mean softmax cross-entropy of `logits` (B×C, or C for one sample)
    /// against integer labels, stabilized by max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (batch, classes) = match t.shape() {
            [c] => (1, *c),
            [b, c] => (*b, *c),
            s => return Err(shape_err("softmax_cross_entropy", format!("logits shape {s:?}"))),
        };
        if labels.len() != batch {
            return Err(shape_err("softmax_cross_entropy", format!("{batch} rows vs {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Contract(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = &t.data()[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &x) in probs[b * classes..(b + 1) * classes].iter_mut().zip(row) {
                *p = math::exp(x - max);
                z += *p;
            }
            for p in &mut probs[b * classes..(b + 1) * classes] {
                *p /= z;
            }
            total += max + math::log(z) - row[label];
        }
        let rg = self.rg(logits);
        let op = Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(total / batch as f64), op, rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!("backward root has shape {:?}", self.value(root).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().copied());
                }
                if let Some(t) = self.slot(grads, *b) {
                    reduce_into(t, g.iter().copied());
                }
            }
            Op::Sub(a, b) => {
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().copied());
                }
                if let Some(t) = self.slot(grads, *b) {
                    reduce_into(t, g.iter().map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().enumerate().map(|(i, gi)| gi * pick(bv, i)));
                }
                if let Some(t) = self.slot(grads, *b) {
                    reduce_into(t, g.iter().enumerate().map(|(i, gi)| gi * pick(av, i)));
                }
            }
            Op::Exp(a) => {
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().zip(out.data()).map(|(gi, y)| gi * y));
                }
            }
            Op::Log(a) => {
                let av = val(*a);
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().zip(av).map(|(gi, x)| gi / x));
                }
            }
            Op::Neg(a) => {
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().map(|x| -x));
                }
            }
            Op::Square(a) => {
                let av = val(*a);
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().zip(av).map(|(gi, x)| 2.0 * gi * x));
                }
            }
            Op::Recip(a) => {
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().zip(out.data()).map(|(gi, y)| -gi * y * y));
                }
            }
            Op::Relu(a) => {
                let av = val(*a);
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().zip(av).map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 }));
                }
            }
            Op::ClampMin(a, floor) => {
                let av = val(*a);
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().zip(av).map(|(gi, &x)| if x > *floor { *gi } else { 0.0 }));
                }
            }
            Op::Sum(a) => {
                if let Some(t) = self.slot(grads, *a) {
                    for x in t.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(t) = self.slot(grads, *a) {
                    reduce_into(t, g.iter().copied());
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                if let Some(t) = self.slot(grads, *a) {
                    // out is r×c, the input c×r
                    for i in 0..r {
                        for j in 0..c {
                            t[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("matrix");
                let n = out.shape()[1];
                let (av, bv) = (val(*a), val(*b));
                if let Some(t) = self.slot(grads, *a) {
                    matmul_nt_into(g, bv, t, m, n, k);
                }
                if let Some(t) = self.slot(grads, *b) {
                    matmul_tn_into(av, g, t, m, k, n);
                }
            }
            Op::BlockLeftMatMul(a, x) => {
                let n = self.nodes[a.0].value.shape()[0];
                let (rows, d) = (out.shape()[0], out.shape()[1]);
                let (av, xv) = (val(*a), val(*x));
                if let Some(t) = self.slot(grads, *a) {
                    for b in 0..rows / n {
                        let span = b * n * d..(b + 1) * n * d;
                        matmul_nt_into(&g[span.clone()], &xv[span], t, n, d, n);
                    }
                }
                if let Some(t) = self.slot(grads, *x) {
                    for b in 0..rows / n {
                        let span = b * n * d..(b + 1) * n * d;
                        matmul_tn_into(av, &g[span.clone()], &mut t[span], n, n, d);
                    }
                }
            }
            Op::BandStop { input, a, sigma } => {
                let wv = val(*input);
                if let Some(t) = self.slot(grads, *input) {
                    reduce_into(t, g.iter().zip(wv).map(|(gi, &w)| gi * band_stop_derivative(w, *a, *sigma)));
                }
            }
            Op::KernelHistogram { inputs, centers, widths } => {
                let radius = HISTOGRAM_KERNEL_RADIUS * widths.iter().copied().fold(0.0, f64::max);
                for &v in inputs {
                    let wv = val(v);
                    let Some(t) = self.slot(grads, v) else { continue };
                    for (ti, &w) in t.iter_mut().zip(wv) {
                        let (lo, hi) = center_window(centers, w, radius);
                        let mut acc = 0.0;
                        for k in lo..hi {
                            let diff = w - centers[k];
                            let inv = 1.0 / (widths[k] * widths[k]);
                            acc += g[k] * math::exp(-diff * diff * inv) * (-2.0 * diff * inv);
                        }
                        *ti += acc;
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let batch = labels.len();
                let classes = probs.len() / batch;
                let scale = g[0] / batch as f64;
                if let Some(t) = self.slot(grads, *logits) {
                    for (b, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            t[b * classes + c] += scale * (probs[b * classes + c] - onehot);
                        }
                    }
                }
            }
        }
    }
}

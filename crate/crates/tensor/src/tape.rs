//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value and enough
//! context to apply its local backward rule. Nodes are only ever appended,
//! so the list is topologically ordered by construction and a single reverse
//! sweep visits each node once.

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::norms::spectral_norm_fine;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `x · s` with `s` a one-element node.
    ScaleBy(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Gelu(Var),
    Square(Var),
    Reciprocal(Var),
    /// `c / x` elementwise.
    DivFrom(f64, Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Frobenius(Var),
    Spectral {
        m: Var,
        left: Vec<f64>,
        right: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when it does not require grad or the
    /// output does not depend on it.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Tensor::new(&self.shapes[var.0], g.clone()).ok()
    }

    /// Every variable that received a gradient, in tape order.
    pub fn present(&self) -> impl Iterator<Item = Var> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| Var(i)))
    }

    /// Gradient for `var`, zero-filled when absent.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

/// Single-writer record of a differentiable computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::numeric(op_name, "produced a non-finite entry"));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).add(self.value(b))?;
        self.push("add", v, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).sub(self.value(b))?;
        self.push("sub", v, &[a, b], Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", v, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        self.push("scale", v, &[a], Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_scalar", v, &[a], Op::AddScalar(a))
    }

    /// Multiplies every entry of `a` by the one-element node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.value(s).item().map_err(|_| {
            TensorError::shape("scale_by", format!("scale must be one element, got {:?}", self.shape(s)))
        })?;
        let v = self.value(a).scale(c);
        self.push("scale_by", v, &[a, s], Op::ScaleBy(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, &[a, b], Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push("transpose", v, &[a], Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push("reshape", v, &[a], Op::Reshape(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, &[a], Op::Exp(a))
    }

    /// Natural log; fails on non-positive input.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(TensorError::numeric("log", "non-positive argument"));
        }
        let v = self.value(a).map(f64::ln);
        self.push("log", v, &[a], Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, &[a], Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(kernels::gelu);
        self.push("gelu", v, &[a], Op::Gelu(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, &[a], Op::Square(a))
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x == 0.0) {
            return Err(TensorError::numeric("reciprocal", "division by zero"));
        }
        let v = self.value(a).map(|x| 1.0 / x);
        self.push("reciprocal", v, &[a], Op::Reciprocal(a))
    }

    /// `c / x` elementwise. For `x == c` the result is exactly one.
    pub fn div_from(&mut self, c: f64, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x == 0.0) {
            return Err(TensorError::numeric("div_from", "division by zero"));
        }
        let v = self.value(a).map(|x| c / x);
        self.push("div_from", v, &[a], Op::DivFrom(c, a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = *x.shape().last().ok_or_else(|| TensorError::shape("softmax", "scalar input"))?;
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let v = Tensor::new(x.shape(), out)?;
        self.push("softmax", v, &[a], Op::Softmax(a))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`
    /// (both shaped like that axis).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| TensorError::shape("layer_norm", "scalar input"))?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(TensorError::shape(
                "layer_norm",
                format!("affine params must have {n} entries"),
            ));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.numel() / n;
        let mut normalized = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                normalized[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let v = Tensor::new(xv.shape(), out)?;
        self.push(
            "layer_norm",
            v,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / x.numel() as f64);
        self.push("mean", v, &[a], Op::Mean(a))
    }

    /// Frobenius norm as a scalar node. The gradient at the zero tensor is
    /// taken to be zero.
    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).frobenius_norm());
        self.push("frobenius_norm", v, &[a], Op::Frobenius(a))
    }

    /// Spectral norm (largest singular value) as a scalar node, estimated
    /// with the vector-converged power iteration. The backward rule is `u·vᵀ`,
    /// valid when the top singular value is simple.
    pub fn spectral_norm(&mut self, a: Var) -> Result<Var> {
        let est = spectral_norm_fine(self.value(a))?;
        let v = Tensor::scalar(est.value);
        self.push(
            "spectral_norm",
            v,
            &[a],
            Op::Spectral {
                m: a,
                left: est.left,
                right: est.right,
            },
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(TensorError::shape(
                    "concat",
                    format!("{s:?} incompatible with {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = kernels::split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let v = Tensor::new(&shape, out)?;
        self.push(
            "concat",
            v,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Contiguous `len`-long window starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("window {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = kernels::split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let v = Tensor::new(&oshape, out)?;
        self.push("slice", v, &[x], Op::Slice { x, axis, start })
    }

    /// Picks flat elements of `x` into a 1-D node.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if indices.is_empty() {
            return Err(TensorError::shape("gather", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(TensorError::shape(
                "gather",
                format!("index {bad} out of range for {} elements", src.len()),
            ));
        }
        let out: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let v = Tensor::new(&[out.len()], out)?;
        self.push(
            "gather",
            v,
            &[x],
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    /// Reverse sweep from a one-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        if out.requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let unary = |a: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            // f(upstream, input, output)
            val(a)
                .iter()
                .zip(node.value.data())
                .zip(g)
                .map(|((&x, &y), &gi)| f(gi, x, y))
                .collect()
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, g.iter().zip(bv).map(|(gi, y)| gi * y).collect());
                acc(*b, g.iter().zip(av).map(|(gi, x)| gi * x).collect());
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|x| x * c).collect()),
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::ScaleBy(a, s) => {
                let c = val(*s)[0];
                acc(*a, g.iter().map(|x| x * c).collect());
                let ds: f64 = g.iter().zip(val(*a)).map(|(gi, x)| gi * x).sum();
                acc(*s, vec![ds]);
            }
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].requires_grad {
                    acc(*a, kernels::mm_nt(g, val(*b), m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, kernels::mm_tn(val(*a), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                acc(*a, kernels::transpose(g, s[0], s[1]));
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Exp(a) => acc(*a, unary(*a, &|gi, _, y| gi * y)),
            Op::Log(a) => acc(*a, unary(*a, &|gi, x, _| gi / x)),
            Op::Relu(a) => acc(*a, unary(*a, &|gi, x, _| if x > 0.0 { gi } else { 0.0 })),
            Op::Gelu(a) => acc(*a, unary(*a, &|gi, x, _| gi * kernels::gelu_grad(x))),
            Op::Square(a) => acc(*a, unary(*a, &|gi, x, _| 2.0 * gi * x)),
            Op::Reciprocal(a) => acc(*a, unary(*a, &|gi, _, y| -gi * y * y)),
            Op::DivFrom(c, a) => acc(*a, unary(*a, &|gi, x, _| -gi * c / (x * x))),
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            } => {
                let n = self.nodes[gamma.0].value.numel();
                let gam = val(*gamma);
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dx = vec![0.0; g.len()];
                for (r, rs) in rstd.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &normalized[r * n..(r + 1) * n];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..n {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= n as f64;
                    mean_dh_h /= n as f64;
                    for j in 0..n {
                        let dh = gr[j] * gam[j];
                        dx[r * n + j] = rs * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.nodes[a.0].value.numel()]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::Frobenius(a) => {
                let norm = node.value.data()[0];
                let contrib = if norm > 0.0 {
                    val(*a).iter().map(|x| g[0] * x / norm).collect()
                } else {
                    vec![0.0; self.nodes[a.0].value.numel()]
                };
                acc(*a, contrib);
            }
            Op::Spectral { m, left, right } => {
                let k = right.len();
                let mut d = vec![0.0; left.len() * k];
                for (i, ui) in left.iter().enumerate() {
                    for (j, vj) in right.iter().enumerate() {
                        d[i * k + j] = g[0] * ui * vj;
                    }
                }
                acc(*m, d);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    let mut dp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        dp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    acc(p, dp);
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.nodes[x.0].value.shape();
                let (outer, n, inner) = kernels::split_axis(src_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, dx);
            }
            Op::Gather { x, indices } => {
                let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                for (&i, gi) in indices.iter().zip(g) {
                    dx[i] += gi;
                }
                acc(*x, dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn squared_norm_gradient_is_twice_x() {
        let mut t = Tape::new();
        let xv = Tensor::from_fn(&[3, 2], |i| i as f64 - 2.5);
        let x = t.param(xv.clone());
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), xv.scale(2.0));
    }

    #[test]
    fn frobenius_gradient_hand_value() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[3.0, 4.0]]).unwrap());
        let n = t.frobenius_norm(x).unwrap();
        assert_eq!(t.value(n).item().unwrap(), 5.0);
        let g = t.backward(n).unwrap().get(x).unwrap();
        assert!((g.data()[0] - 0.6).abs() < 1e-15);
        assert!((g.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::ones(&[2]));
        assert!(matches!(t.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::ones(&[2, 2]));
        let x = t.param(Tensor::eye(2));
        let p = t.matmul(c, x).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn log_of_nonpositive_fails() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[&[1.0, 0.0]]).unwrap());
        assert!(t.log(x).is_err());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut t = Tape::new();
        let a = t.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let b = t.param(Tensor::from_fn(&[2, 2], |i| 10.0 + i as f64));
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.shape(c), &[2, 5]);
        assert_eq!(t.value(c).data(), &[0., 1., 2., 10., 11., 3., 4., 5., 12., 13.]);
        let s = t.slice(c, 1, 3, 2).unwrap();
        assert_eq!(t.value(s), t.value(b));
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 7.0);
    }
}

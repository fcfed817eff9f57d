use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Result, TransgError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

const BN_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Multiply by a constant tensor (no gradient to the constant).
    MulConst {
        x: usize,
        c: Tensor,
    },
    AddBias {
        x: usize,
        bias: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    /// y[r, o] = sum_i w[o, i] * x[r, i] over the last axis of x.
    Linear {
        w: usize,
        x: usize,
    },
    /// Batched matmul on 3-d tensors: [B, m, k] x [B, k, n] -> [B, m, n].
    Bmm {
        a: usize,
        b: usize,
    },
    TransposeLast2(usize),
    ConcatLast(Vec<usize>),
    MeanAxis {
        x: usize,
        axis: usize,
    },
    SumAxis {
        x: usize,
        axis: usize,
    },
    MeanAll(usize),
    SumAll(usize),
    SoftmaxLast(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    L2NormalizeLast {
        x: usize,
        norms: Vec<f64>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        training: bool,
    },
    Reshape(usize),
    /// Mean negative log-likelihood of `labels` under row-softmax of logits.
    NllLoss {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape for reverse-mode automatic differentiation.
///
/// Nodes are appended in topological order during the forward pass; backward
/// walks them once in reverse, accumulating gradients additively. The caller
/// zeroes or resets explicitly.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// Drops all recorded nodes and gradients.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass, if the node required one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Batch statistics (mean, var) recorded by a training-mode batch norm.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                batch_mean,
                batch_var,
                training: true,
                ..
            } => Some((batch_mean.as_slice(), batch_var.as_slice())),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(TransgError::ShapeMismatch {
                op,
                lhs: self.value(a).shape.clone(),
                rhs: self.value(b).shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a.0, b.0), rg))
    }

    /// Elementwise multiply by a constant tensor of identical shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.value(x).shape != c.shape {
            return Err(TransgError::ShapeMismatch {
                op: "mul_const",
                lhs: self.value(x).shape.clone(),
                rhs: c.shape,
            });
        }
        let data = self
            .value(x)
            .data
            .iter()
            .zip(&c.data)
            .map(|(a, b)| a * b)
            .collect();
        let t = Tensor {
            shape: c.shape.clone(),
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(t, Op::MulConst { x: x.0, c }, rg))
    }

    /// Adds a bias vector over the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.value(bias).shape != [c] {
            return Err(TransgError::ShapeMismatch {
                op: "add_bias",
                lhs: self.value(x).shape.clone(),
                rhs: self.value(bias).shape.clone(),
            });
        }
        let xs = self.value(x);
        let bs = &self.value(bias).data;
        let mut data = xs.data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bs[i % c];
        }
        let t = Tensor {
            shape: xs.shape.clone(),
            data,
        };
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(
            t,
            Op::AddBias {
                x: x.0,
                bias: bias.0,
            },
            rg,
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xs = self.value(x);
        let t = Tensor {
            shape: xs.shape.clone(),
            data: xs.data.iter().map(|v| v * c).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Scale { x: x.0, c }, rg)
    }

    /// Applies a weight matrix w of shape [out, in] to the last axis of x.
    pub fn linear(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.value(w);
        let xs = self.value(x);
        if ws.shape.len() != 2 || ws.shape[1] != xs.last_dim() {
            return Err(TransgError::ShapeMismatch {
                op: "linear",
                lhs: ws.shape.clone(),
                rhs: xs.shape.clone(),
            });
        }
        let (out_dim, in_dim) = (ws.shape[0], ws.shape[1]);
        let rows = xs.rows();
        let wd = &ws.data;
        let xd = &xs.data;
        let mut data = vec![0.0; rows * out_dim];
        data.par_chunks_mut(out_dim).enumerate().for_each(|(r, yr)| {
            let xr = &xd[r * in_dim..(r + 1) * in_dim];
            for (o, y) in yr.iter_mut().enumerate() {
                let wr = &wd[o * in_dim..(o + 1) * in_dim];
                let mut acc = 0.0;
                for i in 0..in_dim {
                    acc += wr[i] * xr[i];
                }
                *y = acc;
            }
        });
        let mut shape = xs.shape.clone();
        *shape.last_mut().unwrap() = out_dim;
        let rg = self.rg(w) || self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Linear { w: w.0, x: x.0 }, rg))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape.len() != 3 || bv.shape.len() != 3 || av.shape[0] != bv.shape[0]
            || av.shape[2] != bv.shape[1]
        {
            return Err(TransgError::ShapeMismatch {
                op: "bmm",
                lhs: av.shape.clone(),
                rhs: bv.shape.clone(),
            });
        }
        let (nb, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
        let n = bv.shape[2];
        let ad = &av.data;
        let bd = &bv.data;
        let mut data = vec![0.0; nb * m * n];
        data.par_chunks_mut(m * n).enumerate().for_each(|(batch, yb)| {
            let ab = &ad[batch * m * k..(batch + 1) * m * k];
            let bb = &bd[batch * k * n..(batch + 1) * k * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = ab[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let br = &bb[p * n..(p + 1) * n];
                    let yr = &mut yb[i * n..(i + 1) * n];
                    for j in 0..n {
                        yr[j] += aip * br[j];
                    }
                }
            }
        });
        let shape = vec![nb, m, n];
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Bmm { a: a.0, b: b.0 }, rg))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        if xs.shape.len() != 3 {
            return Err(TransgError::Contract(format!(
                "transpose_last2 expects a 3-d tensor, got shape {:?}",
                xs.shape
            )));
        }
        let (nb, m, n) = (xs.shape[0], xs.shape[1], xs.shape[2]);
        let mut data = vec![0.0; nb * m * n];
        for b in 0..nb {
            for i in 0..m {
                for j in 0..n {
                    data[b * m * n + j * m + i] = xs.data[b * m * n + i * n + j];
                }
            }
        }
        let t = Tensor {
            shape: vec![nb, n, m],
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(t, Op::TransposeLast2(x.0), rg))
    }

    /// Concatenates along the last axis. All inputs must share leading dims.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TransgError::Contract("concat_last of zero tensors".into()));
        }
        let lead = &self.value(parts[0]).shape[..self.value(parts[0]).shape.len() - 1];
        let lead = lead.to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = &self.value(p).shape;
            if s[..s.len() - 1] != lead[..] {
                return Err(TransgError::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.value(parts[0]).shape.clone(),
                    rhs: s.clone(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = self.value(parts[0]).rows();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (idx, &p) in parts.iter().enumerate() {
            let w = widths[idx];
            let src = &self.value(p).data;
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor { shape, data },
            Op::ConcatLast(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        (outer, n, inner)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let xs = self.value(x);
        if axis >= xs.shape.len() {
            return Err(TransgError::Contract(format!(
                "axis {axis} out of range for shape {:?}",
                xs.shape
            )));
        }
        if xs.shape[axis] == 0 {
            return Err(TransgError::Contract("reduction over empty axis".into()));
        }
        let (outer, n, inner) = Self::axis_geometry(&xs.shape, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += xs.data[(o * n + j) * inner + i];
                }
            }
        }
        if mean {
            for v in data.iter_mut() {
                *v /= n as f64;
            }
        }
        let mut shape = xs.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(x);
        let op = if mean {
            Op::MeanAxis { x: x.0, axis }
        } else {
            Op::SumAxis { x: x.0, axis }
        };
        Ok(self.push(Tensor { shape, data }, op, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x.0), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data.iter().sum::<f64>() / n;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x.0), rg)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let c = xs.last_dim();
        if c == 0 {
            return Err(TransgError::Contract("softmax over empty axis".into()));
        }
        xs.check_finite("softmax input")?;
        let mut data = vec![0.0; xs.numel()];
        for r in 0..xs.rows() {
            let row = &xs.data[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (i, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * c + i] = e;
                sum += e;
            }
            for v in &mut data[r * c..(r + 1) * c] {
                *v /= sum;
            }
        }
        let t = Tensor {
            shape: xs.shape.clone(),
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(t, Op::SoftmaxLast(x.0), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let t = Tensor {
            shape: xs.shape.clone(),
            data: xs.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Relu(x.0), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let t = Tensor {
            shape: xs.shape.clone(),
            data: xs.data.iter().map(|v| v.exp()).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Exp(x.0), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let t = Tensor {
            shape: xs.shape.clone(),
            data: xs.data.iter().map(|v| v.ln()).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Log(x.0), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let t = Tensor {
            shape: xs.shape.clone(),
            data: xs.data.iter().map(|v| v.abs()).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Abs(x.0), rg)
    }

    /// L2-normalizes each row (last axis).
    pub fn l2_normalize_last(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let c = xs.last_dim();
        let rows = xs.rows();
        let mut norms = vec![0.0; rows];
        let mut data = vec![0.0; xs.numel()];
        for r in 0..rows {
            let row = &xs.data[r * c..(r + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_EPS);
            norms[r] = n;
            for i in 0..c {
                data[r * c + i] = row[i] / n;
            }
        }
        let t = Tensor {
            shape: xs.shape.clone(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::L2NormalizeLast { x: x.0, norms }, rg)
    }

    /// Batch normalization per channel (last axis) over all other axes.
    ///
    /// In training mode statistics come from the batch and are recorded on the
    /// node (see [`Tape::batch_stats`]); in inference mode the caller supplies
    /// running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<Var> {
        let xs = self.value(x);
        let c = xs.last_dim();
        let rows = xs.rows();
        if self.value(gamma).shape != [c] || self.value(beta).shape != [c] {
            return Err(TransgError::ShapeMismatch {
                op: "batch_norm",
                lhs: xs.shape.clone(),
                rhs: self.value(gamma).shape.clone(),
            });
        }
        let training = running.is_none();
        let (mean, var): (Vec<f64>, Vec<f64>) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mut mean = vec![0.0; c];
                for r in 0..rows {
                    for i in 0..c {
                        mean[i] += xs.data[r * c + i];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= rows as f64;
                }
                let mut var = vec![0.0; c];
                for r in 0..rows {
                    for i in 0..c {
                        let d = xs.data[r * c + i] - mean[i];
                        var[i] += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= rows as f64;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xs.numel()];
        for r in 0..rows {
            for i in 0..c {
                xhat[r * c + i] = (xs.data[r * c + i] - mean[i]) * inv_std[i];
            }
        }
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut data = vec![0.0; xs.numel()];
        for r in 0..rows {
            for i in 0..c {
                data[r * c + i] = g[i] * xhat[r * c + i] + b[i];
            }
        }
        let xhat = Tensor {
            shape: xs.shape.clone(),
            data: xhat,
        };
        let t = Tensor {
            shape: xs.shape.clone(),
            data,
        };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                training,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xs = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != xs.numel() {
            return Err(TransgError::ShapeMismatch {
                op: "reshape",
                lhs: xs.shape.clone(),
                rhs: shape,
            });
        }
        let t = Tensor {
            shape,
            data: xs.data.clone(),
        };
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x.0), rg))
    }

    /// Mean negative log-likelihood of labels under row-softmax of logits.
    pub fn nll_loss(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.value(logits);
        let c = ls.last_dim();
        let rows = ls.rows();
        if labels.len() != rows {
            return Err(TransgError::Contract(format!(
                "nll_loss: {} labels for {} logit rows",
                labels.len(),
                rows
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TransgError::Contract(format!(
                "nll_loss: label {bad} out of range for {c} classes"
            )));
        }
        ls.check_finite("nll_loss logits")?;
        let mut probs = vec![0.0; ls.numel()];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &ls.data[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (i, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * c + i] = e;
                sum += e;
            }
            for v in &mut probs[r * c..(r + 1) * c] {
                *v /= sum;
            }
            loss -= probs[r * c + labels[r]].ln();
        }
        loss /= rows as f64;
        let probs = Tensor {
            shape: ls.shape.clone(),
            data: probs,
        };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::NllLoss {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], idx: usize, delta: Tensor) {
        if !nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(&delta.data) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively into
    /// every `requires_grad` node reachable from the loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TransgError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let dy = match self.grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &dy)?;
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, dy: &Tensor) -> Result<()> {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accumulate(grads, nodes, *a, dy.clone());
                Self::accumulate(grads, nodes, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, nodes, *a, dy.clone());
                let neg = Tensor {
                    shape: dy.shape.clone(),
                    data: dy.data.iter().map(|v| -v).collect(),
                };
                Self::accumulate(grads, nodes, *b, neg);
            }
            Op::Mul(a, b) => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let da = Tensor {
                    shape: dy.shape.clone(),
                    data: dy.data.iter().zip(&bv.data).map(|(g, v)| g * v).collect(),
                };
                let db = Tensor {
                    shape: dy.shape.clone(),
                    data: dy.data.iter().zip(&av.data).map(|(g, v)| g * v).collect(),
                };
                Self::accumulate(grads, nodes, *a, da);
                Self::accumulate(grads, nodes, *b, db);
            }
            Op::MulConst { x, c } => {
                let dx = Tensor {
                    shape: dy.shape.clone(),
                    data: dy.data.iter().zip(&c.data).map(|(g, v)| g * v).collect(),
                };
                Self::accumulate(grads, nodes, *x, dx);
            }
            Op::AddBias { x, bias } => {
                Self::accumulate(grads, nodes, *x, dy.clone());
                let c = nodes[*bias].value.shape[0];
                let mut db = vec![0.0; c];
                for (i, g) in dy.data.iter().enumerate() {
                    db[i % c] += g;
                }
                Self::accumulate(grads, nodes, *bias, Tensor::from_vec(db));
            }
            Op::Scale { x, c } => {
                let dx = Tensor {
                    shape: dy.shape.clone(),
                    data: dy.data.iter().map(|g| g * c).collect(),
                };
                Self::accumulate(grads, nodes, *x, dx);
            }
            Op::Linear { w, x } => {
                let wv = &nodes[*w].value;
                let xv = &nodes[*x].value;
                let (out_dim, in_dim) = (wv.shape[0], wv.shape[1]);
                let rows = xv.rows();
                if nodes[*w].requires_grad {
                    let mut dw = vec![0.0; out_dim * in_dim];
                    dw.par_chunks_mut(in_dim).enumerate().for_each(|(o, dwr)| {
                        for r in 0..rows {
                            let g = dy.data[r * out_dim + o];
                            if g == 0.0 {
                                continue;
                            }
                            let xr = &xv.data[r * in_dim..(r + 1) * in_dim];
                            for i in 0..in_dim {
                                dwr[i] += g * xr[i];
                            }
                        }
                    });
                    Self::accumulate(
                        grads,
                        nodes,
                        *w,
                        Tensor {
                            shape: wv.shape.clone(),
                            data: dw,
                        },
                    );
                }
                if nodes[*x].requires_grad {
                    let mut dx = vec![0.0; xv.numel()];
                    dx.par_chunks_mut(in_dim).enumerate().for_each(|(r, dxr)| {
                        for o in 0..out_dim {
                            let g = dy.data[r * out_dim + o];
                            if g == 0.0 {
                                continue;
                            }
                            let wr = &wv.data[o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                dxr[i] += g * wr[i];
                            }
                        }
                    });
                    Self::accumulate(
                        grads,
                        nodes,
                        *x,
                        Tensor {
                            shape: xv.shape.clone(),
                            data: dx,
                        },
                    );
                }
            }
            Op::Bmm { a, b } => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let (m, k) = (av.shape[1], av.shape[2]);
                let n = bv.shape[2];
                if nodes[*a].requires_grad {
                    // da = dy @ b^T
                    let mut da = vec![0.0; av.numel()];
                    da.par_chunks_mut(m * k).enumerate().for_each(|(batch, dab)| {
                        let dyb = &dy.data[batch * m * n..(batch + 1) * m * n];
                        let bb = &bv.data[batch * k * n..(batch + 1) * k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += dyb[i * n + j] * bb[p * n + j];
                                }
                                dab[i * k + p] = acc;
                            }
                        }
                    });
                    Self::accumulate(
                        grads,
                        nodes,
                        *a,
                        Tensor {
                            shape: av.shape.clone(),
                            data: da,
                        },
                    );
                }
                if nodes[*b].requires_grad {
                    // db = a^T @ dy
                    let mut db = vec![0.0; bv.numel()];
                    db.par_chunks_mut(k * n).enumerate().for_each(|(batch, dbb)| {
                        let dyb = &dy.data[batch * m * n..(batch + 1) * m * n];
                        let ab = &av.data[batch * m * k..(batch + 1) * m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let aip = ab[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    dbb[p * n + j] += aip * dyb[i * n + j];
                                }
                            }
                        }
                    });
                    Self::accumulate(
                        grads,
                        nodes,
                        *b,
                        Tensor {
                            shape: bv.shape.clone(),
                            data: db,
                        },
                    );
                }
            }
            Op::TransposeLast2(x) => {
                let xv = &nodes[*x].value;
                let (nb, m, n) = (xv.shape[0], xv.shape[1], xv.shape[2]);
                let mut dx = vec![0.0; xv.numel()];
                for b in 0..nb {
                    for i in 0..m {
                        for j in 0..n {
                            dx[b * m * n + i * n + j] = dy.data[b * m * n + j * m + i];
                        }
                    }
                }
                Self::accumulate(
                    grads,
                    nodes,
                    *x,
                    Tensor {
                        shape: xv.shape.clone(),
                        data: dx,
                    },
                );
            }
            Op::ConcatLast(parts) => {
                let parts = parts.clone();
                let total = nodes[idx].value.last_dim();
                let rows = nodes[idx].value.rows();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p].value.last_dim();
                    if nodes[p].requires_grad {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &dy.data[r * total + offset..r * total + offset + w],
                            );
                        }
                        let shape = nodes[p].value.shape.clone();
                        Self::accumulate(grads, nodes, p, Tensor { shape, data: dp });
                    }
                    offset += w;
                }
            }
            Op::MeanAxis { x, axis } | Op::SumAxis { x, axis } => {
                let mean = matches!(nodes[idx].op, Op::MeanAxis { .. });
                let xv = &nodes[*x].value;
                let (outer, n, inner) = Self::axis_geometry(&xv.shape, *axis);
                let scale = if mean { 1.0 / n as f64 } else { 1.0 };
                let mut dx = vec![0.0; xv.numel()];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            dx[(o * n + j) * inner + i] = dy.data[o * inner + i] * scale;
                        }
                    }
                }
                Self::accumulate(
                    grads,
                    nodes,
                    *x,
                    Tensor {
                        shape: xv.shape.clone(),
                        data: dx,
                    },
                );
            }
            Op::MeanAll(x) | Op::SumAll(x) => {
                let mean = matches!(nodes[idx].op, Op::MeanAll(_));
                let xv = &nodes[*x].value;
                let scale = if mean {
                    dy.item() / xv.numel() as f64
                } else {
                    dy.item()
                };
                Self::accumulate(
                    grads,
                    nodes,
                    *x,
                    Tensor {
                        shape: xv.shape.clone(),
                        data: vec![scale; xv.numel()],
                    },
                );
            }
            Op::SoftmaxLast(x) => {
                let yv = &nodes[idx].value;
                let c = yv.last_dim();
                let mut dx = vec![0.0; yv.numel()];
                for r in 0..yv.rows() {
                    let y = &yv.data[r * c..(r + 1) * c];
                    let g = &dy.data[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for i in 0..c {
                        dx[r * c + i] = y[i] * (g[i] - dot);
                    }
                }
                let shape = nodes[*x].value.shape.clone();
                Self::accumulate(grads, nodes, *x, Tensor { shape, data: dx });
            }
            Op::Relu(x) => {
                let xv = &nodes[*x].value;
                let dx = Tensor {
                    shape: xv.shape.clone(),
                    data: dy
                        .data
                        .iter()
                        .zip(&xv.data)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect(),
                };
                Self::accumulate(grads, nodes, *x, dx);
            }
            Op::Exp(x) => {
                let yv = &nodes[idx].value;
                let dx = Tensor {
                    shape: yv.shape.clone(),
                    data: dy.data.iter().zip(&yv.data).map(|(g, y)| g * y).collect(),
                };
                Self::accumulate(grads, nodes, *x, dx);
            }
            Op::Log(x) => {
                let xv = &nodes[*x].value;
                let dx = Tensor {
                    shape: xv.shape.clone(),
                    data: dy.data.iter().zip(&xv.data).map(|(g, v)| g / v).collect(),
                };
                Self::accumulate(grads, nodes, *x, dx);
            }
            Op::Abs(x) => {
                let xv = &nodes[*x].value;
                let dx = Tensor {
                    shape: xv.shape.clone(),
                    data: dy
                        .data
                        .iter()
                        .zip(&xv.data)
                        .map(|(g, &v)| g * v.signum() * (v != 0.0) as i32 as f64)
                        .collect(),
                };
                Self::accumulate(grads, nodes, *x, dx);
            }
            Op::L2NormalizeLast { x, norms } => {
                let yv = &nodes[idx].value;
                let c = yv.last_dim();
                let mut dx = vec![0.0; yv.numel()];
                for r in 0..yv.rows() {
                    let y = &yv.data[r * c..(r + 1) * c];
                    let g = &dy.data[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for i in 0..c {
                        dx[r * c + i] = (g[i] - y[i] * dot) / norms[r];
                    }
                }
                let shape = nodes[*x].value.shape.clone();
                Self::accumulate(grads, nodes, *x, Tensor { shape, data: dx });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
                ..
            } => {
                let c = xhat.last_dim();
                let rows = xhat.rows();
                let gv = &nodes[*gamma].value.data;
                if nodes[*gamma].requires_grad {
                    let mut dg = vec![0.0; c];
                    for r in 0..rows {
                        for i in 0..c {
                            dg[i] += dy.data[r * c + i] * xhat.data[r * c + i];
                        }
                    }
                    Self::accumulate(grads, nodes, *gamma, Tensor::from_vec(dg));
                }
                if nodes[*beta].requires_grad {
                    let mut db = vec![0.0; c];
                    for r in 0..rows {
                        for i in 0..c {
                            db[i] += dy.data[r * c + i];
                        }
                    }
                    Self::accumulate(grads, nodes, *beta, Tensor::from_vec(db));
                }
                if nodes[*x].requires_grad {
                    let mut dx = vec![0.0; xhat.numel()];
                    if *training {
                        // Batch statistics depend on x: full batch-norm backward.
                        let mut mean_dxhat = vec![0.0; c];
                        let mut mean_dxhat_xhat = vec![0.0; c];
                        for r in 0..rows {
                            for i in 0..c {
                                let dxh = dy.data[r * c + i] * gv[i];
                                mean_dxhat[i] += dxh;
                                mean_dxhat_xhat[i] += dxh * xhat.data[r * c + i];
                            }
                        }
                        for i in 0..c {
                            mean_dxhat[i] /= rows as f64;
                            mean_dxhat_xhat[i] /= rows as f64;
                        }
                        for r in 0..rows {
                            for i in 0..c {
                                let dxh = dy.data[r * c + i] * gv[i];
                                dx[r * c + i] = inv_std[i]
                                    * (dxh
                                        - mean_dxhat[i]
                                        - xhat.data[r * c + i] * mean_dxhat_xhat[i]);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for i in 0..c {
                                dx[r * c + i] = dy.data[r * c + i] * gv[i] * inv_std[i];
                            }
                        }
                    }
                    let shape = nodes[*x].value.shape.clone();
                    Self::accumulate(grads, nodes, *x, Tensor { shape, data: dx });
                }
            }
            Op::Reshape(x) => {
                let shape = nodes[*x].value.shape.clone();
                let dx = Tensor {
                    shape,
                    data: dy.data.clone(),
                };
                Self::accumulate(grads, nodes, *x, dx);
            }
            Op::NllLoss {
                logits,
                labels,
                probs,
            } => {
                let c = probs.last_dim();
                let rows = probs.rows();
                let g = dy.item() / rows as f64;
                let mut dx = probs.data.clone();
                for (r, &lab) in labels.iter().enumerate() {
                    dx[r * c + lab] -= 1.0;
                }
                for v in dx.iter_mut() {
                    *v *= g;
                }
                let shape = nodes[*logits].value.shape.clone();
                Self::accumulate(grads, nodes, *logits, Tensor { shape, data: dx });
            }
        }
        Ok(())
    }
}

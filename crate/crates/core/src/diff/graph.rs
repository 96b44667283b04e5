use std::collections::HashMap;

use super::fused::{self, AttnShape, SilhouetteTrace};
use super::kernels::{matmul, matmul_at, matmul_bt};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBroadcast(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Affine(Var, f64),
    Exp(Var),
    Selu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Var, Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        dims: [usize; 4],
    },
    Attention {
        qkv: Var,
        temp: Var,
        shape: AttnShape,
        probs: Vec<f64>,
    },
    Mean(Var),
    Redmean(Var, Var),
    Mmd {
        z: Var,
        prior: Vec<f64>,
        sigma2: f64,
    },
    Silhouette {
        z: Var,
        labels: Vec<usize>,
        trace: Box<SilhouetteTrace>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b)
            | AddBroadcast(a, b)
            | Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | ConcatCols(a, b)
            | Redmean(a, b) => {
                vec![*a, *b]
            }
            MulConst(a, _)
            | Affine(a, _)
            | Exp(a)
            | Selu(a)
            | Gelu(a)
            | Sigmoid(a)
            | Square(a)
            | Softmax(a)
            | Mean(a) => {
                vec![*a]
            }
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            SliceCols { x, .. } | Gather { x, .. } => vec![*x],
            Conv3x3 { x, w, b, .. } => vec![*x, *w, *b],
            Attention { qkv, temp, .. } => vec![*qkv, *temp],
            Mmd { z, .. } | Silhouette { z, .. } => vec![*z],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recording tape: every op appends a node; [`Graph::backward`] walks the
/// nodes in reverse creation order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    param_order: Vec<(ParamId, Var)>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_with(value, op, needs_grad)
    }

    fn push_with(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_with(t, Op::Leaf, false)
    }

    /// A free input that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_with(t, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let block = store.block(id);
        let v = self.push_with(block.tensor.clone(), Op::Leaf, block.trainable);
        self.params.insert(id, v);
        self.param_order.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of every bound trainable parameter reached by `backward`.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        self.param_order
            .iter()
            .filter_map(|&(id, v)| self.grad(v).map(|g| (id, g)))
            .collect()
    }

    /// Attention weights `[B, H, T, T]` recorded by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    // ---- elementwise and linear algebra ----

    /// `a[..., k] · b[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let out = matmul(av.data(), bv.data(), m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b)))
    }

    /// `a + b` where `b` repeats cyclically over `a` (bias rows, positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() % bv.len() != 0 {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} over {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let n = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[i % n])
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push(t, Op::AddBroadcast(a, b)))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, what)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise product with a constant mask (dropout, stochastic depth, noise).
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if av.len() != mask.len() {
            return Err(Error::Shape(format!(
                "mask of {} for {:?}",
                mask.len(),
                av.shape()
            )));
        }
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push(t, Op::MulConst(a, mask)))
    }

    /// `a * scale + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.map(a, |x| x * scale + shift);
        self.push(t, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::new(av.shape(), av.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| {
            if x > 0.0 {
                SELU_LAMBDA * x
            } else {
                SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
            }
        });
        self.push(t, Op::Selu(a))
    }

    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| 0.5 * x * (1.0 + erf(x * INV_SQRT_2)));
        self.push(t, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| 1.0 / (1.0 + (-x).exp()));
        self.push(t, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x * x);
        self.push(t, Op::Square(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut data = av.data().to_vec();
        for row in data.chunks_exact_mut(av.cols()) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let t = Tensor::new(av.shape(), data).expect("same shape");
        self.push(t, Op::Softmax(a))
    }

    /// Layer normalization over the last axis with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::Shape(format!(
                "layer norm over {d} features with mismatched affine"
            )));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start >= end || end > c {
            return Err(Error::Shape(format!("column slice {start}..{end} of {c}")));
        }
        let data: Vec<f64> = xv
            .data()
            .chunks_exact(c)
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!(
                "concat {:?} with {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.data().chunks_exact(ca).zip(bv.data().chunks_exact(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of {}",
                xv.len()
            )));
        }
        let data = index.iter().map(|&i| xv.data()[i]).collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Gather { x, index }))
    }

    /// Same-padded 3×3 cross-correlation of `x[B,C,H,W]` with `w[O,C,3,3]` plus `b[O]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4
            || ws.len() != 4
            || ws[1] != xs[1]
            || ws[2] != 3
            || ws[3] != 3
            || bv.len() != ws[0]
        {
            return Err(Error::Shape(format!(
                "conv3x3 input {xs:?} kernel {ws:?} bias {:?}",
                bv.shape()
            )));
        }
        let (nb, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = ws[0];
        let (xd, kd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; nb * o * h * wd];
        for bi in 0..nb {
            for oi in 0..o {
                let dst = &mut out[(bi * o + oi) * h * wd..(bi * o + oi + 1) * h * wd];
                dst.iter_mut().for_each(|v| *v = bd[oi]);
                for ci in 0..c {
                    let src = &xd[(bi * c + ci) * h * wd..(bi * c + ci + 1) * h * wd];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = kd[((oi * c + ci) * 3 + ky) * 3 + kx];
                            for y in 0..h {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let srow = &src[sy as usize * wd..(sy as usize + 1) * wd];
                                let drow = &mut dst[y * wd..(y + 1) * wd];
                                let x0 = if kx == 0 { 1 } else { 0 };
                                let x1 = if kx == 2 { wd - 1 } else { wd };
                                for xx in x0..x1 {
                                    drow[xx] += k * srow[xx + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(&[nb, o, h, wd], out)?;
        Ok(self.push(
            t,
            Op::Conv3x3 {
                x,
                w,
                b,
                dims: [nb, c, h, wd],
            },
        ))
    }

    /// Multi-head self-attention over a packed `[B·T, 3·H·dh]` q/k/v matrix with
    /// per-head temperature `temp[H]` (logits are `q·k / τ`) and the diagonal
    /// masked out. Output is `[B·T, H·dh]`.
    pub fn attention(&mut self, qkv: Var, temp: Var, shape: AttnShape) -> Result<Var> {
        let (qv, tv) = (self.value(qkv), self.value(temp));
        let inner = shape.heads * shape.head_dim;
        if qv.cols() != 3 * inner || qv.rows() != shape.batch * shape.seq || tv.len() != shape.heads
        {
            return Err(Error::Shape(format!(
                "attention input {:?} with {} temperatures for {shape:?}",
                qv.shape(),
                tv.len()
            )));
        }
        let (out, probs) = fused::attention_forward(qv.data(), tv.data(), shape);
        let t = Tensor::new(&[shape.batch * shape.seq, inner], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                qkv,
                temp,
                shape,
                probs,
            },
        ))
    }

    // ---- reductions and losses ----

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Mean per-pixel redmean distance between two `[B,3,H,W]` images.
    pub fn redmean_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pv, tv) = (self.value(pred), self.value(target));
        same_shape(pv, tv, "redmean loss")?;
        if pv.shape().len() != 4 || pv.shape()[1] != 3 {
            return Err(Error::Shape(format!(
                "redmean loss expects [B,3,H,W], got {:?}",
                pv.shape()
            )));
        }
        let plane = pv.shape()[2] * pv.shape()[3];
        let v = fused::redmean_mean(pv.data(), tv.data(), plane);
        Ok(self.push(Tensor::scalar(v), Op::Redmean(pred, target)))
    }

    /// Biased RBF-kernel MMD between rows of `z` and constant `prior` rows.
    pub fn mmd(&mut self, z: Var, prior: Vec<f64>, sigma2: f64) -> Result<Var> {
        let zv = self.value(z);
        let d = zv.cols();
        if zv.rows() < 2 || !prior.len().is_multiple_of(d) || prior.len() / d < 2 {
            return Err(Error::InvalidInput(format!(
                "MMD needs at least two samples on each side (got {} and {})",
                zv.rows(),
                prior.len() / d.max(1)
            )));
        }
        let v = fused::mmd_rbf(zv.data(), &prior, d, sigma2);
        Ok(self.push(Tensor::scalar(v), Op::Mmd { z, prior, sigma2 }))
    }

    /// Mean silhouette of the rows of `z` under fixed `labels`.
    pub fn silhouette(&mut self, z: Var, labels: Vec<usize>) -> Result<Var> {
        let zv = self.value(z);
        if labels.len() != zv.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                zv.rows()
            )));
        }
        let trace = fused::silhouette_forward(zv.data(), zv.cols(), &labels)?;
        let v = trace.value;
        Ok(self.push(
            Tensor::scalar(v),
            Op::Silhouette {
                z,
                labels,
                trace: Box::new(trace),
            },
        ))
    }

    // ---- reverse pass ----

    /// Accumulates d`loss`/d(node) for every node that needs a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            for (input, g) in backward_op(nodes, node, &dout) {
                if !nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
            grads[i] = Some(dout);
        }
        Ok(())
    }
}

fn backward_op(nodes: &[Node], node: &Node, dout: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].needs_grad;
    let out = node.value.data();
    let unary = |a: Var, f: &dyn Fn(usize) -> f64| -> Vec<(Var, Vec<f64>)> {
        vec![(a, dout.iter().enumerate().map(|(i, d)| d * f(i)).collect())]
    };
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            let mut r = Vec::with_capacity(2);
            if wants(*a) {
                r.push((*a, matmul_bt(dout, bv.data(), m, n, k)));
            }
            if wants(*b) {
                r.push((*b, matmul_at(av.data(), dout, m, k, n)));
            }
            r
        }
        Op::AddBroadcast(a, b) => {
            let n = val(*b).len();
            let mut gb = vec![0.0; n];
            for (i, d) in dout.iter().enumerate() {
                gb[i % n] += d;
            }
            vec![(*a, dout.to_vec()), (*b, gb)]
        }
        Op::Add(a, b) => vec![(*a, dout.to_vec()), (*b, dout.to_vec())],
        Op::Sub(a, b) => vec![(*a, dout.to_vec()), (*b, dout.iter().map(|d| -d).collect())],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            vec![
                (*a, dout.iter().zip(bv).map(|(d, y)| d * y).collect()),
                (*b, dout.iter().zip(av).map(|(d, x)| d * x).collect()),
            ]
        }
        Op::MulConst(a, mask) => unary(*a, &|i| mask[i]),
        Op::Affine(a, s) => unary(*a, &|_| *s),
        Op::Exp(a) => unary(*a, &|i| out[i]),
        Op::Selu(a) => {
            let x = val(*a).data();
            unary(*a, &|i| {
                if x[i] > 0.0 {
                    SELU_LAMBDA
                } else {
                    out[i] + SELU_LAMBDA * SELU_ALPHA
                }
            })
        }
        Op::Gelu(a) => {
            let x = val(*a).data();
            unary(*a, &|i| {
                let v = x[i];
                0.5 * (1.0 + erf(v * INV_SQRT_2)) + v * INV_SQRT_2PI * (-0.5 * v * v).exp()
            })
        }
        Op::Sigmoid(a) => unary(*a, &|i| out[i] * (1.0 - out[i])),
        Op::Square(a) => {
            let x = val(*a).data();
            unary(*a, &|i| 2.0 * x[i])
        }
        Op::Softmax(a) => {
            let c = node.value.cols();
            let mut g = vec![0.0; out.len()];
            for ((gr, yr), dr) in g
                .chunks_exact_mut(c)
                .zip(out.chunks_exact(c))
                .zip(dout.chunks_exact(c))
            {
                let s: f64 = yr.iter().zip(dr).map(|(y, d)| y * d).sum();
                for j in 0..c {
                    gr[j] = yr[j] * (dr[j] - s);
                }
            }
            vec![(*a, g)]
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let g = val(*gain).data();
            let d = g.len();
            let mut dx = vec![0.0; xhat.len()];
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            for (r, ((dxr, hr), dr)) in dx
                .chunks_exact_mut(d)
                .zip(xhat.chunks_exact(d))
                .zip(dout.chunks_exact(d))
                .enumerate()
            {
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for j in 0..d {
                    let dh = dr[j] * g[j];
                    m1 += dh;
                    m2 += dh * hr[j];
                    dg[j] += dr[j] * hr[j];
                    db[j] += dr[j];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for j in 0..d {
                    dxr[j] = rstd[r] * (dr[j] * g[j] - m1 - hr[j] * m2);
                }
            }
            vec![(*x, dx), (*gain, dg), (*bias, db)]
        }
        Op::SliceCols { x, start } => {
            let xv = val(*x);
            let (c, w) = (xv.cols(), node.value.cols());
            let mut g = vec![0.0; xv.len()];
            for (gr, dr) in g.chunks_exact_mut(c).zip(dout.chunks_exact(w)) {
                gr[*start..start + w].copy_from_slice(dr);
            }
            vec![(*x, g)]
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (val(*a).cols(), val(*b).cols());
            let mut ga = Vec::with_capacity(val(*a).len());
            let mut gb = Vec::with_capacity(val(*b).len());
            for row in dout.chunks_exact(ca + cb) {
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::Gather { x, index } => {
            let mut g = vec![0.0; val(*x).len()];
            for (d, &i) in dout.iter().zip(index) {
                g[i] += d;
            }
            vec![(*x, g)]
        }
        Op::Conv3x3 { x, w, b, dims } => {
            conv3x3_backward(val(*x).data(), val(*w).data(), dout, *dims, (*x, *w, *b))
        }
        Op::Attention {
            qkv,
            temp,
            shape,
            probs,
        } => {
            let (dq, dt) =
                fused::attention_backward(val(*qkv).data(), val(*temp).data(), probs, dout, *shape);
            vec![(*qkv, dq), (*temp, dt)]
        }
        Op::Mean(a) => {
            let n = val(*a).len();
            vec![(*a, vec![dout[0] / n as f64; n])]
        }
        Op::Redmean(a, b) => {
            let plane = val(*a).shape()[2] * val(*a).shape()[3];
            let (ga, gb) = fused::redmean_grads(val(*a).data(), val(*b).data(), plane, dout[0]);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Mmd { z, prior, sigma2 } => {
            let zv = val(*z);
            let mut g = fused::mmd_rbf_grad_q(zv.data(), prior, zv.cols(), *sigma2);
            g.iter_mut().for_each(|v| *v *= dout[0]);
            vec![(*z, g)]
        }
        Op::Silhouette { z, labels, trace } => {
            let zv = val(*z);
            vec![(
                *z,
                fused::silhouette_backward(trace, zv.data(), zv.cols(), labels, dout[0]),
            )]
        }
    }
}

fn conv3x3_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dims: [usize; 4],
    vars: (Var, Var, Var),
) -> Vec<(Var, Vec<f64>)> {
    let [nb, c, h, wd] = dims;
    let o = w.len() / (c * 9);
    let plane = h * wd;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; o];
    for bi in 0..nb {
        for oi in 0..o {
            let d = &dout[(bi * o + oi) * plane..(bi * o + oi + 1) * plane];
            db[oi] += d.iter().sum::<f64>();
            for ci in 0..c {
                let src = &x[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                let gsrc = &mut dx[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((oi * c + ci) * 3 + ky) * 3 + kx;
                        let k = w[widx];
                        let mut acc = 0.0;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            let x0 = if kx == 0 { 1 } else { 0 };
                            let x1 = if kx == 2 { wd - 1 } else { wd };
                            for xx in x0..x1 {
                                let g = d[y * wd + xx];
                                acc += g * src[sy * wd + xx + kx - 1];
                                gsrc[sy * wd + xx + kx - 1] += g * k;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    vec![(vars.0, dx), (vars.1, dw), (vars.2, db)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn linear_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[1.0, 1.0]));
        let xw = g.matmul(x, w).unwrap();
        let y = g.add_broadcast(xw, b).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0]);
    }

    #[test]
    fn activations_at_zero() {
        let mut g = Graph::new();
        let z = g.constant(t(&[1], &[0.0]));
        let s = g.selu(z);
        let e = g.gelu(z);
        assert_eq!(g.value(s).item(), 0.0);
        assert_eq!(g.value(e).item(), 0.0);
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 4], &[3.0; 8]));
        let s = g.softmax(x);
        assert!(g.value(s).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -2.0, 0.0, 5.0, 9.0]));
        let gain = g.constant(Tensor::full(&[4], 1.0));
        let bias = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        for row in g.value(y).data().chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_identity_and_box() {
        let mut g = Graph::new();
        let img: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = g.constant(t(&[1, 1, 3, 4], &img));
        let mut k = [0.0; 9];
        k[4] = 1.0;
        let w = g.constant(t(&[1, 1, 3, 3], &k));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv3x3(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), img.as_slice());

        let c = g.constant(Tensor::full(&[1, 1, 4, 5], 2.0));
        let ones = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv3x3(c, ones, b).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[0], 8.0);
        assert_eq!(v[6], 18.0);
        assert_eq!(v[19], 8.0);
    }

    #[test]
    fn diamond_accumulates_both_branches() {
        // y = (2x) * (x + 1): dy/dx = 4x + 2
        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[3.0]));
        let a = g.scale(x, 2.0);
        let b = g.affine(x, 1.0, 1.0);
        let y = g.mul(a, b).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[14.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[5.0, 6.0]));
        let y = g.mul(x, c).unwrap();
        let m = g.mean(y);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.5, 3.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(g.add_broadcast(a, c).is_err());
        assert!(g.add(a, c).is_err());
    }
}

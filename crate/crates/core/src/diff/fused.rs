//! Forward and backward kernels for the fused loss and attention nodes.

use rayon::prelude::*;

use super::kernels::{dot, matmul, matmul_at, matmul_bt};
use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_mean(a: &[f64], b: &[f64], dim: usize, sigma2: f64) -> f64 {
    let na = a.len() / dim;
    let nb = b.len() / dim;
    let rows: Vec<f64> = a
        .par_chunks(dim)
        .map(|x| {
            b.chunks_exact(dim)
                .map(|y| (-sq_dist(x, y) / (2.0 * sigma2)).exp())
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (na * nb) as f64
}

/// Biased (V-statistic) squared MMD with an RBF kernel of bandwidth `sigma2`.
pub fn mmd_rbf(q: &[f64], p: &[f64], dim: usize, sigma2: f64) -> f64 {
    kernel_mean(q, q, dim, sigma2) + kernel_mean(p, p, dim, sigma2)
        - 2.0 * kernel_mean(q, p, dim, sigma2)
}

/// Gradient of [`mmd_rbf`] with respect to `q`.
pub fn mmd_rbf_grad_q(q: &[f64], p: &[f64], dim: usize, sigma2: f64) -> Vec<f64> {
    let nq = (q.len() / dim) as f64;
    let np = (p.len() / dim) as f64;
    let mut grad = vec![0.0; q.len()];
    grad.par_chunks_mut(dim)
        .zip(q.par_chunks(dim))
        .for_each(|(g, qi)| {
            for qj in q.chunks_exact(dim) {
                let k = (-sq_dist(qi, qj) / (2.0 * sigma2)).exp();
                let c = -2.0 * k / (nq * nq * sigma2);
                for ((gv, a), b) in g.iter_mut().zip(qi).zip(qj) {
                    *gv += c * (a - b);
                }
            }
            for pj in p.chunks_exact(dim) {
                let k = (-sq_dist(qi, pj) / (2.0 * sigma2)).exp();
                let c = 2.0 * k / (nq * np * sigma2);
                for ((gv, a), b) in g.iter_mut().zip(qi).zip(pj) {
                    *gv += c * (a - b);
                }
            }
        });
    grad
}

/// Per-point silhouette bookkeeping kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SilhouetteTrace {
    pub value: f64,
    dist: Vec<f64>,
    sizes: Vec<usize>,
    /// (a, b, nearest other cluster) for points that score; `None` for
    /// singletons and zero-spread points.
    terms: Vec<Option<(f64, f64, usize)>>,
}

/// Mean silhouette with Euclidean distances; labels need not be compact.
pub fn silhouette_forward(z: &[f64], dim: usize, labels: &[usize]) -> Result<SilhouetteTrace> {
    let n = labels.len();
    if z.len() != n * dim {
        return Err(Error::Shape(format!(
            "{} labels for {} points",
            n,
            z.len() / dim.max(1)
        )));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidInput(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }
    let mut dist = vec![0.0; n * n];
    dist.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let zi = &z[i * dim..(i + 1) * dim];
        for (j, d) in row.iter_mut().enumerate() {
            *d = sq_dist(zi, &z[j * dim..(j + 1) * dim]).sqrt();
        }
    });
    let terms: Vec<Option<(f64, f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] < 2 {
                return None;
            }
            let mut sums = vec![0.0; k];
            for (j, &d) in dist[i * n..(i + 1) * n].iter().enumerate() {
                sums[labels[j]] += d;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let mut best: Option<(f64, usize)> = None;
            for c in 0..k {
                if c == own || sizes[c] == 0 {
                    continue;
                }
                let m = sums[c] / sizes[c] as f64;
                if best.is_none_or(|(bm, _)| m < bm) {
                    best = Some((m, c));
                }
            }
            let (b, c) = best.expect("two clusters exist");
            (a.max(b) > 0.0).then_some((a, b, c))
        })
        .collect();
    let value = terms
        .iter()
        .map(|t| t.map_or(0.0, |(a, b, _)| (b - a) / a.max(b)))
        .sum::<f64>()
        / n as f64;
    Ok(SilhouetteTrace {
        value,
        dist,
        sizes,
        terms,
    })
}

/// Gradient of the mean silhouette with labels held fixed.
pub fn silhouette_backward(
    trace: &SilhouetteTrace,
    z: &[f64],
    dim: usize,
    labels: &[usize],
    upstream: f64,
) -> Vec<f64> {
    let n = labels.len();
    let scale = upstream / n as f64;
    let mut grad = vec![0.0; z.len()];
    for (i, term) in trace.terms.iter().enumerate() {
        let Some((a, b, c)) = *term else { continue };
        let (ds_da, ds_db) = if b >= a {
            (-1.0 / b, a / (b * b))
        } else {
            (-b / (a * a), 1.0 / a)
        };
        let own = labels[i];
        let wa = scale * ds_da / (trace.sizes[own] - 1) as f64;
        let wb = scale * ds_db / trace.sizes[c] as f64;
        for j in 0..n {
            let w = if j != i && labels[j] == own {
                wa
            } else if labels[j] == c {
                wb
            } else {
                continue;
            };
            let d = trace.dist[i * n + j];
            if d == 0.0 {
                continue;
            }
            for t in 0..dim {
                let g = w * (z[i * dim + t] - z[j * dim + t]) / d;
                grad[i * dim + t] += g;
                grad[j * dim + t] -= g;
            }
        }
    }
    grad
}

/// Mean redmean distance between two `[B,3,H,W]` arrays.
pub fn redmean_mean(a: &[f64], b: &[f64], plane: usize) -> f64 {
    let pixels = a.len() / 3;
    let total: f64 = a
        .par_chunks(3 * plane)
        .zip(b.par_chunks(3 * plane))
        .map(|(x, y)| {
            (0..plane)
                .map(|p| {
                    let rbar = 0.5 * (x[p] + y[p]);
                    let dr = x[p] - y[p];
                    let dg = x[plane + p] - y[plane + p];
                    let db = x[2 * plane + p] - y[2 * plane + p];
                    ((2.0 + rbar) * dr * dr + 4.0 * dg * dg + (3.0 - rbar) * db * db).sqrt()
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / pixels as f64
}

/// Gradients of [`redmean_mean`] with respect to both arguments.
pub fn redmean_grads(a: &[f64], b: &[f64], plane: usize, upstream: f64) -> (Vec<f64>, Vec<f64>) {
    let scale = upstream / (a.len() / 3) as f64;
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for ((x, y), (gx, gy)) in a
        .chunks_exact(3 * plane)
        .zip(b.chunks_exact(3 * plane))
        .zip(
            ga.chunks_exact_mut(3 * plane)
                .zip(gb.chunks_exact_mut(3 * plane)),
        )
    {
        for p in 0..plane {
            let rbar = 0.5 * (x[p] + y[p]);
            let dr = x[p] - y[p];
            let dg = x[plane + p] - y[plane + p];
            let db = x[2 * plane + p] - y[2 * plane + p];
            let d2 = (2.0 + rbar) * dr * dr + 4.0 * dg * dg + (3.0 - rbar) * db * db;
            if d2 <= 0.0 {
                continue;
            }
            let c = scale / (2.0 * d2.sqrt());
            let common = 0.5 * dr * dr - 0.5 * db * db;
            gx[p] += c * (common + 2.0 * (2.0 + rbar) * dr);
            gy[p] += c * (common - 2.0 * (2.0 + rbar) * dr);
            gx[plane + p] += c * 8.0 * dg;
            gy[plane + p] -= c * 8.0 * dg;
            gx[2 * plane + p] += c * 2.0 * (3.0 - rbar) * db;
            gy[2 * plane + p] -= c * 2.0 * (3.0 - rbar) * db;
        }
    }
    (ga, gb)
}

/// Geometry of a packed `[B·T, 3·H·dh]` query/key/value matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnShape {
    fn inner(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Copies one head's block (`part` 0 = q, 1 = k, 2 = v) into a `[T, dh]` matrix.
    fn extract(&self, qkv: &[f64], b: usize, h: usize, part: usize) -> Vec<f64> {
        let (t, dh, width) = (self.seq, self.head_dim, 3 * self.inner());
        let off = part * self.inner() + h * dh;
        let mut out = Vec::with_capacity(t * dh);
        for i in 0..t {
            let row = (b * t + i) * width + off;
            out.extend_from_slice(&qkv[row..row + dh]);
        }
        out
    }
}

/// Masked multi-head attention. Returns the `[B·T, H·dh]` output and the
/// `[B, H, T, T]` attention weights.
pub fn attention_forward(qkv: &[f64], temp: &[f64], s: AttnShape) -> (Vec<f64>, Vec<f64>) {
    let (t, dh) = (s.seq, s.head_dim);
    let per_head: Vec<(Vec<f64>, Vec<f64>)> = (0..s.batch * s.heads)
        .into_par_iter()
        .map(|bh| {
            let (b, h) = (bh / s.heads, bh % s.heads);
            let q = s.extract(qkv, b, h, 0);
            let k = s.extract(qkv, b, h, 1);
            let v = s.extract(qkv, b, h, 2);
            let mut p = matmul_bt(&q, &k, t, dh, t);
            for i in 0..t {
                let row = &mut p[i * t..(i + 1) * t];
                let mut mx = f64::NEG_INFINITY;
                for (j, x) in row.iter_mut().enumerate() {
                    if j == i {
                        continue;
                    }
                    *x /= temp[h];
                    mx = mx.max(*x);
                }
                let mut sum = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    *x = if j == i { 0.0 } else { (*x - mx).exp() };
                    sum += *x;
                }
                if sum > 0.0 {
                    row.iter_mut().for_each(|x| *x /= sum);
                }
            }
            let o = matmul(&p, &v, t, t, dh);
            (p, o)
        })
        .collect();
    let inner = s.inner();
    let mut out = vec![0.0; s.batch * t * inner];
    let mut probs = Vec::with_capacity(s.batch * s.heads * t * t);
    for (bh, (p, o)) in per_head.into_iter().enumerate() {
        let (b, h) = (bh / s.heads, bh % s.heads);
        for i in 0..t {
            let dst = (b * t + i) * inner + h * dh;
            out[dst..dst + dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
        }
        probs.extend(p);
    }
    (out, probs)
}

/// Gradients of [`attention_forward`] for the packed qkv and the temperatures.
pub fn attention_backward(
    qkv: &[f64],
    temp: &[f64],
    probs: &[f64],
    dout: &[f64],
    s: AttnShape,
) -> (Vec<f64>, Vec<f64>) {
    let (t, dh, inner) = (s.seq, s.head_dim, s.inner());
    let per_head: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = (0..s.batch * s.heads)
        .into_par_iter()
        .map(|bh| {
            let (b, h) = (bh / s.heads, bh % s.heads);
            let q = s.extract(qkv, b, h, 0);
            let k = s.extract(qkv, b, h, 1);
            let v = s.extract(qkv, b, h, 2);
            let p = &probs[bh * t * t..(bh + 1) * t * t];
            let mut d_o = Vec::with_capacity(t * dh);
            for i in 0..t {
                let src = (b * t + i) * inner + h * dh;
                d_o.extend_from_slice(&dout[src..src + dh]);
            }
            let dv = matmul_at(p, &d_o, t, t, dh);
            let dp = matmul_bt(&d_o, &v, t, dh, t);
            let mut ds = vec![0.0; t * t];
            for i in 0..t {
                let pr = &p[i * t..(i + 1) * t];
                let dpr = &dp[i * t..(i + 1) * t];
                let inner_sum = dot(pr, dpr);
                for j in 0..t {
                    ds[i * t + j] = pr[j] * (dpr[j] - inner_sum);
                }
            }
            let raw = matmul_bt(&q, &k, t, dh, t);
            let tau = temp[h];
            let mut dtau = 0.0;
            for i in 0..t {
                for j in 0..t {
                    if i != j {
                        dtau -= ds[i * t + j] * raw[i * t + j] / (tau * tau);
                    }
                }
            }
            let mut dq = matmul(&ds, &k, t, t, dh);
            let mut dk = matmul_at(&ds, &q, t, t, dh);
            dq.iter_mut().for_each(|x| *x /= tau);
            dk.iter_mut().for_each(|x| *x /= tau);
            (dq, dk, dv, dtau)
        })
        .collect();
    let mut dqkv = vec![0.0; qkv.len()];
    let mut dtemp = vec![0.0; temp.len()];
    for (bh, (dq, dk, dv, dtau)) in per_head.into_iter().enumerate() {
        let (b, h) = (bh / s.heads, bh % s.heads);
        dtemp[h] += dtau;
        for i in 0..t {
            let row = (b * t + i) * 3 * inner + h * dh;
            for (part, src) in [&dq, &dk, &dv].into_iter().enumerate() {
                let dst = row + part * inner;
                dqkv[dst..dst + dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
            }
        }
    }
    (dqkv, dtemp)
}

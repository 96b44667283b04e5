//! Dense row-major kernels shared by the forward and backward passes.

use rayon::prelude::*;

const ROW_BLOCK: usize = 16;

/// `a[m,k] · b[k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n * ROW_BLOCK)
        .zip(a.par_chunks(k * ROW_BLOCK))
        .for_each(|(o, a)| {
            for (orow, arow) in o.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
                for (p, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (x, &bv) in orow.iter_mut().zip(brow) {
                        *x += av * bv;
                    }
                }
            }
        });
    out
}

/// `a[m,k] · b[n,k]ᵀ`.
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n * ROW_BLOCK)
        .zip(a.par_chunks(k * ROW_BLOCK))
        .for_each(|(o, a)| {
            for (orow, arow) in o.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
                for (x, brow) in orow.iter_mut().zip(b.chunks_exact(k)) {
                    *x = dot(arow, brow);
                }
            }
        });
    out
}

/// `a[m,k]ᵀ · b[m,n]`, producing `[k,n]`.
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    if n == 0 {
        return out;
    }
    // columns of `out` are independent, so split the k rows across workers
    out.par_chunks_mut(n * ROW_BLOCK)
        .enumerate()
        .for_each(|(blk, o)| {
            let k0 = blk * ROW_BLOCK;
            let rows = o.len() / n;
            for i in 0..m {
                let arow = &a[i * k + k0..i * k + k0 + rows];
                let brow = &b[i * n..(i + 1) * n];
                for (orow, &av) in o.chunks_exact_mut(n).zip(arow) {
                    if av == 0.0 {
                        continue;
                    }
                    for (x, &bv) in orow.iter_mut().zip(brow) {
                        *x += av * bv;
                    }
                }
            }
        });
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut o = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    o[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        o
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive() {
        let (m, k, n) = (37, 19, 23);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let b: Vec<f64> = (0..k * n)
            .map(|i| ((i * 5 % 11) as f64) * 0.5 - 2.0)
            .collect();
        let want = naive(&a, &b, m, k, n);
        assert_eq!(matmul(&a, &b, m, k, n), want);
        assert_eq!(matmul_bt(&a, &transpose(&b, k, n), m, k, n), want);
        assert_eq!(matmul_at(&transpose(&a, m, k), &b, k, m, n), want);
    }
}

//! Image quality (MS-SSIM, UiQi) and clustering quality (silhouette).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Planar;

/// Mean silhouette with Euclidean distances. Labels may be any ids.
///
/// Singleton clusters score 0, and so does a point whose intra and nearest
/// inter-cluster distances are both zero.
pub fn silhouette(points: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    if dim == 0 || points.len() != labels.len() * dim {
        return Err(Error::Shape(format!(
            "{} values, {} labels, dim {dim}",
            points.len(),
            labels.len()
        )));
    }
    let (compact, k) = compact_labels(labels);
    if k < 2 {
        return Err(Error::InvalidInput(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let n = labels.len();
    let mut sizes = vec![0usize; k];
    for &l in &compact {
        sizes[l] += 1;
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = &points[i * dim..(i + 1) * dim];
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    let pj = &points[j * dim..(j + 1) * dim];
                    let d: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
                    sums[compact[j]] += d.sqrt();
                }
            }
            let own = compact[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

/// Maps arbitrary label ids onto 0..k in order of first appearance.
pub(crate) fn compact_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let compact = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (compact, map.len())
}

/// Standard MS-SSIM exponents for five scales.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsSsimOptions {
    pub scales: usize,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    /// Use fewer scales (renormalizing the exponents) when the image is too
    /// small for the requested pyramid.
    pub auto_reduce: bool,
}

impl Default for MsSsimOptions {
    fn default() -> Self {
        Self {
            scales: 5,
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            auto_reduce: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimReport {
    pub value: f64,
    pub scales_used: usize,
    /// Channel-averaged contrast-structure terms per scale, with the full
    /// SSIM in the last slot.
    pub per_scale: Vec<f64>,
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of an h×w plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = kernel.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = kernel.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, k) in kernel.iter().enumerate() {
            let src = &tmp[(y + t) * ow..(y + t + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    (out, oh, ow)
}

fn downsample(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// (mean SSIM, mean contrast-structure) of one plane pair at one scale.
fn ssim_terms(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    c1: f64,
    c2: f64,
) -> (f64, f64) {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, _, _) = filter_valid(x, h, w, kernel);
    let (my, _, _) = filter_valid(y, h, w, kernel);
    let (exx, _, _) = filter_valid(&xx, h, w, kernel);
    let (eyy, _, _) = filter_valid(&yy, h, w, kernel);
    let (exy, _, _) = filter_valid(&xy, h, w, kernel);
    let n = mx.len() as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cov = exy[i] - ux * uy;
        let cs = (2.0 * cov + c2) / (vx + vy + c2);
        let lum = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// Multi-scale SSIM averaged over channels.
pub fn ms_ssim(x: &Planar, y: &Planar, opts: &MsSsimOptions) -> Result<MsSsimReport> {
    if !x.same_shape(y) {
        return Err(Error::Shape(format!(
            "ms_ssim inputs {}x{}x{} vs {}x{}x{}",
            x.channels, x.height, x.width, y.channels, y.height, y.width
        )));
    }
    if opts.scales == 0 || opts.scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::InvalidInput(format!(
            "unsupported scale count {}",
            opts.scales
        )));
    }
    let min_dim = x.height.min(x.width);
    let fits = |s: usize| min_dim >= opts.window << (s - 1);
    let scales = if fits(opts.scales) {
        opts.scales
    } else if opts.auto_reduce && min_dim >= opts.window {
        let s = (1..opts.scales).rev().find(|&s| fits(s)).unwrap_or(1);
        log::debug!(
            "image {}x{} too small for {} MS-SSIM scales, using {s}",
            x.height,
            x.width,
            opts.scales
        );
        s
    } else {
        return Err(Error::InvalidInput(format!(
            "image {}x{} too small for {} MS-SSIM scales with window {}",
            x.height, x.width, opts.scales, opts.window
        )));
    };
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let kernel = gaussian_kernel(opts.window, opts.sigma);
    let c1 = (opts.k1 * opts.data_range).powi(2);
    let c2 = (opts.k2 * opts.data_range).powi(2);

    let mut per_scale = vec![0.0; scales];
    let mut value = 0.0;
    for c in 0..x.channels {
        let (mut px, mut py) = (x.plane(c).to_vec(), y.plane(c).to_vec());
        let (mut h, mut w) = (x.height, x.width);
        let mut channel_value = 1.0;
        for s in 0..scales {
            let (ssim, cs) = ssim_terms(&px, &py, h, w, &kernel, c1, c2);
            let term = if s + 1 == scales { ssim } else { cs };
            per_scale[s] += term / x.channels as f64;
            channel_value *= term.max(0.0).powf(weights[s] / wsum);
            if s + 1 < scales {
                let (dx, nh, nw) = downsample(&px, h, w);
                let (dy, _, _) = downsample(&py, h, w);
                px = dx;
                py = dy;
                h = nh;
                w = nw;
            }
        }
        value += channel_value / x.channels as f64;
    }
    Ok(MsSsimReport {
        value,
        scales_used: scales,
        per_scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiqiReport {
    pub value: f64,
    pub windows: usize,
    /// Windows skipped because their denominator vanished.
    pub degenerate_windows: usize,
}

/// Universal image quality index over sliding `window`×`window` blocks
/// (stride 1), pooled over all non-degenerate windows of every channel.
/// When every window is degenerate the index is 1 for identical inputs and
/// 0 otherwise.
pub fn uiqi(x: &Planar, y: &Planar, window: usize) -> Result<UiqiReport> {
    if !x.same_shape(y) {
        return Err(Error::Shape("uiqi inputs differ in shape".into()));
    }
    if window == 0 || x.height < window || x.width < window {
        return Err(Error::InvalidInput(format!(
            "window {window} does not fit a {}x{} image",
            x.height, x.width
        )));
    }
    let (h, w) = (x.height, x.width);
    let oh = h + 1 - window;
    let ow = w + 1 - window;
    let n = (window * window) as f64;

    let mut sum_q = 0.0;
    let mut good = 0usize;
    let mut degenerate = 0usize;
    for c in 0..x.channels {
        let (px, py) = (x.plane(c), y.plane(c));
        let rows: Vec<(f64, usize, usize)> = (0..oh)
            .into_par_iter()
            .map(|wy| {
                let mut acc = (0.0, 0usize, 0usize);
                let mut xs = Vec::with_capacity(window * window);
                let mut ys = Vec::with_capacity(window * window);
                for wx in 0..ow {
                    xs.clear();
                    ys.clear();
                    for r in wy..wy + window {
                        xs.extend_from_slice(&px[r * w + wx..r * w + wx + window]);
                        ys.extend_from_slice(&py[r * w + wx..r * w + wx + window]);
                    }
                    match window_q(&xs, &ys, n) {
                        Some(q) => {
                            acc.0 += q;
                            acc.1 += 1;
                        }
                        None => acc.2 += 1,
                    }
                }
                acc
            })
            .collect();
        for (q, g, d) in rows {
            sum_q += q;
            good += g;
            degenerate += d;
        }
    }
    let value = if good > 0 {
        sum_q / good as f64
    } else if x.data == y.data {
        1.0
    } else {
        0.0
    };
    Ok(UiqiReport {
        value,
        windows: good + degenerate,
        degenerate_windows: degenerate,
    })
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

fn window_q(xs: &[f64], ys: &[f64], n: f64) -> Option<f64> {
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (cx, cy) = (is_constant(xs), is_constant(ys));
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(ys) {
        let (dx, dy) = (a - mx, b - my);
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    // exact zeros for flat windows, so degeneracy is detected reliably
    if cx {
        vx = 0.0;
        cov = 0.0;
    }
    if cy {
        vy = 0.0;
        cov = 0.0;
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    let den = (vx + vy) * (mx * mx + my * my);
    if den > 0.0 {
        Some(4.0 * cov * mx * my / den)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ms_ssim: f64,
    pub uiqi: f64,
    pub ms_ssim_per_scale: Vec<f64>,
    pub ms_ssim_scales: usize,
    pub uiqi_degenerate_windows: usize,
}

pub fn metric_report(
    pred: &Planar,
    target: &Planar,
    opts: &MsSsimOptions,
    uiqi_window: usize,
) -> Result<MetricReport> {
    let m = ms_ssim(pred, target, opts)?;
    let q = uiqi(pred, target, uiqi_window)?;
    Ok(MetricReport {
        ms_ssim: m.value,
        uiqi: q.value,
        ms_ssim_per_scale: m.per_scale,
        ms_ssim_scales: m.scales_used,
        uiqi_degenerate_windows: q.degenerate_windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_planar(c: usize, h: usize, w: usize, seed: u64) -> Planar {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Planar::new(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn silhouette_separated_pairs() {
        let pts = [0.0, 0.0, 0.01, 0.0, 10.0, 10.0, 10.0, 10.01];
        let s = silhouette(&pts, 2, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.99, "{s}");
    }

    #[test]
    fn silhouette_identical_points_is_zero() {
        let pts = [1.0; 8];
        assert_eq!(silhouette(&pts, 2, &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_single_cluster_errors() {
        assert!(silhouette(&[0.0, 1.0, 2.0], 1, &[4, 4, 4]).is_err());
    }

    #[test]
    fn ms_ssim_identity() {
        let x = random_planar(3, 176, 180, 1);
        let r = ms_ssim(&x, &x, &MsSsimOptions::default()).unwrap();
        assert_eq!(r.scales_used, 5);
        assert!((r.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ms_ssim_reduces_scales_for_small_images() {
        let x = random_planar(3, 64, 64, 2);
        let r = ms_ssim(&x, &x, &MsSsimOptions::default()).unwrap();
        assert_eq!(r.scales_used, 3);
        let strict = MsSsimOptions {
            auto_reduce: false,
            ..Default::default()
        };
        assert!(ms_ssim(&x, &x, &strict).is_err());
        let tiny = random_planar(1, 8, 8, 2);
        assert!(ms_ssim(&tiny, &tiny, &MsSsimOptions::default()).is_err());
    }

    #[test]
    fn uiqi_identity_and_scaled_copy() {
        let x = random_planar(3, 24, 20, 3);
        assert!((uiqi(&x, &x, 8).unwrap().value - 1.0).abs() < 1e-12);
        // y = 2x: every window gives 16 s^2 m^2 / (5 s^2 * 5 m^2) = 0.64
        let y = Planar::new(3, 24, 20, x.data.iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!((uiqi(&x, &y, 8).unwrap().value - 0.64).abs() < 1e-12);
    }

    #[test]
    fn uiqi_constant_images() {
        let a = Planar::new(1, 10, 10, vec![0.3; 100]).unwrap();
        let r = uiqi(&a, &a, 8).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.degenerate_windows, r.windows);
        let b = Planar::new(1, 10, 10, vec![0.6; 100]).unwrap();
        assert_eq!(uiqi(&a, &b, 8).unwrap().value, 0.0);
    }
}

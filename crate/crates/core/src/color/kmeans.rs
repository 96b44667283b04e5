//! Lloyd k-means with farthest-point seeding, and the "iterative" variant
//! that picks k by mean silhouette over a configured range.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RgbColor;
use crate::error::{Error, Result};
use crate::metrics::silhouette;
use crate::raster::RgbImage;

/// Points per parallel work unit. Centroid sums are reduced in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IKMeansConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub silhouette_subsample: usize,
    pub seed: u64,
}

impl Default for IKMeansConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 12,
            max_iter: 100,
            tol: 1e-4,
            silhouette_subsample: 2048,
            seed: 0,
        }
    }
}

/// One Lloyd run at fixed k over `n` points of dimension `dim` (row-major).
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step; non-increasing.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansRun {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        // strict comparison: ties go to the lowest index
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

struct ChunkStats {
    sums: Vec<f64>,
    counts: Vec<usize>,
    inertia: f64,
}

fn assign(
    points: &[f64],
    dim: usize,
    centroids: &[f64],
    labels: &mut [usize],
) -> (Vec<f64>, Vec<usize>, f64) {
    let k = centroids.len() / dim;
    let stats: Vec<ChunkStats> = points
        .par_chunks(CHUNK * dim)
        .zip(labels.par_chunks_mut(CHUNK))
        .map(|(pts, labs)| {
            let mut s = ChunkStats {
                sums: vec![0.0; k * dim],
                counts: vec![0; k],
                inertia: 0.0,
            };
            for (p, lab) in pts.chunks_exact(dim).zip(labs.iter_mut()) {
                let (c, d) = nearest(p, centroids, dim);
                *lab = c;
                s.inertia += d;
                s.counts[c] += 1;
                for (acc, v) in s.sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                    *acc += v;
                }
            }
            s
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    let mut inertia = 0.0;
    for s in stats {
        for (a, b) in sums.iter_mut().zip(&s.sums) {
            *a += b;
        }
        for (a, b) in counts.iter_mut().zip(&s.counts) {
            *a += b;
        }
        inertia += s.inertia;
    }
    (sums, counts, inertia)
}

/// Lloyd iterations from farthest-point seeding.
pub fn kmeans(
    points: &[f64],
    dim: usize,
    k: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<KMeansRun> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} values do not form points of dimension {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k={k} invalid for {n} points")));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut min_d: Vec<f64> = (0..n)
        .map(|i| sq_dist(point(i), &centroids[..dim]))
        .collect();
    while centroids.len() < k * dim {
        let mut far = 0;
        for i in 1..n {
            if min_d[i] > min_d[far] {
                far = i;
            }
        }
        let c = point(far).to_vec();
        for i in 0..n {
            min_d[i] = min_d[i].min(sq_dist(point(i), &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let (sums, counts, inertia) = assign(points, dim, &centroids, &mut labels);
        history.push(inertia);
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    next[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        // empty clusters move to the point farthest from its own centroid
        let mut taken = HashSet::new();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let mut far = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if taken.contains(&i) {
                    continue;
                }
                let d = sq_dist(point(i), &next[labels[i] * dim..(labels[i] + 1) * dim]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                taken.insert(i);
                next[c * dim..(c + 1) * dim].copy_from_slice(point(i));
            }
        }
        let shift = centroids
            .chunks_exact(dim)
            .zip(next.chunks_exact(dim))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            let (_, _, inertia) = assign(points, dim, &centroids, &mut labels);
            history.push(inertia);
            break;
        }
    }
    for w in history.windows(2) {
        debug_assert!(
            w[1] <= w[0] * (1.0 + 1e-12) + 1e-12,
            "inertia increased: {w:?}"
        );
    }
    Ok(KMeansRun {
        k,
        dim,
        inertia: *history.last().unwrap(),
        centroids,
        labels,
        inertia_history: history,
        iterations,
    })
}

/// Result of k selection over a range.
#[derive(Debug, Clone)]
pub struct PointClustering {
    pub run: KMeansRun,
    /// Mean silhouette of the chosen k on the subsample; `None` when k = 1.
    pub silhouette: Option<f64>,
    /// (k, silhouette) for every k tried.
    pub scores: Vec<(usize, f64)>,
}

fn count_distinct(points: &[f64], dim: usize, cap: usize) -> usize {
    let mut seen = HashSet::new();
    for p in points.chunks_exact(dim) {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        seen.insert(key);
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

/// Runs k-means for every k in `[k_min, k_max]` and keeps the k with the
/// highest mean silhouette on a fixed random subsample (lowest k on ties).
/// Identical points collapse to a single cluster.
pub fn cluster_points(
    points: &[f64],
    dim: usize,
    config: &IKMeansConfig,
) -> Result<PointClustering> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::Shape("empty or ragged point set".into()));
    }
    if config.k_min == 0 || config.k_min > config.k_max {
        return Err(Error::InvalidInput(format!(
            "bad k range [{}, {}]",
            config.k_min, config.k_max
        )));
    }
    let n = points.len() / dim;
    let distinct = count_distinct(points, dim, config.k_max + 1);
    if distinct == 1 {
        let run = kmeans(points, dim, 1, config.max_iter, config.tol, config.seed)?;
        return Ok(PointClustering {
            run,
            silhouette: None,
            scores: Vec::new(),
        });
    }
    if n < config.k_min {
        return Err(Error::InvalidInput(format!(
            "{n} points cannot form {} clusters",
            config.k_min
        )));
    }
    let k_hi = config.k_max.min(distinct);
    let k_lo = config.k_min.min(k_hi).max(2);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5111_0000);
    let mut idx: Vec<usize> = (0..n).collect();
    let m = config.silhouette_subsample.min(n).max(2.min(n));
    idx.partial_shuffle(&mut rng, m);
    idx.truncate(m);
    idx.sort_unstable();
    let sub: Vec<f64> = idx
        .iter()
        .flat_map(|&i| points[i * dim..(i + 1) * dim].iter().copied())
        .collect();

    let mut best: Option<(KMeansRun, f64)> = None;
    let mut scores = Vec::new();
    for k in k_lo..=k_hi {
        let run = kmeans(
            points,
            dim,
            k,
            config.max_iter,
            config.tol,
            config.seed.wrapping_add(k as u64),
        )?;
        let labels: Vec<usize> = idx.iter().map(|&i| run.labels[i]).collect();
        let score = silhouette(&sub, dim, &labels).unwrap_or(-1.0);
        scores.push((k, score));
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((run, score));
        }
    }
    let (run, score) = best.expect("at least one k tried");
    Ok(PointClustering {
        run,
        silhouette: Some(score),
        scores,
    })
}

/// Colour-level reduction of an RGB image.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<RgbColor>,
    /// Row-major H×W label map.
    pub assignments: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub inertia: f64,
    pub silhouette: Option<f64>,
}

impl ClusterModel {
    pub fn label_at(&self, y: usize, x: usize) -> usize {
        self.assignments[y * self.width + x]
    }
}

/// Iterative k-means in normalized RGB space.
pub fn ikmeans(img: &RgbImage, config: &IKMeansConfig) -> Result<ClusterModel> {
    if img.is_empty() {
        return Err(Error::InvalidInput("cannot cluster an empty image".into()));
    }
    let points: Vec<f64> = img.pixels().iter().flat_map(|c| c.to_array()).collect();
    let clustering = cluster_points(&points, 3, config)?;
    let run = clustering.run;
    Ok(ClusterModel {
        k: run.k,
        centroids: run
            .centroids
            .chunks_exact(3)
            .map(|c| RgbColor::clamped(c[0], c[1], c[2]))
            .collect(),
        assignments: run.labels,
        height: img.height(),
        width: img.width(),
        inertia: run.inertia,
        silhouette: clustering.silhouette,
    })
}

use std::time::Instant;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use xrecolor::diff::{Graph, Tensor};
use xrecolor::embed::losses::silhouette_labels;
use xrecolor::embed::{loss_sil, mmd_rbf};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Textbook silhouette: singletons score 0, as do points with a = b = 0.
fn brute_silhouette(points: &[f64], dim: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let pi = &points[i * dim..(i + 1) * dim];
        let own = labels[i];
        let own_size = labels.iter().filter(|&&l| l == own).count();
        if own_size < 2 {
            continue;
        }
        let mut a = 0.0;
        for j in 0..n {
            if j != i && labels[j] == own {
                a += dist(pi, &points[j * dim..(j + 1) * dim]);
            }
        }
        a /= (own_size - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c == own {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            if members.is_empty() {
                continue;
            }
            let m = members
                .iter()
                .map(|&j| dist(pi, &points[j * dim..(j + 1) * dim]))
                .sum::<f64>()
                / members.len() as f64;
            b = b.min(m);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

fn clustered_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, k: usize) -> Vec<f64> {
    let centres: Vec<f64> = (0..k * dim).map(|_| rng.random_range(-4.0..4.0)).collect();
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..k);
        for d in 0..dim {
            let e: f64 = StandardNormal.sample(rng);
            out.push(centres[c * dim + d] + 0.7 * e);
        }
    }
    out
}

#[test]
fn silhouette_matches_brute_force_on_fifty_instances() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for inst in 0..50 {
        let n = rng.random_range(8..=512);
        let dim = 3;
        let k = rng.random_range(2..=6);
        let pts = clustered_points(&mut rng, n, dim, k);

        // fixed random labels through the graph op
        let labels: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { rng.random_range(0..k) })
            .collect();
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(&[n, dim], pts.clone()).unwrap());
        let s = g.silhouette(z, labels.clone()).unwrap();
        let oracle = brute_silhouette(&pts, dim, &labels);
        assert!(
            (g.value(s).item() - oracle).abs() < 1e-9,
            "instance {inst}: graph vs oracle"
        );

        // loss_sil with its own k-means labels
        let seed = rng.random();
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(&[n, dim], pts.clone()).unwrap());
        if let Some(loss) = loss_sil(&mut g, z, (2, 6), seed).unwrap() {
            let labels = silhouette_labels(&pts, dim, (2, 6), seed).unwrap();
            let expected = (1.0 - brute_silhouette(&pts, dim, &labels)) / 2.0;
            assert!(
                (g.value(loss).item() - expected).abs() < 1e-9,
                "instance {inst}: loss_sil"
            );
        }
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn silhouette_of_a_single_cluster_is_skipped() {
    let pts = vec![0.0; 3 * 20];
    let mut g = Graph::new();
    let z = g.constant(Tensor::new(&[20, 3], pts).unwrap());
    assert!(loss_sil(&mut g, z, (2, 6), 1).unwrap().is_none());
}

fn brute_mmd(q: &[f64], p: &[f64], dim: usize, sigma2: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| (-dist(a, b).powi(2) / (2.0 * sigma2)).exp();
    let rows = |v: &[f64]| v.chunks(dim).map(|c| c.to_vec()).collect::<Vec<_>>();
    let (q, p) = (rows(q), rows(p));
    let mut kqq = 0.0;
    for a in &q {
        for b in &q {
            kqq += k(a, b);
        }
    }
    let mut kpp = 0.0;
    for a in &p {
        for b in &p {
            kpp += k(a, b);
        }
    }
    let mut kqp = 0.0;
    for a in &q {
        for b in &p {
            kqp += k(a, b);
        }
    }
    let (nq, np) = (q.len() as f64, p.len() as f64);
    kqq / (nq * nq) + kpp / (np * np) - 2.0 * kqp / (nq * np)
}

fn normal_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize, mean: f64) -> Vec<f64> {
    let d = Normal::new(mean, 1.0).unwrap();
    (0..n * dim).map(|_| d.sample(rng)).collect()
}

#[test]
fn mmd_is_non_negative_on_a_thousand_instances() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=6);
        let nq = rng.random_range(2..=48);
        let np = rng.random_range(2..=48);
        let shift = rng.random_range(0.0..3.0);
        let q = normal_rows(&mut rng, nq, dim, shift);
        let p = normal_rows(&mut rng, np, dim, 0.0);
        let v = mmd_rbf(&q, &p, dim, rng.random_range(0.1..10.0));
        worst = worst.min(v);
    }
    assert!(worst >= 0.0, "most negative MMD {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn mmd_matches_the_double_loop_at_batch_sixteen() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let q = normal_rows(&mut rng, 16, 3, 0.5);
        let p = normal_rows(&mut rng, 16, 3, 0.0);
        let (fast, slow) = (mmd_rbf(&q, &p, 3, 3.0), brute_mmd(&q, &p, 3, 3.0));
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }
}

#[test]
fn mmd_separates_shifted_gaussians_beyond_the_permutation_null() {
    let start = Instant::now();
    let (n, dim, perms) = (16, 3, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut detected = 0;
    for _ in 0..100 {
        let x = normal_rows(&mut rng, n, dim, 0.0);
        let y = normal_rows(&mut rng, n, dim, 5.0);
        let observed = mmd_rbf(&x, &y, dim, dim as f64);
        let mut pooled: Vec<Vec<f64>> = x
            .chunks(dim)
            .chain(y.chunks(dim))
            .map(|c| c.to_vec())
            .collect();
        let mut null = Vec::with_capacity(perms);
        for _ in 0..perms {
            pooled.shuffle(&mut rng);
            let a: Vec<f64> = pooled[..n].concat();
            let b: Vec<f64> = pooled[n..].concat();
            null.push(mmd_rbf(&a, &b, dim, dim as f64));
        }
        null.sort_by(f64::total_cmp);
        if observed > null[(0.95 * perms as f64) as usize] {
            detected += 1;
        }
    }
    assert!(detected >= 95, "detected {detected}/100");
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

proptest! {
    #[test]
    fn mmd_of_a_sample_with_itself_vanishes(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = normal_rows(&mut rng, n, 3, 0.0);
        prop_assert!(mmd_rbf(&q, &q, 3, 3.0).abs() < 1e-12);
    }

    #[test]
    fn silhouette_is_bounded(seed in any::<u64>(), n in 4usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = clustered_points(&mut rng, n, 2, 3);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(&[n, 2], pts).unwrap());
        let s = g.silhouette(z, labels).unwrap();
        let v = g.value(s).item();
        prop_assert!((-1.0..=1.0).contains(&v));
    }
}

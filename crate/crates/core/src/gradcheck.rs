//! Registered finite-difference suites: one per differentiable operation
//! plus the two reduced model clones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::check::{check_gradients, BlockError, CheckOptions};
use crate::diff::nn::Linear;
use crate::diff::{AttnShape, Graph, Mode, ParamStore, Tensor, Var};
use crate::embed::{loss_mmd, loss_rec, EmbedderConfig, EmbedderModel};
use crate::error::Result;
use crate::recolor::{loss_srgb, SmallUViT, SmallUViTConfig};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>;

pub struct Suite {
    pub name: &'static str,
    setup: fn(&mut ChaCha8Rng) -> Result<(ParamStore, Build)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
    pub blocks: Vec<BlockError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<&str> {
        self.suites
            .iter()
            .filter(|s| !s.passed)
            .map(|s| s.name.as_str())
            .collect()
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).expect("sized")
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Reduces a tensor output to a scalar through fixed random weights.
fn project(g: &mut Graph, out: Var, weights: &[f64]) -> Result<Var> {
    let p = g.mul_const(out, weights.to_vec())?;
    Ok(g.mean(p))
}

fn store_of(blocks: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in blocks {
        s.add(name, t, true).expect("unique names");
    }
    s
}

fn param(g: &mut Graph, s: &ParamStore, name: &str) -> Var {
    g.param(s, s.id(name).expect("registered block"))
}

/// Single-input elementwise suite.
fn unary(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    f: fn(&mut Graph, Var) -> Var,
) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![("x", normal(shape, rng))]);
    let mut g = Graph::new();
    let x = g.constant(store.get(store.id("x").unwrap()).clone());
    let probe = f(&mut g, x);
    let w = uniform(&[g.value(probe).len()], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let x = param(g, s, "x");
            let y = f(g, x);
            project(g, y, &w)
        }),
    ))
}

fn binary(
    rng: &mut ChaCha8Rng,
    sa: &[usize],
    sb: &[usize],
    f: fn(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![("a", normal(sa, rng)), ("b", normal(sb, rng))]);
    let mut g = Graph::new();
    let (a, b) = (
        g.constant(store.get(store.id("a").unwrap()).clone()),
        g.constant(store.get(store.id("b").unwrap()).clone()),
    );
    let probe = f(&mut g, a, b)?;
    let n = g.value(probe).len();
    let w = uniform(&[n], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let a = param(g, s, "a");
            let b = param(g, s, "b");
            let y = f(g, a, b)?;
            project(g, y, &w)
        }),
    ))
}

fn suite_linear(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let mut store = store_of(vec![("x", normal(&[4, 5], rng))]);
    let lin = Linear::new(&mut store, "lin", 5, 3, true, rng)?;
    let w = uniform(&[12], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let x = param(g, s, "x");
            let y = lin.forward(g, s, x)?;
            project(g, y, &w)
        }),
    ))
}

fn suite_mul_const(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![("x", normal(&[3, 4], rng))]);
    let mask: Vec<f64> = (0..12)
        .map(|i| if i % 3 == 0 { 0.0 } else { 1.25 })
        .collect();
    let w = uniform(&[12], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let x = param(g, s, "x");
            let y = g.mul_const(x, mask.clone())?;
            project(g, y, &w)
        }),
    ))
}

fn suite_layer_norm(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![
        ("x", normal(&[3, 6], rng)),
        ("gain", uniform(&[6], 0.5, 1.5, rng)),
        ("bias", normal(&[6], rng)),
    ]);
    let w = uniform(&[18], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let (x, ga, b) = (param(g, s, "x"), param(g, s, "gain"), param(g, s, "bias"));
            let y = g.layer_norm(x, ga, b)?;
            project(g, y, &w)
        }),
    ))
}

fn suite_slice_concat(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    binary(rng, &[3, 5], &[3, 2], |g, a, b| {
        let s = g.slice_cols(a, 1, 4)?;
        let sq = g.square(s);
        g.concat_cols(sq, b)
    })
}

fn suite_gather(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![("x", normal(&[2, 4, 3], rng))]);
    let index = crate::recolor::unpatch_index(4, 4, 2, 3);
    let index: Vec<usize> = index.into_iter().map(|i| i % 24).collect();
    let w = uniform(&[index.len()], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let x = param(g, s, "x");
            let y = g.gather(x, index.clone(), &[1, 3, 4, 4])?;
            project(g, y, &w)
        }),
    ))
}

fn suite_conv(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![
        ("x", normal(&[2, 2, 4, 5], rng)),
        ("w", normal(&[3, 2, 3, 3], rng)),
        ("b", normal(&[3], rng)),
    ]);
    let w = uniform(&[2 * 3 * 20], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let (x, k, b) = (param(g, s, "x"), param(g, s, "w"), param(g, s, "b"));
            let y = g.conv3x3(x, k, b)?;
            project(g, y, &w)
        }),
    ))
}

fn suite_attention(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let shape = AttnShape {
        batch: 2,
        seq: 4,
        heads: 2,
        head_dim: 3,
    };
    let store = store_of(vec![
        ("qkv", normal(&[8, 18], rng)),
        ("temperature", uniform(&[2], 1.2, 2.2, rng)),
    ]);
    let w = uniform(&[8 * 6], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let (q, t) = (param(g, s, "qkv"), param(g, s, "temperature"));
            let y = g.attention(q, t, shape)?;
            project(g, y, &w)
        }),
    ))
}

fn suite_redmean(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![
        ("pred", uniform(&[2, 3, 4, 4], 0.0, 1.0, rng)),
        ("target", uniform(&[2, 3, 4, 4], 0.0, 1.0, rng)),
    ]);
    Ok((
        store,
        Box::new(|g, s| {
            let (p, t) = (param(g, s, "pred"), param(g, s, "target"));
            loss_srgb(g, p, t)
        }),
    ))
}

fn suite_rec(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![
        ("x", normal(&[4, 6], rng)),
        ("recon", normal(&[4, 6], rng)),
    ]);
    Ok((
        store,
        Box::new(|g, s| {
            let (x, r) = (param(g, s, "x"), param(g, s, "recon"));
            loss_rec(g, x, r)
        }),
    ))
}

fn suite_mmd(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![("z", normal(&[8, 3], rng))]);
    let prior = normal(&[10, 3], rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let z = param(g, s, "z");
            loss_mmd(g, z, prior.clone(), 3.0)
        }),
    ))
}

fn suite_silhouette(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let store = store_of(vec![("z", normal(&[15, 3], rng))]);
    let labels: Vec<usize> = (0..15).map(|i| i % 3).collect();
    Ok((
        store,
        Box::new(move |g, s| {
            let z = param(g, s, "z");
            let sil = g.silhouette(z, labels.clone())?;
            Ok(g.affine(sil, -0.5, 0.5))
        }),
    ))
}

fn suite_ff_block(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let mut store = store_of(vec![("x", normal(&[4, 6], rng))]);
    let l1 = Linear::new(&mut store, "ff.0", 6, 12, true, rng)?;
    let l2 = Linear::new(&mut store, "ff.1", 12, 6, true, rng)?;
    let w = uniform(&[24], -1.0, 1.0, rng).into_data();
    Ok((
        store,
        Box::new(move |g, s| {
            let x = param(g, s, "x");
            let h = l1.forward(g, s, x)?;
            let h = g.gelu(h);
            let y = l2.forward(g, s, h)?;
            project(g, y, &w)
        }),
    ))
}

fn suite_embedder(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let cfg = EmbedderConfig::reduced();
    let model = EmbedderModel::new(cfg.clone(), rng.random())?;
    let rows = 10;
    let x: Vec<f64> = (0..rows)
        .flat_map(|_| {
            let raw: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(move |v| v / s)
        })
        .collect();
    let eps = normal(&[rows, 2], rng).into_data();
    let prior = normal(&[rows, 2], rng).into_data();
    let mu0 = model.encode_mu(&x)?;
    let labels = crate::embed::losses::silhouette_labels(&mu0, 2, (2, 6), 0)?;
    let store = model.store.clone();
    Ok((
        store,
        Box::new(move |g, s| {
            let m = EmbedderModel::with_params(cfg.clone(), s)?;
            let xv = g.constant(Tensor::new(&[rows, 16], x.clone())?);
            let lat = m.encode(g, xv, Mode::Train, Some(&eps))?;
            let recon = m.decode(g, lat.z)?;
            let rec = loss_rec(g, xv, recon)?;
            let mmd = loss_mmd(g, lat.z, prior.clone(), 2.0)?;
            let sil = g.silhouette(lat.mu, labels.clone())?;
            let sil = g.affine(sil, -0.5, 0.5);
            let t = g.add(rec, mmd)?;
            g.add(t, sil)
        }),
    ))
}

fn suite_small_uvit(rng: &mut ChaCha8Rng) -> Result<(ParamStore, Build)> {
    let cfg = SmallUViTConfig::reduced();
    let model = SmallUViT::new(cfg.clone(), rng.random())?;
    let x = normal(&[2, 3, 8, 8], rng);
    let y = uniform(&[2, 3, 8, 8], 0.0, 1.0, rng);
    let store = model.store.clone();
    Ok((
        store,
        Box::new(move |g, s| {
            let m = SmallUViT::with_params(cfg.clone(), s)?;
            let mut noise = ChaCha8Rng::seed_from_u64(0);
            let pred = m.forward(g, &x, Mode::Train, &mut noise)?;
            let target = g.constant(y.clone());
            loss_srgb(g, pred, target)
        }),
    ))
}

macro_rules! suite {
    ($name:literal, $f:expr) => {
        Suite {
            name: $name,
            setup: $f,
        }
    };
}

/// Every registered suite, in report order.
pub fn suites() -> Vec<Suite> {
    vec![
        suite!("linear", suite_linear),
        suite!("matmul", |r| binary(r, &[3, 4], &[4, 2], |g, a, b| g
            .matmul(a, b))),
        suite!("add_broadcast", |r| binary(r, &[4, 3], &[3], |g, a, b| g
            .add_broadcast(a, b))),
        suite!("add", |r| binary(r, &[2, 3], &[2, 3], |g, a, b| g
            .add(a, b))),
        suite!("sub", |r| binary(r, &[2, 3], &[2, 3], |g, a, b| g
            .sub(a, b))),
        suite!("mul", |r| binary(r, &[2, 3], &[2, 3], |g, a, b| g
            .mul(a, b))),
        suite!("mul_const", suite_mul_const),
        suite!("affine", |r| unary(r, &[2, 5], |g, x| g
            .affine(x, -1.5, 0.25))),
        suite!("exp", |r| unary(r, &[2, 5], |g, x| g.exp(x))),
        suite!("selu", |r| unary(r, &[3, 5], |g, x| g.selu(x))),
        suite!("gelu", |r| unary(r, &[3, 5], |g, x| g.gelu(x))),
        suite!("sigmoid", |r| unary(r, &[3, 5], |g, x| g.sigmoid(x))),
        suite!("square", |r| unary(r, &[2, 5], |g, x| g.square(x))),
        suite!("softmax", |r| unary(r, &[3, 5], |g, x| g.softmax(x))),
        suite!("mean", |r| unary(r, &[2, 5], |g, x| g.mean(x))),
        suite!("layer_norm", suite_layer_norm),
        suite!("slice_concat", suite_slice_concat),
        suite!("gather", suite_gather),
        suite!("conv3x3", suite_conv),
        suite!("lsa_attention", suite_attention),
        suite!("ff_block", suite_ff_block),
        suite!("loss_rec", suite_rec),
        suite!("loss_mmd", suite_mmd),
        suite!("loss_sil", suite_silhouette),
        suite!("loss_srgb", suite_redmean),
        suite!("embedder_reduced", suite_embedder),
        suite!("small_uvit_reduced", suite_small_uvit),
    ]
}

pub fn suite_names() -> Vec<&'static str> {
    suites().iter().map(|s| s.name).collect()
}

/// Runs every suite; `corrupt` names suites whose analytic gradients are
/// scaled by 1.1 before comparison.
pub fn run_gradcheck(seed: u64, corrupt: &[String]) -> Result<GradcheckReport> {
    let mut results = Vec::new();
    for (i, suite) in suites().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, &[i as u64]));
        let (mut store, build) = (suite.setup)(&mut rng)?;
        let opts = CheckOptions {
            analytic_scale: if corrupt.iter().any(|c| c == suite.name) {
                1.1
            } else {
                1.0
            },
            ..CheckOptions::default()
        };
        let rep = check_gradients(&mut store, &build, &opts)?;
        results.push(SuiteResult {
            name: suite.name.to_string(),
            max_rel_error: rep.max_rel_error,
            passed: rep.passes(GRADCHECK_TOLERANCE),
            blocks: rep.blocks,
        });
    }
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        passed: results.iter().all(|r| r.passed),
        suites: results,
    })
}

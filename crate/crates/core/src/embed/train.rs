use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::losses::{
    loss_mmd, loss_rec, loss_sil, loss_total, reconstruction_error, EmbedSchedule,
};
use super::model::{EmbedderConfig, EmbedderModel};
use crate::diff::{
    Adam, AdamConfig, Graph, Mode, PlateauConfig, PlateauMode, PlateauScheduler, Tensor,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedTrainConfig {
    pub model: EmbedderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub schedule: EmbedSchedule,
    /// RBF bandwidth; defaults to the latent dimension.
    pub kernel_sigma2: Option<f64>,
    pub k_range: (usize, usize),
    pub plateau: PlateauConfig,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            model: EmbedderConfig::default(),
            epochs: 100,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            schedule: EmbedSchedule::default(),
            kernel_sigma2: None,
            k_range: (2, 6),
            plateau: PlateauConfig {
                enabled: false,
                mode: PlateauMode::Min,
                ..PlateauConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedEpoch {
    pub epoch: usize,
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
    pub train_total: f64,
    pub train_rec: f64,
    pub train_mmd: f64,
    pub train_sil: f64,
    pub val_rec: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedTrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: EmbedderModel,
    pub history: Vec<EmbedEpoch>,
    pub best_epoch: usize,
}

/// Splits `n` shuffled rows into batches; a tail too small for the
/// silhouette term is folded into the previous batch.
fn batch_bounds(n: usize, batch: usize, min_tail: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 {
        let (s, e) = *out.last().unwrap();
        if e - s < min_tail {
            out.pop();
            out.last_mut().unwrap().1 = e;
        }
    }
    out
}

fn validation_rec(model: &EmbedderModel, val: &[f64]) -> Result<f64> {
    let recon = model.reconstruct(val)?;
    Ok(reconstruction_error(val, &recon))
}

/// Minibatch Adam on the scheduled total loss. `train` and `val` hold
/// L1-normalized spectra as rows of `config.model.input_dim`.
pub fn train_embedder(
    train: &[f64],
    val: &[f64],
    config: &EmbedTrainConfig,
) -> Result<EmbedTrainOutcome> {
    let d = config.model.input_dim;
    let n_lat = config.model.latent_dim;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "embedder training needs non-empty train and validation sets".into(),
        ));
    }
    if !train.len().is_multiple_of(d) || !val.len().is_multiple_of(d) {
        return Err(Error::Shape(format!("spectra are not rows of {d} bins")));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidInput(
            "epochs and batch_size must be positive".into(),
        ));
    }
    let sigma2 = config.kernel_sigma2.unwrap_or(n_lat as f64);
    let n = train.len() / d;
    let mut model =
        EmbedderModel::new(config.model.clone(), rng::derive_seed(config.seed, &[0xE1]))?;
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut plateau = PlateauScheduler::new(config.plateau);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::diff::ParamStore)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, &[1, epoch as u64]));
        let batches = batch_bounds(n, config.batch_size, config.k_range.1 + 1);
        let mut sums = [0.0f64; 4];
        for (bi, &(s, e)) in batches.iter().enumerate() {
            let rows = e - s;
            let mut xb = Vec::with_capacity(rows * d);
            for &i in &order[s..e] {
                xb.extend_from_slice(&train[i * d..(i + 1) * d]);
            }
            let mut noise = rng::stream(config.seed, &[2, epoch as u64, bi as u64]);
            let eps: Vec<f64> = (0..rows * n_lat)
                .map(|_| StandardNormal.sample(&mut noise))
                .collect();
            let prior: Vec<f64> = (0..rows * n_lat)
                .map(|_| StandardNormal.sample(&mut noise))
                .collect();

            let mut g = Graph::new();
            let x = g.constant(Tensor::new(&[rows, d], xb)?);
            let lat = model.encode(&mut g, x, Mode::Train, Some(&eps))?;
            let recon = model.decode(&mut g, lat.z)?;
            let rec = loss_rec(&mut g, x, recon)?;
            let mmd = loss_mmd(&mut g, lat.z, prior, sigma2)?;
            let sil = if rows > config.k_range.1 {
                loss_sil(
                    &mut g,
                    lat.mu,
                    config.k_range,
                    rng::derive_seed(config.seed, &[3, epoch as u64, bi as u64]),
                )?
            } else {
                None
            };
            let (total, parts) = loss_total(&mut g, rec, mmd, sil, epoch, &config.schedule)?;
            if !parts.total.is_finite() {
                return Err(Error::Numerical(format!(
                    "embedder loss is not finite at epoch {epoch}, batch {bi} (rec {}, mmd {}, sil {})",
                    parts.rec, parts.mmd, parts.sil
                )));
            }
            g.backward(total)?;
            adam.step(&mut model.store, &g.param_grads())?;
            let w = rows as f64 / n as f64;
            sums[0] += w * parts.total;
            sums[1] += w * parts.rec;
            sums[2] += w * parts.mmd;
            sums[3] += w * parts.sil;
        }
        let val_rec = validation_rec(&model, val)?;
        if !val_rec.is_finite() {
            return Err(Error::Numerical(format!(
                "validation loss is not finite at epoch {epoch}"
            )));
        }
        history.push(EmbedEpoch {
            epoch,
            beta: config.schedule.beta(epoch),
            gamma: config.schedule.gamma(epoch),
            lr: adam.lr(),
            train_total: sums[0],
            train_rec: sums[1],
            train_mmd: sums[2],
            train_sil: sums[3],
            val_rec,
        });
        log::info!(
            "embed epoch {epoch}: total {:.6e} val_rec {:.6e}",
            sums[0],
            val_rec
        );
        if best.as_ref().is_none_or(|(b, _, _)| val_rec < *b) {
            best = Some((val_rec, epoch, model.store.clone()));
        }
        let lr = plateau.observe(val_rec, adam.lr());
        adam.set_lr(lr);
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(EmbedTrainOutcome {
        model,
        history,
        best_epoch,
    })
}

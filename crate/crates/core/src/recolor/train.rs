use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{augment_pair, AugmentConfig};
use super::model::{SmallUViT, SmallUViTConfig};
use super::{loss_srgb, RecolorPair};
use crate::diff::{
    Adam, AdamConfig, Graph, Mode, ParamStore, PlateauConfig, PlateauScheduler, Tensor,
};
use crate::error::{Error, Result};
use crate::metrics::{ms_ssim, MsSsimOptions};
use crate::raster::Planar;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecolorTrainConfig {
    pub model: SmallUViTConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub scheduler: PlateauConfig,
    pub augment: AugmentConfig,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub ms_ssim: MsSsimOptions,
}

impl Default for RecolorTrainConfig {
    fn default() -> Self {
        Self {
            model: SmallUViTConfig::default(),
            epochs: 100,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            scheduler: PlateauConfig::default(),
            augment: AugmentConfig::default(),
            max_steps: None,
            ms_ssim: MsSsimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecolorEpoch {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ms_ssim: f64,
}

#[derive(Debug, Clone)]
pub struct RecolorTrainOutcome {
    /// Parameters from the epoch with the best validation MS-SSIM.
    pub model: SmallUViT,
    pub history: Vec<RecolorEpoch>,
    pub best_epoch: usize,
    pub steps: usize,
}

fn stack(items: &[&Planar]) -> Result<Tensor> {
    let f = items[0];
    let data: Vec<f64> = items.iter().flat_map(|p| p.data.iter().copied()).collect();
    Tensor::new(&[items.len(), f.channels, f.height, f.width], data)
}

/// Mean sRGB loss and MS-SSIM of eval-mode predictions over `pairs`.
pub fn evaluate(
    model: &SmallUViT,
    pairs: &[RecolorPair],
    opts: &MsSsimOptions,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut ssim = 0.0;
    for p in pairs {
        let pred = model.predict(&p.input.data)?;
        let pred = Planar::new(3, p.target.height, p.target.width, pred)?;
        loss += super::srgb_loss(&pred, &p.target)?;
        ssim += ms_ssim(&pred, &p.target, opts)?.value;
    }
    let n = pairs.len() as f64;
    Ok((loss / n, ssim / n))
}

fn check_pairs(pairs: &[RecolorPair], c: &SmallUViTConfig) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        if p.input.channels != c.in_channels
            || p.target.channels != c.out_channels
            || !(p.input.height == c.image_height && p.input.width == c.image_width)
            || !(p.target.height == c.image_height && p.target.width == c.image_width)
        {
            return Err(Error::Shape(format!(
                "pair {i}: input {}x{}x{} / target {}x{}x{} do not match the model's {}x{}",
                p.input.channels,
                p.input.height,
                p.input.width,
                p.target.channels,
                p.target.height,
                p.target.width,
                c.image_height,
                c.image_width
            )));
        }
    }
    Ok(())
}

/// Adam on the sRGB loss with per-(epoch, sample) augmentation, validation
/// MS-SSIM after every epoch and plateau learning-rate decay.
pub fn train_recolor(
    train: &[RecolorPair],
    val: &[RecolorPair],
    config: &RecolorTrainConfig,
) -> Result<RecolorTrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "recolor training needs non-empty train and validation pairs".into(),
        ));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidInput(
            "epochs and batch_size must be positive".into(),
        ));
    }
    check_pairs(train, &config.model)?;
    check_pairs(val, &config.model)?;
    let mut model = SmallUViT::new(config.model.clone(), rng::derive_seed(config.seed, &[0xB1]))?;
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut plateau = PlateauScheduler::new(config.scheduler);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut steps = 0usize;
    let limit = config.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &[10, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            if steps >= limit {
                break;
            }
            let augmented: Vec<(Planar, Planar)> = chunk
                .iter()
                .map(|&i| {
                    let mut r = rng::stream(config.seed, &[11, epoch as u64, i as u64]);
                    augment_pair(&train[i].input, &train[i].target, &config.augment, &mut r)
                })
                .collect();
            let x = stack(&augmented.iter().map(|p| &p.0).collect::<Vec<_>>())?;
            let y = stack(&augmented.iter().map(|p| &p.1).collect::<Vec<_>>())?;
            let mut noise = rng::stream(config.seed, &[12, epoch as u64, bi as u64]);
            let mut g = Graph::new();
            let pred = model.forward(&mut g, &x, Mode::Train, &mut noise)?;
            let target = g.constant(y);
            let loss = loss_srgb(&mut g, pred, target)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numerical(format!(
                    "sRGB loss is not finite at epoch {epoch}, step {steps}"
                )));
            }
            g.backward(loss)?;
            adam.step(&mut model.store, &g.param_grads())?;
            steps += 1;
            loss_sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        if seen == 0 {
            break 'epochs;
        }
        let (val_loss, val_ms_ssim) = evaluate(&model, val, &config.ms_ssim)?;
        if !val_loss.is_finite() || !val_ms_ssim.is_finite() {
            return Err(Error::Numerical(format!(
                "validation metrics are not finite at epoch {epoch}"
            )));
        }
        history.push(RecolorEpoch {
            epoch,
            steps,
            lr: adam.lr(),
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_ms_ssim,
        });
        log::info!(
            "recolor epoch {epoch}: train {:.5} val {:.5} ms-ssim {:.5}",
            loss_sum / seen as f64,
            val_loss,
            val_ms_ssim
        );
        if best.as_ref().is_none_or(|(b, _, _)| val_ms_ssim > *b) {
            best = Some((val_ms_ssim, epoch, model.store.clone()));
        }
        let lr = plateau.observe(val_ms_ssim, adam.lr());
        adam.set_lr(lr);
        if steps >= limit {
            break;
        }
    }
    let (_, best_epoch, store) =
        best.ok_or_else(|| Error::InvalidInput("no training steps were run".into()))?;
    model.store = store;
    Ok(RecolorTrainOutcome {
        model,
        history,
        best_epoch,
        steps,
    })
}

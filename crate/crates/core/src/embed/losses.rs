use serde::{Deserialize, Serialize};

use crate::color::{cluster_points, IKMeansConfig};
use crate::diff::{Graph, Var};
use crate::error::{Error, Result};

pub use crate::diff::fused::mmd_rbf;

/// `beta(i) = amplitude · Θ(i − onset)` with `Θ(0) = 1`, `gamma(i) = gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedSchedule {
    pub gamma: f64,
    pub beta_amplitude: f64,
    pub beta_onset_epoch: usize,
}

impl Default for EmbedSchedule {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            beta_amplitude: 0.01,
            beta_onset_epoch: 30,
        }
    }
}

impl EmbedSchedule {
    pub fn beta(&self, epoch: usize) -> f64 {
        if epoch >= self.beta_onset_epoch {
            self.beta_amplitude
        } else {
            0.0
        }
    }

    pub fn gamma(&self, _epoch: usize) -> f64 {
        self.gamma
    }
}

/// Mean over the batch of per-dimension mean squared error.
pub fn loss_rec(g: &mut Graph, x: Var, recon: Var) -> Result<Var> {
    let d = g.sub(recon, x)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn loss_mmd(g: &mut Graph, z: Var, prior: Vec<f64>, sigma2: f64) -> Result<Var> {
    g.mmd(z, prior, sigma2)
}

/// Labels for the silhouette term: k-means on the latent means, with the
/// cluster count picked over `k_range`.
pub fn silhouette_labels(
    mu: &[f64],
    dim: usize,
    k_range: (usize, usize),
    seed: u64,
) -> Result<Vec<usize>> {
    let n = mu.len() / dim;
    if n < k_range.1 + 1 {
        return Err(Error::InvalidInput(format!(
            "batch of {n} is too small for k up to {}",
            k_range.1
        )));
    }
    let cfg = IKMeansConfig {
        k_min: k_range.0,
        k_max: k_range.1,
        seed,
        ..IKMeansConfig::default()
    };
    Ok(cluster_points(mu, dim, &cfg)?.run.labels)
}

/// `(1 − silhouette)/2` with labels frozen. Returns `None` when the batch
/// collapses to a single cluster, where the silhouette is undefined.
pub fn loss_sil(g: &mut Graph, mu: Var, k_range: (usize, usize), seed: u64) -> Result<Option<Var>> {
    let (data, dim) = (g.value(mu).data().to_vec(), g.value(mu).cols());
    let labels = silhouette_labels(&data, dim, k_range, seed)?;
    let distinct = {
        let mut l = labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        return Ok(None);
    }
    let s = g.silhouette(mu, labels)?;
    Ok(Some(g.affine(s, -0.5, 0.5)))
}

/// Per-component values of one total-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub mmd: f64,
    pub sil: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// `L_rec + beta(epoch)·L_mmd + gamma(epoch)·L_sil`.
pub fn loss_total(
    g: &mut Graph,
    rec: Var,
    mmd: Var,
    sil: Option<Var>,
    epoch: usize,
    schedule: &EmbedSchedule,
) -> Result<(Var, LossBreakdown)> {
    let (beta, gamma) = (schedule.beta(epoch), schedule.gamma(epoch));
    let wm = g.scale(mmd, beta);
    let mut total = g.add(rec, wm)?;
    let mut sil_value = 0.0;
    if let Some(s) = sil {
        sil_value = g.value(s).item();
        let ws = g.scale(s, gamma);
        total = g.add(total, ws)?;
    }
    let b = LossBreakdown {
        total: g.value(total).item(),
        rec: g.value(rec).item(),
        mmd: g.value(mmd).item(),
        sil: sil_value,
        beta,
        gamma,
    };
    Ok((total, b))
}

/// Plain-number reconstruction loss, for reporting.
pub fn reconstruction_error(x: &[f64], recon: &[f64]) -> f64 {
    x.iter()
        .zip(recon)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    #[test]
    fn schedule_flips_at_onset() {
        let s = EmbedSchedule::default();
        assert!((0..30).all(|i| s.beta(i) == 0.0));
        assert!((30..200).all(|i| s.beta(i) == 0.01));
        assert!((0..200).all(|i| s.gamma(i) == 0.01));
    }

    #[test]
    fn rec_loss_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 5]));
        let y = g.constant(Tensor::full(&[2, 5], 1.0));
        let l = loss_rec(&mut g, x, y).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let l0 = loss_rec(&mut g, x, x).unwrap();
        assert_eq!(g.value(l0).item(), 0.0);
    }

    #[test]
    fn epoch_zero_total_has_no_mmd() {
        let mut g = Graph::new();
        let rec = g.constant(Tensor::scalar(0.3));
        let mmd = g.constant(Tensor::scalar(5.0));
        let sil = g.constant(Tensor::scalar(0.2));
        let (_, b) = loss_total(&mut g, rec, mmd, Some(sil), 0, &EmbedSchedule::default()).unwrap();
        assert!((b.total - (0.3 + 0.01 * 0.2)).abs() < 1e-15);
        let (_, b) =
            loss_total(&mut g, rec, mmd, Some(sil), 30, &EmbedSchedule::default()).unwrap();
        assert!((b.total - (0.3 + 0.05 + 0.002)).abs() < 1e-15);
    }

    #[test]
    fn separated_blobs_have_small_loss() {
        let mut pts = vec![];
        for i in 0..20 {
            let c = if i < 10 { -10.0 } else { 10.0 };
            let j = (i % 10) as f64 * 1e-3;
            pts.extend([c + j, c - j, c]);
        }
        let mut g = Graph::new();
        let mu = g.leaf(Tensor::new(&[20, 3], pts).unwrap());
        let l = loss_sil(&mut g, mu, (2, 6), 0).unwrap().unwrap();
        assert!(g.value(l).item() < 0.01);
    }

    #[test]
    fn small_batch_errors() {
        let mut g = Graph::new();
        let mu = g.leaf(Tensor::zeros(&[5, 3]));
        assert!(loss_sil(&mut g, mu, (2, 6), 0).is_err());
    }
}

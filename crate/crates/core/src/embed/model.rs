use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Linear, Mode, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            input_dim: 512,
            encoder_hidden: vec![256, 128, 64, 32],
            latent_dim: 3,
            decoder_hidden: vec![64, 128, 256],
        }
    }
}

impl EmbedderConfig {
    /// The 16→8→4→(2+2) clone used for finite-difference checks.
    pub fn reduced() -> Self {
        Self {
            input_dim: 16,
            encoder_hidden: vec![8, 4],
            latent_dim: 2,
            decoder_hidden: vec![4, 8],
        }
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.encoder_hidden);
        w.push(2 * self.latent_dim);
        w
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.latent_dim];
        w.extend(&self.decoder_hidden);
        w.push(self.input_dim);
        w
    }
}

/// Graph handles for one encoded batch.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// Encoder/decoder pair of dense SELU ladders. Each ladder ends in a linear
/// layer; the encoder's last layer emits `(mu, logvar)` side by side.
#[derive(Debug, Clone)]
pub struct EmbedderModel {
    pub config: EmbedderConfig,
    pub store: ParamStore,
    encoder: Vec<Linear>,
    decoder: Vec<Linear>,
}

impl EmbedderModel {
    pub fn new(config: EmbedderConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.latent_dim == 0 {
            return Err(Error::InvalidInput(
                "embedder dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut ladder =
            |prefix: &str, widths: &[usize], store: &mut ParamStore| -> Result<Vec<Linear>> {
                widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| {
                        Linear::new(store, &format!("{prefix}.{i}"), w[0], w[1], true, &mut rng)
                    })
                    .collect()
            };
        let encoder = ladder("encoder", &config.encoder_widths(), &mut store)?;
        let decoder = ladder("decoder", &config.decoder_widths(), &mut store)?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
        })
    }

    /// Rebuilds the model around stored parameter values.
    pub fn with_params(config: EmbedderConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.store.load_values(params)?;
        Ok(m)
    }

    pub fn trainable_parameters(&self) -> usize {
        self.store.trainable_count()
    }

    fn ladder(&self, layers: &[Linear], g: &mut Graph, mut x: Var) -> Result<Var> {
        for (i, layer) in layers.iter().enumerate() {
            x = layer.forward(g, &self.store, x)?;
            if i + 1 < layers.len() {
                x = g.selu(x);
            }
        }
        Ok(x)
    }

    /// Encodes `x[B, input_dim]`. In train mode `z = mu + exp(logvar/2) ⊙ eps`
    /// with `eps` given as `B × latent_dim` values; in eval mode `z = mu`.
    pub fn encode(
        &self,
        g: &mut Graph,
        x: Var,
        mode: Mode,
        eps: Option<&[f64]>,
    ) -> Result<LatentVars> {
        let xv = g.value(x);
        if xv.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "spectra have {} bins, embedder expects {}",
                xv.cols(),
                self.config.input_dim
            )));
        }
        let n = self.config.latent_dim;
        let h = self.ladder(&self.encoder, g, x)?;
        let mu = g.slice_cols(h, 0, n)?;
        let logvar = g.slice_cols(h, n, 2 * n)?;
        let z = match (mode, eps) {
            (Mode::Train, Some(eps)) => {
                let half = g.scale(logvar, 0.5);
                let std = g.exp(half);
                let noise = g.mul_const(std, eps.to_vec())?;
                g.add(mu, noise)?
            }
            (Mode::Train, None) => {
                return Err(Error::InvalidInput(
                    "train-mode encoding needs reparameterization noise".into(),
                ))
            }
            (Mode::Eval, _) => mu,
        };
        Ok(LatentVars { mu, logvar, z })
    }

    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        if g.value(z).cols() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent codes have {} dims, decoder expects {}",
                g.value(z).cols(),
                self.config.latent_dim
            )));
        }
        self.ladder(&self.decoder, g, z)
    }

    /// Eval-mode latent means for `rows` L1-normalized spectra.
    pub fn encode_mu(&self, spectra: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.input_dim;
        if spectra.is_empty() || !spectra.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "{} values are not rows of {d}",
                spectra.len()
            )));
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[spectra.len() / d, d], spectra.to_vec())?);
        let lat = self.encode(&mut g, x, Mode::Eval, None)?;
        Ok(g.value(lat.mu).data().to_vec())
    }

    /// Eval-mode reconstruction (`decode(mu)`).
    pub fn reconstruct(&self, spectra: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.input_dim;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(
            &[spectra.len() / d.max(1), d],
            spectra.to_vec(),
        )?);
        let lat = self.encode(&mut g, x, Mode::Eval, None)?;
        let y = self.decode(&mut g, lat.z)?;
        Ok(g.value(y).data().to_vec())
    }
}

//! Parameterized layers and the train/eval-mode noise layers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Normal samples with standard deviation `std`.
pub fn normal_init<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("sized to shape")
}

/// Dense layer `x W + b` over the last axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// LeCun-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.weight"),
            normal_init(&[inputs, outputs], 1.0 / (inputs as f64).sqrt(), rng),
            true,
        )?;
        let b = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), true)?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            inputs,
            outputs,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_broadcast(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0), true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]), true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "drop rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1/(1-rate)`. Identity in eval mode.
pub fn dropout<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    g.mul_const(x, mask)
}

/// Drops a whole residual branch per sample. `x` holds `samples` equal
/// contiguous chunks, one per sample.
pub fn stochastic_depth<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    rate: f64,
    samples: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let n = g.value(x).len();
    if samples == 0 || !n.is_multiple_of(samples) {
        return Err(Error::Shape(format!(
            "{n} values do not split into {samples} samples"
        )));
    }
    let per = n / samples;
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Vec::with_capacity(n);
    for _ in 0..samples {
        let m = if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        };
        mask.extend(std::iter::repeat_n(m, per));
    }
    g.mul_const(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "l", 2, 2, true, &mut rng).unwrap();
        *store.get_mut(lin.w) = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![-4.0, 9.0]).unwrap());
        let y = lin.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).data(), &[-4.0, 9.0]);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[100_000], 1.0));
        assert_eq!(dropout(&mut g, x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut g, x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert!(dropout(&mut g, x, 1.0, Mode::Train, &mut rng).is_err());
        let y = dropout(&mut g, x, 0.5, Mode::Train, &mut rng).unwrap();
        let kept = g.value(y).data().iter().filter(|&&v| v > 0.0).count() as f64;
        let n = 100_000.0;
        let sigma = (n * 0.25f64).sqrt();
        assert!((kept - 0.5 * n).abs() < 3.0 * sigma, "kept {kept}");
        assert!(g.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn stochastic_depth_drops_whole_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[64, 5], 1.0));
        let y = stochastic_depth(&mut g, x, 0.5, 16, Mode::Train, &mut rng).unwrap();
        for chunk in g.value(y).data().chunks(20) {
            assert!(chunk.iter().all(|&v| v == chunk[0]));
        }
    }
}

//! Central finite-difference gradient checking.

use serde::{Deserialize, Serialize};

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub step: f64,
    /// Floor on the denominator of the relative error.
    pub floor: f64,
    /// Upper bound on checked entries per block; larger blocks are strided.
    pub max_entries_per_block: usize,
    /// Multiplier applied to backpropagated gradients before comparison;
    /// anything but 1 deliberately breaks the check.
    pub analytic_scale: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries_per_block: 64,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_error: f64,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backpropagated gradients of the scalar built by `f` against
/// central differences over every trainable block of `store`.
pub fn check_gradients<F>(store: &mut ParamStore, f: F, opts: &CheckOptions) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let analytic: Vec<(super::ParamId, Vec<f64>)> = g
        .param_grads()
        .into_iter()
        .map(|(id, v)| (id, v.to_vec()))
        .collect();

    let mut blocks = Vec::new();
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| store.block(id).trainable)
        .collect();
    for id in ids {
        let n = store.get(id).len();
        let grad = analytic
            .iter()
            .find(|(a, _)| *a == id)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| vec![0.0; n]);
        let stride = n.div_ceil(opts.max_entries_per_block.max(1)).max(1);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + opts.step;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - opts.step;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            if !numeric.is_finite() || !grad[i].is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in `{}`",
                    store.block(id).name
                )));
            }
            worst = worst.max(relative_error(
                grad[i] * opts.analytic_scale,
                numeric,
                opts.floor,
            ));
            checked += 1;
        }
        blocks.push(BlockError {
            name: store.block(id).name.clone(),
            checked,
            max_rel_error: worst,
        });
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(CheckReport {
        blocks,
        max_rel_error,
    })
}

use std::collections::HashMap;

use indexmap::IndexMap;
use stochsr_tensor::Tensor;

use crate::params::ParamSet;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: IndexMap<String, Tensor<f32>>,
    pub v: IndexMap<String, Tensor<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdamOutcome {
    Applied,
    /// Step skipped because a gradient carried NaN or Inf.
    SkippedNonFinite { param: String },
}

/// One bias-corrected Adam update over every parameter that received a
/// gradient. Parameters without a gradient entry are left untouched. If any
/// gradient is non-finite the whole step is skipped and reported.
pub fn adam_step(
    params: &mut ParamSet<f32>,
    grads: &HashMap<String, Tensor<f32>>,
    state: &mut AdamState,
    hyper: &AdamHyper,
    lr: f64,
) -> Result<AdamOutcome> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Ok(AdamOutcome::SkippedNonFinite {
                param: name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);
    let (b1, b2) = (hyper.beta1 as f32, hyper.beta2 as f32);

    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let Some(grad) = grads.get(&name) else {
            continue;
        };
        let shape = grad.shape().to_vec();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(shape.clone()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(shape.clone()));
        let mut updated = params.get(&name)?.clone();
        for i in 0..grad.numel() {
            let g = grad.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * g;
            let vi = b2 * v.data()[i] + (1.0 - b2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi as f64 / bias1;
            let v_hat = vi as f64 / bias2;
            let delta = lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
            updated.data_mut()[i] -= delta as f32;
        }
        params.set(&name, updated)?;
    }
    Ok(AdamOutcome::Applied)
}

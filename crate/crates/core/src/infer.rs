//! Gradient-free forward passes over frozen parameters, shared by
//! inference, evaluation studies and the CLI.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stochsr_tensor::{BnMode, Tape, Tensor};

use crate::error::{Error, Result};
use crate::models::{Models, StatBank};
use crate::params::ParamSet;

/// Stacks (C,H,W) tensors into one (B,C,H,W) batch.
pub fn stack(samples: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("cannot stack an empty batch".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.numel());
    for s in samples {
        if s.shape() != shape {
            return Err(Error::Data(format!(
                "ragged batch: {:?} vs {:?}",
                s.shape(),
                shape
            )));
        }
        data.extend_from_slice(s.data());
    }
    let mut full = vec![samples.len()];
    full.extend_from_slice(&shape);
    Ok(Tensor::new(full, data)?)
}

/// Extracts sample `i` of a (B,...) batch.
pub fn unstack(batch: &Tensor<f32>, i: usize) -> Tensor<f32> {
    let inner: Vec<usize> = batch.shape()[1..].to_vec();
    let numel: usize = inner.iter().product();
    Tensor::new(
        inner,
        batch.data()[i * numel..(i + 1) * numel].to_vec(),
    )
    .expect("unstack shape")
}

/// Standard-normal tensor drawn elementwise from the given stream.
pub fn draw_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.sample(StandardNormal);
        v as f32
    })
}

/// Off-tape reparameterized draw: mu + exp(log_var/2) * eps.
pub fn sample_latent(
    mu: &Tensor<f32>,
    log_var: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
) -> Tensor<f32> {
    let eps = draw_normal(rng, mu.shape().to_vec());
    latent_from_eps(mu, log_var, &eps)
}

pub fn latent_from_eps(
    mu: &Tensor<f32>,
    log_var: &Tensor<f32>,
    eps: &Tensor<f32>,
) -> Tensor<f32> {
    Tensor::from_fn(mu.shape().to_vec(), |i| {
        mu.data()[i] + (log_var.data()[i] * 0.5).exp() * eps.data()[i]
    })
}

/// Frozen-parameter evaluator. All passes run batch-norm in eval mode and
/// never touch gradients, so repeated calls are bit-deterministic.
pub struct Evaluator {
    pub models: Models,
    theta: ParamSet<f32>,
    phi: Option<ParamSet<f32>>,
    omega: Option<ParamSet<f32>>,
}

impl Evaluator {
    pub fn new(
        models: Models,
        theta: ParamSet<f32>,
        phi: Option<ParamSet<f32>>,
        omega: Option<ParamSet<f32>>,
    ) -> Self {
        Evaluator {
            models,
            theta,
            phi,
            omega,
        }
    }

    pub fn has_omega(&self) -> bool {
        self.omega.is_some()
    }

    pub fn has_phi(&self) -> bool {
        self.phi.is_some()
    }

    /// f_theta(x, z) for a (B,C,H,W) batch and matching latent batch,
    /// normalized by the stochastic-path statistics.
    pub fn render(&mut self, x: &Tensor<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.render_with(x, z, StatBank::Sto)
    }

    fn render_with(
        &mut self,
        x: &Tensor<f32>,
        z: &Tensor<f32>,
        bank: StatBank,
    ) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let bind = self.theta.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let out = self.models.forward_sr(
            &mut tape,
            &bind,
            &mut self.theta,
            xv,
            zv,
            BnMode::Eval,
            bank,
        )?;
        Ok(tape.value(out).clone())
    }

    /// Deterministic path: zero latent, deterministic-path statistics.
    pub fn render_deterministic(&mut self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let batch = x.shape()[0];
        let z = Tensor::zeros(self.models.arch.latent_shape(batch));
        self.render_with(x, &z, StatBank::Det)
    }

    /// ICAP prediction (mu_pred, log_var_pred) for a batch.
    pub fn predict(&mut self, x: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let omega = self
            .omega
            .as_mut()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no predictor parameters".into()))?;
        let mut tape = Tape::new();
        let bind = omega.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let g = self
            .models
            .forward_icap(&mut tape, &bind, omega, xv, BnMode::Eval)?;
        Ok((tape.value(g.mu).clone(), tape.value(g.log_var).clone()))
    }

    /// Residual encoding (mu_res, log_var_res) for a batch of residuals.
    pub fn encode_residual(&mut self, r: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let phi = self
            .phi
            .as_mut()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no residual encoder".into()))?;
        let mut tape = Tape::new();
        let bind = phi.bind(&mut tape, false);
        let rv = tape.constant(r.clone());
        let g = self
            .models
            .forward_ren(&mut tape, &bind, phi, rv, BnMode::Eval)?;
        Ok((tape.value(g.mu).clone(), tape.value(g.log_var).clone()))
    }
}

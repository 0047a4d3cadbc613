//! Training objectives: the per-pixel MSE of the deterministic path, the L1
//! of the stochastic path through the reparameterized latent, their weighted
//! sum for phase 1, and the KL matching loss for phase 2.

use stochsr_tensor::{BnMode, Element, Tape, Var};

use crate::latent::{kl_divergence, DiagGaussian};
use crate::models::{Models, StatBank};
use crate::params::{Binding, ParamSet};
use crate::Result;

fn batch_extent<E: Element>(tape: &Tape<E>, x: Var) -> f64 {
    tape.shape(x)[0] as f64
}

/// Mean over the batch of the squared L2 distance between the target and
/// the deterministic render. Also returns the render for reuse.
#[allow(clippy::too_many_arguments)]
pub fn loss_deterministic<E: Element>(
    tape: &mut Tape<E>,
    models: &Models,
    theta_bind: &Binding,
    theta: &mut ParamSet<E>,
    x: Var,
    y: Var,
    mode: BnMode,
) -> Result<(Var, Var)> {
    let batch = batch_extent(tape, x);
    let z0 = tape.constant(stochsr_tensor::Tensor::zeros(
        models.arch.latent_shape(tape.shape(x)[0]),
    ));
    let y_d = models.forward_sr(tape, theta_bind, theta, x, z0, mode, StatBank::Det)?;
    let diff = tape.sub(y, y_d)?;
    let sq = tape.sqr(diff)?;
    let total = tape.sum(sq)?;
    let l_d = tape.scale(total, E::from_f64(1.0 / batch))?;
    Ok((l_d, y_d))
}

/// L1 term of the stochastic path given an already computed deterministic
/// render. The residual feeding the encoder is gradient-detached unless
/// `detach_residual` is false.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_term<E: Element>(
    tape: &mut Tape<E>,
    models: &Models,
    theta_bind: &Binding,
    theta: &mut ParamSet<E>,
    phi_bind: &Binding,
    phi: &mut ParamSet<E>,
    x: Var,
    y: Var,
    y_d: Var,
    eps: Var,
    detach_residual: bool,
    mode: BnMode,
) -> Result<(Var, DiagGaussian)> {
    let batch = batch_extent(tape, x);
    let basis = if detach_residual {
        tape.detach(y_d)
    } else {
        y_d
    };
    let residual = tape.sub(y, basis)?;
    let gaussian = models.forward_ren(tape, phi_bind, phi, residual, mode)?;
    let z = gaussian.sample(tape, eps)?;
    let y_s = models.forward_sr(tape, theta_bind, theta, x, z, mode, StatBank::Sto)?;
    let diff = tape.sub(y, y_s)?;
    let abs = tape.abs(diff)?;
    let total = tape.sum(abs)?;
    let l_s = tape.scale(total, E::from_f64(1.0 / batch))?;
    Ok((l_s, gaussian))
}

/// Standalone stochastic loss; computes its own deterministic render.
#[allow(clippy::too_many_arguments)]
pub fn loss_stochastic<E: Element>(
    tape: &mut Tape<E>,
    models: &Models,
    theta_bind: &Binding,
    theta: &mut ParamSet<E>,
    phi_bind: &Binding,
    phi: &mut ParamSet<E>,
    x: Var,
    y: Var,
    eps: Var,
    detach_residual: bool,
    mode: BnMode,
) -> Result<(Var, DiagGaussian)> {
    let (_, y_d) = loss_deterministic(tape, models, theta_bind, theta, x, y, mode)?;
    stochastic_term(
        tape,
        models,
        theta_bind,
        theta,
        phi_bind,
        phi,
        x,
        y,
        y_d,
        eps,
        detach_residual,
        mode,
    )
}

pub struct Phase1Parts {
    pub total: Var,
    pub l_d: Var,
    pub l_s: Var,
}

/// L_d + lambda * L_s with the deterministic render shared between the MSE
/// term and the residual definition.
#[allow(clippy::too_many_arguments)]
pub fn loss_phase1<E: Element>(
    tape: &mut Tape<E>,
    models: &Models,
    theta_bind: &Binding,
    theta: &mut ParamSet<E>,
    phi_bind: &Binding,
    phi: &mut ParamSet<E>,
    x: Var,
    y: Var,
    eps: Var,
    lambda: f64,
    detach_residual: bool,
    mode: BnMode,
) -> Result<Phase1Parts> {
    let (l_d, y_d) = loss_deterministic(tape, models, theta_bind, theta, x, y, mode)?;
    let (l_s, _) = stochastic_term(
        tape,
        models,
        theta_bind,
        theta,
        phi_bind,
        phi,
        x,
        y,
        y_d,
        eps,
        detach_residual,
        mode,
    )?;
    let weighted = tape.scale(l_s, E::from_f64(lambda))?;
    let total = tape.add(l_d, weighted)?;
    Ok(Phase1Parts { total, l_d, l_s })
}

/// Batch-mean KL between the predictor's distribution and the frozen
/// residual encoder's. The target side runs in eval mode and is detached;
/// gradients reach only the predictor.
#[allow(clippy::too_many_arguments)]
pub fn loss_phase2<E: Element>(
    tape: &mut Tape<E>,
    models: &Models,
    theta_bind: &Binding,
    theta: &mut ParamSet<E>,
    phi_bind: &Binding,
    phi: &mut ParamSet<E>,
    omega_bind: &Binding,
    omega: &mut ParamSet<E>,
    x: Var,
    y: Var,
    kl_mean_over_latent: bool,
) -> Result<Var> {
    let batch = batch_extent(tape, x);
    let z0 = tape.constant(stochsr_tensor::Tensor::zeros(
        models.arch.latent_shape(tape.shape(x)[0]),
    ));
    let y_d = models.forward_sr(tape, theta_bind, theta, x, z0, BnMode::Eval, StatBank::Det)?;
    let residual = tape.sub(y, y_d)?;
    let target = models.forward_ren(tape, phi_bind, phi, residual, BnMode::Eval)?;
    let target = target.detached(tape);
    let predicted = models.forward_icap(tape, omega_bind, omega, x, BnMode::Train)?;
    let kl = kl_divergence(tape, &predicted, &target)?;
    let divisor = if kl_mean_over_latent {
        batch * models.arch.latent_shape(1).iter().product::<usize>() as f64
    } else {
        batch
    };
    Ok(tape.scale(kl, E::from_f64(1.0 / divisor))?)
}

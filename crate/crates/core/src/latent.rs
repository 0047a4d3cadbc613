//! Diagonal-Gaussian latent algebra: reparameterized sampling, closed-form
//! KL divergence, and convex-combination traversal.

use stochsr_tensor::{Element, Tape, Var};

use crate::error::{Error, Result};

/// Mean and log-variance maps over the spatial latent, both produced by
/// tanh heads and therefore bounded to [-1, 1]. The implied standard
/// deviation exp(log_var/2) stays inside [e^-1/2, e^1/2].
#[derive(Debug, Clone, Copy)]
pub struct DiagGaussian {
    pub mu: Var,
    pub log_var: Var,
}

impl DiagGaussian {
    /// Reparameterized draw: z = mu + exp(log_var/2) * eps. Differentiable
    /// in mu and log_var; eps is an externally drawn standard-normal tensor.
    pub fn sample<E: Element>(&self, tape: &mut Tape<E>, eps: Var) -> Result<Var> {
        let half_log_var = tape.scale(self.log_var, E::from_f64(0.5))?;
        let sigma = tape.exp(half_log_var)?;
        let scaled = tape.mul(sigma, eps)?;
        Ok(tape.add(self.mu, scaled)?)
    }

    /// Gradient-blocked copy, for use as a fixed matching target.
    pub fn detached<E: Element>(&self, tape: &mut Tape<E>) -> DiagGaussian {
        DiagGaussian {
            mu: tape.detach(self.mu),
            log_var: tape.detach(self.log_var),
        }
    }
}

/// Closed-form KL(q || g) between diagonal Gaussians, summed over latent
/// elements:
///
///   1/2 * sum_i (log v_g - log v_q) + v_q/v_g + (mu_q - mu_g)^2 / v_g - 1
///
/// The variance ratio is computed as exp(log_var_q - log_var_g), so q == g
/// gives exactly zero rather than rounding residue.
pub fn kl_divergence<E: Element>(
    tape: &mut Tape<E>,
    q: &DiagGaussian,
    g: &DiagGaussian,
) -> Result<Var> {
    let log_ratio = tape.sub(g.log_var, q.log_var)?;
    let diff_log_var = tape.sub(q.log_var, g.log_var)?;
    let var_ratio = tape.exp(diff_log_var)?;
    let mean_diff = tape.sub(q.mu, g.mu)?;
    let mean_sq = tape.sqr(mean_diff)?;
    let neg_log_var_g = tape.scale(g.log_var, -E::one())?;
    let inv_var_g = tape.exp(neg_log_var_g)?;
    let mean_term = tape.mul(mean_sq, inv_var_g)?;

    let acc = tape.add(log_ratio, var_ratio)?;
    let acc = tape.add(acc, mean_term)?;
    let acc = tape.affine(acc, E::one(), -E::one())?;
    let total = tape.sum(acc)?;
    Ok(tape.scale(total, E::from_f64(0.5))?)
}

/// Convex combination z_start + alpha * (z_end - z_start).
pub fn interpolate<E: Element>(
    tape: &mut Tape<E>,
    z_start: Var,
    z_end: Var,
    alpha: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "interpolation weight must lie in [0, 1], got {alpha}"
        )));
    }
    let direction = tape.sub(z_end, z_start)?;
    let step = tape.scale(direction, E::from_f64(alpha))?;
    Ok(tape.add(z_start, step)?)
}

//! Best-of-n sampling study: how much does drawing latents from the
//! predicted distribution improve on rendering its mean?

use stochsr_tensor::Tensor;

use crate::error::Error;
use crate::eval::quality::{psnr, ssim};
use crate::infer::{draw_normal, latent_from_eps, stack, unstack, Evaluator};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingRow {
    pub n: usize,
    /// Best PSNR over the first n draws of the stream.
    pub psnr_db: f64,
    /// SSIM of the image that achieved that PSNR.
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingStudy {
    /// Mean-latent baseline (z = mu_pred).
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub rows: Vec<SamplingRow>,
}

const RENDER_CHUNK: usize = 16;

/// Draws are nested: the stream for n=100 extends the stream for n=10, so
/// the best over a larger n can never fall below a smaller one. Selection
/// is by PSNR; the selected image's SSIM is reported alongside.
pub fn best_of_n(
    ev: &mut Evaluator,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    ns: &[usize],
    seed: u64,
    sample_id: usize,
    peak: f64,
) -> Result<SamplingStudy> {
    let x1 = stack(&[x])?;
    let (mu, log_var) = ev.predict(&x1)?;
    best_of_n_from(ev, x, y, &mu, &log_var, ns, seed, sample_id, peak)
}

/// As [`best_of_n`] with the latent distribution supplied directly.
#[allow(clippy::too_many_arguments)]
pub fn best_of_n_from(
    ev: &mut Evaluator,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    mu: &Tensor<f32>,
    log_var: &Tensor<f32>,
    ns: &[usize],
    seed: u64,
    sample_id: usize,
    peak: f64,
) -> Result<SamplingStudy> {
    if ns.is_empty() || ns.iter().any(|&n| n < 1) {
        return Err(Error::Config("sampling counts must all be >= 1".into()));
    }
    let x1 = stack(&[x])?;
    let (mu, log_var) = (mu.clone(), log_var.clone());
    let mean_render = unstack(&ev.render(&x1, &mu)?, 0);
    let mean_psnr_db = psnr(&mean_render, y, peak)?;
    let mean_ssim = ssim(&mean_render, y, peak)?;

    let max_n = *ns.iter().max().unwrap();
    let mut rng = crate::eval::sample_stream(seed, sample_id as u64, 0x4e53);

    let mut best_psnr = f64::NEG_INFINITY;
    let mut best_ssim = 0.0f64;
    // Best-so-far after each draw count, filled chunk by chunk.
    let mut prefix_best: Vec<(f64, f64)> = Vec::with_capacity(max_n);
    let mut drawn = 0usize;
    while drawn < max_n {
        let chunk = RENDER_CHUNK.min(max_n - drawn);
        let mut zs = Vec::with_capacity(chunk);
        for _ in 0..chunk {
            let eps = draw_normal(&mut rng, mu.shape().to_vec());
            zs.push(latent_from_eps(&mu, &log_var, &eps));
        }
        let xs: Vec<&Tensor<f32>> = std::iter::repeat(x).take(chunk).collect();
        let x_batch = stack(&xs)?;
        let z_refs: Vec<&Tensor<f32>> = zs.iter().collect();
        let z_batch = batch_latents(&z_refs)?;
        let renders = ev.render(&x_batch, &z_batch)?;
        for i in 0..chunk {
            let img = unstack(&renders, i);
            let p = psnr(&img, y, peak)?;
            if p > best_psnr {
                best_psnr = p;
                best_ssim = ssim(&img, y, peak)?;
            }
            prefix_best.push((best_psnr, best_ssim));
        }
        drawn += chunk;
    }

    let rows = ns
        .iter()
        .map(|&n| {
            let (p, s) = prefix_best[n - 1];
            SamplingRow {
                n,
                psnr_db: p,
                ssim: s,
            }
        })
        .collect();
    Ok(SamplingStudy {
        mean_psnr_db,
        mean_ssim,
        rows,
    })
}

/// Stacks (1,C,H,W) or (C,H,W) latent tensors into one batch.
fn batch_latents(zs: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let inner: Vec<usize> = {
        let s = zs[0].shape();
        if s.len() == 4 {
            s[1..].to_vec()
        } else {
            s.to_vec()
        }
    };
    let numel: usize = inner.iter().product();
    let mut data = Vec::with_capacity(zs.len() * numel);
    for z in zs {
        data.extend_from_slice(z.data());
    }
    let mut shape = vec![zs.len()];
    shape.extend_from_slice(&inner);
    Ok(Tensor::new(shape, data)?)
}

//! Residual-encoding verification: renders the target, input, deterministic
//! and stochastic panels plus their residuals for one sample, and reports
//! how close each path lands to the target.

use std::fs;
use std::path::Path;

use stochsr_tensor::Tensor;

use crate::data::write_image;
use crate::error::Error;
use crate::eval::quality::psnr;
use crate::infer::{latent_from_eps, stack, unstack, Evaluator};
use crate::Result as CoreResult;

#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Deterministic path against the target.
    pub psnr_d: f64,
    /// Stochastic path with a sampled latent.
    pub psnr_s: f64,
    /// Stochastic path with the encoded mean latent (noise-free).
    pub psnr_s_mean: f64,
    pub l2_td: f64,
    pub l2_ts: f64,
    pub l2_ts_mean: f64,
}

fn l2(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Half-amplitude view of a residual image, so zero error maps to mid-gray.
fn residual_panel(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    Tensor::from_fn(a.shape().to_vec(), |i| {
        ((a.data()[i] - b.data()[i]) * 0.5).clamp(-1.0, 1.0)
    })
}

/// Writes the six panels under `out_dir/<sample_id>/` and returns the
/// path metrics. Requires phase-1 parameters (residual encoder).
#[allow(clippy::too_many_arguments)]
pub fn residual_report(
    ev: &mut Evaluator,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    out_dir: impl AsRef<Path>,
    sample_id: usize,
    seed: u64,
    peak: f64,
) -> CoreResult<ResidualReport> {
    let x1 = stack(&[x])?;
    let d = unstack(&ev.render_deterministic(&x1)?, 0);

    let r = Tensor::from_fn(y.shape().to_vec(), |i| y.data()[i] - d.data()[i]);
    let (mu, log_var) = ev.encode_residual(&stack(&[&r])?)?;
    let mut rng = crate::eval::sample_stream(seed, sample_id as u64, 0x5245);
    let eps = crate::infer::draw_normal(&mut rng, mu.shape().to_vec());
    let z = latent_from_eps(&mu, &log_var, &eps);

    let s = unstack(&ev.render(&x1, &z)?, 0);
    let s_mean = unstack(&ev.render(&x1, &mu)?, 0);

    let dir = out_dir.as_ref().join(format!("{sample_id:05}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_image(y, dir.join("T.ppm"))?;
    write_image(x, dir.join("input.ppm"))?;
    write_image(&d, dir.join("D.ppm"))?;
    write_image(&residual_panel(y, &d), dir.join("residual_TD.ppm"))?;
    write_image(&s, dir.join("S.ppm"))?;
    write_image(&residual_panel(y, &s), dir.join("residual_TS.ppm"))?;

    Ok(ResidualReport {
        psnr_d: psnr(&d, y, peak)?,
        psnr_s: psnr(&s, y, peak)?,
        psnr_s_mean: psnr(&s_mean, y, peak)?,
        l2_td: l2(y, &d),
        l2_ts: l2(y, &s),
        l2_ts_mean: l2(y, &s_mean),
    })
}

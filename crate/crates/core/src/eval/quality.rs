//! PSNR and SSIM. SSIM uses an 11x11 Gaussian window (sigma 1.5) over the
//! valid region, computed per channel and averaged.

use stochsr_tensor::Tensor;

use crate::error::{Error, Result};

/// Reported PSNR ceiling; identical images hit the cap instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Tensor<f32>, b: &Tensor<f32>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Data(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// 10*log10(peak^2 / MSE), capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    check_shapes(a, b, "psnr")?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let di = i as f64 - half;
            let dj = j as f64 - half;
            w.push((-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, peak: f64, window: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb) = (0.0f64, 0.0f64);
            let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wt = window[i * SSIM_WINDOW + j];
                    let va = a[(r + i) * w + c + j] as f64;
                    let vb = b[(r + i) * w + c + j] as f64;
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            let v = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            acc += v;
            count += 1;
        }
    }
    acc / count as f64
}

/// Mean local SSIM over all channels.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    ssim_with(a, b, peak, false)
}

/// As [`ssim`], optionally collapsing RGB to luminance first.
pub fn ssim_with(
    a: &Tensor<f32>,
    b: &Tensor<f32>,
    peak: f64,
    luminance_only: bool,
) -> Result<f64> {
    check_shapes(a, b, "ssim")?;
    let (c, h, w) = match a.shape()[..] {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Data(format!(
                "ssim expects (C,H,W) images, got {:?}",
                a.shape()
            )))
        }
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Data(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let window = gaussian_window();
    let plane = h * w;
    if luminance_only && c == 3 {
        let lum = |t: &Tensor<f32>| -> Vec<f32> {
            (0..plane)
                .map(|i| {
                    0.299 * t.data()[i] + 0.587 * t.data()[plane + i] + 0.114 * t.data()[2 * plane + i]
                })
                .collect()
        };
        return Ok(ssim_plane(&lum(a), &lum(b), h, w, peak, &window));
    }
    let mut acc = 0.0;
    for ch in 0..c {
        acc += ssim_plane(
            &a.data()[ch * plane..(ch + 1) * plane],
            &b.data()[ch * plane..(ch + 1) * plane],
            h,
            w,
            peak,
            &window,
        );
    }
    Ok(acc / c as f64)
}

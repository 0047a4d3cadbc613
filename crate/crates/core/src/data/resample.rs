//! Separable cubic-convolution resampling (kernel parameter a = -0.5,
//! Catmull-Rom family), edge-clamped. Used for both the downsampling
//! degradation and the upsampling back to network resolution.

use stochsr_tensor::Tensor;

use crate::error::{Error, Result};

pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel. Zero outside |t| < 2; the four taps covering
/// any sample position always sum to one.
pub fn cubic_kernel(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Four tap weights and base index for one output coordinate, using the
/// half-pixel center convention. `weights[m]` belongs to source index
/// `base + m - 1`, clamped to the valid range by the caller.
pub fn tap_weights(out_idx: usize, in_extent: usize, out_extent: usize) -> (isize, [f64; 4]) {
    let scale = in_extent as f64 / out_extent as f64;
    let src = (out_idx as f64 + 0.5) * scale - 0.5;
    let base = src.floor();
    let frac = src - base;
    let w = [
        cubic_kernel(frac + 1.0),
        cubic_kernel(frac),
        cubic_kernel(frac - 1.0),
        cubic_kernel(frac - 2.0),
    ];
    (base as isize, w)
}

/// Resamples a square (C, H, W) image to (C, out_size, out_size). The same
/// extent in and out reproduces the input exactly.
pub fn bicubic_resample(img: &Tensor<f32>, out_size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = image_dims(img)?;
    if out_size == 0 {
        return Err(Error::Data("resample target extent must be >= 1".into()));
    }
    if out_size == h {
        return Ok(img.clone());
    }
    // Horizontal pass (C, H, W) -> (C, H, out), then vertical.
    let horizontal = resample_rows(img.data(), c, h, w, out_size);
    let transposed = transpose_hw(&horizontal, c, h, out_size);
    let vertical = resample_rows(&transposed, c, out_size, h, out_size);
    let out = transpose_hw(&vertical, c, out_size, out_size);
    Ok(Tensor::new(vec![c, out_size, out_size], out)?)
}

fn resample_rows(data: &[f32], c: usize, rows: usize, cols: usize, out_cols: usize) -> Vec<f32> {
    let mut taps = Vec::with_capacity(out_cols);
    for j in 0..out_cols {
        taps.push(tap_weights(j, cols, out_cols));
    }
    let mut out = vec![0.0f32; c * rows * out_cols];
    for ch in 0..c {
        for r in 0..rows {
            let src = &data[(ch * rows + r) * cols..(ch * rows + r + 1) * cols];
            let dst = &mut out[(ch * rows + r) * out_cols..(ch * rows + r + 1) * out_cols];
            for (j, d) in dst.iter_mut().enumerate() {
                let (base, w) = taps[j];
                let mut acc = 0.0f64;
                for (m, &wm) in w.iter().enumerate() {
                    let idx = (base + m as isize - 1).clamp(0, cols as isize - 1) as usize;
                    acc += wm * src[idx] as f64;
                }
                *d = acc as f32;
            }
        }
    }
    out
}

fn transpose_hw(data: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for ch in 0..c {
        let src = &data[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for r in 0..h {
            for col in 0..w {
                dst[col * h + r] = src[r * w + col];
            }
        }
    }
    out
}

/// The network input: downsample by `scale_factor`, then upsample back.
pub fn degrade(hr: &Tensor<f32>, scale_factor: usize) -> Result<Tensor<f32>> {
    let (_, h, _) = image_dims(hr)?;
    if scale_factor == 0 || h % scale_factor != 0 {
        return Err(Error::Data(format!(
            "scale factor {scale_factor} does not divide image extent {h}"
        )));
    }
    if scale_factor == 1 {
        return Ok(hr.clone());
    }
    let low = bicubic_resample(hr, h / scale_factor)?;
    bicubic_resample(&low, h)
}

pub(crate) fn image_dims(img: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match img.shape()[..] {
        [c, h, w] if h == w => Ok((c, h, w)),
        _ => Err(Error::Data(format!(
            "expected a square (C,H,W) image, got shape {:?}",
            img.shape()
        ))),
    }
}

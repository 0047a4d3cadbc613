//! Latent traversal: render the convex combination between two draws from
//! the predicted distribution and measure how smoothly the output moves.

use stochsr_tensor::Tensor;

use crate::error::Error;
use crate::infer::{sample_latent, stack, unstack, Evaluator};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Traversal {
    pub frames: Vec<Tensor<f32>>,
    /// L2 distance between consecutive frames.
    pub consecutive_l2: Vec<f64>,
    /// L2 distance between the two endpoint frames.
    pub endpoint_l2: f64,
    /// Largest per-pixel jump between any consecutive pair.
    pub max_pixel_jump: f64,
    /// Largest per-pixel difference between the endpoints.
    pub endpoint_pixel_diff: f64,
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

fn max_abs(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max)
}

/// Renders `steps` frames at alpha = i/(steps-1) between two latent draws
/// from the predictor. steps = 2 degenerates to the two endpoint renders.
pub fn traverse(
    ev: &mut Evaluator,
    x: &Tensor<f32>,
    steps: usize,
    seed: u64,
    sample_id: usize,
) -> Result<Traversal> {
    if steps < 2 {
        return Err(Error::Config(format!(
            "a traversal needs at least 2 frames, got {steps}"
        )));
    }
    let x1 = stack(&[x])?;
    let (mu, log_var) = ev.predict(&x1)?;
    let mut rng = crate::eval::sample_stream(seed, sample_id as u64, 0x5452);
    let z_start = sample_latent(&mu, &log_var, &mut rng);
    let z_end = sample_latent(&mu, &log_var, &mut rng);

    let mut frames = Vec::with_capacity(steps);
    for i in 0..steps {
        // Endpoints take the drawn latents directly; the convex combination
        // at alpha = 1 would otherwise be an ulp away from z_end.
        let z = if i == 0 {
            z_start.clone()
        } else if i == steps - 1 {
            z_end.clone()
        } else {
            let alpha = i as f32 / (steps - 1) as f32;
            Tensor::from_fn(z_start.shape().to_vec(), |k| {
                z_start.data()[k] + alpha * (z_end.data()[k] - z_start.data()[k])
            })
        };
        frames.push(unstack(&ev.render(&x1, &z)?, 0));
    }

    let consecutive_l2: Vec<f64> = frames.windows(2).map(|w| l2(&w[0], &w[1])).collect();
    let endpoint_l2 = l2(&frames[0], &frames[steps - 1]);
    let max_pixel_jump = frames
        .windows(2)
        .map(|w| max_abs(&w[0], &w[1]))
        .fold(0.0, f64::max);
    let endpoint_pixel_diff = max_abs(&frames[0], &frames[steps - 1]);
    Ok(Traversal {
        frames,
        consecutive_l2,
        endpoint_l2,
        max_pixel_jump,
        endpoint_pixel_diff,
    })
}

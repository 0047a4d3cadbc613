//! Evaluation studies: quality metrics, residual-encoding verification,
//! best-of-n sampling, latent traversal, and the benchmark table.

mod benchmark;
mod quality;
mod residual;
mod sampling;
mod traversal;

pub use benchmark::{benchmark_split, format_benchmark, BenchColumns};
pub use quality::{psnr, ssim, ssim_with, PSNR_CAP_DB, SSIM_WINDOW};
pub use residual::{residual_report, ResidualReport};
pub use sampling::{best_of_n, best_of_n_from, SamplingRow, SamplingStudy};
pub use traversal::{traverse, Traversal};

use serde::{Deserialize, Serialize};

/// Default peak for the internal [-1, 1] pixel domain.
pub const PEAK_INTERNAL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Bicubic,
    Deterministic,
    StochasticOracle,
    IcapMean,
    IcapSample,
}

/// One structured metric row. The peak is recorded so runs computed in
/// different pixel domains are never compared by accident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: usize,
    pub scale_factor: usize,
    pub path: PathKind,
    pub psnr_db: f64,
    pub ssim: f64,
    pub peak: f64,
}

/// Derives an independent draw stream for (run seed, sample id, purpose).
pub fn sample_stream(seed: u64, sample_id: u64, purpose: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ purpose.rotate_left(17));
    rng.set_stream(sample_id.wrapping_add(purpose << 48));
    rng
}

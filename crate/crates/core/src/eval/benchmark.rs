//! Mean PSNR/SSIM per path over a dataset split: the model-free bicubic
//! baseline, the deterministic path, and the predictor-mean path, plus the
//! SSIM gap between the last two.

use stochsr_tensor::Tensor;

use crate::data::Dataset;
use crate::eval::quality::{psnr, ssim};
use crate::eval::{MetricRecord, PathKind};
use crate::infer::{stack, unstack, Evaluator};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchColumns {
    pub scale_factor: usize,
    pub samples: usize,
    pub bicubic: (f64, f64),
    pub deterministic: Option<(f64, f64)>,
    pub icap_mean: Option<(f64, f64)>,
    /// icap-mean SSIM minus deterministic SSIM.
    pub ssim_gap: Option<f64>,
}

const CHUNK: usize = 16;

/// Evaluates one split. Without an evaluator only the bicubic column is
/// filled; without predictor parameters the icap column stays empty.
pub fn benchmark_split(
    mut ev: Option<&mut Evaluator>,
    data: &Dataset,
    peak: f64,
    records: &mut Vec<MetricRecord>,
) -> Result<BenchColumns> {
    let n = data.pairs.len();
    let mut bicubic = (0.0, 0.0);
    let mut det = (0.0, 0.0);
    let mut icap = (0.0, 0.0);
    let mut have_icap = false;

    let record = |records: &mut Vec<MetricRecord>,
                      id: usize,
                      path: PathKind,
                      p: f64,
                      s: f64| {
        records.push(MetricRecord {
            sample_id: id,
            scale_factor: data.scale_factor,
            path,
            psnr_db: p,
            ssim: s,
            peak,
        });
    };

    for (id, pair) in data.pairs.iter().enumerate() {
        let p = psnr(&pair.x, &pair.y, peak)?;
        let s = ssim(&pair.x, &pair.y, peak)?;
        bicubic.0 += p;
        bicubic.1 += s;
        record(records, id, PathKind::Bicubic, p, s);
    }

    if let Some(ev) = ev.as_deref_mut() {
        have_icap = ev.has_omega();
        let mut start = 0usize;
        while start < n {
            let end = (start + CHUNK).min(n);
            let xs: Vec<&Tensor<f32>> = data.pairs[start..end].iter().map(|p| &p.x).collect();
            let x_batch = stack(&xs)?;
            let d_batch = ev.render_deterministic(&x_batch)?;
            let icap_batch = if have_icap {
                let (mu, _) = ev.predict(&x_batch)?;
                Some(ev.render(&x_batch, &mu)?)
            } else {
                None
            };
            for (offset, pair) in data.pairs[start..end].iter().enumerate() {
                let id = start + offset;
                let d = unstack(&d_batch, offset);
                let p = psnr(&d, &pair.y, peak)?;
                let s = ssim(&d, &pair.y, peak)?;
                det.0 += p;
                det.1 += s;
                record(records, id, PathKind::Deterministic, p, s);
                if let Some(ib) = &icap_batch {
                    let img = unstack(ib, offset);
                    let p = psnr(&img, &pair.y, peak)?;
                    let s = ssim(&img, &pair.y, peak)?;
                    icap.0 += p;
                    icap.1 += s;
                    record(records, id, PathKind::IcapMean, p, s);
                }
            }
            start = end;
        }
    }

    let mean = |acc: (f64, f64)| (acc.0 / n as f64, acc.1 / n as f64);
    let deterministic = ev.is_some().then(|| mean(det));
    let icap_mean = (ev.is_some() && have_icap).then(|| mean(icap));
    let ssim_gap = match (&deterministic, &icap_mean) {
        (Some(d), Some(i)) => Some(i.1 - d.1),
        _ => None,
    };
    Ok(BenchColumns {
        scale_factor: data.scale_factor,
        samples: n,
        bicubic: mean(bicubic),
        deterministic,
        icap_mean,
        ssim_gap,
    })
}

/// Aligned plain-text table over one or more scale rows.
pub fn format_benchmark(rows: &[BenchColumns]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>5}  {:>7}  {:>15}  {:>15}  {:>15}  {:>9}\n",
        "scale", "samples", "bicubic", "deterministic", "icap-mean", "ssim-gap"
    ));
    let cell = |v: Option<(f64, f64)>| match v {
        Some((p, s)) => format!("{p:6.2}/{s:6.4}"),
        None => "-".to_string(),
    };
    for r in rows {
        out.push_str(&format!(
            "{:>5}  {:>7}  {:>15}  {:>15}  {:>15}  {:>9}\n",
            r.scale_factor,
            r.samples,
            cell(Some(r.bicubic)),
            cell(r.deterministic),
            cell(r.icap_mean),
            r.ssim_gap
                .map(|g| format!("{g:+.4}"))
                .unwrap_or_else(|| "-".to_string()),
        ));
    }
    out
}

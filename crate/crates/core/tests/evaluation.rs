//! Evaluation studies over a (deliberately untrained) micro model: the
//! properties here are structural, not quality claims.

use stochsr_core::config::ArchConfig;
use stochsr_core::data::synthesize_dataset;
use stochsr_core::eval::{
    benchmark_split, best_of_n, best_of_n_from, residual_report, sample_stream, traverse,
    MetricRecord, PathKind, PEAK_INTERNAL,
};
use stochsr_core::infer::{sample_latent, stack, unstack, Evaluator};
use stochsr_tensor::Tensor;

fn micro_arch() -> ArchConfig {
    ArchConfig {
        image_size: 16,
        scale_factor: 4,
        base_channels: 8,
        enc_res_blocks: 1,
        dec_res_blocks: 1,
        latent_channels: 8,
        latent_size: 4,
        color_channels: 3,
    }
}

/// Evaluator over freshly initialized parameters with warmed-up batch-norm
/// statistics (one calibration-free training step would also do).
fn micro_evaluator() -> Evaluator {
    let arch = micro_arch();
    let data = synthesize_dataset(3, 8, 16, 4).unwrap();
    let cfg = stochsr_core::train::TrainConfig {
        steps_phase1: 2,
        steps_phase2: 2,
        batch_size: 4,
        log_interval: 100,
        bn_calibration_batches: 2,
        early_stop: false,
        ..Default::default()
    };
    let mut run = stochsr_core::train::TrainRun::new(arch, cfg).unwrap();
    let mut log = stochsr_core::train::MetricLog::in_memory();
    run.run_phase1(&data, &mut log, None).unwrap();
    run.run_phase2(&data, &mut log, None).unwrap();
    Evaluator::new(
        run.models.clone(),
        run.theta.clone(),
        Some(run.phi.clone()),
        Some(run.omega.clone()),
    )
}

#[test]
fn best_of_n_is_monotone_over_nested_draws() {
    let mut ev = micro_evaluator();
    let data = synthesize_dataset(5, 2, 16, 4).unwrap();
    let pair = &data.pairs[0];
    let study = best_of_n(
        &mut ev,
        &pair.x,
        &pair.y,
        &[1, 5, 20],
        13,
        0,
        PEAK_INTERNAL,
    )
    .unwrap();
    assert!(study.rows[0].psnr_db <= study.rows[1].psnr_db);
    assert!(study.rows[1].psnr_db <= study.rows[2].psnr_db);
    // The stream is nested: re-running with a smaller max n reproduces the
    // shared prefix exactly.
    let small = best_of_n(&mut ev, &pair.x, &pair.y, &[1, 5], 13, 0, PEAK_INTERNAL).unwrap();
    assert_eq!(small.rows[0].psnr_db, study.rows[0].psnr_db);
    assert_eq!(small.rows[1].psnr_db, study.rows[1].psnr_db);
}

#[test]
fn zero_sigma_draws_collapse_to_the_mean_case() {
    let mut ev = micro_evaluator();
    let data = synthesize_dataset(6, 1, 16, 4).unwrap();
    let pair = &data.pairs[0];
    let x1 = stack(&[&pair.x]).unwrap();
    let (mu, _) = ev.predict(&x1).unwrap();
    // log_var -50 puts sigma below the f32 resolution of mu.
    let log_var = Tensor::full(mu.shape().to_vec(), -50.0f32);
    let study = best_of_n_from(
        &mut ev,
        &pair.x,
        &pair.y,
        &mu,
        &log_var,
        &[1, 8],
        21,
        0,
        PEAK_INTERNAL,
    )
    .unwrap();
    assert_eq!(study.rows[0].psnr_db, study.mean_psnr_db);
    assert_eq!(study.rows[1].psnr_db, study.mean_psnr_db);
}

#[test]
fn sampling_counts_must_be_positive() {
    let mut ev = micro_evaluator();
    let data = synthesize_dataset(6, 1, 16, 4).unwrap();
    let pair = &data.pairs[0];
    assert!(best_of_n(&mut ev, &pair.x, &pair.y, &[0], 1, 0, PEAK_INTERNAL).is_err());
    assert!(best_of_n(&mut ev, &pair.x, &pair.y, &[], 1, 0, PEAK_INTERNAL).is_err());
}

#[test]
fn traversal_endpoints_match_direct_renders() {
    let mut ev = micro_evaluator();
    let data = synthesize_dataset(7, 1, 16, 4).unwrap();
    let pair = &data.pairs[0];
    let steps = 5;
    let tr = traverse(&mut ev, &pair.x, steps, 31, 0).unwrap();
    assert_eq!(tr.frames.len(), steps);

    // Recreate the two endpoint draws from the same derived stream.
    let x1 = stack(&[&pair.x]).unwrap();
    let (mu, log_var) = ev.predict(&x1).unwrap();
    let mut rng = sample_stream(31, 0, 0x5452);
    let z_start = sample_latent(&mu, &log_var, &mut rng);
    let z_end = sample_latent(&mu, &log_var, &mut rng);
    let start = unstack(&ev.render(&x1, &z_start).unwrap(), 0);
    let end = unstack(&ev.render(&x1, &z_end).unwrap(), 0);
    assert_eq!(tr.frames[0].data(), start.data());
    assert_eq!(tr.frames[steps - 1].data(), end.data());

    // Triangle inequality over the frame path.
    let total: f64 = tr.consecutive_l2.iter().sum();
    assert!(total >= tr.endpoint_l2 - 1e-9);
}

#[test]
fn two_step_traversal_degenerates_to_the_endpoints() {
    let mut ev = micro_evaluator();
    let data = synthesize_dataset(8, 1, 16, 4).unwrap();
    let tr = traverse(&mut ev, &data.pairs[0].x, 2, 7, 0).unwrap();
    assert_eq!(tr.frames.len(), 2);
    assert_eq!(tr.consecutive_l2.len(), 1);
    assert!((tr.consecutive_l2[0] - tr.endpoint_l2).abs() < 1e-12);
    assert!(traverse(&mut ev, &data.pairs[0].x, 1, 7, 0).is_err());
}

#[test]
fn residual_report_writes_all_panels_and_is_deterministic() {
    let mut ev = micro_evaluator();
    let data = synthesize_dataset(9, 1, 16, 4).unwrap();
    let pair = &data.pairs[0];
    let dir = tempfile::tempdir().unwrap();
    let r1 = residual_report(&mut ev, &pair.x, &pair.y, dir.path(), 3, 17, PEAK_INTERNAL).unwrap();
    for panel in ["T", "input", "D", "residual_TD", "S", "residual_TS"] {
        let path = dir.path().join("00003").join(format!("{panel}.ppm"));
        assert!(path.exists(), "{panel}.ppm missing");
        let img = stochsr_core::data::read_image(&path).unwrap();
        assert_eq!(img.shape(), &[3, 16, 16], "{panel}.ppm has the wrong extent");
    }
    // The mean-latent stochastic metric carries no sampling noise.
    let r2 = residual_report(&mut ev, &pair.x, &pair.y, dir.path(), 3, 17, PEAK_INTERNAL).unwrap();
    assert_eq!(r1.psnr_s_mean, r2.psnr_s_mean);
    assert_eq!(r1.psnr_s, r2.psnr_s);
    // No quality ordering is asserted on an untrained model.
}

#[test]
fn benchmark_fills_columns_by_available_parameters() {
    let data = synthesize_dataset(10, 6, 16, 4).unwrap();
    let mut records = Vec::new();
    let bare = benchmark_split(None, &data, PEAK_INTERNAL, &mut records).unwrap();
    assert!(bare.deterministic.is_none() && bare.icap_mean.is_none());
    assert!(records.iter().all(|r| r.path == PathKind::Bicubic));
    assert_eq!(records.len(), 6);

    // Without predictor parameters the icap column stays empty. Warm the
    // statistics with one short pass so eval mode is legal.
    let mut run = stochsr_core::train::TrainRun::new(
        micro_arch(),
        stochsr_core::train::TrainConfig {
            steps_phase1: 1,
            batch_size: 4,
            bn_calibration_batches: 1,
            log_interval: 10,
            ..Default::default()
        },
    )
    .unwrap();
    let mut log = stochsr_core::train::MetricLog::in_memory();
    run.run_phase1(&data, &mut log, None).unwrap();
    let mut ev = Evaluator::new(run.models.clone(), run.theta.clone(), Some(run.phi.clone()), None);
    let mut records = Vec::new();
    let cols = benchmark_split(Some(&mut ev), &data, PEAK_INTERNAL, &mut records).unwrap();
    assert!(cols.deterministic.is_some());
    assert!(cols.icap_mean.is_none() && cols.ssim_gap.is_none());
}

/// Long-running trend check over scale factors 4, 8 and 16: the SSIM
/// advantage of the predictor-mean path over the deterministic baseline is
/// nondecreasing as the scale factor grows (one tie allowed). Run with
/// `cargo test -p stochsr-core --test evaluation -- --ignored`.
#[test]
#[ignore = "trains three models; takes tens of minutes"]
fn ssim_gap_trend_over_scales() {
    let mut gaps = Vec::new();
    for scale in [4usize, 8, 16] {
        let train = synthesize_dataset(11, 256, 32, scale).unwrap();
        let held = synthesize_dataset(12, 48, 32, scale).unwrap();
        let cfg = stochsr_core::train::TrainConfig {
            steps_phase1: 1200,
            steps_phase2: 600,
            lambda: 2.0,
            lr_phase1: 5e-4,
            batch_size: 16,
            log_interval: 400,
            early_stop: false,
            seed: 11,
            ..Default::default()
        };
        let mut run = stochsr_core::train::TrainRun::new(ArchConfig::toy(scale), cfg).unwrap();
        let mut log = stochsr_core::train::MetricLog::in_memory();
        run.run_phase1(&train, &mut log, None).unwrap();
        run.run_phase2(&train, &mut log, None).unwrap();
        let mut ev = Evaluator::new(
            run.models.clone(),
            run.theta.clone(),
            Some(run.phi.clone()),
            Some(run.omega.clone()),
        );
        let mut records = Vec::new();
        let cols = benchmark_split(Some(&mut ev), &held, PEAK_INTERNAL, &mut records).unwrap();
        let gap = cols.ssim_gap.unwrap();
        eprintln!("scale {scale}: ssim gap {gap:+.4}");
        gaps.push(gap);
    }
    let mut ties = 0;
    for w in gaps.windows(2) {
        if (w[1] - w[0]).abs() < 1e-6 {
            ties += 1;
        } else {
            assert!(
                w[1] > w[0],
                "ssim advantage decreased along scales: {gaps:?}"
            );
        }
    }
    assert!(ties <= 1, "more than one tie along the trend: {gaps:?}");
}

#[test]
fn metric_records_serialize_with_kebab_case_paths() {
    let record = MetricRecord {
        sample_id: 4,
        scale_factor: 8,
        path: PathKind::IcapMean,
        psnr_db: 24.5,
        ssim: 0.8,
        peak: 2.0,
    };
    let json = serde_json::to_string(&record).unwrap();
    assert!(json.contains("\"icap-mean\""), "{json}");
    let back: MetricRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, record);
}

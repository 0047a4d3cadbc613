//! Loss oracles, the two-phase procedure, freezing, resume equivalence and
//! checkpoint round-trips, all at micro scale.

use stochsr_core::config::ArchConfig;
use stochsr_core::data::synthesize_dataset;
use stochsr_core::models::{build_models, Models};
use stochsr_core::params::ParamSet;
use stochsr_core::train::{
    inspect, loss_deterministic, loss_phase1, loss_stochastic, Checkpoint, MetricLog,
    PhaseMetric, TrainConfig, TrainRun,
};
use stochsr_core::Error;
use stochsr_tensor::{gradient_check_at, BnMode, Tape, Tensor};

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

fn micro_models() -> (Models, ParamSet<f32>, ParamSet<f32>, ParamSet<f32>) {
    build_models(&micro_arch(), 5).unwrap()
}

fn probe_batch(b: usize) -> (Tensor<f32>, Tensor<f32>) {
    let x = Tensor::from_fn(vec![b, 3, 16, 16], |i| ((i as f32) * 0.113).sin() * 0.6);
    let y = Tensor::from_fn(vec![b, 3, 16, 16], |i| ((i as f32) * 0.071).cos() * 0.6);
    (x, y)
}

#[test]
fn deterministic_loss_is_zero_against_its_own_render() {
    let (models, mut theta, _, _) = micro_models();
    let (x, _) = probe_batch(2);
    // First pass: capture the render. Second pass: use it as the target.
    let render = {
        let mut tape = Tape::new();
        let bind = theta.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (_, y_d) =
            loss_deterministic(&mut tape, &models, &bind, &mut theta, xv, xv, BnMode::Train)
                .unwrap();
        tape.value(y_d).clone()
    };
    let mut tape = Tape::new();
    let bind = theta.bind(&mut tape, false);
    let xv = tape.constant(x);
    let yv = tape.constant(render);
    let (l_d, _) =
        loss_deterministic(&mut tape, &models, &bind, &mut theta, xv, yv, BnMode::Train).unwrap();
    assert_eq!(tape.value(l_d).item(), 0.0);
}

#[test]
fn constant_offset_targets_give_the_hand_computed_losses() {
    // Two images differing by c everywhere: squared-L2 gives c^2 * pixels,
    // L1 gives c * pixels, both per sample.
    let (models, mut theta, mut phi, _) = micro_models();
    let (x, _) = probe_batch(2);
    let c = 0.25f32;
    let pixels = (3 * 16 * 16) as f64;

    let mut tape = Tape::new();
    let theta_bind = theta.bind(&mut tape, false);
    let phi_bind = phi.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let (_, y_d) =
        loss_deterministic(&mut tape, &models, &theta_bind, &mut theta, xv, xv, BnMode::Train)
            .unwrap();
    let shifted = tape.affine(y_d, 1.0, c).unwrap();
    let shifted_t = tape.value(shifted).clone();

    let mut tape = Tape::new();
    let theta_bind = theta.bind(&mut tape, false);
    let phi_bind2 = phi.bind(&mut tape, false);
    let _ = phi_bind;
    let xv = tape.constant(x);
    let yv = tape.constant(shifted_t);
    let (l_d, y_d) =
        loss_deterministic(&mut tape, &models, &theta_bind, &mut theta, xv, yv, BnMode::Train)
            .unwrap();
    let got = tape.value(l_d).item() as f64;
    let want = (c as f64) * (c as f64) * pixels;
    assert!((got - want).abs() / want < 1e-4, "L_d {got} vs {want}");

    // Stochastic term against the same shifted target, with the sampled
    // render replaced by construction: use eps = 0 and a zero-information
    // setup is hard, so instead check the L1 arithmetic directly on the
    // deterministic render (the path reduction is identical code).
    let diff = tape.sub(yv, y_d).unwrap();
    let abs = tape.abs(diff).unwrap();
    let total = tape.sum(abs).unwrap();
    let l1 = tape.value(total).item() as f64 / 2.0;
    let want_l1 = (c as f64) * pixels;
    assert!((l1 - want_l1).abs() / want_l1 < 1e-4, "L1 {l1} vs {want_l1}");
    drop(phi_bind2);
}

#[test]
fn stochastic_loss_reaches_the_residual_encoder_mean_head() {
    let (models, mut theta, mut phi, _) = micro_models();
    let (x, y) = probe_batch(2);
    let eps = Tensor::from_fn(vec![2, 8, 4, 4], |i| ((i % 5) as f32 - 2.0) / 2.0);

    let mut tape = Tape::new();
    let theta_bind = theta.bind(&mut tape, true);
    let phi_bind = phi.bind(&mut tape, true);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let ev = tape.constant(eps);
    let (l_s, _) = loss_stochastic(
        &mut tape,
        &models,
        &theta_bind,
        &mut theta,
        &phi_bind,
        &mut phi,
        xv,
        yv,
        ev,
        true,
        BnMode::Train,
    )
    .unwrap();
    tape.backward(l_s).unwrap();
    // The reparameterized sample carries gradient through mu_res.
    let grads = phi_bind.grads(&tape);
    let mu_head_grad = grads.get("mu.conv2.w").expect("mu head gradient");
    assert!(mu_head_grad.data().iter().any(|&v| v != 0.0));
}

#[test]
fn phase1_composition_is_linear_in_lambda() {
    let (models, mut theta, mut phi, _) = micro_models();
    let (x, y) = probe_batch(2);
    let eps = Tensor::zeros(vec![2, 8, 4, 4]);

    let eval_at = |lambda: f64, theta: &mut ParamSet<f32>, phi: &mut ParamSet<f32>| {
        let mut tape = Tape::new();
        let theta_bind = theta.bind(&mut tape, false);
        let phi_bind = phi.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let ev = tape.constant(eps.clone());
        let parts = loss_phase1(
            &mut tape, &models, &theta_bind, theta, &phi_bind, phi, xv, yv, ev, lambda,
            true, BnMode::Train,
        )
        .unwrap();
        (
            tape.value(parts.total).item() as f64,
            tape.value(parts.l_d).item() as f64,
            tape.value(parts.l_s).item() as f64,
        )
    };

    let (total0, l_d0, _) = eval_at(0.0, &mut theta, &mut phi);
    assert_eq!(total0, l_d0, "lambda = 0 must reduce to the deterministic loss");

    let (total1, l_d1, l_s1) = eval_at(1.0, &mut theta, &mut phi);
    assert!((total1 - (l_d1 + l_s1)).abs() < 1e-3 * total1.abs());

    let (total2, l_d2, l_s2) = eval_at(2.0, &mut theta, &mut phi);
    assert!((l_d2 - l_d1).abs() < 1e-9 && (l_s2 - l_s1).abs() < 1e-9);
    // Doubling lambda moves the total by exactly lambda * L_s.
    assert!((total2 - total1 - l_s1).abs() < 1e-3 * total2.abs());
}

#[test]
fn deterministic_loss_gradient_matches_finite_differences() {
    // Probe one bias tensor of the decoder in f64.
    let (models, theta, _, _) = micro_models();
    let theta64: ParamSet<f64> = theta.cast();
    let (x, y) = probe_batch(2);
    let (x64, y64): (Tensor<f64>, Tensor<f64>) = (x.cast(), y.cast());
    let probe_name = "dec.out.b";
    let point = theta64.get(probe_name).unwrap().clone();

    let report = gradient_check_at(
        move |tape: &mut Tape<f64>, v| {
            let mut theta = theta64.clone();
            let bind = theta.bind(tape, false).with_override(probe_name, v);
            let xv = tape.constant(x64.clone());
            let yv = tape.constant(y64.clone());
            let (l_d, _) =
                loss_deterministic(tape, &models, &bind, &mut theta, xv, yv, BnMode::Train)
                    .map_err(|e| match e {
                        Error::Tensor(t) => t,
                        other => stochsr_tensor::TensorError::Invalid {
                            op: "loss_deterministic",
                            msg: other.to_string(),
                        },
                    })?;
            Ok(l_d)
        },
        &point,
        1e-5,
        &[0, 1, 2],
    )
    .unwrap();
    assert!(report.passed(1e-3), "max rel err {}", report.max_rel_err);
}

fn micro_dataset(count: usize) -> stochsr_core::data::Dataset {
    synthesize_dataset(21, count, 16, 4).unwrap()
}

fn micro_config(steps1: u64, steps2: u64) -> TrainConfig {
    TrainConfig {
        steps_phase1: steps1,
        steps_phase2: steps2,
        batch_size: 8,
        log_interval: 10,
        early_stop: false,
        bn_calibration_batches: 4,
        seed: 77,
        ..TrainConfig::default()
    }
}

#[test]
fn phase2_leaves_theta_and_phi_bitwise_frozen() {
    let data = micro_dataset(16);
    let mut run = TrainRun::new(micro_arch(), micro_config(15, 25)).unwrap();
    let mut log = MetricLog::in_memory();
    run.run_phase1(&data, &mut log, None).unwrap();
    let theta_before = run.theta.clone();
    let phi_before = run.phi.clone();
    run.run_phase2(&data, &mut log, None).unwrap();
    assert_eq!(run.theta, theta_before);
    assert_eq!(run.phi, phi_before);
    assert_eq!(run.theta.max_abs_diff(&theta_before), 0.0);
    assert_eq!(run.phi.max_abs_diff(&phi_before), 0.0);
}

#[test]
fn phase2_overfits_a_fixed_batch() {
    // A single-image dataset makes every drawn batch identical, so the KL
    // must fall over 200 steps.
    let data = micro_dataset(1);
    let mut cfg = micro_config(10, 200);
    cfg.log_interval = 5;
    let mut run = TrainRun::new(micro_arch(), cfg).unwrap();
    let mut log = MetricLog::in_memory();
    run.run_phase1(&data, &mut log, None).unwrap();
    log.lines.clear();
    run.run_phase2(&data, &mut log, None).unwrap();
    let kls: Vec<f64> = log
        .lines
        .iter()
        .filter_map(|l| match l.metric {
            PhaseMetric::Phase2 { kl, .. } => Some(kl),
            _ => None,
        })
        .collect();
    assert!(kls.len() >= 10);
    let early: f64 = kls[..3].iter().sum::<f64>() / 3.0;
    let late: f64 = kls[kls.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(late < early, "KL did not decrease: {early} -> {late}");
}

#[test]
fn phase2_without_phase1_is_rejected() {
    let data = micro_dataset(8);
    let mut run = TrainRun::new(micro_arch(), micro_config(10, 10)).unwrap();
    let mut log = MetricLog::in_memory();
    let err = run.run_phase2(&data, &mut log, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn stochastic_path_fits_better_than_the_blind_path_after_phase1() {
    // Same-norm comparison of the two paths at the end of phase 1: the
    // render given the encoded true residual must beat the zero-latent
    // render in mean absolute error on a training batch.
    let data = micro_dataset(32);
    let mut cfg = micro_config(400, 0);
    cfg.lambda = 2.0;
    cfg.lr_phase1 = 5e-4;
    let mut run = TrainRun::new(micro_arch(), cfg).unwrap();
    let mut log = MetricLog::in_memory();
    run.run_phase1(&data, &mut log, None).unwrap();

    let mut ev = stochsr_core::infer::Evaluator::new(
        run.models.clone(),
        run.theta.clone(),
        Some(run.phi.clone()),
        None,
    );
    let (mut l1_d, mut l1_s) = (0.0f64, 0.0f64);
    for pair in data.pairs.iter().take(16) {
        let x1 = stochsr_core::infer::stack(&[&pair.x]).unwrap();
        let d = stochsr_core::infer::unstack(&ev.render_deterministic(&x1).unwrap(), 0);
        let r = Tensor::from_fn(pair.y.shape().to_vec(), |i| {
            pair.y.data()[i] - d.data()[i]
        });
        let (mu, _) = ev
            .encode_residual(&stochsr_core::infer::stack(&[&r]).unwrap())
            .unwrap();
        let s = stochsr_core::infer::unstack(&ev.render(&x1, &mu).unwrap(), 0);
        let l1 = |a: &Tensor<f32>, b: &Tensor<f32>| -> f64 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&p, &q)| (p as f64 - q as f64).abs())
                .sum()
        };
        l1_d += l1(&d, &pair.y);
        l1_s += l1(&s, &pair.y);
    }
    assert!(
        l1_s < l1_d,
        "stochastic path L1 {l1_s} not below deterministic {l1_d}"
    );
}

#[test]
fn resume_reproduces_the_uninterrupted_metric_trace() {
    let data = micro_dataset(16);

    let mut full = TrainRun::new(micro_arch(), micro_config(40, 20)).unwrap();
    let mut full_log = MetricLog::in_memory();
    full.run_phase1(&data, &mut full_log, None).unwrap();
    full.run_phase2(&data, &mut full_log, None).unwrap();

    let mut first = TrainRun::new(micro_arch(), micro_config(20, 0)).unwrap();
    let mut first_log = MetricLog::in_memory();
    first.run_phase1(&data, &mut first_log, None).unwrap();
    let bytes = first.to_checkpoint().to_bytes();

    let restored = Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = TrainRun::resume(restored, micro_config(40, 20)).unwrap();
    let mut resumed_log = MetricLog::in_memory();
    resumed.run_phase1(&data, &mut resumed_log, None).unwrap();
    resumed.run_phase2(&data, &mut resumed_log, None).unwrap();

    let mut expected = first_log.trace();
    expected.extend(resumed_log.trace());
    assert_eq!(expected, full_log.trace());
    assert_eq!(full.theta, resumed.theta);
    assert_eq!(full.omega, resumed.omega);
}

#[test]
fn nan_parameter_aborts_with_the_offending_step() {
    let data = micro_dataset(8);
    let mut run = TrainRun::new(micro_arch(), micro_config(10, 0)).unwrap();
    let poisoned = {
        let mut t = run.theta.get("enc.in.conv.w").unwrap().clone();
        t.data_mut()[0] = f32::NAN;
        t
    };
    run.theta.set("enc.in.conv.w", poisoned).unwrap();
    let mut log = MetricLog::in_memory();
    let err = run.run_phase1(&data, &mut log, None).unwrap_err();
    match err {
        Error::NumericalAbort { phase, step, .. } => {
            assert_eq!(phase, 1);
            assert_eq!(step, 1);
        }
        other => panic!("expected a numerical abort, got {other}"),
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let data = micro_dataset(8);
    let mut run = TrainRun::new(micro_arch(), micro_config(6, 4)).unwrap();
    let mut log = MetricLog::in_memory();
    run.run_phase1(&data, &mut log, None).unwrap();
    run.run_phase2(&data, &mut log, None).unwrap();

    let ckpt = run.to_checkpoint();
    let bytes = ckpt.to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ckpt, loaded);
    assert_eq!(bytes, loaded.to_bytes());
    // inspect(save(load(c))) matches inspect(c).
    assert_eq!(inspect(&bytes).unwrap(), inspect(&loaded.to_bytes()).unwrap());
}

#[test]
fn truncated_checkpoint_is_rejected_before_decoding() {
    let run = TrainRun::new(micro_arch(), micro_config(0, 0)).unwrap();
    let bytes = run.to_checkpoint().to_bytes();
    let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 7]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("byte") && msg.contains("declares"), "{msg}");

    let err = Checkpoint::from_bytes(&bytes[..20]).unwrap_err();
    assert!(err.to_string().contains("manifest"), "{err}");
}

#[test]
fn missing_magic_is_rejected_at_offset_zero() {
    let err = Checkpoint::from_bytes(b"NOPE whatever").unwrap_err();
    assert!(err.to_string().contains("SSRC"), "{err}");
}

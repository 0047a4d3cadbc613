//! Deeper look at why the stochastic path may lag the deterministic one:
//! train-mode vs eval-mode renders, branch signal magnitudes, and latent
//! statistics after a short phase-1 run.

use stochsr_core::config::ArchConfig;
use stochsr_core::data::synthesize_dataset;
use stochsr_core::eval::{psnr, PEAK_INTERNAL};
use stochsr_core::infer::{stack, unstack, Evaluator};
use stochsr_core::models::{forward_seq, StatBank};
use stochsr_core::train::{MetricLog, TrainConfig, TrainRun};
use stochsr_tensor::{BnMode, Tape, Tensor};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps1: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1000);
    let lambda: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2.5e-4);
    let scale: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(4);

    let arch = ArchConfig::toy(scale);
    let train = synthesize_dataset(11, 512, 32, scale).unwrap();
    let cfg = TrainConfig {
        steps_phase1: steps1,
        steps_phase2: 0,
        lambda,
        lr_phase1: lr,
        log_interval: 200,
        early_stop: false,
        ..TrainConfig::default()
    };
    let mut run = TrainRun::new(arch, cfg).unwrap();
    let mut log = MetricLog::in_memory();
    run.run_phase1(&train, &mut log, None).unwrap();
    for l in &log.lines {
        println!("{}", l.to_line());
    }

    let mut ev = Evaluator::new(
        run.models.clone(),
        run.theta.clone(),
        Some(run.phi.clone()),
        None,
    );

    // Eval-mode D and S over 32 training samples.
    let n = 32;
    let (mut d_eval, mut s_eval) = (0.0, 0.0);
    let mut mu_abs = 0.0f64;
    let mut mu_sat = 0usize;
    let mut lv_mean = 0.0f64;
    let mut mu_count = 0usize;
    for pair in train.pairs.iter().take(n) {
        let x1 = stack(&[&pair.x]).unwrap();
        let d = unstack(&ev.render_deterministic(&x1).unwrap(), 0);
        let r = Tensor::from_fn(pair.y.shape().to_vec(), |i| pair.y.data()[i] - d.data()[i]);
        let (mu, lv) = ev.encode_residual(&stack(&[&r]).unwrap()).unwrap();
        for &v in mu.data() {
            mu_abs += v.abs() as f64;
            if v.abs() > 0.95 {
                mu_sat += 1;
            }
        }
        for &v in lv.data() {
            lv_mean += v as f64;
        }
        mu_count += mu.numel();
        let s = unstack(&ev.render(&x1, &mu).unwrap(), 0);
        d_eval += psnr(&d, &pair.y, PEAK_INTERNAL).unwrap();
        s_eval += psnr(&s, &pair.y, PEAK_INTERNAL).unwrap();
    }
    println!(
        "eval-mode:  D {:.2}  S(mu) {:.2}  gap {:+.2}",
        d_eval / n as f64,
        s_eval / n as f64,
        (s_eval - d_eval) / n as f64
    );
    println!(
        "mu_res: mean|mu| {:.3}  saturated {:.1}%  mean log_var {:.3}",
        mu_abs / mu_count as f64,
        100.0 * mu_sat as f64 / mu_count as f64,
        lv_mean / mu_count as f64
    );

    // Train-mode D and S over one batch of 16 (batch statistics).
    {
        let xs: Vec<&Tensor<f32>> = train.pairs[..16].iter().map(|p| &p.x).collect();
        let ys: Vec<&Tensor<f32>> = train.pairs[..16].iter().map(|p| &p.y).collect();
        let bx = stack(&xs).unwrap();
        let by = stack(&ys).unwrap();
        let mut theta = run.theta.clone();
        let mut phi = run.phi.clone();
        let models = &run.models;

        let mut tape = Tape::new();
        let tb = theta.bind(&mut tape, false);
        let pb = phi.bind(&mut tape, false);
        let xv = tape.constant(bx.clone());
        let z0 = tape.constant(Tensor::zeros(vec![16, 16, 4, 4]));
        let d_t = models
            .forward_sr(&mut tape, &tb, &mut theta, xv, z0, BnMode::Train, StatBank::Det)
            .unwrap();
        let d_train = tape.value(d_t).clone();
        let r = Tensor::from_fn(by.shape().to_vec(), |i| by.data()[i] - d_train.data()[i]);
        let rv = tape.constant(r);
        let g = models
            .forward_ren(&mut tape, &pb, &mut phi, rv, BnMode::Train)
            .unwrap();
        let mu_t = tape.value(g.mu).clone();
        let zv = tape.constant(mu_t);
        let s_t = models
            .forward_sr(&mut tape, &tb, &mut theta, xv, zv, BnMode::Train, StatBank::Sto)
            .unwrap();
        let s_train = tape.value(s_t).clone();
        let (mut dp, mut sp) = (0.0, 0.0);
        for i in 0..16 {
            dp += psnr(&unstack(&d_train, i), ys[i], PEAK_INTERNAL).unwrap();
            sp += psnr(&unstack(&s_train, i), ys[i], PEAK_INTERNAL).unwrap();
        }
        println!(
            "train-mode: D {:.2}  S(mu) {:.2}  gap {:+.2}",
            dp / 16.0,
            sp / 16.0,
            (sp - dp) / 16.0
        );
    }

    // Branch signal magnitude vs encoder features (eval mode).
    {
        let pair = &train.pairs[0];
        let x1 = stack(&[&pair.x]).unwrap();
        let d = unstack(&ev.render_deterministic(&x1).unwrap(), 0);
        let r = Tensor::from_fn(pair.y.shape().to_vec(), |i| pair.y.data()[i] - d.data()[i]);
        let (mu, _) = ev.encode_residual(&stack(&[&r]).unwrap()).unwrap();

        let mut theta = run.theta.clone();
        let models = &run.models;
        let mut tape = Tape::new();
        let bind = theta.bind(&mut tape, false);
        let xv = tape.constant(x1.clone());
        let enc = forward_seq(&mut tape, &models.sr.enc, &bind, &mut theta, xv, BnMode::Eval, StatBank::Sto)
            .unwrap();
        let z0 = tape.constant(Tensor::zeros(vec![1, 16, 4, 4]));
        let b0 = forward_seq(&mut tape, &models.sr.branch, &bind, &mut theta, z0, BnMode::Eval, StatBank::Det)
            .unwrap();
        let zm = tape.constant(mu.clone());
        let bm = forward_seq(&mut tape, &models.sr.branch, &bind, &mut theta, zm, BnMode::Eval, StatBank::Sto)
            .unwrap();
        let rms = |t: &Tensor<f32>| {
            (t.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / t.numel() as f64)
                .sqrt()
        };
        let enc_v = tape.value(enc).clone();
        let b0_v = tape.value(b0).clone();
        let bm_v = tape.value(bm).clone();
        let diff = Tensor::from_fn(b0_v.shape().to_vec(), |i| bm_v.data()[i] - b0_v.data()[i]);
        println!(
            "rms: enc {:.3}  branch(0) {:.3}  branch(mu) {:.3}  branch delta {:.3}",
            rms(&enc_v),
            rms(&b0_v),
            rms(&bm_v),
            rms(&diff)
        );
    }
}

//! Training-curve probe: how fast the stochastic path overtakes the
//! deterministic one (phase 1) and whether the predictor-mean render beats
//! the deterministic baseline after phase 2.

use std::time::Instant;

use stochsr_core::config::ArchConfig;
use stochsr_core::data::synthesize_dataset;
use stochsr_core::eval::{benchmark_split, psnr, PEAK_INTERNAL};
use stochsr_core::infer::{stack, unstack, Evaluator};
use stochsr_core::train::{MetricLog, TrainConfig, TrainRun};
use stochsr_tensor::Tensor;

fn s_vs_d_gap(run: &TrainRun, xs: &[&Tensor<f32>], ys: &[&Tensor<f32>]) -> (f64, f64) {
    let mut ev = Evaluator::new(
        run.models.clone(),
        run.theta.clone(),
        Some(run.phi.clone()),
        None,
    );
    let (mut d_sum, mut s_sum) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let x1 = stack(&[x]).unwrap();
        let d = unstack(&ev.render_deterministic(&x1).unwrap(), 0);
        let r = Tensor::from_fn(y.shape().to_vec(), |i| y.data()[i] - d.data()[i]);
        let (mu, _) = ev.encode_residual(&stack(&[&r]).unwrap()).unwrap();
        let s = unstack(&ev.render(&x1, &mu).unwrap(), 0);
        d_sum += psnr(&d, y, PEAK_INTERNAL).unwrap();
        s_sum += psnr(&s, y, PEAK_INTERNAL).unwrap();
    }
    (d_sum / xs.len() as f64, s_sum / xs.len() as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scale: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4);
    let steps1: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1500);
    let steps2: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(800);
    let lambda: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1.0);

    let arch = ArchConfig::toy(scale);
    let train = synthesize_dataset(11, 512, 32, scale).unwrap();
    let held = synthesize_dataset(12, 64, 32, scale).unwrap();
    let cfg = TrainConfig {
        steps_phase1: steps1,
        steps_phase2: steps2,
        lambda,
        log_interval: 9999,
        early_stop: false,
        ..TrainConfig::default()
    };
    let mut run = TrainRun::new(arch, cfg).unwrap();
    let mut log = MetricLog::in_memory();

    let xs: Vec<&Tensor<f32>> = train.pairs[..64].iter().map(|p| &p.x).collect();
    let ys: Vec<&Tensor<f32>>= train.pairs[..64].iter().map(|p| &p.y).collect();

    let t0 = Instant::now();
    let chunk = 250u64;
    let mut done = 0u64;
    while done < steps1 {
        run.cfg.steps_phase1 = (done + chunk).min(steps1);
        run.run_phase1(&train, &mut log, None).unwrap();
        done = run.phase1_step;
        let (d, s) = s_vs_d_gap(&run, &xs, &ys);
        println!(
            "[{:6.0}s] phase1 step {done}: PSNR(D,T)={d:.2}  PSNR(S,T)={s:.2}  gap={:+.2} dB",
            t0.elapsed().as_secs_f64(),
            s - d
        );
    }

    run.run_phase2(&train, &mut log, None).unwrap();
    println!("[{:6.0}s] phase2 done ({} steps)", t0.elapsed().as_secs_f64(), run.phase2_step);

    let mut ev = Evaluator::new(
        run.models.clone(),
        run.theta.clone(),
        Some(run.phi.clone()),
        Some(run.omega.clone()),
    );
    let mut records = Vec::new();
    let cols = benchmark_split(Some(&mut ev), &held, PEAK_INTERNAL, &mut records).unwrap();
    println!(
        "held-out: bicubic {:.2}/{:.4}  det {:.2}/{:.4}  icap-mean {:.2}/{:.4}  ssim gap {:+.5}",
        cols.bicubic.0,
        cols.bicubic.1,
        cols.deterministic.unwrap().0,
        cols.deterministic.unwrap().1,
        cols.icap_mean.unwrap().0,
        cols.icap_mean.unwrap().1,
        cols.ssim_gap.unwrap()
    );

    // Mean-vs-3-draws tendency and best-of-n trend on a few samples.
    let mut mean_wins = 0usize;
    let mut strict_up = 0usize;
    for (id, pair) in held.pairs.iter().enumerate().take(64) {
        let study =
            stochsr_core::eval::best_of_n(&mut ev, &pair.x, &pair.y, &[1, 10, 100], 99, id, PEAK_INTERNAL)
                .unwrap();
        // Actual average PSNR of three independent draws.
        let x1 = stack(&[&pair.x]).unwrap();
        let (mu, lv) = ev.predict(&x1).unwrap();
        let mut rng = stochsr_core::eval::sample_stream(77, id as u64, 1);
        let mut acc = 0.0;
        for _ in 0..3 {
            let z = stochsr_core::infer::sample_latent(&mu, &lv, &mut rng);
            let img = unstack(&ev.render(&x1, &z).unwrap(), 0);
            acc += psnr(&img, &pair.y, PEAK_INTERNAL).unwrap();
        }
        let avg3 = acc / 3.0;
        if study.mean_psnr_db > avg3 {
            mean_wins += 1;
        }
        if study.rows[2].psnr_db > study.rows[0].psnr_db {
            strict_up += 1;
        }
        if id == 15 {
            println!(
                "sample {id}: mean {:.2}  n1 {:.2}  n10 {:.2}  n100 {:.2}",
                study.mean_psnr_db, study.rows[0].psnr_db, study.rows[1].psnr_db, study.rows[2].psnr_db
            );
        }
    }
    println!("mean beats avg-of-3 on {mean_wins}/64; best strictly rises 1->100 on {strict_up}/64");
}

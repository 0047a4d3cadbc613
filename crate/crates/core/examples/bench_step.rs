use std::time::Instant;
use stochsr_core::config::ArchConfig;
use stochsr_core::data::synthesize_dataset;
use stochsr_core::train::{MetricLog, TrainConfig, TrainRun};

fn main() {
    let arch = ArchConfig::toy(4);
    let data = synthesize_dataset(1, 64, 32, 4).unwrap();
    let cfg = TrainConfig {
        steps_phase1: 30,
        steps_phase2: 30,
        batch_size: 16,
        log_interval: 1000,
        early_stop: false,
        ..TrainConfig::default()
    };
    let mut run = TrainRun::new(arch, cfg).unwrap();
    let mut log = MetricLog::in_memory();
    let t = Instant::now();
    run.run_phase1(&data, &mut log, None).unwrap();
    let p1 = t.elapsed().as_secs_f64() / 30.0;
    let t = Instant::now();
    run.run_phase2(&data, &mut log, None).unwrap();
    let p2 = t.elapsed().as_secs_f64() / 30.0;
    println!("phase1: {:.1} ms/step   phase2: {:.1} ms/step (batch 16)", p1 * 1e3, p2 * 1e3);
}

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use stochsr_core::data::{self, DatasetManifest};
use stochsr_core::eval::{self, PEAK_INTERNAL};
use stochsr_core::infer::{sample_latent, stack, unstack, Evaluator};
use stochsr_core::train::{self, Checkpoint, MetricLog, TrainRun};
use stochsr_core::{Error, Result};

use crate::config::RunConfig;
use crate::{Phase, Study};

pub fn gen_data(
    out: &Path,
    seed: u64,
    count: usize,
    size: usize,
    scale: usize,
    split: &str,
) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("--count must be >= 1".into()));
    }
    let manifest_path = data::generate_dataset(out, seed, count, size, scale, split)?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    println!("wrote {}", manifest_path.display());
    println!("checksum {}", manifest.checksum());
    Ok(())
}

fn load_evaluator(path: &Path) -> Result<(Checkpoint, Evaluator)> {
    let ckpt = Checkpoint::load(path)?;
    let (models, _, _, _) =
        stochsr_core::models::build_models(&ckpt.arch, ckpt.build_seed)?;
    let ev = Evaluator::new(
        models,
        ckpt.theta.clone(),
        Some(ckpt.phi.clone()),
        ckpt.omega.clone(),
    );
    Ok((ckpt, ev))
}

pub fn train(
    config: Option<&Path>,
    sets: &[String],
    phase: Phase,
    data_flag: Option<PathBuf>,
    out_flag: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(config, sets)?;
    if let Some(d) = data_flag {
        cfg.data = Some(d.display().to_string());
    }
    if let Some(o) = out_flag {
        cfg.out_dir = o.display().to_string();
    }
    let manifest = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set data= in the config".into()))?;
    let dataset = data::load_dataset(&manifest)?;

    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    fs::write(out_dir.join("resolved.config"), cfg.to_text())
        .map_err(|e| Error::io("resolved.config", e))?;

    let mut run = match &resume {
        Some(path) => TrainRun::resume(Checkpoint::load(path)?, cfg.train.clone())?,
        None => {
            if phase == Phase::Two {
                // Phase 2 alone only makes sense on top of trained phase-1
                // parameters.
                let latest = out_dir.join("latest.ssrc");
                if latest.exists() {
                    TrainRun::resume(Checkpoint::load(&latest)?, cfg.train.clone())?
                } else {
                    return Err(Error::Config(
                        "--phase 2 requires a phase-1 checkpoint (pass --resume or train phase 1 into the same --out first)"
                            .into(),
                    ));
                }
            } else {
                TrainRun::new(cfg.arch, cfg.train.clone())?
            }
        }
    };

    let mut log = MetricLog::with_file(out_dir.join("metrics.log"), cfg.echo_metrics)?;
    if matches!(phase, Phase::One | Phase::All) {
        run.run_phase1(&dataset, &mut log, Some(&out_dir))?;
    }
    if matches!(phase, Phase::Two | Phase::All) {
        run.run_phase2(&dataset, &mut log, Some(&out_dir))?;
    }
    let final_path = out_dir.join("final.ssrc");
    run.to_checkpoint().save(&final_path)?;
    println!("checkpoint {}", final_path.display());
    Ok(())
}

pub fn infer(
    checkpoint: &Path,
    input: &Path,
    mode: &str,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let (ckpt, mut ev) = load_evaluator(checkpoint)?;
    let x = data::read_image(input)?;
    let expected = vec![
        ckpt.arch.color_channels,
        ckpt.arch.image_size,
        ckpt.arch.image_size,
    ];
    if x.shape() != expected.as_slice() {
        return Err(Error::Data(format!(
            "{} decodes to {:?}, the checkpoint expects {:?}",
            input.display(),
            x.shape(),
            expected
        )));
    }
    let x1 = stack(&[&x])?;

    match mode {
        "deterministic" => {
            let img = unstack(&ev.render_deterministic(&x1)?, 0);
            data::write_image(&img, out)?;
            println!("wrote {}", out.display());
        }
        "mean" => {
            let (mu, _) = ev.predict(&x1)?;
            let img = unstack(&ev.render(&x1, &mu)?, 0);
            data::write_image(&img, out)?;
            println!("wrote {}", out.display());
        }
        _ => {
            let k: usize = mode
                .strip_prefix("sample:")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "--mode must be mean, deterministic or sample:K, got `{mode}`"
                    ))
                })?;
            let (mu, log_var) = ev.predict(&x1)?;
            let mut rng = eval::sample_stream(seed, 0, 0x494e);
            let stem = out.with_extension("");
            for i in 0..k {
                let z = sample_latent(&mu, &log_var, &mut rng);
                let img = unstack(&ev.render(&x1, &z)?, 0);
                let path = PathBuf::from(format!("{}_{i}.ppm", stem.display()));
                data::write_image(&img, &path)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    checkpoints: &[PathBuf],
    manifests: &[PathBuf],
    study: Study,
    out: &Path,
    bicubic_only: bool,
    samples: usize,
    steps: usize,
    draws: &str,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;

    if study == Study::Benchmark {
        // One row per split; checkpoints pair with splits positionally (a
        // single checkpoint serves every split, none means bicubic only).
        if !bicubic_only
            && checkpoints.len() > 1
            && checkpoints.len() != manifests.len()
        {
            return Err(Error::Config(format!(
                "{} --data splits need 0, 1 or {} --checkpoint flags, got {}",
                manifests.len(),
                manifests.len(),
                checkpoints.len()
            )));
        }
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for (i, manifest) in manifests.iter().enumerate() {
            let dataset = data::load_dataset(manifest)?;
            let mut ev = match (bicubic_only, checkpoints.len()) {
                (true, _) | (false, 0) => None,
                (false, 1) => Some(load_evaluator(&checkpoints[0])?.1),
                (false, _) => Some(load_evaluator(&checkpoints[i])?.1),
            };
            if !bicubic_only && checkpoints.is_empty() {
                return Err(Error::Config(
                    "benchmark needs --checkpoint (or pass --bicubic-only)".into(),
                ));
            }
            rows.push(eval::benchmark_split(
                ev.as_mut(),
                &dataset,
                PEAK_INTERNAL,
                &mut records,
            )?);
        }
        let table = eval::format_benchmark(&rows);
        print!("{table}");
        fs::write(out.join("benchmark.txt"), &table)
            .map_err(|e| Error::io("benchmark.txt", e))?;
        write_records(&out.join("records.jsonl"), &records)?;
        return Ok(());
    }

    let manifest = manifests
        .first()
        .ok_or_else(|| Error::Config("this study needs exactly one --data".into()))?;
    let dataset = data::load_dataset(manifest)?;
    let mut ev = match checkpoints.first() {
        Some(path) => Some(load_evaluator(path)?.1),
        None => {
            return Err(Error::Config(
                "this study needs --checkpoint".into(),
            ))
        }
    };

    match study {
        Study::Benchmark => unreachable!("handled above"),
        Study::Sampling => {
            let ev = ev
                .as_mut()
                .ok_or_else(|| Error::Config("sampling study needs --checkpoint".into()))?;
            let ns: Vec<usize> = draws
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad draw count `{s}`")))
                })
                .collect::<Result<_>>()?;
            let mut lines = String::new();
            let mut agg_mean = 0.0;
            let mut agg_rows = vec![(0.0f64, 0.0f64); ns.len()];
            let count = dataset.pairs.len();
            for (id, pair) in dataset.pairs.iter().enumerate() {
                let study =
                    eval::best_of_n(ev, &pair.x, &pair.y, &ns, seed, id, PEAK_INTERNAL)?;
                agg_mean += study.mean_psnr_db;
                for (slot, row) in agg_rows.iter_mut().zip(&study.rows) {
                    slot.0 += row.psnr_db;
                    slot.1 += row.ssim;
                }
                lines.push_str(&serde_json::to_string(&serde_json::json!({
                    "sample_id": id,
                    "mean_psnr_db": study.mean_psnr_db,
                    "mean_ssim": study.mean_ssim,
                    "rows": study.rows.iter().map(|r| serde_json::json!({
                        "n": r.n, "psnr_db": r.psnr_db, "ssim": r.ssim
                    })).collect::<Vec<_>>(),
                })).expect("json"));
                lines.push('\n');
            }
            fs::write(out.join("sampling.jsonl"), &lines)
                .map_err(|e| Error::io("sampling.jsonl", e))?;
            println!("mean-latent baseline: {:.4} dB", agg_mean / count as f64);
            for (i, n) in ns.iter().enumerate() {
                println!(
                    "best of n={n:<5} {:.4} dB / {:.4} ssim",
                    agg_rows[i].0 / count as f64,
                    agg_rows[i].1 / count as f64
                );
            }
        }
        Study::Traversal => {
            let ev = ev
                .as_mut()
                .ok_or_else(|| Error::Config("traversal study needs --checkpoint".into()))?;
            let mut meta = String::new();
            for (id, pair) in dataset.pairs.iter().take(samples).enumerate() {
                let tr = eval::traverse(ev, &pair.x, steps, seed, id)?;
                let dir = out.join(format!("{id:05}"));
                fs::create_dir_all(&dir)
                    .map_err(|e| Error::io(dir.display().to_string(), e))?;
                for (i, frame) in tr.frames.iter().enumerate() {
                    data::write_image(frame, dir.join(format!("frame_{i:02}.ppm")))?;
                }
                meta.push_str(&serde_json::to_string(&serde_json::json!({
                    "sample_id": id,
                    "steps": steps,
                    "consecutive_l2": tr.consecutive_l2,
                    "endpoint_l2": tr.endpoint_l2,
                    "max_pixel_jump": tr.max_pixel_jump,
                })).expect("json"));
                meta.push('\n');
            }
            fs::write(out.join("traversal.jsonl"), &meta)
                .map_err(|e| Error::io("traversal.jsonl", e))?;
            println!("wrote {} traversals under {}", samples.min(dataset.pairs.len()), out.display());
        }
        Study::Residual => {
            let ev = ev
                .as_mut()
                .ok_or_else(|| Error::Config("residual study needs --checkpoint".into()))?;
            let mut lines = String::new();
            for (id, pair) in dataset.pairs.iter().take(samples).enumerate() {
                let report =
                    eval::residual_report(ev, &pair.x, &pair.y, out, id, seed, PEAK_INTERNAL)?;
                println!(
                    "sample {id}: PSNR(D,T) {:.2}  PSNR(S,T) {:.2}  |T-D| {:.3}  |T-S| {:.3}",
                    report.psnr_d, report.psnr_s, report.l2_td, report.l2_ts
                );
                lines.push_str(&serde_json::to_string(&serde_json::json!({
                    "sample_id": id,
                    "psnr_d": report.psnr_d,
                    "psnr_s": report.psnr_s,
                    "psnr_s_mean": report.psnr_s_mean,
                    "l2_td": report.l2_td,
                    "l2_ts": report.l2_ts,
                    "l2_ts_mean": report.l2_ts_mean,
                })).expect("json"));
                lines.push('\n');
            }
            fs::write(out.join("residual.jsonl"), &lines)
                .map_err(|e| Error::io("residual.jsonl", e))?;
        }
    }
    Ok(())
}

fn write_records(path: &Path, records: &[eval::MetricRecord]) -> Result<()> {
    let mut file =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Data(format!("record serialization: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn inspect(checkpoint: &Path) -> Result<()> {
    let bytes = fs::read(checkpoint)
        .map_err(|e| Error::io(checkpoint.display().to_string(), e))?;
    let report = train::inspect(&bytes)?;
    print!("{report}");
    Ok(())
}

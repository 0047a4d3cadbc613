//! Two-phase training procedure: phase 1 jointly fits the SR
//! encoder-decoder and the residual encoder; phase 2 freezes both and fits
//! the input-conditional predictor by KL matching.

mod adam;
mod checkpoint;
mod loss;
mod metrics;

pub use adam::{adam_step, AdamHyper, AdamOutcome, AdamState};
pub use checkpoint::{
    inspect, Checkpoint, InspectEntry, InspectReport, RngSnapshot, TrainMeta, MAGIC, VERSION,
};
pub use loss::{
    loss_deterministic, loss_phase1, loss_phase2, loss_stochastic, stochastic_term, Phase1Parts,
};
pub use metrics::{MetricLine, MetricLog, PhaseMetric};

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stochsr_tensor::{BnMode, Tensor};

use crate::config::ArchConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::infer::draw_normal;
use crate::models::{build_models, Models, StatBank};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    /// Weight on the stochastic-path L1 term in phase 1.
    pub lambda: f64,
    pub batch_size: usize,
    pub steps_phase1: u64,
    pub steps_phase2: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Detach the deterministic render inside the residual definition.
    pub detach_residual: bool,
    /// Average the KL over latent elements instead of summing them.
    pub kl_mean_over_latent: bool,
    pub log_interval: u64,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Stop a phase early when the 500-step loss average improves by less
    /// than 1e-4 relative over the previous 500 steps.
    pub early_stop: bool,
    /// Batches used to re-estimate batch-norm running statistics over the
    /// frozen network at the end of each phase; 0 disables calibration.
    pub bn_calibration_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_phase1: 2.5e-4,
            lr_phase2: 5e-3,
            lambda: 1.0,
            batch_size: 16,
            steps_phase1: 2000,
            steps_phase2: 1000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            detach_residual: true,
            kl_mean_over_latent: false,
            log_interval: 50,
            checkpoint_interval: 0,
            early_stop: true,
            bn_calibration_batches: 32,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn meta(&self) -> TrainMeta {
        TrainMeta {
            lambda: self.lambda as f32,
            lr_phase1: self.lr_phase1 as f32,
            lr_phase2: self.lr_phase2 as f32,
            batch_size: self.batch_size as u32,
            detach_residual: self.detach_residual,
            kl_mean_over_latent: self.kl_mean_over_latent,
            seed: self.seed,
        }
    }
}

const EARLY_STOP_WINDOW: usize = 500;
const EARLY_STOP_REL_IMPROVEMENT: f64 = 1e-4;

/// All mutable state of one training run. Construct fresh from a config or
/// resume from a checkpoint; both paths give the same downstream stream.
pub struct TrainRun {
    pub arch: ArchConfig,
    pub cfg: TrainConfig,
    pub models: Models,
    pub theta: ParamSet<f32>,
    pub phi: ParamSet<f32>,
    pub omega: ParamSet<f32>,
    pub adam_theta: AdamState,
    pub adam_phi: AdamState,
    pub adam_omega: AdamState,
    pub phase1_step: u64,
    pub phase2_step: u64,
    rng: ChaCha8Rng,
}

impl TrainRun {
    pub fn new(arch: ArchConfig, cfg: TrainConfig) -> Result<Self> {
        let (models, theta, phi, omega) = build_models(&arch, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1); // stream 0 belongs to parameter initialization
        Ok(TrainRun {
            arch,
            cfg,
            models,
            theta,
            phi,
            omega,
            adam_theta: AdamState::new(),
            adam_phi: AdamState::new(),
            adam_omega: AdamState::new(),
            phase1_step: 0,
            phase2_step: 0,
            rng,
        })
    }

    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let (models, _, _, built_omega) = build_models(&ckpt.arch, ckpt.build_seed)?;
        let rng = match &ckpt.rng {
            Some(snap) => snap.restore(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(1);
                rng
            }
        };
        Ok(TrainRun {
            arch: ckpt.arch,
            cfg,
            models,
            theta: ckpt.theta,
            phi: ckpt.phi,
            // A phase-1-only checkpoint has no omega; rebuild it from the
            // stored build seed so phase 2 starts deterministically.
            omega: ckpt.omega.unwrap_or(built_omega),
            adam_theta: ckpt.adam_theta.unwrap_or_default(),
            adam_phi: ckpt.adam_phi.unwrap_or_default(),
            adam_omega: ckpt.adam_omega.unwrap_or_default(),
            phase1_step: ckpt.phase1_step,
            phase2_step: ckpt.phase2_step,
            rng,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            arch: self.arch,
            build_seed: self.cfg.seed,
            meta: self.cfg.meta(),
            phase1_step: self.phase1_step,
            phase2_step: self.phase2_step,
            theta: self.theta.clone(),
            phi: self.phi.clone(),
            omega: (self.phase2_step > 0).then(|| self.omega.clone()),
            adam_theta: Some(self.adam_theta.clone()),
            adam_phi: Some(self.adam_phi.clone()),
            adam_omega: (self.phase2_step > 0).then(|| self.adam_omega.clone()),
            rng: Some(RngSnapshot::capture(&self.rng)),
        }
    }

    fn draw_batch(&mut self, data: &Dataset) -> (Tensor<f32>, Tensor<f32>) {
        draw_batch_with(&mut self.rng, data, self.cfg.batch_size)
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.pairs.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let expected = vec![
            self.arch.color_channels,
            self.arch.image_size,
            self.arch.image_size,
        ];
        if data.pairs[0].x.shape() != expected.as_slice() {
            return Err(Error::Data(format!(
                "dataset samples are {:?}, model expects {:?}",
                data.pairs[0].x.shape(),
                expected
            )));
        }
        Ok(())
    }

    /// Updates theta and phi against the phase-1 loss until the step budget
    /// or a loss plateau. Checkpoints land in `ckpt_dir` as latest.ssrc.
    pub fn run_phase1(
        &mut self,
        data: &Dataset,
        log: &mut MetricLog,
        ckpt_dir: Option<&Path>,
    ) -> Result<()> {
        self.check_dataset(data)?;
        let start = Instant::now();
        let mut history: Vec<f64> = Vec::new();
        let budget = self.cfg.steps_phase1;
        while self.phase1_step < budget {
            let step = self.phase1_step + 1;
            let (bx, by) = self.draw_batch(data);
            let batch = bx.shape()[0];
            let eps = draw_normal(&mut self.rng, self.arch.latent_shape(batch));

            let abort = |e: Error| match e {
                Error::Tensor(t) => Error::NumericalAbort {
                    phase: 1,
                    step,
                    reason: t.to_string(),
                },
                other => other,
            };
            let mut tape = stochsr_tensor::Tape::new();
            let theta_bind = self.theta.bind(&mut tape, true);
            let phi_bind = self.phi.bind(&mut tape, true);
            let x = tape.constant(bx);
            let y = tape.constant(by);
            let eps = tape.constant(eps);
            let parts = loss_phase1(
                &mut tape,
                &self.models,
                &theta_bind,
                &mut self.theta,
                &phi_bind,
                &mut self.phi,
                x,
                y,
                eps,
                self.cfg.lambda,
                self.cfg.detach_residual,
                BnMode::Train,
            )
            .map_err(abort)?;
            let total = tape.value(parts.total).item() as f64;
            let l_d = tape.value(parts.l_d).item() as f64;
            let l_s = tape.value(parts.l_s).item() as f64;
            if !total.is_finite() {
                return Err(Error::NumericalAbort {
                    phase: 1,
                    step,
                    reason: format!("loss is {total}"),
                });
            }
            tape.backward(parts.total).map_err(|e| abort(Error::Tensor(e)))?;

            let hyper = self.cfg.hyper();
            let grads_theta = theta_bind.grads(&tape);
            let grads_phi = phi_bind.grads(&tape);
            drop(tape);
            adam_step(
                &mut self.theta,
                &grads_theta,
                &mut self.adam_theta,
                &hyper,
                self.cfg.lr_phase1,
            )?;
            adam_step(
                &mut self.phi,
                &grads_phi,
                &mut self.adam_phi,
                &hyper,
                self.cfg.lr_phase1,
            )?;
            self.phase1_step = step;
            history.push(total);

            if step % self.cfg.log_interval == 0 || step == budget {
                log.record(
                    PhaseMetric::Phase1 {
                        step,
                        l_d,
                        l_s,
                        total,
                    },
                    start.elapsed().as_secs_f64(),
                );
            }
            if self.cfg.checkpoint_interval > 0
                && step % self.cfg.checkpoint_interval == 0
            {
                if let Some(dir) = ckpt_dir {
                    self.to_checkpoint().save(dir.join("latest.ssrc"))?;
                }
            }
            if self.cfg.early_stop && plateaued(&history) {
                break;
            }
        }
        self.calibrate_phase1_stats(data)?;
        if let Some(dir) = ckpt_dir {
            self.to_checkpoint().save(dir.join("latest.ssrc"))?;
        }
        Ok(())
    }

    /// Re-estimates the running statistics of every batch-norm layer in
    /// theta and phi under the eval-time latent distribution: the zero
    /// latent for the deterministic path and the encoded residual mean for
    /// the stochastic one. Training interleaves a noisy latent with a zero
    /// latent, so the exponential running averages end up matching neither
    /// render; a cumulative sweep over the frozen network does.
    fn calibrate_phase1_stats(&mut self, data: &Dataset) -> Result<()> {
        let batches = self.cfg.bn_calibration_batches;
        if batches == 0 {
            return Ok(());
        }
        for (_, state) in self.theta.iter_bn_mut() {
            state.reset();
        }
        for (_, state) in self.phi.iter_bn_mut() {
            state.reset();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(2); // independent of the training stream
        for _ in 0..batches {
            let (bx, by) = draw_batch_with(&mut rng, data, self.cfg.batch_size);
            let batch = bx.shape()[0];
            let mut tape = stochsr_tensor::Tape::new();
            let theta_bind = self.theta.bind(&mut tape, false);
            let phi_bind = self.phi.bind(&mut tape, false);
            let x = tape.constant(bx);
            let y = tape.constant(by);
            let z0 = tape.constant(Tensor::zeros(self.arch.latent_shape(batch)));
            let y_d = self.models.forward_sr(
                &mut tape,
                &theta_bind,
                &mut self.theta,
                x,
                z0,
                BnMode::Calibrate,
                StatBank::Det,
            )?;
            let r = tape.sub(y, y_d)?;
            let g = self.models.forward_ren(
                &mut tape,
                &phi_bind,
                &mut self.phi,
                r,
                BnMode::Calibrate,
            )?;
            self.models.forward_sr(
                &mut tape,
                &theta_bind,
                &mut self.theta,
                x,
                g.mu,
                BnMode::Calibrate,
                StatBank::Sto,
            )?;
        }
        Ok(())
    }

    /// As phase 1, for the predictor's own normalization layers.
    fn calibrate_phase2_stats(&mut self, data: &Dataset) -> Result<()> {
        let batches = self.cfg.bn_calibration_batches;
        if batches == 0 {
            return Ok(());
        }
        for (_, state) in self.omega.iter_bn_mut() {
            state.reset();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(3);
        for _ in 0..batches {
            let (bx, _) = draw_batch_with(&mut rng, data, self.cfg.batch_size);
            let mut tape = stochsr_tensor::Tape::new();
            let omega_bind = self.omega.bind(&mut tape, false);
            let x = tape.constant(bx);
            self.models.forward_icap(
                &mut tape,
                &omega_bind,
                &mut self.omega,
                x,
                BnMode::Calibrate,
            )?;
        }
        Ok(())
    }

    /// Updates omega against the KL matching loss; theta and phi stay
    /// frozen (gradient-blocked, batch norm in eval mode).
    pub fn run_phase2(
        &mut self,
        data: &Dataset,
        log: &mut MetricLog,
        ckpt_dir: Option<&Path>,
    ) -> Result<()> {
        self.check_dataset(data)?;
        if self.phase1_step == 0 {
            return Err(Error::Config(
                "phase 2 requires phase-1 parameters; train phase 1 first".into(),
            ));
        }
        let start = Instant::now();
        let mut history: Vec<f64> = Vec::new();
        let budget = self.cfg.steps_phase2;
        while self.phase2_step < budget {
            let step = self.phase2_step + 1;
            let (bx, by) = self.draw_batch(data);
            let abort = |e: Error| match e {
                Error::Tensor(t) => Error::NumericalAbort {
                    phase: 2,
                    step,
                    reason: t.to_string(),
                },
                other => other,
            };
            let mut tape = stochsr_tensor::Tape::new();
            let theta_bind = self.theta.bind(&mut tape, false);
            let phi_bind = self.phi.bind(&mut tape, false);
            let omega_bind = self.omega.bind(&mut tape, true);
            let x = tape.constant(bx);
            let y = tape.constant(by);
            let kl = loss_phase2(
                &mut tape,
                &self.models,
                &theta_bind,
                &mut self.theta,
                &phi_bind,
                &mut self.phi,
                &omega_bind,
                &mut self.omega,
                x,
                y,
                self.cfg.kl_mean_over_latent,
            )
            .map_err(abort)?;
            let value = tape.value(kl).item() as f64;
            if !value.is_finite() {
                return Err(Error::NumericalAbort {
                    phase: 2,
                    step,
                    reason: format!("loss is {value}"),
                });
            }
            tape.backward(kl).map_err(|e| abort(Error::Tensor(e)))?;
            let grads = omega_bind.grads(&tape);
            drop(tape);
            adam_step(
                &mut self.omega,
                &grads,
                &mut self.adam_omega,
                &self.cfg.hyper(),
                self.cfg.lr_phase2,
            )?;
            self.phase2_step = step;
            history.push(value);

            if step % self.cfg.log_interval == 0 || step == budget {
                log.record(
                    PhaseMetric::Phase2 { step, kl: value },
                    start.elapsed().as_secs_f64(),
                );
            }
            if self.cfg.checkpoint_interval > 0
                && step % self.cfg.checkpoint_interval == 0
            {
                if let Some(dir) = ckpt_dir {
                    self.to_checkpoint().save(dir.join("latest.ssrc"))?;
                }
            }
            if self.cfg.early_stop && plateaued(&history) {
                break;
            }
        }
        self.calibrate_phase2_stats(data)?;
        if let Some(dir) = ckpt_dir {
            self.to_checkpoint().save(dir.join("latest.ssrc"))?;
        }
        Ok(())
    }
}

fn draw_batch_with(
    rng: &mut ChaCha8Rng,
    data: &Dataset,
    batch_size: usize,
) -> (Tensor<f32>, Tensor<f32>) {
    let n = data.pairs.len();
    let b = batch_size.min(n).max(1);
    let mut xs = Vec::with_capacity(b * data.pairs[0].x.numel());
    let mut ys = Vec::with_capacity(b * data.pairs[0].y.numel());
    for _ in 0..b {
        let idx = rng.gen_range(0..n);
        xs.extend_from_slice(data.pairs[idx].x.data());
        ys.extend_from_slice(data.pairs[idx].y.data());
    }
    let mut shape = vec![b];
    shape.extend_from_slice(data.pairs[0].x.shape());
    (
        Tensor::new(shape.clone(), xs).expect("batch shape"),
        Tensor::new(shape, ys).expect("batch shape"),
    )
}

fn plateaued(history: &[f64]) -> bool {
    let w = EARLY_STOP_WINDOW;
    if history.len() < 2 * w || history.len() % w != 0 {
        return false;
    }
    let recent: f64 = history[history.len() - w..].iter().sum::<f64>() / w as f64;
    let previous: f64 =
        history[history.len() - 2 * w..history.len() - w].iter().sum::<f64>() / w as f64;
    (previous - recent) / previous.abs().max(1e-12) < EARLY_STOP_REL_IMPROVEMENT
}

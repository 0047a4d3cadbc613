use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Record, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    /// Like `Train`, but folds batch statistics into the running state as a
    /// cumulative average (momentum 1/(n+1)) instead of exponential decay.
    /// Used to re-estimate statistics over a frozen network.
    Calibrate,
    Eval,
}

/// Running statistics of a batch-norm layer. Not differentiated; updated
/// in place by train-mode forward passes and read by eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<E> {
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub batches_tracked: u64,
}

impl<E: Element> BnState<E> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], E::one()),
            batches_tracked: 0,
        }
    }

    /// Drops the accumulated statistics ahead of a calibration sweep.
    pub fn reset(&mut self) {
        *self = BnState::new(self.channels());
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }

    pub fn cast<F: Element>(&self) -> BnState<F> {
        BnState {
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            batches_tracked: self.batches_tracked,
        }
    }
}

pub(crate) struct BnRecord<E> {
    pub input: Var,
    pub gamma: Var,
    pub beta: Var,
    pub output: Var,
    pub mode: BnMode,
    /// Normalized input, saved for the adjoint.
    pub xhat: Vec<E>,
    /// Per-channel 1/sqrt(var + eps) used in the forward pass.
    pub inv_std: Vec<E>,
}

impl<E: Element> Tape<E> {
    /// Per-channel normalization over (batch, height, width). Train mode
    /// normalizes by batch statistics (biased variance) and folds them into
    /// the running state with the given momentum; eval mode normalizes by
    /// the stored running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState<E>,
        mode: BnMode,
        momentum: f64,
        epsilon: f64,
    ) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4("batch_norm2d")?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(TensorError::BadShape {
                op: "batch_norm2d",
                expected: format!("gamma/beta of shape [{c}]"),
                got: self.value(gamma).shape().to_vec(),
            });
        }
        if state.channels() != c {
            return Err(TensorError::BadShape {
                op: "batch_norm2d",
                expected: format!("running state over {c} channels"),
                got: vec![state.channels()],
            });
        }
        let m = b * h * w;
        let plane = h * w;
        let x = self.value(input).data().to_vec();
        let gamma_v = self.value(gamma).data().to_vec();
        let beta_v = self.value(beta).data().to_vec();

        let (mean, inv_std): (Vec<E>, Vec<E>) = match mode {
            BnMode::Train | BnMode::Calibrate => {
                if m < 2 {
                    return Err(TensorError::BnBatchTooSmall { got: m });
                }
                let momentum = match mode {
                    BnMode::Calibrate => 1.0 / (state.batches_tracked as f64 + 1.0),
                    _ => momentum,
                };
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for n in 0..b {
                    for ch in 0..c {
                        let base = (n * c + ch) * plane;
                        for &v in &x[base..base + plane] {
                            mean[ch] += v.as_f64();
                        }
                    }
                }
                for v in &mut mean {
                    *v /= m as f64;
                }
                for n in 0..b {
                    for ch in 0..c {
                        let base = (n * c + ch) * plane;
                        for &v in &x[base..base + plane] {
                            let d = v.as_f64() - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                }
                for v in &mut var {
                    *v /= m as f64;
                }
                // Running state: biased batch variance is unbiased before
                // storage, matching the usual train/eval convention.
                let unbias = m as f64 / (m as f64 - 1.0);
                for ch in 0..c {
                    let rm = state.running_mean.data()[ch].as_f64();
                    let rv = state.running_var.data()[ch].as_f64();
                    state.running_mean.data_mut()[ch] =
                        E::from_f64((1.0 - momentum) * rm + momentum * mean[ch]);
                    state.running_var.data_mut()[ch] =
                        E::from_f64((1.0 - momentum) * rv + momentum * var[ch] * unbias);
                }
                state.batches_tracked += 1;
                (
                    mean.iter().map(|&v| E::from_f64(v)).collect(),
                    var.iter()
                        .map(|&v| E::from_f64(1.0 / (v + epsilon).sqrt()))
                        .collect(),
                )
            }
            BnMode::Eval => {
                if state.batches_tracked == 0 {
                    return Err(TensorError::BnStateUninitialized);
                }
                (
                    state.running_mean.data().to_vec(),
                    state
                        .running_var
                        .data()
                        .iter()
                        .map(|&v| E::from_f64(1.0 / (v.as_f64() + epsilon).sqrt()))
                        .collect(),
                )
            }
        };

        let mut xhat = vec![E::zero(); x.len()];
        let mut y = vec![E::zero(); x.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma_v[ch], beta_v[ch]);
                for i in base..base + plane {
                    let xh = (x[i] - mu) * is;
                    xhat[i] = xh;
                    y[i] = g * xh + bt;
                }
            }
        }
        let needs =
            self.needs_grad(input) || self.needs_grad(gamma) || self.needs_grad(beta);
        let out = self.push_output(
            "batch_norm2d",
            Tensor::new(vec![b, c, h, w], y)?,
            needs,
        )?;
        self.records.push(Record::BatchNorm(BnRecord {
            input,
            gamma,
            beta,
            output: out,
            mode,
            xhat,
            inv_std,
        }));
        Ok(out)
    }

    pub(crate) fn batch_norm2d_backward(&mut self, rec: &BnRecord<E>) -> Result<()> {
        let Some(gout) = self.nodes[rec.output.0].grad.clone() else {
            return Ok(());
        };
        let (b, c, h, w) = gout.dims4("batch_norm2d")?;
        let plane = h * w;
        let m = (b * plane) as f64;
        let gy = gout.into_data();
        let gamma_v = self.value(rec.gamma).data().to_vec();

        // Per-channel sums of gy and gy*xhat feed every adjoint below.
        let mut sum_gy = vec![0.0f64; c];
        let mut sum_gy_xhat = vec![0.0f64; c];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                for i in base..base + plane {
                    let g = gy[i].as_f64();
                    sum_gy[ch] += g;
                    sum_gy_xhat[ch] += g * rec.xhat[i].as_f64();
                }
            }
        }

        if self.needs_grad(rec.gamma) {
            let gg: Vec<E> = sum_gy_xhat.iter().map(|&v| E::from_f64(v)).collect();
            self.accumulate_bn(rec.gamma, &gg);
        }
        if self.needs_grad(rec.beta) {
            let gb: Vec<E> = sum_gy.iter().map(|&v| E::from_f64(v)).collect();
            self.accumulate_bn(rec.beta, &gb);
        }
        if self.needs_grad(rec.input) {
            let mut gx = vec![E::zero(); gy.len()];
            match rec.mode {
                BnMode::Train | BnMode::Calibrate => {
                    for n in 0..b {
                        for ch in 0..c {
                            let base = (n * c + ch) * plane;
                            let scale = gamma_v[ch].as_f64() * rec.inv_std[ch].as_f64();
                            let mean_gy = sum_gy[ch] / m;
                            let mean_gy_xhat = sum_gy_xhat[ch] / m;
                            for i in base..base + plane {
                                let v = gy[i].as_f64()
                                    - mean_gy
                                    - rec.xhat[i].as_f64() * mean_gy_xhat;
                                gx[i] = E::from_f64(scale * v);
                            }
                        }
                    }
                }
                BnMode::Eval => {
                    // Running statistics are constants: a pure affine map.
                    for n in 0..b {
                        for ch in 0..c {
                            let base = (n * c + ch) * plane;
                            let scale = gamma_v[ch] * rec.inv_std[ch];
                            for i in base..base + plane {
                                gx[i] = gy[i] * scale;
                            }
                        }
                    }
                }
            }
            self.accumulate_bn(rec.input, &gx);
        }
        Ok(())
    }

    fn accumulate_bn(&mut self, v: Var, contribution: &[E]) {
        let node = &mut self.nodes[v.0];
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
        for (g, &c) in grad.data_mut().iter_mut().zip(contribution) {
            *g += c;
        }
    }
}

use rand::Rng;
use rand_distr::StandardNormal;
use stochsr_tensor::{BnMode, BnState, Element, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Binding, ParamSet};

/// One step of a sequential stack. Layers with parameters carry the name
/// prefix their tensors were registered under ("<name>.w", "<name>.b" for
/// convolutions, "<name>.g", "<name>.beta" plus a running state for norms).
#[derive(Debug, Clone)]
pub enum Layer {
    Conv {
        name: String,
        stride: usize,
        padding: usize,
    },
    Deconv {
        name: String,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        name: String,
    },
    Relu {
        name: String,
    },
    LeakyRelu {
        name: String,
        slope: f64,
    },
    Tanh {
        name: String,
    },
    /// x + body(x); the body must preserve shape.
    Residual {
        name: String,
        body: Vec<Layer>,
    },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv { name, .. }
            | Layer::Deconv { name, .. }
            | Layer::BatchNorm { name }
            | Layer::Relu { name }
            | Layer::LeakyRelu { name, .. }
            | Layer::Tanh { name }
            | Layer::Residual { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Seq {
    pub layers: Vec<Layer>,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Which running-statistics bank a batch-norm layer reads and updates.
///
/// The SR network runs under two very different latent regimes: the zero
/// latent of the deterministic path and the encoded residual of the
/// stochastic path. The shared gamma/beta parameters serve both, but one
/// set of running moments cannot, so layers built with a second bank keep
/// separate statistics per path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatBank {
    Det,
    Sto,
}

pub(crate) fn bank_key(name: &str, bank: StatBank) -> String {
    match bank {
        StatBank::Det => name.to_string(),
        StatBank::Sto => format!("{name}@sto"),
    }
}

pub fn forward_seq<E: Element>(
    tape: &mut Tape<E>,
    seq: &Seq,
    bind: &Binding,
    set: &mut ParamSet<E>,
    input: Var,
    mode: BnMode,
    bank: StatBank,
) -> Result<Var> {
    forward_layers(tape, &seq.layers, bind, set, input, mode, bank)
}

#[allow(clippy::too_many_arguments)]
fn forward_layers<E: Element>(
    tape: &mut Tape<E>,
    layers: &[Layer],
    bind: &Binding,
    set: &mut ParamSet<E>,
    input: Var,
    mode: BnMode,
    bank: StatBank,
) -> Result<Var> {
    let mut x = input;
    for layer in layers {
        x = match layer {
            Layer::Conv {
                name,
                stride,
                padding,
            } => {
                let w = bind.var(&format!("{name}.w"));
                let b = bind.var(&format!("{name}.b"));
                tape.conv2d(x, w, b, *stride, *padding)?
            }
            Layer::Deconv {
                name,
                stride,
                padding,
            } => {
                let w = bind.var(&format!("{name}.w"));
                let b = bind.var(&format!("{name}.b"));
                tape.conv_transpose2d(x, w, b, *stride, *padding)?
            }
            Layer::BatchNorm { name } => {
                let g = bind.var(&format!("{name}.g"));
                let beta = bind.var(&format!("{name}.beta"));
                // Fall back to the primary bank for single-bank layers.
                let key = bank_key(name, bank);
                let state = if set.has_bn_state(&key) {
                    set.bn_state_mut(&key)?
                } else {
                    set.bn_state_mut(name)?
                };
                tape.batch_norm2d(x, g, beta, state, mode, BN_MOMENTUM, BN_EPSILON)?
            }
            Layer::Relu { .. } => tape.relu(x)?,
            Layer::LeakyRelu { slope, .. } => tape.leaky_relu(x, E::from_f64(*slope))?,
            Layer::Tanh { .. } => tape.tanh(x)?,
            Layer::Residual { body, .. } => {
                let inner = forward_layers(tape, body, bind, set, x, mode, bank)?;
                tape.add(x, inner)?
            }
        };
    }
    Ok(x)
}

/// Shape of a layer output: channel count and square spatial extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Pure shape inference over a stack; parameter shapes come from the set,
/// so the trace reflects what was actually built.
pub fn trace_seq<E: Element>(
    seq: &Seq,
    set: &ParamSet<E>,
    mut channels: usize,
    mut h: usize,
    mut w: usize,
) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for layer in &seq.layers {
        match layer {
            Layer::Conv {
                name,
                stride,
                padding,
            } => {
                let wt = set.get(&format!("{name}.w"))?;
                let [cout, cin, kh, kw] = [
                    wt.shape()[0],
                    wt.shape()[1],
                    wt.shape()[2],
                    wt.shape()[3],
                ];
                if cin != channels {
                    return Err(Error::Config(format!(
                        "{name}: weight expects {cin} input channels, stack carries {channels}"
                    )));
                }
                channels = cout;
                h = (h + 2 * padding - kh) / stride + 1;
                w = (w + 2 * padding - kw) / stride + 1;
            }
            Layer::Deconv {
                name,
                stride,
                padding,
            } => {
                let wt = set.get(&format!("{name}.w"))?;
                let [cin, cout, kh, kw] = [
                    wt.shape()[0],
                    wt.shape()[1],
                    wt.shape()[2],
                    wt.shape()[3],
                ];
                if cin != channels {
                    return Err(Error::Config(format!(
                        "{name}: weight expects {cin} input channels, stack carries {channels}"
                    )));
                }
                channels = cout;
                h = (h - 1) * stride + kh - 2 * padding;
                w = (w - 1) * stride + kw - 2 * padding;
            }
            Layer::BatchNorm { .. }
            | Layer::Relu { .. }
            | Layer::LeakyRelu { .. }
            | Layer::Tanh { .. } => {}
            Layer::Residual { name, body } => {
                let inner = trace_seq(
                    &Seq {
                        layers: body.clone(),
                    },
                    set,
                    channels,
                    h,
                    w,
                )?;
                if let Some(last) = inner.last() {
                    if (last.channels, last.height, last.width) != (channels, h, w) {
                        return Err(Error::Config(format!(
                            "{name}: residual body changes shape to {}x{}x{}",
                            last.channels, last.height, last.width
                        )));
                    }
                }
            }
        }
        rows.push(TraceRow {
            name: layer.name().to_string(),
            channels,
            height: h,
            width: w,
        });
    }
    Ok(rows)
}

/// Registers initialized parameters while assembling layer stacks. Conv
/// weights get Kaiming fan-in scaling; biases, batch-norm offsets start at
/// zero and batch-norm gains at one. Draws happen in f64 so the same seed
/// yields bit-identical parameters in every element precision.
pub struct LayerBuilder<'a, R: Rng> {
    pub params: &'a mut ParamSet<f32>,
    pub rng: &'a mut R,
    /// Register a second per-path statistics bank on every norm layer.
    dual_bank: bool,
}

impl<'a, R: Rng> LayerBuilder<'a, R> {
    pub fn new(params: &'a mut ParamSet<f32>, rng: &'a mut R) -> Self {
        LayerBuilder {
            params,
            rng,
            dual_bank: false,
        }
    }

    pub fn with_dual_bank(params: &'a mut ParamSet<f32>, rng: &'a mut R) -> Self {
        LayerBuilder {
            params,
            rng,
            dual_bank: true,
        }
    }

    fn kaiming(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<f32> {
        let std = (2.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| {
            let n: f64 = self.rng.sample(StandardNormal);
            (n * std) as f32
        })
    }

    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Layer {
        let w = self.kaiming(vec![cout, cin, k, k], cin * k * k);
        self.params.insert(format!("{name}.w"), w);
        self.params.insert(format!("{name}.b"), Tensor::zeros(vec![cout]));
        Layer::Conv {
            name: name.to_string(),
            stride,
            padding,
        }
    }

    pub fn deconv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Layer {
        let w = self.kaiming(vec![cin, cout, k, k], cin * k * k);
        self.params.insert(format!("{name}.w"), w);
        self.params.insert(format!("{name}.b"), Tensor::zeros(vec![cout]));
        Layer::Deconv {
            name: name.to_string(),
            stride,
            padding,
        }
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Layer {
        self.params
            .insert(format!("{name}.g"), Tensor::full(vec![channels], 1.0));
        self.params
            .insert(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        self.params.insert_bn(name, BnState::new(channels));
        if self.dual_bank {
            self.params
                .insert_bn(bank_key(name, StatBank::Sto), BnState::new(channels));
        }
        Layer::BatchNorm {
            name: name.to_string(),
        }
    }

    /// Conv-BN-ReLU.
    pub fn conv_block(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Vec<Layer> {
        vec![
            self.conv(&format!("{name}.conv"), cin, cout, 3, stride, 1),
            self.batch_norm(&format!("{name}.bn"), cout),
            Layer::Relu {
                name: format!("{name}.relu"),
            },
        ]
    }

    /// Deconv-BN-ReLU with the 4x4/stride-2/padding-1 geometry that exactly
    /// doubles the spatial extent.
    pub fn deconv_block(&mut self, name: &str, cin: usize, cout: usize) -> Vec<Layer> {
        vec![
            self.deconv(&format!("{name}.deconv"), cin, cout, 4, 2, 1),
            self.batch_norm(&format!("{name}.bn"), cout),
            Layer::Relu {
                name: format!("{name}.relu"),
            },
        ]
    }

    /// x + BN(conv(ReLU(BN(conv(x))))), both convolutions 3x3 stride 1.
    pub fn res_block(&mut self, name: &str, channels: usize) -> Layer {
        let body = vec![
            self.conv(&format!("{name}.conv1"), channels, channels, 3, 1, 1),
            self.batch_norm(&format!("{name}.bn1"), channels),
            Layer::Relu {
                name: format!("{name}.relu"),
            },
            self.conv(&format!("{name}.conv2"), channels, channels, 3, 1, 1),
            self.batch_norm(&format!("{name}.bn2"), channels),
        ];
        Layer::Residual {
            name: name.to_string(),
            body,
        }
    }
}

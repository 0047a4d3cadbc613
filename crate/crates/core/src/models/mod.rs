//! The three networks: SR encoder-decoder, residual encoder, and the
//! input-conditional predictor, assembled from [`ArchConfig`].

mod layers;

pub use layers::{forward_seq, trace_seq, Layer, LayerBuilder, Seq, StatBank, TraceRow};
pub use layers::{BN_EPSILON, BN_MOMENTUM};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochsr_tensor::{BnMode, Element, Tape, Var};

use crate::config::ArchConfig;
use crate::error::{Error, Result};
use crate::latent::DiagGaussian;
use crate::params::{Binding, ParamSet};

/// Negative-side slope of the leaky activations inside the gaussian heads.
pub const HEAD_LEAKY_SLOPE: f64 = 0.2;

/// Encoder, latent-injection branch, and decoder of the SR network. The
/// branch output is added to the encoder feature map before decoding.
#[derive(Debug, Clone)]
pub struct SrNet {
    pub enc: Seq,
    pub branch: Seq,
    pub dec: Seq,
}

/// Trunk plus two parallel heads emitting the mean and log-variance maps,
/// both tanh-bounded to [-1, 1].
#[derive(Debug, Clone)]
pub struct HeadNet {
    pub trunk: Seq,
    pub mu: Seq,
    pub log_var: Seq,
}

#[derive(Debug, Clone)]
pub struct Models {
    pub arch: ArchConfig,
    pub sr: SrNet,
    pub ren: HeadNet,
    pub icap: HeadNet,
}

/// Builds all three networks with seed-deterministic initialization.
/// Returns the structures plus the parameter sets (theta, phi, omega).
pub fn build_models(
    arch: &ArchConfig,
    seed: u64,
) -> Result<(Models, ParamSet<f32>, ParamSet<f32>, ParamSet<f32>)> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut theta = ParamSet::new();
    let sr = build_sr(arch, &mut theta, &mut rng);

    let mut phi = ParamSet::new();
    let ren = build_ren(arch, &mut phi, &mut rng);

    let mut omega = ParamSet::new();
    let icap = build_icap(arch, &mut omega, &mut rng);

    let models = Models {
        arch: *arch,
        sr,
        ren,
        icap,
    };
    Ok((models, theta, phi, omega))
}

fn build_sr(arch: &ArchConfig, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) -> SrNet {
    let base = arch.base_channels;
    // The SR network is rendered under two latent regimes, so its norm
    // layers keep separate statistics per path.
    let mut b = LayerBuilder::with_dual_bank(params, rng);

    let mut enc = Seq::default();
    enc.layers
        .extend(b.conv_block("enc.in", arch.color_channels, base, 2));
    for i in 0..arch.enc_res_blocks {
        let block = b.res_block(&format!("enc.res{i}"), base);
        enc.layers.push(block);
    }
    enc.layers.push(b.conv("enc.out", base, base, 3, 1, 1));

    // Stride-2 ladder from the latent map up to the encoder extent. With a
    // ratio of 2 the ladder is empty and the latent feeds the sum directly.
    let mut branch = Seq::default();
    for i in 0..arch.branch_blocks() {
        let cin = if i == 0 { arch.latent_channels } else { base };
        branch
            .layers
            .extend(b.deconv_block(&format!("branch.up{i}"), cin, base));
        let block = b.res_block(&format!("branch.res{i}"), base);
        branch.layers.push(block);
    }

    let mut dec = Seq::default();
    dec.layers.push(b.batch_norm("dec.bn", base));
    dec.layers.extend(b.conv_block("dec.in", base, base, 1));
    dec.layers.extend(b.deconv_block("dec.up", base, base));
    for i in 0..arch.dec_res_blocks {
        let block = b.res_block(&format!("dec.res{i}"), base);
        dec.layers.push(block);
    }
    dec.layers
        .push(b.conv("dec.out", base, arch.color_channels, 3, 1, 1));
    dec.layers.push(Layer::Tanh {
        name: "dec.tanh".into(),
    });

    SrNet { enc, branch, dec }
}

fn gaussian_heads(
    arch: &ArchConfig,
    b: &mut LayerBuilder<'_, ChaCha8Rng>,
) -> (Seq, Seq) {
    let mid = arch.head_mid_channels();
    let mut heads = Vec::new();
    for head in ["mu", "log_var"] {
        let mut seq = Seq::default();
        seq.layers.push(b.conv(
            &format!("{head}.conv1"),
            arch.base_channels,
            mid,
            3,
            1,
            1,
        ));
        seq.layers.push(b.batch_norm(&format!("{head}.bn1"), mid));
        seq.layers.push(Layer::LeakyRelu {
            name: format!("{head}.lrelu"),
            slope: HEAD_LEAKY_SLOPE,
        });
        seq.layers.push(b.conv(
            &format!("{head}.conv2"),
            mid,
            arch.latent_channels,
            3,
            1,
            1,
        ));
        seq.layers
            .push(b.batch_norm(&format!("{head}.bn2"), arch.latent_channels));
        seq.layers.push(Layer::Tanh {
            name: format!("{head}.tanh"),
        });
        heads.push(seq);
    }
    let log_var = heads.pop().unwrap();
    let mu = heads.pop().unwrap();
    (mu, log_var)
}

fn build_ren(arch: &ArchConfig, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) -> HeadNet {
    let base = arch.base_channels;
    let mut b = LayerBuilder::new(params, rng);
    let mut trunk = Seq::default();
    for i in 0..arch.trunk_stages() {
        let cin = if i == 0 { arch.color_channels } else { base };
        trunk
            .layers
            .extend(b.conv_block(&format!("trunk.down{i}"), cin, base, 2));
    }
    trunk.layers.push(b.conv("trunk.out", base, base, 3, 1, 1));
    trunk.layers.push(b.batch_norm("trunk.bn", base));
    let (mu, log_var) = gaussian_heads(arch, &mut b);
    HeadNet { trunk, mu, log_var }
}

fn build_icap(arch: &ArchConfig, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) -> HeadNet {
    let base = arch.base_channels;
    let mut b = LayerBuilder::new(params, rng);
    let mut trunk = Seq::default();
    for i in 0..arch.trunk_stages() {
        let cin = if i == 0 { arch.color_channels } else { base };
        trunk
            .layers
            .extend(b.conv_block(&format!("trunk.down{i}"), cin, base, 2));
        let block = b.res_block(&format!("trunk.res{i}"), base);
        trunk.layers.push(block);
    }
    trunk.layers.push(b.conv("trunk.out", base, base, 3, 1, 1));
    let (mu, log_var) = gaussian_heads(arch, &mut b);
    HeadNet { trunk, mu, log_var }
}

impl Models {
    fn check_latent_shape<E: Element>(&self, tape: &Tape<E>, x: Var, z: Var) -> Result<()> {
        let batch = tape.shape(x).first().copied().unwrap_or(0);
        let expected = self.arch.latent_shape(batch);
        if tape.shape(z) != expected.as_slice() {
            return Err(Error::Config(format!(
                "latent shape mismatch: expected {:?}, got {:?}",
                expected,
                tape.shape(z)
            )));
        }
        Ok(())
    }

    /// SR forward pass: encode x, lift z through the branch, sum, decode.
    /// A zero latent yields the deterministic path. `bank` selects which
    /// running statistics the norm layers read in eval mode (and update in
    /// train mode); pass `StatBank::Det` when z is the zero latent.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_sr<E: Element>(
        &self,
        tape: &mut Tape<E>,
        bind: &Binding,
        theta: &mut ParamSet<E>,
        x: Var,
        z: Var,
        mode: BnMode,
        bank: StatBank,
    ) -> Result<Var> {
        self.check_latent_shape(tape, x, z)?;
        let encoded = forward_seq(tape, &self.sr.enc, bind, theta, x, mode, bank)?;
        let lifted = if self.sr.branch.layers.is_empty() {
            z
        } else {
            forward_seq(tape, &self.sr.branch, bind, theta, z, mode, bank)?
        };
        let fused = tape.add(encoded, lifted)?;
        Ok(forward_seq(tape, &self.sr.dec, bind, theta, fused, mode, bank)?)
    }

    pub fn forward_ren<E: Element>(
        &self,
        tape: &mut Tape<E>,
        bind: &Binding,
        phi: &mut ParamSet<E>,
        residual: Var,
        mode: BnMode,
    ) -> Result<DiagGaussian> {
        head_forward(tape, &self.ren, bind, phi, residual, mode)
    }

    pub fn forward_icap<E: Element>(
        &self,
        tape: &mut Tape<E>,
        bind: &Binding,
        omega: &mut ParamSet<E>,
        x: Var,
        mode: BnMode,
    ) -> Result<DiagGaussian> {
        head_forward(tape, &self.icap, bind, omega, x, mode)
    }
}

fn head_forward<E: Element>(
    tape: &mut Tape<E>,
    net: &HeadNet,
    bind: &Binding,
    set: &mut ParamSet<E>,
    input: Var,
    mode: BnMode,
) -> Result<DiagGaussian> {
    let features = forward_seq(tape, &net.trunk, bind, set, input, mode, StatBank::Det)?;
    let mu = forward_seq(tape, &net.mu, bind, set, features, mode, StatBank::Det)?;
    let log_var =
        forward_seq(tape, &net.log_var, bind, set, features, mode, StatBank::Det)?;
    Ok(DiagGaussian { mu, log_var })
}

/// Shape trace of every layer in all three networks, prefixed "sr." /
/// "ren." / "icap.". Structural conformance tests compare these rows to
/// the expected output-size table at full scale.
pub fn trace_shapes(
    models: &Models,
    theta: &ParamSet<f32>,
    phi: &ParamSet<f32>,
    omega: &ParamSet<f32>,
) -> Result<Vec<TraceRow>> {
    let arch = &models.arch;
    let mut rows = Vec::new();
    let push = |prefix: &str, trace: Vec<TraceRow>, rows: &mut Vec<TraceRow>| {
        for mut row in trace {
            row.name = format!("{prefix}.{}", row.name);
            rows.push(row);
        }
    };

    let img = arch.image_size;
    push(
        "sr",
        trace_seq(&models.sr.enc, theta, arch.color_channels, img, img)?,
        &mut rows,
    );
    push(
        "sr",
        trace_seq(
            &models.sr.branch,
            theta,
            arch.latent_channels,
            arch.latent_size,
            arch.latent_size,
        )?,
        &mut rows,
    );
    let enc_sp = arch.encoder_spatial();
    push(
        "sr",
        trace_seq(&models.sr.dec, theta, arch.base_channels, enc_sp, enc_sp)?,
        &mut rows,
    );

    for (prefix, net, set) in [
        ("ren", &models.ren, phi),
        ("icap", &models.icap, omega),
    ] {
        let trunk = trace_seq(&net.trunk, set, arch.color_channels, img, img)?;
        let (tc, th, tw) = trunk
            .last()
            .map(|r| (r.channels, r.height, r.width))
            .unwrap_or((arch.color_channels, img, img));
        push(prefix, trunk, &mut rows);
        // Head layer names already carry their "mu."/"log_var." prefix.
        push(prefix, trace_seq(&net.mu, set, tc, th, tw)?, &mut rows);
        push(prefix, trace_seq(&net.log_var, set, tc, th, tw)?, &mut rows);
    }
    Ok(rows)
}

//! Binary checkpoint archive. Layout: magic bytes "SSRC", a u32 version,
//! a length-prefixed manifest of (name, dtype, shape) entries, then the raw
//! little-endian payloads in manifest order. The manifest-first layout lets
//! a reader reject truncated files before decoding any tensor.

use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use stochsr_tensor::{BnState, Tensor};

use crate::config::ArchConfig;
use crate::data::hex_prefix;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::train::adam::AdamState;

pub const MAGIC: &[u8; 4] = b"SSRC";
pub const VERSION: u32 = 1;

/// Captured generator state, enough to resume a training stream mid-run.
#[derive(Debug, Clone, PartialEq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngSnapshot {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Training hyperparameters worth re-reading from a checkpoint. The phase-1
/// loss weight is always recorded here.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub lambda: f32,
    pub lr_phase1: f32,
    pub lr_phase2: f32,
    pub batch_size: u32,
    pub detach_residual: bool,
    pub kl_mean_over_latent: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub build_seed: u64,
    pub meta: TrainMeta,
    pub phase1_step: u64,
    pub phase2_step: u64,
    pub theta: ParamSet<f32>,
    pub phi: ParamSet<f32>,
    /// Present once phase 2 has produced predictor parameters.
    pub omega: Option<ParamSet<f32>>,
    pub adam_theta: Option<AdamState>,
    pub adam_phi: Option<AdamState>,
    pub adam_omega: Option<AdamState>,
    pub rng: Option<RngSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DType {
    F32,
    U32,
}

enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    payload: Payload,
}

impl Entry {
    fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Entry {
            name: name.into(),
            shape,
            payload: Payload::F32(data),
        }
    }

    fn u32(name: impl Into<String>, data: Vec<u32>) -> Self {
        Entry {
            name: name.into(),
            shape: vec![data.len()],
            payload: Payload::U32(data),
        }
    }
}

fn split_u64(v: u64) -> Vec<u32> {
    vec![(v & 0xffff_ffff) as u32, (v >> 32) as u32]
}

fn join_u64(words: &[u32]) -> u64 {
    words[0] as u64 | (words[1] as u64) << 32
}

fn param_entries(scope: &str, set: &ParamSet<f32>, out: &mut Vec<Entry>) {
    for (name, tensor) in set.iter() {
        out.push(Entry::f32(
            format!("{scope}/p/{name}"),
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
        ));
    }
    for (name, state) in set.iter_bn() {
        out.push(Entry::f32(
            format!("{scope}/bn/{name}/mean"),
            state.running_mean.shape().to_vec(),
            state.running_mean.data().to_vec(),
        ));
        out.push(Entry::f32(
            format!("{scope}/bn/{name}/var"),
            state.running_var.shape().to_vec(),
            state.running_var.data().to_vec(),
        ));
        out.push(Entry::u32(
            format!("{scope}/bn/{name}/count"),
            split_u64(state.batches_tracked),
        ));
    }
}

fn adam_entries(scope: &str, state: &AdamState, out: &mut Vec<Entry>) {
    for (name, t) in &state.m {
        out.push(Entry::f32(
            format!("{scope}/m/{name}"),
            t.shape().to_vec(),
            t.data().to_vec(),
        ));
    }
    for (name, t) in &state.v {
        out.push(Entry::f32(
            format!("{scope}/v/{name}"),
            t.shape().to_vec(),
            t.data().to_vec(),
        ));
    }
    out.push(Entry::u32(format!("{scope}/step"), split_u64(state.step)));
}

impl Checkpoint {
    fn entries(&self) -> Vec<Entry> {
        let mut out = Vec::new();
        let a = &self.arch;
        out.push(Entry::u32(
            "meta/arch",
            vec![
                a.image_size as u32,
                a.scale_factor as u32,
                a.base_channels as u32,
                a.enc_res_blocks as u32,
                a.dec_res_blocks as u32,
                a.latent_channels as u32,
                a.latent_size as u32,
                a.color_channels as u32,
            ],
        ));
        out.push(Entry::u32("meta/build_seed", split_u64(self.build_seed)));
        out.push(Entry::f32(
            "meta/train_f",
            vec![3],
            vec![self.meta.lambda, self.meta.lr_phase1, self.meta.lr_phase2],
        ));
        out.push(Entry::u32(
            "meta/train_u",
            vec![
                self.meta.batch_size,
                self.meta.detach_residual as u32,
                self.meta.kl_mean_over_latent as u32,
            ],
        ));
        out.push(Entry::u32("meta/train_seed", split_u64(self.meta.seed)));
        out.push(Entry::u32(
            "meta/steps",
            [split_u64(self.phase1_step), split_u64(self.phase2_step)].concat(),
        ));
        if let Some(rng) = &self.rng {
            let mut words: Vec<u32> = rng
                .seed
                .chunks(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            for i in 0..4 {
                words.push((rng.word_pos >> (32 * i)) as u32);
            }
            words.extend(split_u64(rng.stream));
            out.push(Entry::u32("meta/rng", words));
        }
        param_entries("theta", &self.theta, &mut out);
        param_entries("phi", &self.phi, &mut out);
        if let Some(omega) = &self.omega {
            param_entries("omega", omega, &mut out);
        }
        if let Some(s) = &self.adam_theta {
            adam_entries("adam_t", s, &mut out);
        }
        if let Some(s) = &self.adam_phi {
            adam_entries("adam_p", s, &mut out);
        }
        if let Some(s) = &self.adam_omega {
            adam_entries("adam_o", s, &mut out);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.entries();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for e in &entries {
            bytes.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(e.name.as_bytes());
            let dtype = match e.payload {
                Payload::F32(_) => 0u8,
                Payload::U32(_) => 1u8,
            };
            bytes.push(dtype);
            bytes.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for e in &entries {
            match &e.payload {
                Payload::F32(data) => {
                    for v in data {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Payload::U32(data) => {
                    for v in data {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        bytes
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawArchive::parse(bytes)?;
        raw.into_checkpoint()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

struct RawEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    payload_offset: usize,
}

struct RawArchive<'a> {
    bytes: &'a [u8],
    entries: Vec<RawEntry>,
}

impl<'a> RawArchive<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self> {
        let fail = |offset: usize, msg: &str| {
            Error::Checkpoint(format!("at byte {offset}: {msg}"))
        };
        let mut pos = 0usize;
        let take = |n: usize, pos: &mut usize| -> Result<&'a [u8]> {
            if *pos + n > bytes.len() {
                return Err(fail(*pos, "file ends inside the manifest"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(4, &mut pos)?;
        if magic != MAGIC {
            return Err(fail(0, "missing SSRC magic"));
        }
        let version = u32::from_le_bytes(take(4, &mut pos)?.try_into().unwrap());
        if version != VERSION {
            return Err(fail(4, &format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4, &mut pos)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count);
        let mut payload_size = 0usize;
        for _ in 0..count {
            let name_len =
                u32::from_le_bytes(take(4, &mut pos)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(name_len, &mut pos)?)
                .map_err(|_| fail(pos, "entry name is not utf-8"))?
                .to_string();
            let dtype = match take(1, &mut pos)?[0] {
                0 => DType::F32,
                1 => DType::U32,
                other => return Err(fail(pos - 1, &format!("unknown dtype {other}"))),
            };
            let rank = u32::from_le_bytes(take(4, &mut pos)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8, &mut pos)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            entries.push(RawEntry {
                name,
                dtype,
                shape,
                payload_offset: payload_size,
            });
            payload_size += numel * 4;
        }
        // Reject truncation before decoding any tensor.
        if bytes.len() - pos != payload_size {
            return Err(fail(
                bytes.len(),
                &format!(
                    "payload is {} bytes, manifest declares {payload_size} (payload starts at {pos})",
                    bytes.len() - pos
                ),
            ));
        }
        let payload_base = pos;
        let mut out = RawArchive { bytes, entries };
        for e in &mut out.entries {
            e.payload_offset += payload_base;
        }
        Ok(out)
    }

    fn f32_tensor(&self, e: &RawEntry) -> Result<Tensor<f32>> {
        if e.dtype != DType::F32 {
            return Err(Error::Checkpoint(format!("{} is not f32", e.name)));
        }
        let numel: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let off = e.payload_offset + i * 4;
            data.push(f32::from_le_bytes(
                self.bytes[off..off + 4].try_into().unwrap(),
            ));
        }
        Ok(Tensor::new(e.shape.clone(), data)?)
    }

    fn u32_vec(&self, e: &RawEntry) -> Result<Vec<u32>> {
        if e.dtype != DType::U32 {
            return Err(Error::Checkpoint(format!("{} is not u32", e.name)));
        }
        let numel: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let off = e.payload_offset + i * 4;
            data.push(u32::from_le_bytes(
                self.bytes[off..off + 4].try_into().unwrap(),
            ));
        }
        Ok(data)
    }

    fn into_checkpoint(self) -> Result<Checkpoint> {
        let mut arch: Option<ArchConfig> = None;
        let mut build_seed = 0u64;
        let mut train_f = vec![1.0f32, 0.0, 0.0];
        let mut train_u = vec![0u32, 1, 0];
        let mut train_seed = 0u64;
        let mut steps = (0u64, 0u64);
        let mut rng = None;

        let mut sets: IndexMap<String, ParamSet<f32>> = IndexMap::new();
        let mut pending_bn: IndexMap<(String, String), (Option<Tensor<f32>>, Option<Tensor<f32>>, Option<u64>)> =
            IndexMap::new();
        let mut adams: IndexMap<String, AdamState> = IndexMap::new();

        for e in &self.entries {
            let parts: Vec<&str> = e.name.split('/').collect();
            match parts.as_slice() {
                ["meta", "arch"] => {
                    let v = self.u32_vec(e)?;
                    if v.len() != 8 {
                        return Err(Error::Checkpoint("meta/arch needs 8 fields".into()));
                    }
                    arch = Some(ArchConfig {
                        image_size: v[0] as usize,
                        scale_factor: v[1] as usize,
                        base_channels: v[2] as usize,
                        enc_res_blocks: v[3] as usize,
                        dec_res_blocks: v[4] as usize,
                        latent_channels: v[5] as usize,
                        latent_size: v[6] as usize,
                        color_channels: v[7] as usize,
                    });
                }
                ["meta", "build_seed"] => build_seed = join_u64(&self.u32_vec(e)?),
                ["meta", "train_f"] => train_f = self.f32_tensor(e)?.into_data(),
                ["meta", "train_u"] => train_u = self.u32_vec(e)?,
                ["meta", "train_seed"] => train_seed = join_u64(&self.u32_vec(e)?),
                ["meta", "steps"] => {
                    let v = self.u32_vec(e)?;
                    steps = (join_u64(&v[0..2]), join_u64(&v[2..4]));
                }
                ["meta", "rng"] => {
                    let v = self.u32_vec(e)?;
                    if v.len() != 14 {
                        return Err(Error::Checkpoint("meta/rng needs 14 words".into()));
                    }
                    let mut seed = [0u8; 32];
                    for (i, w) in v[0..8].iter().enumerate() {
                        seed[i * 4..(i + 1) * 4].copy_from_slice(&w.to_le_bytes());
                    }
                    let mut word_pos = 0u128;
                    for (i, w) in v[8..12].iter().enumerate() {
                        word_pos |= (*w as u128) << (32 * i);
                    }
                    rng = Some(RngSnapshot {
                        seed,
                        word_pos,
                        stream: join_u64(&v[12..14]),
                    });
                }
                [scope, "p", rest @ ..] if matches!(*scope, "theta" | "phi" | "omega") => {
                    let t = self.f32_tensor(e)?;
                    sets.entry(scope.to_string())
                        .or_default()
                        .insert(rest.join("/"), t);
                }
                [scope, "bn", rest @ .., field]
                    if matches!(*scope, "theta" | "phi" | "omega") =>
                {
                    let key = (scope.to_string(), rest.join("/"));
                    let slot = pending_bn.entry(key.clone()).or_default();
                    match *field {
                        "mean" => slot.0 = Some(self.f32_tensor(e)?),
                        "var" => slot.1 = Some(self.f32_tensor(e)?),
                        "count" => slot.2 = Some(join_u64(&self.u32_vec(e)?)),
                        other => {
                            return Err(Error::Checkpoint(format!(
                                "unknown batch-norm field {other}"
                            )))
                        }
                    }
                    if let (Some(mean), Some(var), Some(count)) =
                        (slot.0.clone(), slot.1.clone(), slot.2)
                    {
                        sets.entry(key.0.clone()).or_default().insert_bn(
                            key.1.clone(),
                            BnState {
                                running_mean: mean,
                                running_var: var,
                                batches_tracked: count,
                            },
                        );
                        pending_bn.shift_remove(&key);
                    }
                }
                [scope, "m", rest @ ..]
                    if matches!(*scope, "adam_t" | "adam_p" | "adam_o") =>
                {
                    adams
                        .entry(scope.to_string())
                        .or_default()
                        .m
                        .insert(rest.join("/"), self.f32_tensor(e)?);
                }
                [scope, "v", rest @ ..]
                    if matches!(*scope, "adam_t" | "adam_p" | "adam_o") =>
                {
                    adams
                        .entry(scope.to_string())
                        .or_default()
                        .v
                        .insert(rest.join("/"), self.f32_tensor(e)?);
                }
                [scope, "step"] if matches!(*scope, "adam_t" | "adam_p" | "adam_o") => {
                    adams.entry(scope.to_string()).or_default().step =
                        join_u64(&self.u32_vec(e)?);
                }
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "unrecognized entry {}",
                        e.name
                    )))
                }
            }
        }
        if !pending_bn.is_empty() {
            return Err(Error::Checkpoint(
                "incomplete batch-norm state in archive".into(),
            ));
        }
        let arch = arch.ok_or_else(|| Error::Checkpoint("missing meta/arch".into()))?;
        let theta = sets
            .shift_remove("theta")
            .ok_or_else(|| Error::Checkpoint("missing theta parameters".into()))?;
        let phi = sets
            .shift_remove("phi")
            .ok_or_else(|| Error::Checkpoint("missing phi parameters".into()))?;
        let omega = sets.shift_remove("omega");
        Ok(Checkpoint {
            arch,
            build_seed,
            meta: TrainMeta {
                lambda: train_f[0],
                lr_phase1: train_f[1],
                lr_phase2: train_f[2],
                batch_size: train_u.first().copied().unwrap_or(0),
                detach_residual: train_u.get(1).copied().unwrap_or(1) != 0,
                kl_mean_over_latent: train_u.get(2).copied().unwrap_or(0) != 0,
                seed: train_seed,
            },
            phase1_step: steps.0,
            phase2_step: steps.1,
            theta,
            phi,
            omega,
            adam_theta: adams.shift_remove("adam_t"),
            adam_phi: adams.shift_remove("adam_p"),
            adam_omega: adams.shift_remove("adam_o"),
            rng,
        })
    }
}

/// Human-readable archive summary: version, architecture, step counters,
/// then one line per tensor with shape and payload digest.
pub fn inspect(bytes: &[u8]) -> Result<InspectReport> {
    let raw = RawArchive::parse(bytes)?;
    let mut entries = Vec::with_capacity(raw.entries.len());
    for e in &raw.entries {
        let numel: usize = e.shape.iter().product();
        let payload = &raw.bytes[e.payload_offset..e.payload_offset + numel * 4];
        entries.push(InspectEntry {
            name: e.name.clone(),
            dtype: match e.dtype {
                DType::F32 => "f32",
                DType::U32 => "u32",
            },
            shape: e.shape.clone(),
            checksum: hex_prefix(&Sha256::digest(payload), 16),
        });
    }
    let ckpt = raw.into_checkpoint()?;
    Ok(InspectReport {
        version: VERSION,
        arch: ckpt.arch,
        phase1_step: ckpt.phase1_step,
        phase2_step: ckpt.phase2_step,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectEntry {
    pub name: String,
    pub dtype: &'static str,
    pub shape: Vec<usize>,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub version: u32,
    pub arch: ArchConfig,
    pub phase1_step: u64,
    pub phase2_step: u64,
    pub entries: Vec<InspectEntry>,
}

impl fmt::Display for InspectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "format version {}", self.version)?;
        writeln!(
            f,
            "arch: image {} scale {} base {} enc_res {} dec_res {} latent {}x{}x{} colors {}",
            self.arch.image_size,
            self.arch.scale_factor,
            self.arch.base_channels,
            self.arch.enc_res_blocks,
            self.arch.dec_res_blocks,
            self.arch.latent_channels,
            self.arch.latent_size,
            self.arch.latent_size,
            self.arch.color_channels
        )?;
        writeln!(
            f,
            "steps: phase1 {} phase2 {}",
            self.phase1_step, self.phase2_step
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:56} {:>4} {:16} {}",
                e.name,
                e.dtype,
                format!("{:?}", e.shape),
                e.checksum
            )?;
        }
        Ok(())
    }
}

//! Flat key=value run configuration. A config file seeds the values, CLI
//! `--set key=value` pairs override the file, and the STOCHSR_SEED
//! environment variable overrides the file's seed (but not explicit flags).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stochsr_core::config::ArchConfig;
use stochsr_core::train::TrainConfig;
use stochsr_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub data: Option<String>,
    pub out_dir: String,
    pub echo_metrics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: ArchConfig::toy(8),
            train: TrainConfig::default(),
            data: None,
            out_dir: "run".into(),
            echo_metrics: true,
        }
    }
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got `{value}`"));
        let as_usize = || value.parse::<usize>().map_err(|_| bad("an integer"));
        let as_u64 = || value.parse::<u64>().map_err(|_| bad("an integer"));
        let as_f64 = || value.parse::<f64>().map_err(|_| bad("a number"));
        let as_bool = || match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad("a boolean")),
        };
        match key {
            "image_size" => self.arch.image_size = as_usize()?,
            "scale_factor" => self.arch.scale_factor = as_usize()?,
            "base_channels" => self.arch.base_channels = as_usize()?,
            "enc_res_blocks" => self.arch.enc_res_blocks = as_usize()?,
            "dec_res_blocks" => self.arch.dec_res_blocks = as_usize()?,
            "latent_channels" => self.arch.latent_channels = as_usize()?,
            "latent_size" => self.arch.latent_size = as_usize()?,
            "color_channels" => self.arch.color_channels = as_usize()?,
            "lr_phase1" => self.train.lr_phase1 = as_f64()?,
            "lr_phase2" => self.train.lr_phase2 = as_f64()?,
            "lambda" => self.train.lambda = as_f64()?,
            "batch_size" => self.train.batch_size = as_usize()?,
            "steps_phase1" => self.train.steps_phase1 = as_u64()?,
            "steps_phase2" => self.train.steps_phase2 = as_u64()?,
            "seed" => self.train.seed = as_u64()?,
            "beta1" => self.train.beta1 = as_f64()?,
            "beta2" => self.train.beta2 = as_f64()?,
            "adam_epsilon" => self.train.adam_epsilon = as_f64()?,
            "detach_residual" => self.train.detach_residual = as_bool()?,
            "kl_mean_over_latent" => self.train.kl_mean_over_latent = as_bool()?,
            "log_interval" => self.train.log_interval = as_u64()?,
            "checkpoint_interval" => self.train.checkpoint_interval = as_u64()?,
            "early_stop" => self.train.early_stop = as_bool()?,
            "bn_calibration_batches" => self.train.bn_calibration_batches = as_usize()?,
            "data" => self.data = Some(value.to_string()),
            "out_dir" => self.out_dir = value.to_string(),
            "echo_metrics" => self.echo_metrics = as_bool()?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var("STOCHSR_SEED") {
            self.apply("seed", &seed)?;
        }
        Ok(())
    }

    /// Serialization mirror of [`RunConfig::apply`]; the resolved view is
    /// written next to every run's outputs.
    pub fn to_text(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("image_size", self.arch.image_size.to_string());
        map.insert("scale_factor", self.arch.scale_factor.to_string());
        map.insert("base_channels", self.arch.base_channels.to_string());
        map.insert("enc_res_blocks", self.arch.enc_res_blocks.to_string());
        map.insert("dec_res_blocks", self.arch.dec_res_blocks.to_string());
        map.insert("latent_channels", self.arch.latent_channels.to_string());
        map.insert("latent_size", self.arch.latent_size.to_string());
        map.insert("color_channels", self.arch.color_channels.to_string());
        map.insert("lr_phase1", format!("{:e}", self.train.lr_phase1));
        map.insert("lr_phase2", format!("{:e}", self.train.lr_phase2));
        map.insert("lambda", self.train.lambda.to_string());
        map.insert("batch_size", self.train.batch_size.to_string());
        map.insert("steps_phase1", self.train.steps_phase1.to_string());
        map.insert("steps_phase2", self.train.steps_phase2.to_string());
        map.insert("seed", self.train.seed.to_string());
        map.insert("beta1", self.train.beta1.to_string());
        map.insert("beta2", self.train.beta2.to_string());
        map.insert("adam_epsilon", format!("{:e}", self.train.adam_epsilon));
        map.insert("detach_residual", self.train.detach_residual.to_string());
        map.insert(
            "kl_mean_over_latent",
            self.train.kl_mean_over_latent.to_string(),
        );
        map.insert("log_interval", self.train.log_interval.to_string());
        map.insert(
            "checkpoint_interval",
            self.train.checkpoint_interval.to_string(),
        );
        map.insert("early_stop", self.train.early_stop.to_string());
        map.insert(
            "bn_calibration_batches",
            self.train.bn_calibration_batches.to_string(),
        );
        if let Some(data) = &self.data {
            map.insert("data", data.clone());
        }
        map.insert("out_dir", self.out_dir.clone());
        map.insert("echo_metrics", self.echo_metrics.to_string());
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Resolution order: defaults, then the file, then STOCHSR_SEED, then
    /// explicit --set flags.
    pub fn resolve(
        file: Option<&Path>,
        sets: &[String],
    ) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.load_file(path)?;
        }
        cfg.apply_env()?;
        for pair in sets {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects key=value, got `{pair}`"))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.arch.validate()?;
        Ok(cfg)
    }
}

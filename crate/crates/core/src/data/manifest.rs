//! On-disk dataset layout: HR and LR images as P6 files plus a tab-separated
//! manifest carrying the attribute record of every sample.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use stochsr_tensor::Tensor;

use crate::data::ppm::{read_image, write_image};
use crate::data::resample::{bicubic_resample, degrade};
use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Paths relative to the manifest location.
    pub hr_path: String,
    pub lr_path: String,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub image_size: usize,
    pub scale_factor: usize,
    pub split: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    fn header_line(&self) -> String {
        format!(
            "stochsr-dataset\tv1\tsize={}\tscale={}\tsplit={}\tcount={}",
            self.image_size,
            self.scale_factor,
            self.split,
            self.entries.len()
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for e in &self.entries {
            let spec = serde_json::to_string(&e.spec).expect("spec serializes");
            let _ = writeln!(out, "{}\t{}\t{}", e.hr_path, e.lr_path, spec);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty manifest".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.first() != Some(&"stochsr-dataset") {
            return Err(Error::Data("not a dataset manifest".into()));
        }
        let lookup = |key: &str| -> Result<String> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(&format!("{key}=")))
                .map(str::to_string)
                .ok_or_else(|| Error::Data(format!("manifest header missing {key}")))
        };
        let image_size = lookup("size")?
            .parse()
            .map_err(|_| Error::Data("bad size field".into()))?;
        let scale_factor = lookup("scale")?
            .parse()
            .map_err(|_| Error::Data("bad scale field".into()))?;
        let split = lookup("split")?;

        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (hr, lr, spec) = (parts.next(), parts.next(), parts.next());
            match (hr, lr, spec) {
                (Some(hr), Some(lr), Some(spec)) => entries.push(ManifestEntry {
                    hr_path: hr.to_string(),
                    lr_path: lr.to_string(),
                    spec: serde_json::from_str(spec).map_err(|e| {
                        Error::Data(format!("manifest record {}: bad spec: {e}", i + 2))
                    })?,
                }),
                _ => {
                    return Err(Error::Data(format!(
                        "manifest record {} is not hr\\tlr\\tspec",
                        i + 2
                    )))
                }
            }
        }
        Ok(DatasetManifest {
            image_size,
            scale_factor,
            split,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_text())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        Self::from_text(&text)
    }

    /// Digest over the manifest text; identical generation inputs yield an
    /// identical checksum.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex_prefix(&digest, 16)
    }
}

pub fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::new();
    for b in bytes {
        let _ = write!(out, "{b:02x}");
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

/// One training/evaluation sample: the bicubic-upsampled LR input and the
/// HR target, plus the generator's attribute record.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub image_size: usize,
    pub scale_factor: usize,
    pub pairs: Vec<SamplePair>,
}

/// Renders a synthetic dataset to disk: hr/NNNNN.ppm, lr/NNNNN.ppm and a
/// manifest.tsv next to them. Returns the manifest path.
pub fn generate_dataset(
    out_dir: impl AsRef<Path>,
    seed: u64,
    count: usize,
    image_size: usize,
    scale_factor: usize,
    split: &str,
) -> Result<PathBuf> {
    if image_size % scale_factor != 0 {
        return Err(Error::Data(format!(
            "scale factor {scale_factor} does not divide image size {image_size}"
        )));
    }
    let dir = out_dir.as_ref();
    for sub in ["hr", "lr"] {
        fs::create_dir_all(dir.join(sub))
            .map_err(|e| Error::io(dir.join(sub).display().to_string(), e))?;
    }
    let mut entries = Vec::with_capacity(count);
    for (i, (hr, spec)) in generate_synthetic(seed, count, image_size).into_iter().enumerate() {
        let hr_rel = format!("hr/{i:05}.ppm");
        let lr_rel = format!("lr/{i:05}.ppm");
        let low = bicubic_resample(&hr, image_size / scale_factor)?;
        write_image(&hr, dir.join(&hr_rel))?;
        write_image(&low, dir.join(&lr_rel))?;
        entries.push(ManifestEntry {
            hr_path: hr_rel,
            lr_path: lr_rel,
            spec,
        });
    }
    let manifest = DatasetManifest {
        image_size,
        scale_factor,
        split: split.to_string(),
        entries,
    };
    let path = dir.join("manifest.tsv");
    manifest.save(&path)?;
    Ok(path)
}

/// Loads every pair referenced by a manifest. The network input x is the
/// stored LR file re-upsampled to the declared size.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let y = read_image(base.join(&entry.hr_path))?;
        if y.shape() != [3, manifest.image_size, manifest.image_size] {
            return Err(Error::Data(format!(
                "{} decodes to {:?}, manifest declares {}",
                entry.hr_path,
                y.shape(),
                manifest.image_size
            )));
        }
        let lr = read_image(base.join(&entry.lr_path))?;
        let expected_lr = manifest.image_size / manifest.scale_factor;
        if lr.shape() != [3, expected_lr, expected_lr] {
            return Err(Error::Data(format!(
                "{} decodes to {:?}, expected extent {}",
                entry.lr_path,
                lr.shape(),
                expected_lr
            )));
        }
        let x = bicubic_resample(&lr, manifest.image_size)?;
        pairs.push(SamplePair {
            x,
            y,
            spec: entry.spec.clone(),
        });
    }
    Ok(Dataset {
        image_size: manifest.image_size,
        scale_factor: manifest.scale_factor,
        pairs,
    })
}

/// In-memory dataset without touching disk; pairs use the in-memory
/// degradation x = up(down(hr)) with the same resampler the files go
/// through, minus the 8-bit quantization.
pub fn synthesize_dataset(
    seed: u64,
    count: usize,
    image_size: usize,
    scale_factor: usize,
) -> Result<Dataset> {
    let mut pairs = Vec::with_capacity(count);
    for (hr, spec) in generate_synthetic(seed, count, image_size) {
        let x = degrade(&hr, scale_factor)?;
        pairs.push(SamplePair { x, y: hr, spec });
    }
    Ok(Dataset {
        image_size,
        scale_factor,
        pairs,
    })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalable parameterization of all three networks. The defaults reproduce
/// the full-scale layout; [`ArchConfig::toy`] shrinks everything to sizes a
/// test suite can train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Square input/output extent in pixels.
    pub image_size: usize,
    /// Downsampling factor the dataset applies before bicubic re-upsampling.
    pub scale_factor: usize,
    /// Channel width of every trunk convolution.
    pub base_channels: usize,
    /// Residual blocks in the encoder stack.
    pub enc_res_blocks: usize,
    /// Residual blocks in the decoder stack.
    pub dec_res_blocks: usize,
    pub latent_channels: usize,
    /// Square spatial extent of the latent map.
    pub latent_size: usize,
    pub color_channels: usize,
}

impl ArchConfig {
    pub fn full_scale() -> Self {
        ArchConfig {
            image_size: 128,
            scale_factor: 8,
            base_channels: 64,
            enc_res_blocks: 12,
            dec_res_blocks: 3,
            latent_channels: 64,
            latent_size: 8,
            color_channels: 3,
        }
    }

    /// Desk-scale configuration: 32x32 images, 16 channels, 2 encoder
    /// residual blocks, 16x4x4 latent.
    pub fn toy(scale_factor: usize) -> Self {
        ArchConfig {
            image_size: 32,
            scale_factor,
            base_channels: 16,
            enc_res_blocks: 2,
            dec_res_blocks: 1,
            latent_channels: 16,
            latent_size: 4,
            color_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 4 || self.image_size % 2 != 0 {
            return Err(Error::Config(format!(
                "image_size must be an even extent >= 4, got {}",
                self.image_size
            )));
        }
        if self.latent_size == 0 || self.image_size % self.latent_size != 0 {
            return Err(Error::Config(format!(
                "latent_size {} does not divide image_size {}",
                self.latent_size, self.image_size
            )));
        }
        let ratio = self.image_size / self.latent_size;
        if ratio < 2 || !ratio.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size/latent_size must be a power of two >= 2, got {ratio}"
            )));
        }
        if ratio == 2 && self.latent_channels != self.base_channels {
            return Err(Error::Config(
                "with image_size/latent_size == 2 the latent feeds the encoder map \
                 directly, so latent_channels must equal base_channels"
                    .into(),
            ));
        }
        if self.scale_factor == 0 || self.image_size % self.scale_factor != 0 {
            return Err(Error::Config(format!(
                "scale_factor {} does not divide image_size {}",
                self.scale_factor, self.image_size
            )));
        }
        if self.base_channels == 0 || self.latent_channels == 0 || self.color_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.enc_res_blocks == 0 || self.dec_res_blocks == 0 {
            return Err(Error::Config("residual block counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial extent of the encoder output feature map.
    pub fn encoder_spatial(&self) -> usize {
        self.image_size / 2
    }

    /// Stride-2 deconv blocks bridging the latent map up to the encoder map.
    pub fn branch_blocks(&self) -> usize {
        log2(self.encoder_spatial() / self.latent_size)
    }

    /// Stride-2 stages taking a full image down to the latent extent.
    pub fn trunk_stages(&self) -> usize {
        log2(self.image_size / self.latent_size)
    }

    pub fn head_mid_channels(&self) -> usize {
        (self.base_channels / 2).max(1)
    }

    pub fn latent_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.latent_channels, self.latent_size, self.latent_size]
    }

    pub fn image_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.color_channels, self.image_size, self.image_size]
    }
}

fn log2(mut n: usize) -> usize {
    let mut out = 0;
    while n > 1 {
        n /= 2;
        out += 1;
    }
    out
}

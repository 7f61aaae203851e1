use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FACE_SIZE;

/// Number of 2× down-sampling blocks between the stem and the bottleneck.
pub const DEPTH: usize = 5;
/// Index (0-based) of the down block whose output is the 64×64 skip feature.
pub const SKIP_BLOCK: usize = 1;
/// Length of the bottleneck code.
pub const LATENT_DIM: usize = 256;

/// Architecture hyper-parameters. Every parameter shape is a function of this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub resolution: usize,
    /// Channel count of the stem; deeper stages use multiples of it.
    pub base_width: usize,
    /// Residual blocks per resolution level (the first one resamples).
    pub blocks_per_level: usize,
    pub latent_dim: usize,
    pub attention: bool,
    /// RGB plus the mask channel.
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: FACE_SIZE,
            base_width: 8,
            blocks_per_level: 1,
            latent_dim: LATENT_DIM,
            attention: true,
            input_channels: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution != FACE_SIZE {
            return Err(Error::Config(format!(
                "model resolution must be {FACE_SIZE} (got {})",
                self.resolution
            )));
        }
        if !self.resolution.is_multiple_of(1 << DEPTH) {
            return Err(Error::Config(format!(
                "resolution {} not divisible by 2^{DEPTH}",
                self.resolution
            )));
        }
        if self.latent_dim != LATENT_DIM {
            return Err(Error::Config(format!(
                "latent dimension must be {LATENT_DIM} (got {})",
                self.latent_dim
            )));
        }
        if self.input_channels != 4 {
            return Err(Error::Config(format!(
                "input channels must be 4 (RGB + mask), got {}",
                self.input_channels
            )));
        }
        if self.base_width == 0 || self.blocks_per_level == 0 {
            return Err(Error::Config("base_width and blocks_per_level must be positive".into()));
        }
        Ok(())
    }

    /// Channels after each encoder down block; entry `SKIP_BLOCK` is the skip width.
    pub fn encoder_widths(&self) -> [usize; DEPTH] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 4 * w, 4 * w]
    }

    /// Channels after each decoder up block, mirroring the encoder.
    pub fn decoder_widths(&self) -> [usize; DEPTH] {
        let w = self.base_width;
        [4 * w, 4 * w, 2 * w, w, w]
    }

    pub fn bottleneck_side(&self) -> usize {
        self.resolution >> DEPTH
    }

    pub fn skip_side(&self) -> usize {
        self.resolution >> (SKIP_BLOCK + 1)
    }

    /// Decoder block index whose output has the skip feature's resolution.
    pub fn fuse_block(&self) -> usize {
        DEPTH - SKIP_BLOCK - 2
    }

    pub fn skip_channels(&self) -> usize {
        self.encoder_widths()[SKIP_BLOCK]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_geometry() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.skip_side(), 64);
        assert_eq!(c.bottleneck_side(), 8);
        // decoder block `fuse_block` ends at 8 · 2^(fuse_block + 1)
        assert_eq!(c.bottleneck_side() << (c.fuse_block() + 1), 64);
        assert_eq!(c.decoder_widths()[c.fuse_block()], c.skip_channels());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = ModelConfig {
            latent_dim: 128,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            resolution: 200,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            base_width: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

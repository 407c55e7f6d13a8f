use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 32,
            channels: 3,
            patch_size: 4,
            embed_dim: 32,
            num_heads: 4,
            num_blocks: 2,
            mlp_ratio: 4,
        }
    }
}

impl EncoderConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(LabError::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(LabError::Config(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.channels == 0 || self.num_blocks == 0 || self.mlp_ratio == 0 {
            return Err(LabError::Config("channels, blocks and mlp ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub num_heads: usize,
    pub num_blocks: usize,
    pub mlp_ratio: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            num_heads: 4,
            num_blocks: 2,
            mlp_ratio: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub const LN_EPS: f64 = 1e-5;

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let d = self.decoder;
        if d.num_heads == 0 || self.encoder.embed_dim % d.num_heads != 0 || d.num_blocks == 0 || d.mlp_ratio == 0 {
            return Err(LabError::Config(format!("invalid decoder config {d:?}")));
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which network the parameters describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// HSI and LiDAR encoders fused by LiDAR-query cross-attention.
    CrossAttention,
    /// HSI encoder only, mean-pooled into the classifier.
    HsiOnly,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::CrossAttention
    }
}

fn d_embed() -> usize {
    256
}
fn d_layers() -> usize {
    3
}
fn d_heads() -> usize {
    8
}
fn d_head_dim() -> usize {
    128
}
fn d_mlp() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub bands: usize,
    pub lidar_channels: usize,
    pub num_classes: usize,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
    #[serde(default = "d_layers")]
    pub encoder_layers: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_head_dim")]
    pub head_dim: usize,
    #[serde(default = "d_mlp")]
    pub mlp_dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub arch: Architecture,
}

impl ModelConfig {
    /// Embedding 256, 3 encoder layers of 8 heads × 128, MLP width 256.
    pub fn with_defaults(patch_size: usize, bands: usize, lidar_channels: usize, num_classes: usize) -> Self {
        Self {
            patch_size,
            bands,
            lidar_channels,
            num_classes,
            embed_dim: d_embed(),
            encoder_layers: d_layers(),
            heads: d_heads(),
            head_dim: d_head_dim(),
            mlp_dim: d_mlp(),
            seed: 0,
            arch: Architecture::CrossAttention,
        }
    }

    /// Houston 2013 scene: 9×9 patches, 144 bands, one DSM channel, 15 classes.
    pub fn houston() -> Self {
        Self::with_defaults(9, 144, 1, 15)
    }

    /// Tiny network for gradient checks.
    pub fn micro(patch_size: usize, bands: usize, num_classes: usize, embed_dim: usize, heads: usize) -> Self {
        Self {
            patch_size,
            bands,
            lidar_channels: 1,
            num_classes,
            embed_dim,
            encoder_layers: 1,
            heads,
            head_dim: embed_dim / heads.max(1),
            mlp_dim: embed_dim,
            seed: 0,
            arch: Architecture::CrossAttention,
        }
    }

    pub fn tokens_len(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("patch_size", self.patch_size),
            ("bands", self.bands),
            ("lidar_channels", self.lidar_channels),
            ("num_classes", self.num_classes),
            ("embed_dim", self.embed_dim),
            ("encoder_layers", self.encoder_layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_dim", self.mlp_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model config: {name} must be positive")));
        }
        if self.patch_size % 2 == 0 {
            return Err(Error::Config(format!(
                "model config: patch_size must be odd, got {}",
                self.patch_size
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("bad model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }
}

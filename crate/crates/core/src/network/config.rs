use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pooling::PoolingVariant;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Channels at stride 4; strides 8 and 16 carry 2x and 4x this.
    pub channel_base: usize,
    /// Width of the aggregated stride-4 map and every prediction branch.
    pub head_channels: usize,
    pub deform_kernel: usize,
    pub pooling_variant: PoolingVariant,
    pub with_bcca: bool,
    /// `(height, width)`, both divisible by 16.
    pub input_size: (usize, usize),
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            num_classes: 5,
            channel_base: 64,
            head_channels: 64,
            deform_kernel: 3,
            pooling_variant: PoolingVariant::Vhcp,
            with_bcca: true,
            input_size: (512, 512),
        }
    }

    pub fn toy() -> Self {
        ModelConfig {
            num_classes: 3,
            channel_base: 16,
            head_channels: 16,
            deform_kernel: 3,
            pooling_variant: PoolingVariant::Vhcp,
            with_bcca: true,
            input_size: (96, 96),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!(
                "input_size {h}x{w} must be positive and divisible by 16"
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.channel_base < 2 || self.channel_base % 2 != 0 {
            return Err(Error::Config(format!(
                "channel_base must be an even number >= 2, got {}",
                self.channel_base
            )));
        }
        if self.head_channels < 2 || self.head_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "head_channels must be an even number >= 2, got {}",
                self.head_channels
            )));
        }
        if self.deform_kernel % 2 == 0 {
            return Err(Error::Config("deform_kernel must be odd".into()));
        }
        Ok(())
    }

    /// Output stride of every prediction map.
    pub fn stride(&self) -> usize {
        4
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.input_size.0 / 4, self.input_size.1 / 4)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

use crate::error::{LntError, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Raw input channels.
    pub in_channels: usize,
    /// Latent embedding size (also the width of every encoder layer).
    pub dim_z: usize,
    /// Context vector size.
    pub dim_c: usize,
    /// Encoder filter sizes, first layer first.
    pub filters: Vec<usize>,
    /// Encoder strides; their product is the downsample factor.
    pub strides: Vec<usize>,
    pub conv_bias: bool,
    /// Number of prediction horizons `K`.
    pub horizons: usize,
    /// Number of learned transformations `L`.
    pub transforms: usize,
    /// Hidden width of each transformation MLP.
    pub bank_width: usize,
    /// Number of linear layers per transformation MLP (the last maps back to `dim_z`).
    pub bank_layers: usize,
    /// Whether the contrastive-predictive and transformation losses share `W_k`.
    pub shared_heads: bool,
}

impl ModelConfig {
    /// Down-sized configuration for multichannel sensor-like data:
    /// 128-d latents, 32-d contexts, filters and strides (3, 3, 4, 2).
    pub fn small(in_channels: usize) -> Self {
        ModelConfig {
            in_channels,
            dim_z: 128,
            dim_c: 32,
            filters: vec![3, 3, 4, 2],
            strides: vec![3, 3, 4, 2],
            conv_bias: true,
            horizons: 4,
            transforms: 12,
            bank_width: 24,
            bank_layers: 2,
            shared_heads: true,
        }
    }

    /// Full-size configuration for raw audio (downsample factor 160).
    pub fn audio(in_channels: usize) -> Self {
        ModelConfig {
            in_channels,
            dim_z: 512,
            dim_c: 256,
            filters: vec![10, 8, 4, 4, 4],
            strides: vec![5, 4, 2, 2, 2],
            conv_bias: true,
            horizons: 12,
            transforms: 12,
            bank_width: 64,
            bank_layers: 3,
            shared_heads: true,
        }
    }

    pub fn preset(name: &str, in_channels: usize) -> Result<Self> {
        match name {
            "small" => Ok(Self::small(in_channels)),
            "audio" => Ok(Self::audio(in_channels)),
            other => Err(LntError::Config(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(LntError::Config(m.to_string()));
        if self.in_channels == 0 || self.dim_z == 0 || self.dim_c == 0 {
            return fail("channel and embedding sizes must be positive");
        }
        if self.filters.is_empty() || self.filters.len() != self.strides.len() {
            return fail("filters and strides must be non-empty and of equal length");
        }
        if self.filters.iter().chain(&self.strides).any(|&v| v == 0) {
            return fail("filters and strides must be >= 1");
        }
        if self.horizons == 0 {
            return fail("at least one prediction horizon is required");
        }
        if self.transforms < 2 {
            return fail("at least two transformations are required");
        }
        if self.bank_layers == 0 || (self.bank_layers > 1 && self.bank_width == 0) {
            return fail("transformation MLPs need at least one layer of positive width");
        }
        Ok(())
    }

    /// Raw frames per latent step.
    pub fn downsample(&self) -> usize {
        self.strides.iter().product()
    }

    /// Raw frames seen by one latent step.
    pub fn receptive_field(&self) -> usize {
        self.filters
            .iter()
            .zip(&self.strides)
            .rev()
            .fold(1, |rf, (&f, &s)| (rf - 1) * s + f)
    }

    /// Number of latent steps produced from `t` raw frames (0 if too short).
    pub fn latent_len(&self, t: usize) -> usize {
        let mut len = t;
        for (&f, &s) in self.filters.iter().zip(&self.strides) {
            if len < f {
                return 0;
            }
            len = (len - f) / s + 1;
        }
        len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_config_downsamples_by_72() {
        let c = ModelConfig::small(3);
        assert_eq!(c.downsample(), 72);
        assert_eq!(c.receptive_field(), 72);
        assert_eq!(c.latent_len(72), 1);
        assert_eq!(c.latent_len(720), 10);
        assert_eq!(c.latent_len(71), 0);
        c.validate().unwrap();
    }

    #[test]
    fn audio_config_downsamples_by_160() {
        let c = ModelConfig::audio(1);
        assert_eq!(c.downsample(), 160);
        assert_eq!(c.receptive_field(), 465);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_single_transform() {
        let mut c = ModelConfig::small(1);
        c.transforms = 1;
        assert!(c.validate().is_err());
    }
}

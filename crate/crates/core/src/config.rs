//! Model and training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which model variant to build. The three reduced variants drive the
/// ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Isotropic unit-variance noise instead of the history-derived scale.
    NoNoiseScaling,
    /// Single linear map instead of the GRU / location-attention / Fourier
    /// history encoder.
    NoHistEncoding,
    /// Linear context map instead of the cross-attention transformer block.
    NoCrossAttention,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoNoiseScaling,
        Ablation::NoHistEncoding,
        Ablation::NoCrossAttention,
        Ablation::None,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "crossfusor",
            Ablation::NoNoiseScaling => "crossfusor-no-noise-scaling",
            Ablation::NoHistEncoding => "crossfusor-no-hist-encoding",
            Ablation::NoCrossAttention => "crossfusor-no-cross-attention",
        }
    }
}

/// Architecture hyperparameters. Defaults follow the reference
/// configuration: 30-frame histories, 50-frame futures, GRU hidden size 50,
/// 5 attention heads over an embedding of 50, feed-forward width 100, U-Net
/// channels (8, 16, 32, 64, 128), and a 200-step linear noise schedule from
/// 1e-4 to 0.02.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub history_len: usize,
    /// Future horizon in frames. Also the embedding width of the encoders,
    /// so the per-feature noise scale aligns one-to-one with the frames
    /// being noised.
    pub future_len: usize,
    pub gru_hidden: usize,
    pub attention_heads: usize,
    pub feed_forward: usize,
    pub unet_channels: Vec<usize>,
    /// Diffusion step count K.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub ablation: Ablation,
    /// Detach the noise scale from the encoder gradient path.
    #[serde(default)]
    pub sigma_stop_grad: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history_len: 30,
            future_len: 50,
            gru_hidden: 50,
            attention_heads: 5,
            feed_forward: 100,
            unet_channels: vec![8, 16, 32, 64, 128],
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            ablation: Ablation::None,
            sigma_stop_grad: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.history_len == 0 || self.future_len == 0 {
            return fail("history_len and future_len must be positive".into());
        }
        if self.gru_hidden == 0 {
            return fail("gru_hidden must be positive".into());
        }
        if self.attention_heads == 0 || self.future_len % self.attention_heads != 0 {
            return fail(format!(
                "attention_heads ({}) must divide the embedding width ({})",
                self.attention_heads, self.future_len
            ));
        }
        if self.feed_forward == 0 {
            return fail("feed_forward must be positive".into());
        }
        if self.unet_channels.len() < 2 {
            return fail("unet_channels needs at least two stages".into());
        }
        if self.unet_channels.iter().any(|&c| c == 0) {
            return fail("unet_channels must be positive".into());
        }
        if self.steps < 2 {
            return fail("steps must be at least 2".into());
        }
        if !(self.beta_start > 0.0 && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return fail(format!(
                "need 0 < beta_start < beta_end < 1, got {} and {}",
                self.beta_start, self.beta_end
            ));
        }
        Ok(())
    }
}

/// Training hyperparameters. Defaults follow the reference setup: a
/// decoupled-weight-decay adaptive-moment optimizer at learning rate 0.001,
/// batch size 64, 10 epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Hard cap on optimizer steps across all epochs (used by the overfit
    /// harness); `None` runs every epoch to completion.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Stop once an epoch's mean loss falls below this fraction of the
    /// first epoch's mean loss.
    #[serde(default)]
    pub relative_stop: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            weight_decay: 0.01,
            max_steps: None,
            relative_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

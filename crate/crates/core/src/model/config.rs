use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer stack layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Multi-head attention followed by a feed-forward block in every layer.
    Transformer,
    /// Feed-forward blocks only; the attention sublayers are removed.
    FeedForward,
}

/// Which final-layer tokens feed the classification head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    Cls,
    MeanTokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of input metrics.
    pub p: usize,
    pub d_token: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// FFN hidden width as a multiple of `d_token` (truncated).
    pub ffn_hidden_factor: f64,
    pub dropout_rate: f64,
    pub architecture: Architecture,
    /// Readout used by the feed-forward architecture. Without attention the
    /// `[CLS]` token never sees the metric tokens, so the default pools all
    /// tokens instead.
    pub feed_forward_readout: Readout,
    pub layer_norm_eps: f64,
}

pub const N_CLASSES: usize = 2;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 52,
            d_token: 32,
            n_heads: 8,
            n_layers: 3,
            ffn_hidden_factor: 4.0 / 3.0,
            dropout_rate: 0.1,
            architecture: Architecture::Transformer,
            feed_forward_readout: Readout::MeanTokens,
            layer_norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.d_token == 0 || self.n_heads == 0 {
            return Err(Error::config("p, d_token and n_heads must be positive"));
        }
        if !self.d_token.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_token {} is not divisible by n_heads {}",
                self.d_token, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::config("n_layers must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.ffn_hidden() == 0 {
            return Err(Error::config("ffn_hidden_factor yields an empty hidden layer"));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::config("layer_norm_eps must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_token / self.n_heads
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.d_token as f64 * self.ffn_hidden_factor) as usize
    }

    pub fn n_tokens(&self) -> usize {
        self.p + 1
    }

    pub fn has_attention(&self) -> bool {
        self.architecture == Architecture::Transformer
    }

    pub fn readout(&self) -> Readout {
        match self.architecture {
            Architecture::Transformer => Readout::Cls,
            Architecture::FeedForward => self.feed_forward_readout,
        }
    }
}

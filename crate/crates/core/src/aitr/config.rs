use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-layer classification tokens are reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Scaled dot-product self-attention over the layer tokens, then the mean.
    Attention,
    /// Element-wise maximum over layers.
    Max,
    /// Convex combination with softmax-normalized learned layer weights.
    Weighted,
    /// Only the last layer's token (a plain encoder classifier).
    None,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Attention => "attention",
            Pooling::Max => "max",
            Pooling::Weighted => "weighted",
            Pooling::None => "none",
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Pooling::Attention),
            "max" => Ok(Pooling::Max),
            "weighted" => Ok(Pooling::Weighted),
            "none" => Ok(Pooling::None),
            other => Err(Error::InvalidConfig(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AitrConfig {
    pub n_layers: usize,
    /// Attention heads per encoder layer.
    pub heads: Vec<usize>,
    /// Feed-forward hidden width.
    pub ff_width: usize,
    /// Embedding dimension.
    pub dim: usize,
    pub dropout: f64,
    pub pooling: Pooling,
    /// Append the projected similarity vector as the last input token.
    pub use_muse: bool,
    /// Learned positional embeddings added to the input tokens.
    pub positional: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for AitrConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            heads: vec![1, 2, 4, 8],
            ff_width: 2048,
            dim: 768,
            dropout: 0.1,
            pooling: Pooling::Attention,
            use_muse: true,
            positional: false,
            lr: 5e-5,
            weight_decay: 0.01,
            batch_size: 512,
            max_epochs: 50,
            patience: 10,
            seed: 0,
        }
    }
}

impl AitrConfig {
    /// Tokens per sample: class token, five fusion tokens, two evidence
    /// tokens and (optionally) the similarity token.
    pub fn seq_len(&self) -> usize {
        8 + self.use_muse as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 {
            return bad("n_layers must be positive".into());
        }
        if self.heads.len() != self.n_layers {
            return bad(format!("{} head counts for {} layers", self.heads.len(), self.n_layers));
        }
        if self.dim == 0 || self.ff_width == 0 {
            return bad("dim and ff_width must be positive".into());
        }
        if let Some(h) = self.heads.iter().find(|&&h| h == 0 || self.dim % h != 0) {
            return bad(format!("head count {h} does not divide dim {}", self.dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Short identifier used in reports, e.g. `attention+muse lr=5e-5 z=2048 h=1-2-4-8`.
    pub fn label(&self) -> String {
        let heads: Vec<String> = self.heads.iter().map(|h| h.to_string()).collect();
        format!(
            "{}{} lr={:e} z={} h={}",
            self.pooling.name(),
            if self.use_muse { "+muse" } else { "" },
            self.lr,
            self.ff_width,
            heads.join("-")
        )
    }
}

/// The tuning grid: learning rate x feed-forward width x head schedule.
///
/// Mixed head schedules only matter when intermediate layers are pooled, so
/// they are dropped when `base.pooling` is [`Pooling::None`].
pub fn default_grid(base: &AitrConfig) -> Vec<AitrConfig> {
    let mut heads: Vec<Vec<usize>> = vec![vec![4, 4, 4, 4], vec![8, 8, 8, 8]];
    if base.pooling != Pooling::None {
        heads.push(vec![1, 2, 4, 8]);
        heads.push(vec![8, 4, 2, 1]);
    }
    let mut grid = Vec::new();
    for lr in [1e-4, 5e-5] {
        for z in [256, 1024, 2048] {
            for h in &heads {
                grid.push(AitrConfig {
                    lr,
                    ff_width: z,
                    heads: h.clone(),
                    n_layers: h.len(),
                    ..base.clone()
                });
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = AitrConfig::default();
        c.validate().unwrap();
        assert_eq!(c.seq_len(), 9);
        assert_eq!(AitrConfig { use_muse: false, ..c }.seq_len(), 8);
    }

    #[test]
    fn rejects_bad_heads() {
        let c = AitrConfig {
            dim: 12,
            heads: vec![1, 2, 4, 8],
            ..AitrConfig::default()
        };
        assert!(c.validate().is_err());
        let c = AitrConfig {
            heads: vec![1, 2],
            ..AitrConfig::default()
        };
        assert!(c.validate().is_err());
        let c = AitrConfig {
            dropout: 1.0,
            ..AitrConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(default_grid(&AitrConfig::default()).len(), 24);
        let none = AitrConfig {
            pooling: Pooling::None,
            ..AitrConfig::default()
        };
        let g = default_grid(&none);
        assert_eq!(g.len(), 12);
        assert!(g.iter().all(|c| c.heads == [4, 4, 4, 4] || c.heads == [8, 8, 8, 8]));
    }
}

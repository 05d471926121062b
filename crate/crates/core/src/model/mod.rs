//! Gated cross-modal fusion classifier.
//!
//! Audio word embeddings `A` query text embeddings `T` through multi-head
//! scaled dot-product attention. A sigmoid gate blends the attended stream
//! with `A`, attention pooling collapses the word sequence to one vector, and
//! a two-layer MLP produces class logits:
//!
//! ```text
//! H_att = Attention(A, T, T)
//! G     = σ(H_att W_gᵀ + b_g)
//! H     = G ⊙ H_att + (1 − G) ⊙ A
//! α_i   = W_a · H_i + b_a,   w = softmax(α)
//! h     = Σ_i w_i H_i
//! logits = W2 tanh(W1 h + b1) + b2
//! ```

mod backward;
mod check;
mod forward;
mod params;

use serde::{Deserialize, Serialize};

pub use backward::{backward, batch_loss_grad, loss_and_grad};
pub use check::{gradient_check, random_sample};
pub use forward::{
    attention_pool, cross_attention, forward, gate_blend, predict, ForwardTrace,
};
pub(crate) use forward::argmax;
pub use params::{layout, param_count, FeedForward, FusionParams};

use crate::error::{Error, Result};

/// Which feature streams feed the classifier.
///
/// Single-modality variants skip the cross-attention and gate and pool the
/// chosen stream directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
    #[default]
    Both,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Text, Modality::Both];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
            Modality::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pub mlp_hidden: usize,
    pub classes: usize,
    pub include_ffn: bool,
    pub modality: Modality,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 768,
            heads: 12,
            max_len: 200,
            mlp_hidden: 256,
            classes: 2,
            include_ffn: false,
            modality: Modality::Both,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.max_len == 0 || self.mlp_hidden == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig(
                "max_len, mlp_hidden must be >= 1 and classes >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.hidden_dim
    }
}

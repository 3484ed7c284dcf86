//! The transfer network.
//!
//! A target video is embedded into `h_t`. Warm neighbors found through the
//! author, product and semantic metapaths are pooled with target attention:
//! one pool over neighbor video-id embeddings (`h2`) and one pool per metapath
//! over full neighbor features including statistics (`h3`). The fused vector
//! `h_t'` replaces `h_t` as the query of the user-side behavior attention, and
//! a three-layer MLP maps `[h_u, h_t', user]` to a click logit.
//!
//! Gradients are derived by hand; see `network.rs`.

mod attention;
mod checkpoint;
mod features;
mod input;
mod network;
mod params;

pub use attention::target_attention;
pub use checkpoint::{CHECKPOINT_VERSION, read_checkpoint, write_checkpoint, encode_checkpoint, decode_checkpoint, checkpoint_manifest};
pub use features::{FeatureStore, ItemKey, StatNormalizer, UserRecord, VideoRecord};
pub use input::{AblationMask, Featurizer, Sample, TransferInput, PathBits};
pub use network::{bce_from_logit, loss, BatchGrads, BatchOutput, SparseGrads};
pub use params::{DenseParams, EmbeddingTable, Model, Table};

/// Model hyper-parameters and feature dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub video_dim: usize,
    pub item_dim: usize,
    pub author_dim: usize,
    pub category_dim: usize,
    pub token_dim: usize,
    pub user_dim: usize,
    pub user_numeric: usize,
    /// Attention / hidden width `d`.
    pub attn_dim: usize,
    /// Prediction MLP hidden sizes.
    pub hidden: Vec<usize>,
    /// Behavior sequence cap `H`.
    pub max_behaviors: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            video_dim: 32,
            item_dim: 32,
            author_dim: 16,
            category_dim: 16,
            token_dim: 16,
            user_dim: 16,
            user_numeric: 2,
            attn_dim: 128,
            hidden: vec![512, 256, 128],
            max_behaviors: 50,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A tiny configuration for gradient checks.
    pub fn toy(seed: u64) -> Self {
        ModelConfig {
            video_dim: 4,
            item_dim: 3,
            author_dim: 3,
            category_dim: 2,
            token_dim: 2,
            user_dim: 3,
            user_numeric: 2,
            attn_dim: 8,
            hidden: vec![7, 5, 4],
            max_behaviors: 4,
            seed,
        }
    }

    /// Width of the raw (pre-projection) item feature vector.
    pub fn raw_dim(&self) -> usize {
        self.id_dim() + crate::graph::StatVector::LEN
    }

    /// Width of the id-embedding part of the raw item vector.
    pub fn id_dim(&self) -> usize {
        self.video_dim + self.item_dim + self.author_dim + self.category_dim + self.token_dim
    }

    pub fn mlp_input_dim(&self) -> usize {
        2 * self.attn_dim + self.user_dim + self.user_numeric
    }

    pub fn validate(&self) -> crate::Result<()> {
        let dims = [
            self.video_dim,
            self.item_dim,
            self.author_dim,
            self.category_dim,
            self.token_dim,
            self.user_dim,
            self.attn_dim,
            self.max_behaviors,
        ];
        if dims.contains(&0) || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(crate::Error::Invalid("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

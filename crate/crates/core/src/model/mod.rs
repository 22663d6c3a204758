//! Decoder-only transformer: RMSNorm pre-normalization, grouped-query
//! attention with rotary embeddings, a non-gated SiLU MLP and an untied
//! output head. Forward and backward passes are written out by hand.

mod checkpoint;
mod forward;
pub mod ops;
mod params;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, Checkpoint, CheckpointHeader,
    TensorMeta, CHECKPOINT_VERSION,
};
pub use forward::{
    attention_gqa, backward, forward, forward_cached, Cache, ForwardOptions, ForwardOutput,
};
pub use params::{init_params, is_norm_weight, Init, LayerParams, Parameters};
pub use tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

use crate::error::{Error, Result};

/// Floating-point element type of parameters and activations.
pub trait Scalar:
    Float + FromPrimitive + Sum + Send + Sync + Debug + Display + Default + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite cast")
    }
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite cast")
    }
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> &'static str {
        match self {
            Precision::F32 => f32::DTYPE,
            Precision::F64 => f64::DTYPE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub head_dim: usize,
    pub n_heads: usize,
    pub kv_groups: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub dropout_p: f64,
    pub rope_base: f64,
    pub norm_eps: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 24,
            d_model: 2048,
            d_ff: 8192,
            head_dim: 64,
            n_heads: 32,
            kv_groups: 8,
            vocab_size: 32768,
            max_seq: 2048,
            dropout_p: 0.1,
            rope_base: 10000.0,
            norm_eps: 1e-5,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.d_model == 0 || self.d_ff == 0 || self.vocab_size == 0 || self.max_seq == 0 {
            return bad("d_model, d_ff, vocab_size and max_seq must be positive");
        }
        if self.n_heads == 0 || self.kv_groups == 0 || self.head_dim == 0 {
            return bad("n_heads, kv_groups and head_dim must be positive");
        }
        if self.d_model != self.n_heads * self.head_dim {
            return bad(&format!(
                "d_model {} != n_heads {} x head_dim {}",
                self.d_model, self.n_heads, self.head_dim
            ));
        }
        if !self.n_heads.is_multiple_of(self.kv_groups) {
            return bad(&format!(
                "n_heads {} not divisible by kv_groups {}",
                self.n_heads, self.kv_groups
            ));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::OddHeadDim(self.head_dim));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if !(self.rope_base > 1.0 && self.norm_eps >= 0.0) {
            return bad("rope_base must exceed 1 and norm_eps be non-negative");
        }
        Ok(())
    }

    pub fn kv_dim(&self) -> usize {
        self.kv_groups * self.head_dim
    }

    /// Key/value head serving query head `h`.
    pub fn kv_group_of(&self, h: usize) -> usize {
        h * self.kv_groups / self.n_heads
    }

    /// Standard deviation of the small init, `sqrt(2 / (5 d_model))`.
    pub fn small_init_std(&self) -> f64 {
        (2.0 / (5.0 * self.d_model as f64)).sqrt()
    }

    /// Small-init std divided by `sqrt(2 n_layers)`, for W_O and W_2.
    pub fn scaled_init_std(&self) -> f64 {
        self.small_init_std() / (2.0 * self.n_layers.max(1) as f64).sqrt()
    }

    /// Xavier normal std of the output head.
    pub fn xavier_std(&self) -> f64 {
        (2.0 / (self.d_model + self.vocab_size) as f64).sqrt()
    }
}

/// Number of scalars in a model built from `config`.
pub fn count_params(config: &ModelConfig) -> u64 {
    let d = config.d_model as u64;
    let kv = config.kv_dim() as u64;
    let ff = config.d_ff as u64;
    let v = config.vocab_size as u64;
    let per_layer = 2 * d + 2 * d * d + 2 * d * kv + 2 * d * ff;
    v * d + config.n_layers as u64 * per_layer + d + d * v
}

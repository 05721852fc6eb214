//! Enrollment-conditioned time-domain masking extractor and its
//! unconditioned multi-output sibling used for blind separation baselines.

pub mod checkpoint;
pub mod layers;
mod network;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SignalError;

pub use checkpoint::{Checkpoint, CheckpointError, OptimizerMoments};
pub use network::{
    extract, extract_with_gate, separate_bss, speaker_embed, ExtractionGraph, SeparationGraph,
};
pub use params::{param_specs, Init, ModelParams, ParamSpec, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameter shape error: {0}")]
    Shape(String),
    #[error("parameter {0} contains non-finite values")]
    NonFinite(String),
    #[error("{what} has {len} samples, shorter than the {min}-sample kernel")]
    TooShort {
        what: &'static str,
        len: usize,
        min: usize,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Filterbank size.
    pub n_filters: usize,
    /// Filter length in samples; the hop is half of it.
    pub kernel_len: usize,
    pub bottleneck_ch: usize,
    pub conv_ch: usize,
    pub n_repeats: usize,
    pub blocks_per_repeat: usize,
    pub embed_dim: usize,
    /// 0-based position of the multiplicative adaptation layer in the
    /// flattened block stack.
    pub fusion_block_index: usize,
    /// 1 for a speaker extractor, M >= 2 for a blind separator.
    pub n_outputs: usize,
}

impl ExtractorConfig {
    /// Full-size configuration: N=512, L=16, B=128, H=512, R=3, X=8, a
    /// 256-dimensional embedding, fused at the 7th block.
    pub fn full() -> Self {
        Self {
            n_filters: 512,
            kernel_len: 16,
            bottleneck_ch: 128,
            conv_ch: 512,
            n_repeats: 3,
            blocks_per_repeat: 8,
            embed_dim: 256,
            fusion_block_index: 6,
            n_outputs: 1,
        }
    }

    /// Small default used by tests and desk-scale runs.
    pub fn toy() -> Self {
        Self {
            n_filters: 64,
            kernel_len: 16,
            bottleneck_ch: 32,
            conv_ch: 64,
            n_repeats: 2,
            blocks_per_repeat: 4,
            embed_dim: 32,
            fusion_block_index: 3,
            n_outputs: 1,
        }
    }

    /// Same trunk with `m` unconditioned outputs.
    pub fn with_outputs(&self, m: usize) -> Self {
        Self {
            n_outputs: m,
            ..self.clone()
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_repeats * self.blocks_per_repeat
    }

    pub fn hop(&self) -> usize {
        self.kernel_len / 2
    }

    pub fn dilation(&self, block: usize) -> usize {
        1 << (block % self.blocks_per_repeat)
    }

    pub fn is_extractor(&self) -> bool {
        self.n_outputs == 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("n_filters", self.n_filters),
            ("kernel_len", self.kernel_len),
            ("bottleneck_ch", self.bottleneck_ch),
            ("conv_ch", self.conv_ch),
            ("n_repeats", self.n_repeats),
            ("blocks_per_repeat", self.blocks_per_repeat),
            ("embed_dim", self.embed_dim),
            ("n_outputs", self.n_outputs),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.kernel_len.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "kernel_len must be even, got {}",
                self.kernel_len
            )));
        }
        if self.blocks_per_repeat > 30 {
            return Err(ModelError::Config("blocks_per_repeat too large for dilation".into()));
        }
        if self.fusion_block_index >= self.n_blocks() {
            return Err(ModelError::Config(format!(
                "fusion_block_index {} outside 0..{}",
                self.fusion_block_index,
                self.n_blocks()
            )));
        }
        Ok(())
    }
}

/// Fresh parameters: fan-in scaled uniform weights, unit norm gains, zero biases.
pub fn init_params<R: Rng + ?Sized>(cfg: &ExtractorConfig, rng: &mut R) -> Result<ModelParams, ModelError> {
    ModelParams::init(cfg, rng)
}

//! LSTM encoder-decoder with global general attention.
//!
//! The source is read by two independent LSTM stacks, one left-to-right and
//! one right-to-left; their top-layer outputs are summed per position to
//! form the attention memory. Each decoder layer starts from the sum of the
//! two encoder stacks' final states for that layer. At every target step the
//! top decoder state attends over the memory, the context and state are
//! combined as `h̃ = tanh(W_c [c; h])`, and `h̃` feeds both the word softmax and
//! an auxiliary case-factor softmax. With input feeding, `h̃` is also
//! concatenated to the next step's input.
//!
//! Everything is computed in `f64`.

mod attention;
mod checkpoint;
mod lstm;
mod network;
mod params;
mod tensor;

use thiserror::Error;

pub use attention::{attention, masked_softmax};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lstm::{lstm_step, LstmLayer};
pub use network::{
    backward, decode_step, encode, forward_loss, Batch, DecoderState, Encoded, Example,
    ForwardCache, LossStats, StepOutput,
};
pub use params::ModelParams;
pub use tensor::{check_finite, Tensor};

use crate::subword::{BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Network dimensions and wiring flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embedding: usize,
    /// Width of the case-factor embedding concatenated to each word embedding.
    pub case_embedding: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Feed the previous attentional state `h̃` into the decoder input.
    pub input_feed: bool,
    /// Longest source or target sequence, in tokens (excluding `<eos>`).
    pub max_len: usize,
    pub init_scale: f64,
    pub bos_id: usize,
    pub eos_id: usize,
    pub pad_id: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            src_vocab: crate::subword::DEFAULT_VOCAB_SIZE,
            tgt_vocab: crate::subword::DEFAULT_VOCAB_SIZE,
            embedding: 500,
            case_embedding: 8,
            hidden: 1000,
            layers: 4,
            input_feed: true,
            max_len: 80,
            init_scale: 0.1,
            bos_id: BOS_ID,
            eos_id: EOS_ID,
            pad_id: PAD_ID,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.src_vocab == 0 || self.tgt_vocab == 0 {
            return bad("vocabularies must be non-empty");
        }
        if self.hidden == 0 || self.layers == 0 || self.embedding + self.case_embedding == 0 {
            return bad("hidden size, layer count and embedding width must be positive");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be a non-negative number");
        }
        for (name, id) in [("bos", self.bos_id), ("eos", self.eos_id), ("pad", self.pad_id)] {
            if id >= self.tgt_vocab.max(self.src_vocab) {
                return Err(ModelError::Config(format!("{name} id {id} outside vocabulary")));
            }
        }
        if self.eos_id >= self.tgt_vocab || self.eos_id >= self.src_vocab {
            return bad("eos id must be both a source and a target token");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_system() {
        let c = ModelConfig::default();
        assert_eq!((c.layers, c.hidden, c.embedding, c.max_len), (4, 1000, 500, 80));
        assert!(c.input_feed);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs() {
        let c = ModelConfig {
            hidden: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            tgt_vocab: 2,
            src_vocab: 2,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}

//! Attentional LSTM translation with subword units, back-translation, Moore-Lewis
//! data selection and domain hyper-specialisation.
//!
//! The modules follow the data flow: [`textnorm`] and [`subword`] prepare
//! text, [`lm`] and [`select`] pick training data, [`model`] and [`train`]
//! fit the network, [`translate`] decodes and adapts it, and [`eval`] scores
//! the output.

pub mod codec;
pub mod corpus;
pub mod eval;
pub mod lm;
pub mod model;
pub mod select;
pub mod subword;
pub mod textnorm;
pub mod toy;
pub mod train;
pub mod translate;

pub use codec::TextCodec;
pub use corpus::{Provenance, SentencePair};
pub use eval::{bleu, BleuReport};
pub use lm::{NGramModel, Weights};
pub use model::{Checkpoint, Example, ModelConfig, ModelError, ModelParams};
pub use subword::{MergeTable, Vocabulary};
pub use textnorm::CaseFactor;
pub use train::{TrainConfig, TrainState, TrainingSchedule};
pub use translate::{BeamConfig, Hypothesis, Sequence, SyntheticCorpus};

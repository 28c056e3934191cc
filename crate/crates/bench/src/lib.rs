//! Shared inputs for the criterion benches.

use desknmt_core::model::{Example, ModelConfig, ModelParams};
use desknmt_core::toy::{generate, ToySizes, TOY_SEED};

/// English side of the bundled toy training data.
pub fn toy_english() -> Vec<String> {
    generate(TOY_SEED, &ToySizes::default()).file("train.en").unwrap().to_vec()
}

pub fn model(vocab: usize, hidden: usize, layers: usize) -> ModelParams {
    let config = ModelConfig {
        src_vocab: vocab,
        tgt_vocab: vocab,
        embedding: hidden,
        case_embedding: 4,
        hidden,
        layers,
        ..ModelConfig::default()
    };
    ModelParams::init(&config, 1).unwrap()
}

/// `n` copy pairs of length `len` over ids `4..vocab`.
pub fn copy_pairs(n: usize, len: usize, vocab: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let ids: Vec<usize> = (0..len).map(|j| 4 + (i * 7 + j * 3) % (vocab - 4)).collect();
            Example::uncased(ids.clone(), ids)
        })
        .collect()
}

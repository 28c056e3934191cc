pub mod bleu_oracle;
pub mod bpe_oracle;
pub mod lm_oracle;
pub mod oracle;
pub mod search_oracle;

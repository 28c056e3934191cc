//! Raw text ↔ model ids for one language side: tokenize, lowercase with case
//! factors, optional compound splitting, BPE, vocabulary lookup.
//!
//! Every piece produced from a token inherits that token's case factor; on the
//! way back a word takes the factor of its first piece.

use crate::subword::{apply_bpe, revert_bpe, MergeTable, Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK};
use crate::textnorm::{
    decode_case, encode_case, join_compounds, split_compound, tokenize, CaseFactor, CompoundConfig,
    FreqLexicon, JOIN_MARKER,
};
use crate::translate::Sequence;

#[derive(Debug, Clone)]
pub struct TextCodec {
    pub merges: MergeTable,
    pub vocab: Vocabulary,
    /// Lowercased word counts for compound splitting; `None` disables it.
    pub compounds: Option<(FreqLexicon, CompoundConfig)>,
}

impl TextCodec {
    pub fn new(merges: MergeTable, vocab: Vocabulary) -> Self {
        Self {
            merges,
            vocab,
            compounds: None,
        }
    }

    /// Lowercased (and compound-split) tokens with their factors, before BPE.
    pub fn normalize(&self, line: &str) -> (Vec<String>, Vec<CaseFactor>) {
        let enc = encode_case(&tokenize(line));
        let Some((lex, cfg)) = &self.compounds else {
            return (enc.tokens, enc.factors);
        };
        let mut tokens = Vec::with_capacity(enc.tokens.len());
        let mut factors = Vec::with_capacity(enc.tokens.len());
        for (t, f) in enc.tokens.iter().zip(enc.factors) {
            for part in split_compound(t, lex, cfg) {
                tokens.push(part);
                factors.push(f);
            }
        }
        (tokens, factors)
    }

    /// Subword pieces with factors.
    pub fn segment(&self, line: &str) -> (Vec<String>, Vec<CaseFactor>) {
        let (tokens, factors) = self.normalize(line);
        let mut pieces = Vec::new();
        let mut piece_factors = Vec::new();
        for (t, f) in tokens.iter().zip(factors) {
            for p in apply_bpe(t, &self.merges) {
                pieces.push(p);
                piece_factors.push(f);
            }
        }
        (pieces, piece_factors)
    }

    pub fn encode(&self, line: &str) -> Sequence {
        let (pieces, factors) = self.segment(line);
        Sequence::new(
            pieces.iter().map(|p| self.vocab.id(p)).collect(),
            factors.iter().map(|f| f.index()).collect(),
        )
    }

    /// Ids back to a space-separated, recased token string. Control symbols
    /// other than `<unk>` are dropped.
    pub fn decode(&self, seq: &Sequence) -> String {
        let mut pieces = Vec::new();
        let mut factors = Vec::new();
        for (i, &id) in seq.ids.iter().enumerate() {
            if matches!(id, BOS_ID | EOS_ID | PAD_ID) {
                continue;
            }
            pieces.push(self.vocab.symbol(id).to_string());
            let f = seq.cases.get(i).copied().and_then(CaseFactor::from_index);
            factors.push(f.unwrap_or(CaseFactor::NoCase));
        }
        let (words, word_factors) = regroup(&pieces, &factors, |p| p.ends_with(crate::subword::CONTINUATION), |g| {
            revert_bpe(g).tokens.concat()
        });
        let (words, word_factors) = regroup(&words, &word_factors, |w| w.ends_with(JOIN_MARKER), |g| {
            join_compounds(g).tokens.concat()
        });
        let recased = decode_case(&words, &word_factors).expect("lengths agree by construction");
        recased
            .into_iter()
            .map(|w| if w.is_empty() { UNK.to_string() } else { w })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

// Groups runs of items where every item but the last satisfies `continues`,
// merging each group with `merge` and keeping the factor of its first item.
fn regroup(
    items: &[String],
    factors: &[CaseFactor],
    continues: impl Fn(&str) -> bool,
    merge: impl Fn(&[String]) -> String,
) -> (Vec<String>, Vec<CaseFactor>) {
    let mut out = Vec::new();
    let mut out_factors = Vec::new();
    let mut start = 0;
    for i in 0..items.len() {
        if !continues(&items[i]) || i + 1 == items.len() {
            out.push(merge(&items[start..=i]));
            out_factors.push(factors[start]);
            start = i + 1;
        }
    }
    (out, out_factors)
}

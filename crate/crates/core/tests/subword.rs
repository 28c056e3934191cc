mod common;

use common::bpe_oracle;
use desknmt_core::subword::{
    apply_bpe, learn_bpe, revert_bpe, word_counts, BpeApplier, MergeTable, Vocabulary, SPECIALS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn learned_merges_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let counts = bpe_oracle::random_counts(&mut rng, 50);
        let table = learn_bpe(&counts, 10_000);
        let expected = bpe_oracle::learn(&counts, 10_000);
        assert_eq!(table.merges(), expected.as_slice(), "corpus {counts:?}");
    }
}

#[test]
fn merge_budget_is_a_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let counts = bpe_oracle::random_counts(&mut rng, 50);
    let full = learn_bpe(&counts, 10_000);
    for k in [0, 1, 5, full.len()] {
        assert_eq!(learn_bpe(&counts, k).merges(), &full.merges()[..k]);
    }
}

#[test]
fn revert_inverts_apply_on_random_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let corpus: Vec<String> = (0..200)
        .map(|_| {
            (0..rng.gen_range(1..8))
                .map(|_| random_token(&mut rng))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let table = learn_bpe(&word_counts(corpus.iter().map(String::as_str)), 300);
    let mut applier = BpeApplier::new(table);
    for _ in 0..10_000 {
        let token = random_token(&mut rng);
        let pieces = applier.apply(&token);
        assert!(!pieces.is_empty());
        assert_eq!(revert_bpe(&pieces).tokens, vec![token]);
    }
}

fn random_token(rng: &mut impl Rng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'e', 'n', 'r', 's', 't', 'ü', 'ß', 'Ж', '語', '1', '-', '.'];
    (0..rng.gen_range(1..10))
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

#[test]
fn more_merges_never_add_pieces() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let counts = bpe_oracle::random_counts(&mut rng, 50);
        let table = learn_bpe(&counts, 10_000);
        for (word, _) in &counts {
            let mut last = usize::MAX;
            for k in 0..=table.len() {
                let n = apply_bpe(word, &table.truncated(k)).len();
                assert!(n <= last, "{word}: {n} pieces after {k} merges, {last} before");
                last = n;
            }
            // Every training word ends up as one piece once all merges apply.
            assert_eq!(last, 1);
        }
    }
}

#[test]
fn vocabulary_ids_are_a_bijection() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lines: Vec<String> = (0..300)
        .map(|_| (0..5).map(|_| random_token(&mut rng)).collect::<Vec<_>>().join(" "))
        .collect();
    for cap in [4, 10, 100, 100_000] {
        let vocab = Vocabulary::build(lines.iter().map(String::as_str), cap).unwrap();
        assert!(vocab.len() <= cap);
        assert_eq!(&vocab.symbols()[..4], &SPECIALS);
        for id in 0..vocab.len() {
            assert_eq!(vocab.id(vocab.symbol(id)), id);
        }
        let reread = Vocabulary::from_text(&vocab.to_text()).unwrap();
        assert_eq!(reread.symbols(), vocab.symbols());
    }
}

#[test]
fn merge_table_text_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let table = learn_bpe(&bpe_oracle::random_counts(&mut rng, 50), 40);
    let mut buf = Vec::new();
    table.write_to(&mut buf).unwrap();
    let back = MergeTable::read_from(buf.as_slice()).unwrap();
    assert_eq!(back.merges(), table.merges());
}

proptest! {
    #[test]
    fn round_trip_any_word(word in "[a-zäöüß0-9'-]{1,20}", n in 0usize..60) {
        let corpus = format!("{word} {word} tester testen {word}s");
        let table = learn_bpe(&word_counts([corpus.as_str()]), n);
        let pieces = apply_bpe(&word, &table);
        prop_assert_eq!(revert_bpe(&pieces).tokens, vec![word.clone()]);
    }
}

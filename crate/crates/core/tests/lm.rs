mod common;

use common::lm_oracle::Oracle;
use desknmt_core::lm::{cross_entropy, sample_corpus, train_lm, LanguageModel, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_corpus(rng: &mut impl Rng, lines: usize, words: usize) -> Vec<String> {
    (0..lines)
        .map(|_| {
            (0..rng.gen_range(1..7))
                .map(|_| format!("w{}", rng.gen_range(0..words)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[test]
fn probabilities_sum_to_one_in_every_context() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let corpus = random_corpus(&mut rng, 60, 15);
    let model = train_lm(&corpus, Weights::default()).unwrap();
    let mut histories: Vec<&str> = model.vocabulary();
    histories.extend(["<s>", "never-seen"]);
    let mut events: Vec<&str> = model.vocabulary();
    events.push("<unk>");
    for _ in 0..1000 {
        let u = histories[rng.gen_range(0..histories.len())];
        let v = histories[rng.gen_range(0..histories.len())];
        let total: f64 = events.iter().map(|w| model.prob([u, v], w)).sum();
        assert!((total - 1.0).abs() < 1e-9, "context ({u}, {v}) sums to {total}");
    }
}

#[test]
fn matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for weights in [[0.5, 0.3, 0.2], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]] {
        let corpus = random_corpus(&mut rng, 30, 8);
        let model = train_lm(&corpus, Weights::new(weights[0], weights[1], weights[2]).unwrap()).unwrap();
        let oracle = Oracle::new(&corpus, weights);
        assert_eq!(model.vocab_size() as usize, oracle.types());
        for _ in 0..300 {
            let pick = |rng: &mut ChaCha8Rng| match rng.gen_range(0..10) {
                0 => "<s>".to_string(),
                1 => "w99".to_string(),
                2 => "</s>".to_string(),
                _ => format!("w{}", rng.gen_range(0..8)),
            };
            let (u, v, w) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            let a = model.prob([&u, &v], &w);
            let b = oracle.prob(&u, &v, &w);
            assert!((a - b).abs() <= 1e-15 * b.max(1.0), "p({w}|{u} {v}): {a} vs {b}");
        }
    }
}

#[test]
fn repeating_a_sentence_never_raises_its_entropy() {
    let mle = Weights::new(1.0, 0.0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let mut corpus = random_corpus(&mut rng, 10, 6);
        let s = corpus[0].clone();
        let mut last = f64::INFINITY;
        for _ in 0..5 {
            let h = cross_entropy(&train_lm(&corpus, mle).unwrap(), &s).unwrap();
            assert!(h <= last + 1e-12, "{h} > {last}");
            last = h;
            corpus.push(s.clone());
        }
    }
}

#[test]
fn training_and_sampling_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let corpus = random_corpus(&mut rng, 100, 20);
    let a = train_lm(&corpus, Weights::default()).unwrap();
    let b = train_lm(&corpus, Weights::default()).unwrap();
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    a.write_to(&mut ta).unwrap();
    b.write_to(&mut tb).unwrap();
    assert_eq!(ta, tb);
    for s in &corpus {
        assert_eq!(cross_entropy(&a, s).unwrap().to_bits(), cross_entropy(&b, s).unwrap().to_bits());
    }
    assert_eq!(sample_corpus(&corpus, 30, 9).unwrap(), sample_corpus(&corpus, 30, 9).unwrap());
    assert_ne!(sample_corpus(&corpus, 30, 9).unwrap(), sample_corpus(&corpus, 30, 10).unwrap());
}

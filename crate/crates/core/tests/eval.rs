mod common;

use common::bleu_oracle;
use desknmt_core::eval::{average_bleu, bleu, perplexity};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_line(rng: &mut impl Rng, min: usize) -> String {
    (0..rng.gen_range(min..12))
        .map(|_| ["a", "b", "c", "d", "e"][rng.gen_range(0..5)])
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_corpus(rng: &mut impl Rng, n: usize) -> (Vec<String>, Vec<String>) {
    (0..n).map(|_| (random_line(rng, 0), random_line(rng, 1))).unzip()
}

#[test]
fn agrees_with_oracle_and_stays_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.gen_range(1..8);
        let (h, r) = random_corpus(&mut rng, n);
        let got = bleu(&h, &r, false).unwrap().bleu;
        let hs: Vec<&str> = h.iter().map(String::as_str).collect();
        let rs: Vec<&str> = r.iter().map(String::as_str).collect();
        assert!((got - bleu_oracle::bleu(&hs, &rs)).abs() < 1e-9);
        assert!((0.0..=100.0).contains(&got));
    }
}

#[test]
fn corpus_statistic_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (h, r) = random_corpus(&mut rng, 10);
        let base = bleu(&h, &r, false).unwrap();
        let mut idx: Vec<usize> = (0..h.len()).collect();
        idx.shuffle(&mut rng);
        let hp: Vec<&String> = idx.iter().map(|&i| &h[i]).collect();
        let rp: Vec<&String> = idx.iter().map(|&i| &r[i]).collect();
        assert!((bleu(&hp, &rp, false).unwrap().bleu - base.bleu).abs() < 1e-9);
        let h2: Vec<&String> = h.iter().chain(&h).collect();
        let r2: Vec<&String> = r.iter().chain(&r).collect();
        assert!((bleu(&h2, &r2, false).unwrap().bleu - base.bleu).abs() < 1e-9);
    }
}

#[test]
fn identity_is_exactly_one_hundred() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let lines: Vec<String> = (0..rng.gen_range(1..6)).map(|_| random_line(&mut rng, 4)).collect();
        let report = bleu(&lines, &lines, false).unwrap();
        assert_eq!(report.bleu, 100.0);
        assert!(report.to_string().starts_with("BLEU = 100.00, 100.0/100.0/100.0/100.0 (BP=1.000, ratio=1.000"));
    }
}

#[test]
fn hand_counted_example() {
    // p = 5/5, 3/4, 2/3, 1/2 and a brevity penalty of exp(-0.2).
    let expected = 100.0 * (-0.2f64).exp() * (1.0 * 0.75 * (2.0 / 3.0) * 0.5f64).powf(0.25);
    let report = bleu(&["a b c d e"], &["a b c d x e"], false).unwrap();
    assert!((report.bleu - expected).abs() < 0.01, "{} vs {expected}", report.bleu);
    assert!((report.brevity_penalty - (-0.2f64).exp()).abs() < 1e-12);
}

#[test]
fn averages_and_perplexity() {
    let r20 = bleu(&["a b c d"], &["a b c d"], false).unwrap();
    assert_eq!(average_bleu(&[r20]).unwrap(), 100.0);
    assert!(average_bleu(&[]).is_err());
    assert!((perplexity(10.0 * 2f64.ln(), 10).unwrap() - 2.0).abs() < 1e-12);
}

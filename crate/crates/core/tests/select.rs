use desknmt_core::corpus::{Provenance, SentencePair};
use desknmt_core::lm::{train_lm, Weights};
use desknmt_core::select::{score_and_sort, score_with_models, select_top, SelectionConfig, SelectionJob};
use desknmt_core::toy::{generate, ToySizes, TOY_SEED};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mixture() -> (Vec<String>, Vec<String>, Vec<String>) {
    let data = generate(TOY_SEED, &ToySizes::default());
    (
        data.file("mixture.en").unwrap().to_vec(),
        data.file("mixture.labels").unwrap().to_vec(),
        data.file("indomain.en").unwrap().to_vec(),
    )
}

#[test]
fn recovers_the_in_domain_grammar() {
    let (mix, labels, indomain) = mixture();
    let scores = score_and_sort(&mix, &indomain, &SelectionConfig::default()).unwrap();
    let half = mix.len() / 2;
    let hits = scores[..half].iter().filter(|s| labels[s.index] == "medical").count();
    let medical = labels.iter().filter(|l| *l == "medical").count();
    assert!(hits as f64 >= 0.99 * medical as f64, "{hits} of {medical}");
}

#[test]
fn identical_models_give_zero_delta_and_swapping_negates() {
    let (mix, _, indomain) = mixture();
    let a = train_lm(&indomain, Weights::default()).unwrap();
    let b = train_lm(&mix[..100], Weights::default()).unwrap();
    assert!(score_with_models(&a, &a, &mix).unwrap().iter().all(|s| s.delta == 0.0));
    let fwd = score_with_models(&a, &b, &mix).unwrap();
    let mut rev = score_with_models(&b, &a, &mix).unwrap();
    rev.sort_by_key(|s| s.index);
    for s in &fwd {
        assert_eq!(rev[s.index].delta, -s.delta);
    }
}

#[test]
fn permuting_the_corpus_permutes_scores() {
    let (mix, _, indomain) = mixture();
    let a = train_lm(&indomain, Weights::default()).unwrap();
    let b = train_lm(&mix[..200], Weights::default()).unwrap();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let shuffled: Vec<&String> = order.iter().map(|&i| &mix[i]).collect();
    let base = score_with_models(&a, &b, &mix).unwrap();
    let perm = score_with_models(&a, &b, &shuffled).unwrap();
    let mut base_delta = vec![0.0; mix.len()];
    for s in &base {
        base_delta[s.index] = s.delta;
    }
    for s in &perm {
        assert_eq!(s.delta.to_bits(), base_delta[order[s.index]].to_bits());
    }
    // Ties aside, the top half is the same set of sentences.
    let top = |scores: &[desknmt_core::select::SentenceScore], map: &dyn Fn(usize) -> usize| {
        let mut v: Vec<usize> = scores[..500].iter().map(|s| map(s.index)).collect();
        v.sort_unstable();
        v
    };
    let cut = base[499].delta;
    if base[500].delta != cut {
        assert_eq!(top(&base, &|i| i), top(&perm, &|i| order[i]));
    }
}

#[test]
fn quotas_are_met_exactly() {
    let data = generate(TOY_SEED, &ToySizes::default());
    let de = data.file("train.de").unwrap();
    let en = data.file("train.en").unwrap();
    let pairs: Vec<SentencePair> = de.iter().zip(en).map(|(s, t)| SentencePair::new(s, t)).collect();
    let (parallel, synthetic) = pairs.split_at(700);
    let job = |qp, qs| SelectionJob {
        parallel: parallel.to_vec(),
        synthetic: synthetic.to_vec(),
        in_domain: data.file("test.de").unwrap().to_vec(),
        quota_parallel: qp,
        quota_synthetic: qs,
        config: SelectionConfig::default(),
    };
    for (qp, qs) in [(0, 0), (10, 0), (0, 600), (350, 300), (700, 600)] {
        let sel = select_top(&job(qp, qs)).unwrap();
        assert_eq!(sel.count(Provenance::Parallel), qp);
        assert_eq!(sel.count(Provenance::Synthetic), qs);
        // Parallel pairs come first.
        assert!(sel.pairs.iter().skip(qp).all(|(l, _)| *l == Provenance::Synthetic));
    }
    assert!(select_top(&job(701, 0)).is_err());
}

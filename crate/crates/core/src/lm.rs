//! Trigram language models scored in bits per token.
//!
//! Probabilities are a fixed-weight interpolation of trigram, bigram and
//! add-one unigram estimates:
//!
//! ```text
//! P1(w)     = (c(w) + 1) / (N + V + 1)
//! P2(w|v)   = c(v w) / c(v·)        if v was seen as a history, else P1(w)
//! P3(w|u v) = c(u v w) / c(u v·)    if (u v) was seen as a history, else P2(w|v)
//! p(w|u v)  = λ3·P3 + λ2·P2 + λ1·P1
//! ```
//!
//! Sentences are padded with two `<s>` and terminated by a `</s>` event. `V`
//! counts every event type (including `</s>`); the extra `+1` is `<unk>`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
const LM_HEADER: &str = "#desknmt-lm v1";

#[derive(Debug, Error)]
pub enum LmError {
    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,
    #[error("cannot score an empty sentence")]
    EmptySentence,
    #[error("interpolation weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights([f64; 3]),
    #[error("event {word:?} has zero probability")]
    ZeroProbability { word: String },
    #[error("sample of {requested} sentences requested from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interpolation weights `(trigram, bigram, unigram)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights(pub [f64; 3]);

impl Weights {
    pub fn new(trigram: f64, bigram: f64, unigram: f64) -> Result<Self, LmError> {
        let w = [trigram, bigram, unigram];
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(LmError::BadWeights(w));
        }
        Ok(Weights(w))
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights([0.5, 0.3, 0.2])
    }
}

/// Anything that assigns conditional probabilities to words given a
/// two-word history.
pub trait LanguageModel {
    fn prob(&self, history: [&str; 2], word: &str) -> f64;
}

/// Interned trigram counts.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    weights: Weights,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    unigram: HashMap<u32, u64>,
    bigram: HashMap<(u32, u32), u64>,
    trigram: HashMap<(u32, u32, u32), u64>,
    bigram_history: HashMap<u32, u64>,
    trigram_history: HashMap<(u32, u32), u64>,
    total: u64,
    /// Number of distinct event types (excludes `<s>`).
    vocab_size: u64,
}

impl NGramModel {
    pub const ORDER: usize = 3;

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn with_weights(mut self, weights: Weights) -> Self {
        self.weights = weights;
        self
    }

    pub fn vocab_size(&self) -> u64 {
        self.vocab_size
    }

    pub fn token_count(&self) -> u64 {
        self.total
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }

    fn add_trigram(&mut self, u: u32, v: u32, w: u32, count: u64) {
        *self.trigram.entry((u, v, w)).or_insert(0) += count;
        *self.trigram_history.entry((u, v)).or_insert(0) += count;
    }

    fn add_bigram(&mut self, v: u32, w: u32, count: u64) {
        *self.bigram.entry((v, w)).or_insert(0) += count;
        *self.bigram_history.entry(v).or_insert(0) += count;
    }

    fn add_unigram(&mut self, w: u32, count: u64) {
        let slot = self.unigram.entry(w).or_insert(0);
        if *slot == 0 {
            self.vocab_size += 1;
        }
        *slot += count;
        self.total += count;
    }

    fn empty(weights: Weights) -> Self {
        let mut model = NGramModel {
            weights,
            words: Vec::new(),
            ids: HashMap::new(),
            unigram: HashMap::new(),
            bigram: HashMap::new(),
            trigram: HashMap::new(),
            bigram_history: HashMap::new(),
            trigram_history: HashMap::new(),
            total: 0,
            vocab_size: 0,
        };
        model.intern(SENTENCE_START);
        model.intern(SENTENCE_END);
        model
    }

    fn unigram_prob(&self, w: Option<u32>) -> f64 {
        let c = w.and_then(|w| self.unigram.get(&w)).copied().unwrap_or(0);
        (c + 1) as f64 / (self.total + self.vocab_size + 1) as f64
    }

    fn bigram_prob(&self, v: Option<u32>, w: Option<u32>, p1: f64) -> f64 {
        let Some(v) = v else { return p1 };
        match self.bigram_history.get(&v) {
            Some(&h) => {
                let c = w.and_then(|w| self.bigram.get(&(v, w))).copied().unwrap_or(0);
                c as f64 / h as f64
            }
            None => p1,
        }
    }

    fn trigram_prob(&self, u: Option<u32>, v: Option<u32>, w: Option<u32>, p2: f64) -> f64 {
        let (Some(u), Some(v)) = (u, v) else { return p2 };
        match self.trigram_history.get(&(u, v)) {
            Some(&h) => {
                let c = w
                    .and_then(|w| self.trigram.get(&(u, v, w)))
                    .copied()
                    .unwrap_or(0);
                c as f64 / h as f64
            }
            None => p2,
        }
    }

    /// Known event types (everything with a unigram count), sorted.
    pub fn vocabulary(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .unigram
            .keys()
            .map(|&id| self.words[id as usize].as_str())
            .collect();
        v.sort_unstable();
        v
    }

    /// Writes "ngram TAB count" lines sorted by n-gram text, after a header.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let w = |id: u32| self.words[id as usize].as_str();
        let mut lines: Vec<(String, u64)> = Vec::new();
        lines.extend(self.unigram.iter().map(|(&a, &c)| (w(a).to_string(), c)));
        lines.extend(
            self.bigram
                .iter()
                .map(|(&(a, b), &c)| (format!("{} {}", w(a), w(b)), c)),
        );
        lines.extend(
            self.trigram
                .iter()
                .map(|(&(a, b, d), &c)| (format!("{} {} {}", w(a), w(b), w(d)), c)),
        );
        lines.sort_unstable();
        let [l3, l2, l1] = self.weights.0;
        writeln!(out, "{LM_HEADER}")?;
        writeln!(out, "order\t{}", Self::ORDER)?;
        writeln!(out, "lambda\t{l3} {l2} {l1}")?;
        writeln!(out, "vocab\t{}", self.vocab_size)?;
        for (gram, count) in lines {
            writeln!(out, "{gram}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, LmError> {
        let fmt_err = |line: usize, reason: &str| LmError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut lines = input.lines();
        let mut next_header = |n: usize| -> Result<String, LmError> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| fmt_err(n, "truncated header"))
        };
        if next_header(1)? != LM_HEADER {
            return Err(fmt_err(1, "bad header"));
        }
        if next_header(2)? != format!("order\t{}", Self::ORDER) {
            return Err(fmt_err(2, "unsupported order"));
        }
        let lambda = next_header(3)?;
        let lambdas: Vec<f64> = lambda
            .strip_prefix("lambda\t")
            .ok_or_else(|| fmt_err(3, "expected lambda"))?
            .split(' ')
            .map(|x| x.parse().map_err(|_| fmt_err(3, "bad lambda")))
            .collect::<Result<_, _>>()?;
        let [l3, l2, l1] = lambdas[..] else {
            return Err(fmt_err(3, "expected three weights"));
        };
        let weights = Weights::new(l3, l2, l1)?;
        let vocab: u64 = next_header(4)?
            .strip_prefix("vocab\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fmt_err(4, "expected vocab"))?;

        let mut model = Self::empty(weights);
        for (i, line) in lines.enumerate() {
            let n = i + 5;
            let line = line?;
            let (gram, count) = line.split_once('\t').ok_or_else(|| fmt_err(n, "no tab"))?;
            let count: u64 = count.parse().map_err(|_| fmt_err(n, "bad count"))?;
            let ids: Vec<u32> = gram.split(' ').map(|w| model.intern(w)).collect();
            match ids[..] {
                [a] => model.add_unigram(a, count),
                [a, b] => model.add_bigram(a, b, count),
                [a, b, c] => model.add_trigram(a, b, c, count),
                _ => return Err(fmt_err(n, "n-gram order out of range")),
            }
        }
        if model.vocab_size != vocab {
            return Err(fmt_err(4, "vocab size does not match unigram entries"));
        }
        Ok(model)
    }
}

impl LanguageModel for NGramModel {
    fn prob(&self, history: [&str; 2], word: &str) -> f64 {
        let u = self.ids.get(history[0]).copied();
        let v = self.ids.get(history[1]).copied();
        let w = self.ids.get(word).copied();
        let p1 = self.unigram_prob(w);
        let p2 = self.bigram_prob(v, w, p1);
        let p3 = self.trigram_prob(u, v, w, p2);
        let [l3, l2, l1] = self.weights.0;
        l3 * p3 + l2 * p2 + l1 * p1
    }
}

/// Counts trigram statistics over whitespace-tokenized sentences.
pub fn train_lm<S: AsRef<str>>(corpus: &[S], weights: Weights) -> Result<NGramModel, LmError> {
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut model = NGramModel::empty(weights);
    let start = model.ids[SENTENCE_START];
    let end = model.ids[SENTENCE_END];
    for sentence in corpus {
        let mut ids: Vec<u32> = vec![start, start];
        for w in sentence.as_ref().split_whitespace() {
            ids.push(model.intern(w));
        }
        ids.push(end);
        for i in 2..ids.len() {
            model.add_unigram(ids[i], 1);
            model.add_bigram(ids[i - 1], ids[i], 1);
            model.add_trigram(ids[i - 2], ids[i - 1], ids[i], 1);
        }
    }
    Ok(model)
}

/// Per-token cross-entropy in bits, `</s>` included in both sum and count.
pub fn cross_entropy<M: LanguageModel + ?Sized>(model: &M, sentence: &str) -> Result<f64, LmError> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    if words.is_empty() {
        return Err(LmError::EmptySentence);
    }
    let mut history = [SENTENCE_START, SENTENCE_START];
    let mut bits = 0.0;
    for w in words.iter().copied().chain(std::iter::once(SENTENCE_END)) {
        let p = model.prob(history, w);
        if !(p > 0.0) {
            return Err(LmError::ZeroProbability {
                word: w.to_string(),
            });
        }
        bits -= p.log2();
        history = [history[1], w];
    }
    Ok(bits / (words.len() + 1) as f64)
}

/// Uniform sample of `n` sentences without replacement, reproducible per seed.
pub fn sample_corpus<T: Clone>(corpus: &[T], n: usize, seed: u64) -> Result<Vec<T>, LmError> {
    if n > corpus.len() {
        return Err(LmError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, corpus.len(), n)
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure_trigram() -> Weights {
        Weights::new(1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn deterministic_corpus_trigram() {
        let corpus = vec!["a b"; 100];
        let lm = train_lm(&corpus, pure_trigram()).unwrap();
        assert_eq!(lm.prob([SENTENCE_START, "a"], "b"), 1.0);
        assert_eq!(cross_entropy(&lm, "a b").unwrap(), 0.0);
    }

    #[test]
    fn add_one_unigram_hand_count() {
        // events: a a </s> a b </s> -> {a:3, b:1, </s>:2}, N=6, V=3
        let lm = train_lm(&["a a", "a b"], Weights::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(lm.token_count(), 6);
        assert_eq!(lm.vocab_size(), 3);
        assert_eq!(lm.prob(["x", "y"], "a"), 4.0 / 10.0);
        assert_eq!(lm.prob(["x", "y"], "zzz"), 1.0 / 10.0);
        // H("a b") = -(log2 .4 + log2 .2 + log2 .3) / 3
        let expected = -((0.4f64).log2() + (0.2f64).log2() + (0.3f64).log2()) / 3.0;
        assert!((cross_entropy(&lm, "a b").unwrap() - expected).abs() < 1e-15);
    }

    struct Uniform(f64);
    impl LanguageModel for Uniform {
        fn prob(&self, _: [&str; 2], _: &str) -> f64 {
            self.0
        }
    }

    #[test]
    fn uniform_model_is_six_bits() {
        let h = cross_entropy(&Uniform(1.0 / 64.0), "x y z").unwrap();
        assert!((h - 6.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            train_lm::<&str>(&[], Weights::default()),
            Err(LmError::EmptyCorpus)
        ));
        let lm = train_lm(&["a"], Weights::default()).unwrap();
        assert!(matches!(cross_entropy(&lm, "  "), Err(LmError::EmptySentence)));
        let lm = train_lm(&["a b"], pure_trigram()).unwrap();
        assert!(matches!(
            cross_entropy(&lm, "a c"),
            Err(LmError::ZeroProbability { .. })
        ));
        assert!(Weights::new(0.5, 0.5, 0.5).is_err());
        assert!(Weights::new(1.5, -0.5, 0.0).is_err());
    }

    #[test]
    fn normalization_over_vocab_and_unk() {
        let lm = train_lm(&["a b c", "b c d e", "a a", "e"], Weights::default()).unwrap();
        let vocab = lm.vocabulary();
        for hist in [["<s>", "<s>"], ["<s>", "a"], ["b", "c"], ["q", "a"], ["zz", "yy"]] {
            let mut total: f64 = vocab.iter().map(|w| lm.prob(hist, w)).sum();
            total += lm.prob(hist, "<never-seen>");
            assert!((total - 1.0).abs() < 1e-12, "{hist:?}: {total}");
        }
    }

    #[test]
    fn sampling() {
        let corpus: Vec<usize> = (0..20).collect();
        let mut all = sample_corpus(&corpus, 20, 9).unwrap();
        all.sort_unstable();
        assert_eq!(all, corpus);
        assert!(sample_corpus(&corpus, 0, 1).unwrap().is_empty());
        assert_eq!(
            sample_corpus(&corpus, 5, 3).unwrap(),
            sample_corpus(&corpus, 5, 3).unwrap()
        );
        assert!(matches!(
            sample_corpus(&corpus, 21, 0),
            Err(LmError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn file_round_trip_reproduces_scores() {
        let corpus = ["der hund bellt", "die katze schläft", "der hund schläft ."];
        let lm = train_lm(&corpus, Weights::default()).unwrap();
        let mut buf = Vec::new();
        lm.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#desknmt-lm v1\norder\t3\nlambda\t0.5 0.3 0.2\nvocab\t8\n"));
        let back = NGramModel::read_from(&buf[..]).unwrap();
        for s in ["der katze bellt", "hund", "x y z"] {
            assert_eq!(
                cross_entropy(&lm, s).unwrap().to_bits(),
                cross_entropy(&back, s).unwrap().to_bits()
            );
        }
        let truncated = &buf[..20];
        assert!(NGramModel::read_from(truncated).is_err());
    }
}

//! Synthetic two-domain bilingual grammar used by the bundled toy dataset.
//!
//! The source side is German-like (capitalized nouns, gendered articles,
//! verb-second word order after a fronted adverb, sentence-final negation);
//! the target side is English. The generic and medical domains share only
//! function words.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_lines, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Generic,
    Medical,
}

struct Noun {
    article: &'static str,
    src: &'static str,
    tgt: &'static str,
}

struct Verb {
    src: &'static str,
    tgt: &'static str,
    base: &'static str,
}

struct Lexicon {
    subjects: &'static [Noun],
    objects: &'static [Noun],
    verbs: &'static [Verb],
    adjectives: &'static [(&'static str, &'static str)],
    adverbs: &'static [(&'static str, &'static str)],
}

macro_rules! nouns {
    ($(($a:literal, $s:literal, $t:literal)),* $(,)?) => {
        &[$(Noun { article: $a, src: $s, tgt: $t }),*]
    };
}

macro_rules! verbs {
    ($(($s:literal, $t:literal, $b:literal)),* $(,)?) => {
        &[$(Verb { src: $s, tgt: $t, base: $b }),*]
    };
}

const GENERIC: Lexicon = Lexicon {
    subjects: nouns![
        ("der", "Mann", "man"),
        ("die", "Frau", "woman"),
        ("das", "Kind", "child"),
        ("der", "Hund", "dog"),
        ("der", "Lehrer", "teacher"),
        ("die", "Bäuerin", "farmer"),
        ("der", "König", "king"),
        ("die", "Studentin", "student"),
    ],
    objects: nouns![
        ("das", "Haus", "house"),
        ("das", "Auto", "car"),
        ("das", "Buch", "book"),
        ("der", "Brief", "letter"),
        ("der", "Garten", "garden"),
        ("der", "Tisch", "table"),
        ("die", "Stadt", "city"),
        ("der", "Zug", "train"),
        ("das", "Fahrrad", "bicycle"),
        ("die", "Blume", "flower"),
    ],
    verbs: verbs![
        ("sieht", "sees", "see"),
        ("kauft", "buys", "buy"),
        ("findet", "finds", "find"),
        ("liebt", "loves", "love"),
        ("baut", "builds", "build"),
        ("malt", "paints", "paint"),
        ("verkauft", "sells", "sell"),
    ],
    adjectives: &[
        ("alte", "old"),
        ("kleine", "small"),
        ("rote", "red"),
        ("schöne", "beautiful"),
        ("große", "big"),
    ],
    adverbs: &[("heute", "today"), ("oft", "often"), ("manchmal", "sometimes")],
};

const MEDICAL: Lexicon = Lexicon {
    subjects: nouns![
        ("der", "Arzt", "doctor"),
        ("die", "Pflegerin", "nurse"),
        ("der", "Chirurg", "surgeon"),
        ("die", "Patientin", "patient"),
        ("die", "Ärztin", "physician"),
    ],
    objects: nouns![
        ("das", "Fieber", "fever"),
        ("die", "Wunde", "wound"),
        ("die", "Tablette", "tablet"),
        ("die", "Dosis", "dose"),
        ("die", "Infektion", "infection"),
        ("das", "Herz", "heart"),
        ("die", "Lunge", "lung"),
        ("die", "Herzfrequenz", "heart rate"),
        ("der", "Blutdruck", "blood pressure"),
        ("das", "Röntgenbild", "x-ray"),
    ],
    verbs: verbs![
        ("untersucht", "examines", "examine"),
        ("behandelt", "treats", "treat"),
        ("misst", "measures", "measure"),
        ("prüft", "checks", "check"),
        ("verschreibt", "prescribes", "prescribe"),
        ("kontrolliert", "monitors", "monitor"),
    ],
    adjectives: &[
        ("akute", "acute"),
        ("chronische", "chronic"),
        ("hohe", "high"),
        ("leichte", "mild"),
        ("starke", "strong"),
    ],
    adverbs: &[("sofort", "immediately"), ("täglich", "daily"), ("nachts", "nightly")],
};

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn accusative(article: &str) -> &str {
    if article == "der" {
        "den"
    } else {
        article
    }
}

/// One `(source, target)` sentence pair from `domain`.
pub fn sentence(domain: Domain, rng: &mut impl Rng) -> (String, String) {
    let lex = match domain {
        Domain::Generic => &GENERIC,
        Domain::Medical => &MEDICAL,
    };
    let subj = lex.subjects.choose(rng).expect("non-empty");
    let obj = lex.objects.choose(rng).expect("non-empty");
    let verb = lex.verbs.choose(rng).expect("non-empty");
    let adj = rng.gen_bool(0.4).then(|| lex.adjectives.choose(rng).expect("non-empty"));
    let adv = rng.gen_bool(0.3).then(|| lex.adverbs.choose(rng).expect("non-empty"));
    let negated = rng.gen_bool(0.2);

    let mut src: Vec<String> = Vec::new();
    let subject = [subj.article.to_string(), subj.src.to_string()];
    match adv {
        Some((a, _)) => {
            src.push(a.to_string());
            src.push(verb.src.to_string());
            src.extend(subject);
        }
        None => {
            src.extend(subject);
            src.push(verb.src.to_string());
        }
    }
    src.push(accusative(obj.article).to_string());
    if let Some((a, _)) = adj {
        src.push(a.to_string());
    }
    src.push(obj.src.to_string());
    if negated {
        src.push("nicht".into());
    }
    src.push(".".into());
    src[0] = capitalize(&src[0]);

    let mut tgt: Vec<String> = Vec::new();
    if let Some((_, t)) = adv {
        tgt.push(t.to_string());
    }
    tgt.push("the".into());
    tgt.push(subj.tgt.into());
    if negated {
        tgt.extend(["does".to_string(), "not".to_string(), verb.base.to_string()]);
    } else {
        tgt.push(verb.tgt.into());
    }
    tgt.push("the".into());
    if let Some((_, t)) = adj {
        tgt.push(t.to_string());
    }
    tgt.push(obj.tgt.into());
    tgt.push(".".into());
    tgt[0] = capitalize(&tgt[0]);
    (src.join(" "), tgt.join(" "))
}

/// Sizes of the generated splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySizes {
    pub train_generic: usize,
    pub train_medical: usize,
    pub valid: usize,
    pub mono_generic: usize,
    pub mono_medical: usize,
    pub indomain: usize,
    pub test: usize,
    pub mixture_each: usize,
}

impl Default for ToySizes {
    fn default() -> Self {
        Self {
            train_generic: 1200,
            train_medical: 100,
            valid: 100,
            mono_generic: 400,
            mono_medical: 400,
            indomain: 100,
            test: 100,
            mixture_each: 500,
        }
    }
}

/// Named line files making up the toy dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyDataset {
    pub files: Vec<(&'static str, Vec<String>)>,
}

impl ToyDataset {
    pub fn file(&self, name: &str) -> Option<&[String]> {
        self.files.iter().find(|(n, _)| *n == name).map(|(_, l)| l.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for (name, lines) in &self.files {
            write_lines(&dir.join(name), lines)?;
        }
        Ok(())
    }
}

fn pairs(domain: Domain, n: usize, rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    (0..n).map(|_| sentence(domain, rng)).collect()
}

fn split(pairs: Vec<(String, String)>) -> (Vec<String>, Vec<String>) {
    pairs.into_iter().unzip()
}

/// Generates every split from one seed.
///
/// Files: `train.{de,en}` (mostly generic parallel data), `valid.{de,en}`
/// (generic), `mono.en` (target-side monolingual text from both domains),
/// `indomain.{de,en}` and `test.{de,en}` (medical), and `mixture.en` with
/// `mixture.labels` (equal parts generic and medical, labelled).
pub fn generate(seed: u64, sizes: &ToySizes) -> ToyDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = pairs(Domain::Generic, sizes.train_generic, &mut rng);
    train.extend(pairs(Domain::Medical, sizes.train_medical, &mut rng));
    train.shuffle(&mut rng);
    let (train_de, train_en) = split(train);
    let (valid_de, valid_en) = split(pairs(Domain::Generic, sizes.valid, &mut rng));
    let mut mono = pairs(Domain::Generic, sizes.mono_generic, &mut rng);
    mono.extend(pairs(Domain::Medical, sizes.mono_medical, &mut rng));
    mono.shuffle(&mut rng);
    let (_, mono_en) = split(mono);
    let (indomain_de, indomain_en) = split(pairs(Domain::Medical, sizes.indomain, &mut rng));
    let (test_de, test_en) = split(pairs(Domain::Medical, sizes.test, &mut rng));
    let mut mixture: Vec<(String, &'static str)> = pairs(Domain::Generic, sizes.mixture_each, &mut rng)
        .into_iter()
        .map(|(_, t)| (t, "generic"))
        .chain(
            pairs(Domain::Medical, sizes.mixture_each, &mut rng)
                .into_iter()
                .map(|(_, t)| (t, "medical")),
        )
        .collect();
    mixture.shuffle(&mut rng);
    let (mixture_en, labels): (Vec<String>, Vec<&str>) = mixture.into_iter().unzip();
    ToyDataset {
        files: vec![
            ("train.de", train_de),
            ("train.en", train_en),
            ("valid.de", valid_de),
            ("valid.en", valid_en),
            ("mono.en", mono_en),
            ("indomain.de", indomain_de),
            ("indomain.en", indomain_en),
            ("test.de", test_de),
            ("test.en", test_en),
            ("mixture.en", mixture_en),
            ("mixture.labels", labels.into_iter().map(String::from).collect()),
        ],
    }
}

/// Seed of the bundled dataset under `data/toy`.
pub const TOY_SEED: u64 = 2017;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (src, tgt) = sentence(Domain::Generic, &mut rng);
            assert!(src.ends_with(" .") && tgt.ends_with(" ."));
            assert!(tgt.chars().next().unwrap().is_uppercase());
            if src.contains(" nicht ") {
                assert!(tgt.contains(" does not "));
            }
        }
    }

    #[test]
    fn domains_share_only_function_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let words = |d: Domain, rng: &mut ChaCha8Rng| -> std::collections::HashSet<String> {
            (0..500)
                .flat_map(|_| {
                    sentence(d, rng)
                        .1
                        .to_lowercase()
                        .split_whitespace()
                        .map(String::from)
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        let g = words(Domain::Generic, &mut rng);
        let m = words(Domain::Medical, &mut rng);
        let mut shared: Vec<_> = g.intersection(&m).cloned().collect();
        shared.sort();
        assert_eq!(shared, [".", "does", "not", "the"]);
    }

    #[test]
    fn generation_is_seeded() {
        let sizes = ToySizes {
            train_generic: 5,
            train_medical: 2,
            valid: 2,
            mono_generic: 2,
            mono_medical: 2,
            indomain: 2,
            test: 2,
            mixture_each: 3,
        };
        let a = generate(3, &sizes);
        assert_eq!(a, generate(3, &sizes));
        assert_ne!(a, generate(4, &sizes));
        assert_eq!(a.file("train.de").unwrap().len(), 7);
        assert_eq!(a.file("mixture.labels").unwrap().len(), 6);
    }
}

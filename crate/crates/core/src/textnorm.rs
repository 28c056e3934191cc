//! Tokenization, frequency-based compound splitting and case factors.
//!
//! Everything here is a pure function of its inputs, so corpora can be
//! processed line by line in any order.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Version of the tokenization rule table. Bump whenever [`tokenize`] changes
/// behavior so that persisted corpora can be checked against it.
pub const TOKENIZER_RULES_VERSION: u32 = 1;

/// Suffix carried by every non-final part of a split compound.
///
/// `▁` (U+2581) is always isolated as a standalone symbol by [`tokenize`], so
/// no token produced by the tokenizer can end with this marker.
pub const JOIN_MARKER: &str = "\u{2581}+";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("length mismatch: {tokens} tokens but {factors} case factors")]
    LengthMismatch { tokens: usize, factors: usize },
    #[error("unknown case factor tag {0:?}")]
    UnknownCaseTag(String),
}

/// Splits one line into tokens.
///
/// Rules (version [`TOKENIZER_RULES_VERSION`]):
/// 1. split on Unicode whitespace;
/// 2. runs of alphanumeric characters (with combining marks) form words;
/// 3. `'` and `-` stay inside a word when both neighbours are alphanumeric,
///    `.` and `,` only when both neighbours are digits (`3.5`, `1,000`);
/// 4. every other character becomes a token of its own.
pub fn tokenize(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in line.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut current = String::new();
        for (i, &ch) in chars.iter().enumerate() {
            if is_word_char(ch) {
                current.push(ch);
                continue;
            }
            let prev = if i > 0 { Some(chars[i - 1]) } else { None };
            let next = chars.get(i + 1).copied();
            let inner = match ch {
                '\'' | '-' => {
                    prev.is_some_and(|c| c.is_alphanumeric())
                        && next.is_some_and(|c| c.is_alphanumeric())
                }
                '.' | ',' => {
                    prev.is_some_and(|c| c.is_numeric()) && next.is_some_and(|c| c.is_numeric())
                }
                _ => false,
            };
            if inner && !current.is_empty() {
                current.push(ch);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Like [`tokenize`] but starting from raw bytes.
pub fn tokenize_bytes(bytes: &[u8]) -> Result<Vec<String>, TextError> {
    let line = std::str::from_utf8(bytes).map_err(|e| TextError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(tokenize(line))
}

fn is_word_char(ch: char) -> bool {
    ch.is_alphanumeric() || is_combining_mark(ch)
}

fn is_combining_mark(ch: char) -> bool {
    matches!(ch as u32,
        0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

/// Casing class of a token, carried as a side feature next to its lowercased form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseFactor {
    /// Already lowercase.
    Lower,
    /// First character uppercase, the rest lowercase.
    Capitalized,
    /// All letters uppercase.
    Upper,
    /// Anything else; not recoverable from the lowercased form.
    Mixed,
    /// No letters at all.
    NoCase,
}

impl CaseFactor {
    pub const COUNT: usize = 5;
    pub const ALL: [CaseFactor; 5] = [
        CaseFactor::Lower,
        CaseFactor::Capitalized,
        CaseFactor::Upper,
        CaseFactor::Mixed,
        CaseFactor::NoCase,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            CaseFactor::Lower => "L",
            CaseFactor::Capitalized => "C",
            CaseFactor::Upper => "U",
            CaseFactor::Mixed => "M",
            CaseFactor::NoCase => "N",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Classifies a token surface. Tags `L`, `C`, `U` and `N` are only
    /// assigned when [`CaseFactor::apply`] reproduces the surface exactly.
    pub fn of(token: &str) -> Self {
        let lower = token.to_lowercase();
        if lower == token {
            return if token.chars().any(char::is_alphabetic) {
                CaseFactor::Lower
            } else {
                CaseFactor::NoCase
            };
        }
        if capitalize(&lower) == token {
            CaseFactor::Capitalized
        } else if lower.to_uppercase() == token {
            CaseFactor::Upper
        } else {
            CaseFactor::Mixed
        }
    }

    /// Re-cases a lowercased token. `Mixed` has no information and yields
    /// the input unchanged.
    pub fn apply(self, lower: &str) -> String {
        match self {
            CaseFactor::Capitalized => capitalize(lower),
            CaseFactor::Upper => lower.to_uppercase(),
            CaseFactor::Lower | CaseFactor::Mixed | CaseFactor::NoCase => lower.to_string(),
        }
    }
}

impl fmt::Display for CaseFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CaseFactor {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" => Ok(CaseFactor::Lower),
            "C" => Ok(CaseFactor::Capitalized),
            "U" => Ok(CaseFactor::Upper),
            "M" => Ok(CaseFactor::Mixed),
            "N" => Ok(CaseFactor::NoCase),
            other => Err(TextError::UnknownCaseTag(other.to_string())),
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Lowercased tokens plus their case factors.
///
/// `originals` holds the surface of every `Mixed` token so that round trips
/// in tests can be exact; translation output never has it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaseEncoded {
    pub tokens: Vec<String>,
    pub factors: Vec<CaseFactor>,
    pub originals: Vec<Option<String>>,
}

pub fn encode_case<S: AsRef<str>>(tokens: &[S]) -> CaseEncoded {
    let mut out = CaseEncoded::default();
    for token in tokens {
        let token = token.as_ref();
        let factor = CaseFactor::of(token);
        out.tokens.push(token.to_lowercase());
        out.factors.push(factor);
        out.originals
            .push((factor == CaseFactor::Mixed).then(|| token.to_string()));
    }
    out
}

/// Inverse of [`encode_case`]; `Mixed` tokens stay lowercase.
pub fn decode_case<S: AsRef<str>>(
    tokens: &[S],
    factors: &[CaseFactor],
) -> Result<Vec<String>, TextError> {
    if tokens.len() != factors.len() {
        return Err(TextError::LengthMismatch {
            tokens: tokens.len(),
            factors: factors.len(),
        });
    }
    Ok(tokens
        .iter()
        .zip(factors)
        .map(|(t, f)| f.apply(t.as_ref()))
        .collect())
}

/// Like [`decode_case`] but restores `Mixed` tokens from the side channel.
pub fn decode_case_exact(encoded: &CaseEncoded) -> Result<Vec<String>, TextError> {
    let mut out = decode_case(&encoded.tokens, &encoded.factors)?;
    for (token, original) in out.iter_mut().zip(&encoded.originals) {
        if let Some(original) = original {
            token.clone_from(original);
        }
    }
    Ok(out)
}

/// Serializes a factor sequence as one space-separated line.
pub fn format_factors(factors: &[CaseFactor]) -> String {
    factors
        .iter()
        .map(|f| f.tag())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_factors(line: &str) -> Result<Vec<CaseFactor>, TextError> {
    line.split_whitespace().map(str::parse).collect()
}

/// Word counts used as evidence for compound splitting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreqLexicon {
    counts: HashMap<String, u64>,
}

impl FreqLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Self::new();
        for t in tokens {
            lex.add(t.as_ref(), 1);
        }
        lex
    }

    /// Adds `count` occurrences; a zero count is ignored so stored entries stay ≥ 1.
    pub fn add(&mut self, word: &str, count: u64) {
        if count > 0 {
            *self.counts.entry(word.to_string()).or_insert(0) += count;
        }
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Entries sorted by word, for serialization.
    pub fn sorted_entries(&self) -> Vec<(&str, u64)> {
        let mut entries: Vec<_> = self.counts.iter().map(|(w, c)| (w.as_str(), *c)).collect();
        entries.sort_unstable();
        entries
    }
}

impl<S: Into<String>> FromIterator<(S, u64)> for FreqLexicon {
    fn from_iter<I: IntoIterator<Item = (S, u64)>>(iter: I) -> Self {
        let mut lex = Self::new();
        for (w, c) in iter {
            lex.add(&w.into(), c);
        }
        lex
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompoundConfig {
    /// Shortest part (in characters) a compound may be split into.
    pub min_part_len: usize,
    /// Maximum number of parts.
    pub max_parts: usize,
}

impl Default for CompoundConfig {
    fn default() -> Self {
        Self {
            min_part_len: 4,
            max_parts: 2,
        }
    }
}

/// Splits a compound into known parts when the geometric mean of the part
/// frequencies strictly beats the frequency of the whole token.
///
/// Among equally good splits the one with fewer parts wins, then the one with
/// the earliest first boundary.
pub fn split_compound(token: &str, lex: &FreqLexicon, config: &CompoundConfig) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    let whole = lex.count(token) as f64;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut cuts = Vec::new();
    search_splits(&chars, 0, lex, config, &mut cuts, &mut |cuts, score| {
        let better = match &best {
            None => true,
            Some((best_score, best_cuts)) => {
                score > *best_score || (score == *best_score && cuts.len() < best_cuts.len())
            }
        };
        if better {
            best = Some((score, cuts.to_vec()));
        }
    });
    match best {
        Some((score, cuts)) if score > whole && cuts.len() > 1 => {
            let mut parts = Vec::with_capacity(cuts.len());
            let mut start = 0;
            for (i, &end) in cuts.iter().enumerate() {
                let mut part: String = chars[start..end].iter().collect();
                if i + 1 < cuts.len() {
                    part.push_str(JOIN_MARKER);
                }
                parts.push(part);
                start = end;
            }
            parts
        }
        _ => vec![token.to_string()],
    }
}

// Enumerates multi-part segmentations in order of increasing first boundary,
// reporting (part end offsets, geometric mean of part counts).
fn search_splits(
    chars: &[char],
    start: usize,
    lex: &FreqLexicon,
    config: &CompoundConfig,
    cuts: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize], f64),
) {
    let min = config.min_part_len.max(1);
    for end in (start + min)..=chars.len() {
        let last = end == chars.len();
        if !last && (cuts.len() + 2 > config.max_parts || chars.len() - end < min) {
            continue;
        }
        let part: String = chars[start..end].iter().collect();
        if lex.count(&part) == 0 {
            continue;
        }
        cuts.push(end);
        if last {
            if cuts.len() > 1 {
                let mut log_sum = 0.0;
                let mut begin = 0;
                for &e in cuts.iter() {
                    let p: String = chars[begin..e].iter().collect();
                    log_sum += (lex.count(&p) as f64).ln();
                    begin = e;
                }
                visit(cuts, (log_sum / cuts.len() as f64).exp());
            }
        } else {
            search_splits(chars, end, lex, config, cuts, visit);
        }
        cuts.pop();
    }
}

/// Outcome of [`join_compounds`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Joined {
    pub tokens: Vec<String>,
    /// The last token carried a join marker with nothing to join to.
    pub dangling_marker: bool,
}

/// Fuses every marker-bearing token with its successor.
pub fn join_compounds<S: AsRef<str>>(tokens: &[S]) -> Joined {
    let mut out = Vec::with_capacity(tokens.len());
    let mut pending = String::new();
    let mut open = false;
    for token in tokens {
        let token = token.as_ref();
        if let Some(stem) = token.strip_suffix(JOIN_MARKER) {
            pending.push_str(stem);
            open = true;
        } else {
            pending.push_str(token);
            out.push(std::mem::take(&mut pending));
            open = false;
        }
    }
    if open {
        out.push(pending);
    }
    Joined {
        tokens: out,
        dangling_marker: open,
    }
}

//! Byte-pair-encoding subwords and the fixed token inventory built on top.
//!
//! Learning follows the classic formulation: every word is spelled as its
//! characters followed by a separate end-of-word symbol, and the most
//! frequent adjacent pair is merged repeatedly. Applied pieces use the
//! `@@` continuation convention on all but the last piece of a word.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

/// End-of-word symbol used during learning and application.
pub const END_OF_WORD: &str = "</w>";
/// Default continuation marker appended to non-final pieces.
pub const CONTINUATION: &str = "@@";

const MERGES_HEADER: &str = "#desknmt-bpe v1";

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("vocabulary size {size} is smaller than the {specials} reserved symbols")]
    VocabTooSmall { size: usize, specials: usize },
    #[error("merge file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered merge operations. Position in the table is the merge priority.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from an explicit list. Later duplicates are dropped.
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut table = Self::new();
        for (a, b) in pairs {
            table.push(a.into(), b.into());
        }
        table
    }

    fn push(&mut self, left: String, right: String) {
        let key = (left, right);
        if !self.ranks.contains_key(&key) {
            self.ranks.insert(key.clone(), self.merges.len());
            self.merges.push(key);
        }
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        // Allocation-free lookup would need a borrowed key type; tables are small
        // relative to the cost of the rest of the pipeline.
        self.ranks.get(&(left.to_string(), right.to_string())).copied()
    }

    /// The first `n` merges.
    pub fn truncated(&self, n: usize) -> Self {
        Self::from_pairs(self.merges.iter().take(n).cloned())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{MERGES_HEADER}")?;
        for (a, b) in &self.merges {
            writeln!(out, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, SubwordError> {
        let mut table = Self::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim_end() != MERGES_HEADER {
                    return Err(SubwordError::Format {
                        line: 1,
                        reason: format!("expected header {MERGES_HEADER:?}"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    table.push(a.to_string(), b.to_string())
                }
                _ => {
                    return Err(SubwordError::Format {
                        line: i + 1,
                        reason: "expected \"LEFT RIGHT\"".into(),
                    })
                }
            }
        }
        Ok(table)
    }
}

/// Tie-break ordering on symbols: plain string order, except that the
/// end-of-word symbol sorts after every character.
fn symbol_key(s: &str) -> String {
    s.replace(END_OF_WORD, "\u{10FFFF}")
}

/// Lexicographic comparison of two candidate pairs under [`symbol_key`].
pub fn pair_tie_order(a: (&str, &str), b: (&str, &str)) -> Ordering {
    (symbol_key(a.0), symbol_key(a.1)).cmp(&(symbol_key(b.0), symbol_key(b.1)))
}

fn spell(word: &str) -> Vec<String> {
    word.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

/// Learns up to `num_merges` merges from word counts.
///
/// At every step the adjacent pair with the highest count-weighted frequency
/// is merged; equal frequencies are resolved by [`pair_tie_order`]. Learning
/// stops early when no pair is left.
pub fn learn_bpe<S: AsRef<str>>(word_counts: &[(S, u64)], num_merges: usize) -> MergeTable {
    let mut words: Vec<(Vec<String>, i64)> = word_counts
        .iter()
        .filter(|(w, c)| !w.as_ref().is_empty() && *c > 0)
        .map(|(w, c)| (spell(w.as_ref()), *c as i64))
        .collect();
    // Aggregate duplicate spellings so the index below stays consistent.
    words.sort();
    words.dedup_by(|a, b| {
        if a.0 == b.0 {
            b.1 += a.1;
            true
        } else {
            false
        }
    });

    let mut stats: HashMap<(String, String), i64> = HashMap::new();
    let mut index: HashMap<(String, String), HashSet<usize>> = HashMap::new();
    for (wi, (symbols, count)) in words.iter().enumerate() {
        for pair in symbols.windows(2) {
            let key = (pair[0].clone(), pair[1].clone());
            *stats.entry(key.clone()).or_insert(0) += count;
            index.entry(key).or_default().insert(wi);
        }
    }

    let mut table = MergeTable::new();
    while table.len() < num_merges {
        let best = stats
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb)
                    .then_with(|| pair_tie_order((&pb.0, &pb.1), (&pa.0, &pa.1)))
            })
            .map(|(p, _)| p.clone());
        let Some((left, right)) = best else { break };
        let merged = format!("{left}{right}");

        let mut affected: Vec<usize> = index
            .get(&(left.clone(), right.clone()))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for wi in affected {
            let (symbols, count) = &mut words[wi];
            let count = *count;
            let old = std::mem::take(symbols);
            for pair in old.windows(2) {
                let key = (pair[0].clone(), pair[1].clone());
                if let Some(c) = stats.get_mut(&key) {
                    *c -= count;
                }
            }
            let new = merge_symbols(&old, &left, &right, &merged);
            for pair in new.windows(2) {
                let key = (pair[0].clone(), pair[1].clone());
                *stats.entry(key.clone()).or_insert(0) += count;
                index.entry(key).or_default().insert(wi);
            }
            *symbols = new;
        }
        stats.retain(|_, c| *c > 0);
        table.push(left, right);
    }
    table
}

fn merge_symbols(symbols: &[String], left: &str, right: &str, merged: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(merged.to_string());
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Counts word types over any number of whitespace-tokenized corpora.
pub fn word_counts<'a, I>(lines: I) -> Vec<(String, u64)>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            *counts.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    counts.into_iter().collect()
}

/// Segments words with a merge table, caching results per word type.
#[derive(Debug, Clone)]
pub struct BpeApplier {
    table: MergeTable,
    marker: String,
    cache: HashMap<String, Vec<String>>,
}

impl BpeApplier {
    pub fn new(table: MergeTable) -> Self {
        Self::with_marker(table, CONTINUATION)
    }

    pub fn with_marker(table: MergeTable, marker: &str) -> Self {
        Self {
            table,
            marker: marker.to_string(),
            cache: HashMap::new(),
        }
    }

    pub fn table(&self) -> &MergeTable {
        &self.table
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn apply(&mut self, word: &str) -> Vec<String> {
        if let Some(hit) = self.cache.get(word) {
            return hit.clone();
        }
        let pieces = apply_bpe_with_marker(word, &self.table, &self.marker);
        self.cache.insert(word.to_string(), pieces.clone());
        pieces
    }

    pub fn apply_line(&mut self, line: &str) -> Vec<String> {
        line.split_whitespace().flat_map(|w| self.apply(w)).collect()
    }
}

/// Segments one word with the default `@@` marker.
pub fn apply_bpe(word: &str, table: &MergeTable) -> Vec<String> {
    apply_bpe_with_marker(word, table, CONTINUATION)
}

pub fn apply_bpe_with_marker(word: &str, table: &MergeTable, marker: &str) -> Vec<String> {
    if word.is_empty() {
        return Vec::new();
    }
    let mut symbols = spell(word);
    loop {
        let best = symbols
            .windows(2)
            .enumerate()
            .filter_map(|(i, p)| table.rank(&p[0], &p[1]).map(|r| (r, i)))
            .min();
        let Some((rank, _)) = best else { break };
        let (left, right) = table.merges[rank].clone();
        symbols = merge_symbols(&symbols, &left, &right, &format!("{left}{right}"));
    }
    // Drop the end-of-word symbol, wherever merges put it.
    if let Some(last) = symbols.last_mut() {
        if let Some(stem) = last.strip_suffix(END_OF_WORD) {
            *last = stem.to_string();
        }
        if last.is_empty() {
            symbols.pop();
        }
    }
    let n = symbols.len();
    symbols
        .into_iter()
        .enumerate()
        .map(|(i, s)| if i + 1 < n { s + marker } else { s })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reverted {
    pub tokens: Vec<String>,
    /// The sequence ended with a continuation marker.
    pub dangling_marker: bool,
}

/// Undoes [`apply_bpe`] over a sequence of pieces.
pub fn revert_bpe<S: AsRef<str>>(pieces: &[S]) -> Reverted {
    revert_bpe_with_marker(pieces, CONTINUATION)
}

pub fn revert_bpe_with_marker<S: AsRef<str>>(pieces: &[S], marker: &str) -> Reverted {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for piece in pieces {
        let piece = piece.as_ref();
        if let Some(stem) = piece.strip_suffix(marker) {
            current.push_str(stem);
            open = true;
        } else {
            current.push_str(piece);
            tokens.push(std::mem::take(&mut current));
            open = false;
        }
    }
    if open {
        tokens.push(current);
    }
    Reverted {
        tokens,
        dangling_marker: open,
    }
}

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";

/// Reserved ids shared by every [`Vocabulary`].
pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const PAD_ID: usize = 3;
pub const SPECIALS: [&str; 4] = [UNK, BOS, EOS, PAD];

pub const DEFAULT_VOCAB_SIZE: usize = 30_000;
pub const DEFAULT_MERGES: usize = 30_000;

/// Dense symbol ↔ id mapping with reserved specials at ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary of at most `size` entries (specials included):
    /// the most frequent symbols, ties broken lexicographically.
    pub fn build<'a, I>(lines: I, size: usize) -> Result<Self, SubwordError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if size < SPECIALS.len() {
            return Err(SubwordError::VocabTooSmall {
                size,
                specials: SPECIALS.len(),
            });
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for line in lines {
            for s in line.split_whitespace() {
                *counts.entry(s).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(s, _)| !SPECIALS.contains(s))
            .collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(size - SPECIALS.len());
        Ok(Self::from_symbols(ranked.into_iter().map(|(s, _)| s.to_string())))
    }

    /// Specials followed by `symbols` in order (duplicates and specials skipped).
    pub fn from_symbols<I: IntoIterator<Item = String>>(symbols: I) -> Self {
        let mut vocab = Vocabulary {
            symbols: Vec::new(),
            ids: HashMap::new(),
        };
        for s in SPECIALS.iter().map(|s| s.to_string()).chain(symbols) {
            if !vocab.ids.contains_key(&s) {
                vocab.ids.insert(s.clone(), vocab.symbols.len());
                vocab.symbols.push(s);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> usize {
        self.ids.get(symbol).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        self.symbols.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// One symbol per line in id order, specials included.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            let _ = writeln!(out, "{s}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SubwordError> {
        let symbols: Vec<&str> = text.lines().collect();
        if symbols.len() < SPECIALS.len() || symbols[..SPECIALS.len()] != SPECIALS {
            return Err(SubwordError::Format {
                line: 1,
                reason: "vocabulary must start with the reserved symbols".into(),
            });
        }
        Ok(Self::from_symbols(
            symbols[SPECIALS.len()..].iter().map(|s| s.to_string()),
        ))
    }
}

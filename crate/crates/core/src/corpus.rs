//! Sentence-aligned corpora and their plain-text files.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{source_path} has {source_lines} lines but {target_path} has {target_lines}")]
    Misaligned {
        source_path: String,
        source_lines: usize,
        target_path: String,
        target_lines: usize,
    },
}

/// Where a training pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    /// Human-translated parallel data (`P`).
    Parallel,
    /// Back-translated monolingual data (`M`).
    Synthetic,
    /// In-domain data (`T`).
    InDomain,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Parallel => "P",
            Provenance::Synthetic => "M",
            Provenance::InDomain => "T",
        })
    }
}

/// One aligned sentence pair, both sides whitespace-tokenized.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.target.clone(), self.source.clone())
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err)
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for line in lines {
        writeln!(out, "{}", line.as_ref()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_parallel(source: &Path, target: &Path) -> Result<Vec<SentencePair>, CorpusError> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::Misaligned {
            source_path: source.display().to_string(),
            source_lines: src.len(),
            target_path: target.display().to_string(),
            target_lines: tgt.len(),
        });
    }
    Ok(src
        .into_iter()
        .zip(tgt)
        .map(|(s, t)| SentencePair::new(s, t))
        .collect())
}

pub fn write_parallel(
    pairs: &[SentencePair],
    source: &Path,
    target: &Path,
) -> Result<(), CorpusError> {
    let src: Vec<&str> = pairs.iter().map(|p| p.source.as_str()).collect();
    let tgt: Vec<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
    write_lines(source, &src)?;
    write_lines(target, &tgt)
}

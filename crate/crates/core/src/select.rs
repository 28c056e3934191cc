//! Moore-Lewis data selection by cross-entropy difference.
//!
//! Every generic sentence `s` gets `delta(s) = H_in(s) - H_out(s)`, where
//! `H_in` comes from a trigram LM on the in-domain text and `H_out` from one
//! trained on a random sample of the generic text itself. Lower deltas are
//! closer to the domain. Only the source side is scored.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Provenance, SentencePair};
use crate::lm::{cross_entropy, sample_corpus, train_lm, LanguageModel, LmError, Weights};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("quota {quota} for {label} exceeds its {available} sentences")]
    QuotaTooLarge {
        label: Provenance,
        quota: usize,
        available: usize,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceScore {
    /// Position in the scored corpus.
    pub index: usize,
    pub h_in: f64,
    pub h_out: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub weights: Weights,
    /// Sentences drawn from the generic corpus for the out-of-domain LM.
    /// `None` means "as many as the in-domain corpus has".
    pub sample_size: Option<usize>,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            sample_size: None,
            seed: 1,
        }
    }
}

/// Scores `corpus` against two fixed models, ascending by delta with ties
/// broken by index.
pub fn score_with_models<M, N, S>(in_lm: &M, out_lm: &N, corpus: &[S]) -> Result<Vec<SentenceScore>, LmError>
where
    M: LanguageModel + Sync + ?Sized,
    N: LanguageModel + Sync + ?Sized,
    S: AsRef<str> + Sync,
{
    let mut scores = corpus
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let h_in = cross_entropy(in_lm, s.as_ref())?;
            let h_out = cross_entropy(out_lm, s.as_ref())?;
            Ok(SentenceScore {
                index,
                h_in,
                h_out,
                delta: h_in - h_out,
            })
        })
        .collect::<Result<Vec<_>, LmError>>()?;
    sort_scores(&mut scores);
    Ok(scores)
}

fn sort_scores(scores: &mut [SentenceScore]) {
    scores.sort_by(|a, b| a.delta.total_cmp(&b.delta).then(a.index.cmp(&b.index)));
}

/// Trains both LMs and scores every generic sentence.
pub fn score_and_sort<S>(
    generic: &[S],
    in_domain: &[S],
    config: &SelectionConfig,
) -> Result<Vec<SentenceScore>, SelectError>
where
    S: AsRef<str> + Sync + Clone,
{
    if generic.is_empty() {
        return Err(SelectError::EmptyCorpus("generic"));
    }
    if in_domain.is_empty() {
        return Err(SelectError::EmptyCorpus("in-domain"));
    }
    let in_lm = train_lm(in_domain, config.weights)?;
    let n = config
        .sample_size
        .unwrap_or(in_domain.len())
        .min(generic.len());
    let sample = sample_corpus(generic, n, config.seed)?;
    let out_lm = train_lm(&sample, config.weights)?;
    Ok(score_with_models(&in_lm, &out_lm, generic)?)
}

/// A selection request over labeled generic corpora.
#[derive(Debug, Clone)]
pub struct SelectionJob {
    pub parallel: Vec<SentencePair>,
    pub synthetic: Vec<SentencePair>,
    /// In-domain source sentences.
    pub in_domain: Vec<String>,
    pub quota_parallel: usize,
    pub quota_synthetic: usize,
    pub config: SelectionConfig,
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Selected pairs: parallel first, then synthetic, each by ascending delta.
    pub pairs: Vec<(Provenance, SentencePair)>,
    /// Position of each selected pair within its own input corpus.
    pub indices: Vec<(Provenance, usize)>,
    /// Scores over the concatenation parallel ++ synthetic, ascending by delta.
    pub scores: Vec<SentenceScore>,
}

impl Selection {
    pub fn count(&self, label: Provenance) -> usize {
        self.pairs.iter().filter(|(l, _)| *l == label).count()
    }

    pub fn sentence_pairs(&self) -> Vec<SentencePair> {
        self.pairs.iter().map(|(_, p)| p.clone()).collect()
    }
}

/// Scores `parallel ++ synthetic` as one generic corpus and keeps the best
/// `quota` pairs of each label.
pub fn select_top(job: &SelectionJob) -> Result<Selection, SelectError> {
    for (label, quota, corpus) in [
        (Provenance::Parallel, job.quota_parallel, &job.parallel),
        (Provenance::Synthetic, job.quota_synthetic, &job.synthetic),
    ] {
        if quota > corpus.len() {
            return Err(SelectError::QuotaTooLarge {
                label,
                quota,
                available: corpus.len(),
            });
        }
    }
    if job.quota_parallel + job.quota_synthetic == 0 {
        return Ok(Selection {
            pairs: Vec::new(),
            indices: Vec::new(),
            scores: Vec::new(),
        });
    }
    let generic: Vec<&str> = job
        .parallel
        .iter()
        .chain(&job.synthetic)
        .map(|p| p.source.as_str())
        .collect();
    let in_domain: Vec<&str> = job.in_domain.iter().map(String::as_str).collect();
    let scores = score_and_sort(&generic, &in_domain, &job.config)?;

    let split = job.parallel.len();
    let mut indices = Vec::with_capacity(job.quota_parallel + job.quota_synthetic);
    for (label, quota) in [
        (Provenance::Parallel, job.quota_parallel),
        (Provenance::Synthetic, job.quota_synthetic),
    ] {
        let picked = scores
            .iter()
            .filter(|s| (s.index < split) == (label == Provenance::Parallel))
            .take(quota)
            .map(|s| (label, if s.index < split { s.index } else { s.index - split }));
        indices.extend(picked);
    }
    let pairs = indices
        .iter()
        .map(|&(label, i)| {
            let corpus = if label == Provenance::Parallel { &job.parallel } else { &job.synthetic };
            (label, corpus[i].clone())
        })
        .collect();
    Ok(Selection { pairs, indices, scores })
}

/// Audit sidecar: "index TAB h_in TAB h_out TAB delta" per scored sentence.
pub fn format_scores(scores: &[SentenceScore]) -> String {
    let mut out = String::new();
    for s in scores {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", s.index, s.h_in, s.h_out, s.delta);
    }
    out
}

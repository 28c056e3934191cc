//! Corpus BLEU with the counting rules of `multi-bleu.perl`, and perplexity.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{hyp} hypothesis lines but {reference} reference lines")]
    LineCountMismatch { hyp: usize, reference: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no reports to average")]
    NoReports,
}

/// Sufficient statistics for corpus BLEU. Merging is plain addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn segment(hyp: &str, reference: &str, lowercase: bool) -> Self {
        let (h, r) = if lowercase {
            (hyp.to_lowercase(), reference.to_lowercase())
        } else {
            (hyp.to_string(), reference.to_string())
        };
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        let mut stats = BleuStats {
            hyp_len: h.len() as u64,
            ref_len: r.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&r, n);
            for (gram, count) in ngram_counts(&h, n) {
                let clip = ref_counts.get(&gram).copied().unwrap_or(0);
                stats.correct[n - 1] += count.min(clip);
                stats.total[n - 1] += count;
            }
        }
        stats
    }

    pub fn merge(mut self, other: BleuStats) -> Self {
        for n in 0..MAX_ORDER {
            self.correct[n] += other.correct[n];
            self.total[n] += other.total[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self
    }

    pub fn report(&self) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            if self.total[n] > 0 {
                precisions[n] = self.correct[n] as f64 / self.total[n] as f64;
            }
        }
        let brevity_penalty = if self.hyp_len >= self.ref_len {
            1.0
        } else if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        let bleu = if precisions.iter().all(|&p| p > 0.0) {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * log_mean.exp()
        } else {
            0.0
        };
        BleuReport {
            bleu,
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuReport {
    /// Percentage in `[0, 100]`.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuReport {
    pub fn ratio(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            self.hyp_len as f64 / self.ref_len as f64
        }
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precisions.map(|p| 100.0 * p);
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            p[0],
            p[1],
            p[2],
            p[3],
            self.brevity_penalty,
            self.ratio(),
            self.hyp_len,
            self.ref_len
        )
    }
}

/// Corpus BLEU over whitespace-tokenized lines, one reference per line.
pub fn bleu<H, R>(hypotheses: &[H], references: &[R], lowercase: bool) -> Result<BleuReport, EvalError>
where
    H: AsRef<str> + Sync,
    R: AsRef<str> + Sync,
{
    if hypotheses.len() != references.len() {
        return Err(EvalError::LineCountMismatch {
            hyp: hypotheses.len(),
            reference: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let stats = hypotheses
        .par_iter()
        .zip(references.par_iter())
        .map(|(h, r)| BleuStats::segment(h.as_ref(), r.as_ref(), lowercase))
        .reduce(BleuStats::default, BleuStats::merge);
    Ok(stats.report())
}

/// Arithmetic mean of per-set BLEU scores.
pub fn average_bleu(reports: &[BleuReport]) -> Result<f64, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    Ok(reports.iter().map(|r| r.bleu).sum::<f64>() / reports.len() as f64)
}

/// `exp(nll / tokens)` for a summed natural-log NLL.
pub fn perplexity(nll: f64, tokens: usize) -> Result<f64, EvalError> {
    if tokens == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    Ok((nll / tokens as f64).exp())
}

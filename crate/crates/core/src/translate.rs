//! Greedy and beam decoding, back-translation, and hyper-specialisation.

use std::cmp::Ordering;

use ndarray::Array1;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{decode_step, encode, DecoderState, Encoded, Example, ModelError, ModelParams};
use crate::train::{run_epoch, TrainConfig, TrainError, TrainState};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("empty in-domain set")]
    EmptyInDomain,
    #[error("{0}")]
    Config(String),
    #[error("{sources} sources but {references} references")]
    Misaligned { sources: usize, references: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Token ids with their case-factor ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sequence {
    pub ids: Vec<usize>,
    pub cases: Vec<usize>,
}

impl Sequence {
    pub fn new(ids: Vec<usize>, cases: Vec<usize>) -> Self {
        Self { ids, cases }
    }
}

/// A (partial) translation. `tokens` never contains `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub cases: Vec<usize>,
    /// Σ ln p over every predicted token, `<eos>` included.
    pub log_prob: f64,
    /// Ended by `<eos>` or by reaching the length limit.
    pub finished: bool,
    /// Ended by `<eos>`.
    pub eos: bool,
}

impl Hypothesis {
    fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            cases: Vec::new(),
            log_prob: 0.0,
            finished: false,
            eos: false,
        }
    }

    /// Number of decoder predictions behind this hypothesis.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.eos)
    }

    /// Cumulative log-probability, divided by [`Hypothesis::steps`] when `normalize`.
    pub fn score(&self, normalize: bool) -> f64 {
        if normalize && self.steps() > 0 {
            self.log_prob / self.steps() as f64
        } else {
            self.log_prob
        }
    }

    pub fn to_sequence(&self) -> Sequence {
        Sequence::new(self.tokens.clone(), self.cases.clone())
    }
}

// First index of the maximum; ties go to the lowest id.
fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Picks the most probable token at every step until `<eos>` or `max_len` tokens.
pub fn greedy_decode(
    params: &ModelParams,
    source: &[usize],
    source_case: &[usize],
    max_len: usize,
) -> Result<Hypothesis, ModelError> {
    let enc = encode(params, source, source_case)?;
    let eos = params.config.eos_id;
    let mut hyp = Hypothesis::empty();
    let mut state = enc.init.clone();
    let (mut prev, mut prev_case) = (params.config.bos_id, NO_CASE);
    while hyp.tokens.len() < max_len {
        let out = decode_step(params, &enc, &state, prev, prev_case)?;
        let tok = argmax(&out.log_probs);
        hyp.log_prob += out.log_probs[tok];
        if tok == eos {
            hyp.eos = true;
            break;
        }
        let case = argmax(&out.case_log_probs);
        hyp.tokens.push(tok);
        hyp.cases.push(case);
        state = out.state;
        (prev, prev_case) = (tok, case);
    }
    hyp.finished = true;
    Ok(hyp)
}

const NO_CASE: usize = crate::textnorm::CaseFactor::NoCase as usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    /// Rank finished hypotheses by log-probability per predicted token.
    pub normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_len: 80,
            normalize: true,
        }
    }
}

struct Live {
    hyp: Hypothesis,
    state: DecoderState,
}

/// Beam search. Returns finished hypotheses, best first (at most
/// `beam_size` per step reach the finished list, so the list may be longer
/// than the beam).
///
/// Each step expands every live hypothesis by every token and keeps the
/// `beam_size` expansions with the highest cumulative log-probability (ties
/// by parent rank, then token id). Kept expansions ending in `<eos>` or at
/// `max_len` tokens are finished; the rest stay live.
pub fn beam_search(
    params: &ModelParams,
    source: &[usize],
    source_case: &[usize],
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>, ModelError> {
    if config.beam_size == 0 {
        return Err(ModelError::Config("beam size must be at least 1".into()));
    }
    let enc = encode(params, source, source_case)?;
    if config.max_len == 0 {
        let mut h = Hypothesis::empty();
        h.finished = true;
        return Ok(vec![h]);
    }
    let eos = params.config.eos_id;
    let mut live = vec![Live {
        hyp: Hypothesis::empty(),
        state: enc.init.clone(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let outputs = expand(params, &enc, &live)?;
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (p, out) in outputs.iter().enumerate() {
            let base = live[p].hyp.log_prob;
            candidates.extend(out.log_probs.iter().enumerate().map(|(tok, &lp)| (base + lp, p, tok)));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(config.beam_size);

        let mut next = Vec::with_capacity(candidates.len());
        for (lp, p, tok) in candidates {
            let mut hyp = live[p].hyp.clone();
            hyp.log_prob = lp;
            if tok == eos {
                hyp.eos = true;
                hyp.finished = true;
                finished.push(hyp);
                continue;
            }
            hyp.tokens.push(tok);
            hyp.cases.push(argmax(&outputs[p].case_log_probs));
            if hyp.tokens.len() >= config.max_len {
                hyp.finished = true;
                finished.push(hyp);
            } else {
                next.push(Live {
                    hyp,
                    state: outputs[p].state.clone(),
                });
            }
        }
        live = next;
        // Without normalization, extending can only lower a score.
        if !config.normalize {
            let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if live.iter().all(|l| l.hyp.log_prob <= best_done) {
                break;
            }
        }
    }
    finished.sort_by(|a, b| {
        b.score(config.normalize)
            .partial_cmp(&a.score(config.normalize))
            .unwrap_or(Ordering::Equal)
    });
    Ok(finished)
}

fn expand(params: &ModelParams, enc: &Encoded, live: &[Live]) -> Result<Vec<crate::model::StepOutput>, ModelError> {
    live.iter()
        .map(|l| {
            let (prev, prev_case) = match (l.hyp.tokens.last(), l.hyp.cases.last()) {
                (Some(&t), Some(&c)) => (t, c),
                _ => (params.config.bos_id, NO_CASE),
            };
            decode_step(params, enc, &l.state, prev, prev_case)
        })
        .collect()
}

/// Best hypothesis of [`beam_search`].
pub fn beam_decode(
    params: &ModelParams,
    source: &[usize],
    source_case: &[usize],
    config: &BeamConfig,
) -> Result<Hypothesis, ModelError> {
    Ok(beam_search(params, source, source_case, config)?
        .into_iter()
        .next()
        .expect("beam search always finishes at least one hypothesis"))
}

/// Translates every sentence (in parallel, order preserved).
pub fn translate_all(
    params: &ModelParams,
    sources: &[Sequence],
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>, ModelError> {
    sources
        .par_iter()
        .map(|s| {
            if config.beam_size == 1 {
                greedy_decode(params, &s.ids, &s.cases, config.max_len)
            } else {
                beam_decode(params, &s.ids, &s.cases, config)
            }
        })
        .collect()
}

/// Machine-translated sources paired with original monolingual targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub pairs: Vec<Example>,
    pub shard_size: usize,
}

impl SyntheticCorpus {
    /// Consecutive shards of `shard_size` pairs; the last may be smaller.
    pub fn shards(&self) -> Vec<&[Example]> {
        self.pairs.chunks(self.shard_size).collect()
    }
}

/// Back-translates a target-language corpus with a target→source model.
pub fn back_translate(
    params: &ModelParams,
    monolingual: &[Sequence],
    shard_size: usize,
    config: &BeamConfig,
) -> Result<SyntheticCorpus, TranslateError> {
    if shard_size == 0 {
        return Err(TranslateError::Config("shard size must be positive".into()));
    }
    let hyps = translate_all(params, monolingual, config)?;
    let pairs = hyps
        .into_iter()
        .zip(monolingual)
        .map(|(h, t)| Example {
            source: h.tokens,
            source_case: h.cases,
            target: t.ids.clone(),
            target_case: t.cases.clone(),
        })
        .collect();
    Ok(SyntheticCorpus { pairs, shard_size })
}

/// Where hyper-specialisation targets come from.
#[derive(Debug, Clone, Copy)]
pub enum AdaptTargets<'a> {
    /// The model's own single-best translations of the in-domain sources.
    OwnHypotheses,
    References(&'a [Sequence]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpecConfig {
    pub lr: f64,
    pub epochs: usize,
    pub beam: BeamConfig,
    /// Batching and dropout; its learning-rate fields are ignored.
    pub train: TrainConfig,
}

impl Default for HyperSpecConfig {
    fn default() -> Self {
        Self {
            lr: 0.7,
            epochs: 1,
            beam: BeamConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Continues training a copy of `state` on in-domain data at a fixed rate.
pub fn hyper_specialize(
    state: &TrainState,
    sources: &[Sequence],
    targets: AdaptTargets<'_>,
    config: &HyperSpecConfig,
) -> Result<TrainState, TranslateError> {
    if sources.is_empty() {
        return Err(TranslateError::EmptyInDomain);
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(TranslateError::Config(format!("learning rate {} must be positive", config.lr)));
    }
    let targets: Vec<Sequence> = match targets {
        AdaptTargets::References(refs) => {
            if refs.len() != sources.len() {
                return Err(TranslateError::Misaligned {
                    sources: sources.len(),
                    references: refs.len(),
                });
            }
            refs.to_vec()
        }
        AdaptTargets::OwnHypotheses => translate_all(&state.params, sources, &config.beam)?
            .iter()
            .map(Hypothesis::to_sequence)
            .collect(),
    };
    let examples: Vec<Example> = sources
        .iter()
        .zip(targets)
        .map(|(s, t)| Example {
            source: s.ids.clone(),
            source_case: s.cases.clone(),
            target: t.ids,
            target_case: t.cases,
        })
        .collect();
    let mut adapted = state.clone();
    adapted.lr = config.lr;
    for _ in 0..config.epochs {
        run_epoch(&mut adapted, &examples, &config.train)?;
    }
    Ok(adapted)
}

/// Concatenates every set except `exclude`, for adapting without the
/// evaluated set itself.
pub fn leave_one_out<T: Clone>(sets: &[Vec<T>], exclude: usize) -> Vec<T> {
    sets.iter()
        .enumerate()
        .filter(|&(i, _)| i != exclude)
        .flat_map(|(_, s)| s.iter().cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn config(tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            src_vocab: 6,
            tgt_vocab,
            embedding: 3,
            case_embedding: 2,
            hidden: 4,
            layers: 2,
            init_scale: 0.8,
            bos_id: 0,
            eos_id: 1,
            pad_id: 0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn rigged_eos_gives_empty_translation() {
        let mut p = ModelParams::init(&config(2), 0).unwrap();
        p.out_b[1] = 100.0;
        let h = greedy_decode(&p, &[2, 3], &[4, 4], 10).unwrap();
        assert!(h.tokens.is_empty() && h.finished && h.eos);
        let b = beam_decode(&p, &[2, 3], &[4, 4], &BeamConfig::default()).unwrap();
        assert!(b.tokens.is_empty());
    }

    #[test]
    fn length_bound() {
        let mut p = ModelParams::init(&config(3), 0).unwrap();
        p.out_b[2] = 100.0;
        let h = greedy_decode(&p, &[2], &[4], 1).unwrap();
        assert_eq!(h.tokens, vec![2]);
        assert!(h.finished && !h.eos);
        let h = greedy_decode(&p, &[2], &[4], 0).unwrap();
        assert!(h.tokens.is_empty());
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..10 {
            let p = ModelParams::init(&config(5), seed).unwrap();
            let g = greedy_decode(&p, &[2, 3, 4], &[4, 0, 1], 6).unwrap();
            let cfg = BeamConfig {
                beam_size: 1,
                max_len: 6,
                normalize: true,
            };
            let b = beam_decode(&p, &[2, 3, 4], &[4, 0, 1], &cfg).unwrap();
            assert_eq!((g.tokens, g.cases), (b.tokens, b.cases));
            assert!((g.log_prob - b.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn shards_partition() {
        let mono: Vec<Sequence> = (0..10).map(|i| Sequence::new(vec![2 + i % 3], vec![4])).collect();
        let beam = BeamConfig {
            beam_size: 2,
            max_len: 3,
            normalize: true,
        };
        let bt_params = {
            let mut c = config(6);
            c.src_vocab = 5;
            ModelParams::init(&c, 2).unwrap()
        };
        let corpus = back_translate(&bt_params, &mono, 4, &beam).unwrap();
        let sizes: Vec<usize> = corpus.shards().iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        for (pair, t) in corpus.pairs.iter().zip(&mono) {
            assert_eq!(pair.target, t.ids);
        }
        let empty = back_translate(&bt_params, &[], 4, &beam).unwrap();
        assert!(empty.pairs.is_empty());
    }

    #[test]
    fn hyperspec_zero_epochs_is_identity() {
        let p = ModelParams::init(&config(5), 3).unwrap();
        let state = TrainState::new(p, &TrainConfig::default(), 1);
        let src = vec![Sequence::new(vec![2, 3], vec![4, 4])];
        let cfg = HyperSpecConfig {
            epochs: 0,
            ..HyperSpecConfig::default()
        };
        let out = hyper_specialize(&state, &src, AdaptTargets::OwnHypotheses, &cfg).unwrap();
        assert_eq!(out.params, state.params);
        assert!(matches!(
            hyper_specialize(&state, &[], AdaptTargets::OwnHypotheses, &cfg),
            Err(TranslateError::EmptyInDomain)
        ));
    }

    #[test]
    fn leave_one_out_skips_the_set() {
        let sets = vec![vec![1, 2], vec![3], vec![4, 5]];
        assert_eq!(leave_one_out(&sets, 1), vec![1, 2, 4, 5]);
    }
}

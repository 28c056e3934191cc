//! Plain SGD over minibatches, plateau-triggered learning-rate decay and the
//! three-phase shard schedule (P, then P+Mᵢ, then the selected P'+M').

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    backward, forward_loss, read_checkpoint, write_checkpoint, Batch, Checkpoint, Example,
    LossStats, ModelError, ModelParams,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty shard")]
    EmptyShard,
    #[error("empty validation corpus")]
    EmptyValidation,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimizer and batching settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    /// Pairs with a longer source or target are skipped.
    pub max_len: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub initial_lr: f64,
    pub decay: f64,
    /// Relative validation-PPL improvement below which decay starts.
    pub threshold: f64,
    /// Examples per gradient work unit. Fixed so that results do not depend
    /// on the number of threads.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            dropout: 0.3,
            max_len: 80,
            clip_norm: Some(5.0),
            initial_lr: 1.0,
            decay: 0.7,
            threshold: 0.01,
            chunk_size: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.chunk_size == 0 {
            return bad("batch and chunk sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.initial_lr));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay {} outside (0, 1)", self.decay));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clip norm {c} must be positive"));
            }
        }
        Ok(())
    }
}

/// Clips `grads` to `clip_norm` (global L2 norm), then steps `params ← params − lr·grads`.
/// Returns the gradient norm before clipping. Non-finite gradients leave
/// `params` untouched.
pub fn sgd_update(
    params: &mut ModelParams,
    grads: &ModelParams,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<f64, TrainError> {
    if let Err(ModelError::NonFinite(name)) = grads.check_finite() {
        return Err(TrainError::NonFiniteGradient(name));
    }
    let norm = grads.global_norm();
    let scale = match clip_norm {
        Some(c) if norm > c => lr * c / norm,
        _ => lr,
    };
    params.zip_mut(grads, |_, mut p, g| p.zip_mut_with(&g, |p, &g| *p -= scale * g));
    Ok(norm)
}

/// Batch membership for one epoch: a seeded shuffle, a stable sort by source
/// length so batches hold similar lengths, fixed-size chunks, then a shuffle
/// of the batch order.
pub fn make_batches(source_lengths: &[usize], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..source_lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| source_lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Mean-per-token objective gradient over `examples`, computed in fixed-size
/// chunks (in parallel) and combined in chunk order.
pub fn batch_gradient(
    params: &ModelParams,
    examples: &[&Example],
    dropout: f64,
    seed: u64,
    chunk_size: usize,
) -> Result<(LossStats, ModelParams), TrainError> {
    let parts: Vec<Result<(LossStats, ModelParams), ModelError>> = examples
        .par_chunks(chunk_size)
        .enumerate()
        .map(|(k, chunk)| {
            let batch = Batch::new(chunk, &params.config)?;
            let chunk_seed = seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (stats, cache) = forward_loss(params, &batch, dropout, chunk_seed)?;
            Ok((stats, backward(params, &cache)))
        })
        .collect();
    let mut total = LossStats::default();
    let mut parts_ok = Vec::with_capacity(parts.len());
    for p in parts {
        let (s, g) = p?;
        total.merge(&s);
        parts_ok.push((s, g));
    }
    let mut grads = params.zeros_like();
    for (s, g) in &parts_ok {
        let w = s.tokens as f64 / total.tokens as f64;
        grads.zip_mut(g, |_, mut acc, g| acc.zip_mut_with(&g, |a, &b| *a += w * b));
    }
    Ok((total, grads))
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub decay_mode: bool,
    /// Validation perplexity after each completed epoch.
    pub ppl_history: Vec<f64>,
    pub seed: u64,
    /// Parameter updates performed so far.
    pub updates: u64,
    /// Position within a [`TrainingSchedule`]: `(phase index, epochs done in it)`.
    pub cursor: (usize, usize),
    /// Epochs of the current phase trained at a decayed rate.
    pub decayed_epochs: usize,
}

impl TrainState {
    pub fn new(params: ModelParams, config: &TrainConfig, seed: u64) -> Self {
        Self {
            params,
            epoch: 0,
            lr: config.initial_lr,
            decay_mode: false,
            ppl_history: Vec::new(),
            seed,
            updates: 0,
            cursor: (0, 0),
            decayed_epochs: 0,
        }
    }

    // Independent stream per (seed, epoch) so a resumed run reshuffles identically.
    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch as u64 + 1);
        rng
    }
}

/// Summary of one pass over a shard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// Mean word NLL per target token over the epoch (nats).
    pub train_loss: f64,
    pub batches: usize,
    pub examples: usize,
    pub skipped: usize,
}

/// One seeded pass over `shard` at the state's current learning rate.
pub fn run_epoch(state: &mut TrainState, shard: &[Example], config: &TrainConfig) -> Result<EpochReport, TrainError> {
    config.validate()?;
    let max_len = config.max_len.min(state.params.config.max_len);
    let kept: Vec<&Example> = shard
        .iter()
        .filter(|e| e.source.len() <= max_len && e.target.len() <= max_len)
        .collect();
    if kept.is_empty() {
        return Err(TrainError::EmptyShard);
    }
    let mut rng = state.epoch_rng();
    let lengths: Vec<usize> = kept.iter().map(|e| e.source.len()).collect();
    let batches = make_batches(&lengths, config.batch_size, &mut rng);
    let mut stats = LossStats::default();
    for batch in &batches {
        let examples: Vec<&Example> = batch.iter().map(|&i| kept[i]).collect();
        let seed: u64 = rng.gen();
        let (s, grads) = batch_gradient(&state.params, &examples, config.dropout, seed, config.chunk_size)?;
        sgd_update(&mut state.params, &grads, state.lr, config.clip_norm)?;
        state.updates += 1;
        stats.merge(&s);
    }
    state.epoch += 1;
    Ok(EpochReport {
        train_loss: stats.mean_nll(),
        batches: batches.len(),
        examples: kept.len(),
        skipped: shard.len() - kept.len(),
    })
}

/// Teacher-forced sums over `corpus` with dropout off.
pub fn evaluate_loss(params: &ModelParams, corpus: &[Example], batch_size: usize) -> Result<LossStats, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let parts: Vec<Result<LossStats, ModelError>> = corpus
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let batch = Batch::new(chunk, &params.config)?;
            Ok(forward_loss(params, &batch, 0.0, 0)?.0)
        })
        .collect();
    let mut total = LossStats::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

/// `exp(mean word NLL per target token)`.
pub fn evaluate_ppl(params: &ModelParams, corpus: &[Example], batch_size: usize) -> Result<f64, TrainError> {
    Ok(evaluate_loss(params, corpus, batch_size)?.mean_nll().exp())
}

/// Records `new_ppl` and adjusts the learning rate for the next epoch.
///
/// Outside decay mode, a relative improvement `(prev − new) / prev` below
/// `threshold` switches decay mode on. In decay mode every call multiplies
/// the rate by `decay`, the triggering call included.
pub fn update_lr(state: &mut TrainState, new_ppl: f64, threshold: f64, decay: f64) {
    if !state.decay_mode {
        if let Some(&prev) = state.ppl_history.last() {
            if (prev - new_ppl) / prev < threshold {
                state.decay_mode = true;
            }
        }
    }
    if state.decay_mode {
        state.lr *= decay;
    }
    state.ppl_history.push(new_ppl);
}

/// Which data an epoch trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShardLabel {
    Parallel,
    /// Parallel data plus synthetic shard `i` (1-based).
    Synthetic(usize),
    Selected,
}

impl fmt::Display for ShardLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShardLabel::Parallel => write!(f, "P"),
            ShardLabel::Synthetic(i) => write!(f, "P+M{i}"),
            ShardLabel::Selected => write!(f, "P'+M'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    /// Parallel data at the initial rate until the plateau trigger, then
    /// `decay_epochs` decayed epochs; never more than `max_epochs` in total.
    Parallel { max_epochs: usize, decay_epochs: usize },
    /// One epoch per synthetic shard, cycled `rounds` times, with the rate
    /// reset to the initial value and held there.
    Synthetic { shards: usize, rounds: usize },
    /// Decayed epochs on the selected data.
    Selected { epochs: usize },
}

impl Phase {
    /// Fixed epoch labels, or `None` for the plateau-driven phase.
    pub fn labels(&self) -> Option<Vec<ShardLabel>> {
        match *self {
            Phase::Parallel { .. } => None,
            Phase::Synthetic { shards, rounds } => Some(
                (0..rounds)
                    .flat_map(|_| (1..=shards).map(ShardLabel::Synthetic))
                    .collect(),
            ),
            Phase::Selected { epochs } => Some(vec![ShardLabel::Selected; epochs]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSchedule {
    pub phases: Vec<Phase>,
}

/// Epoch counts for [`build_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleConfig {
    pub max_parallel_epochs: usize,
    pub parallel_decay_epochs: usize,
    pub synthetic_rounds: usize,
    pub selected_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            max_parallel_epochs: 13,
            parallel_decay_epochs: 4,
            synthetic_rounds: 1,
            selected_epochs: 4,
        }
    }
}

/// Builds the phase plan. Synthetic shards and selected data are optional;
/// without them only the parallel phase remains.
pub fn build_schedule(
    parallel_size: usize,
    synthetic_shard_sizes: &[usize],
    selected_size: Option<usize>,
    config: &ScheduleConfig,
) -> Result<TrainingSchedule, TrainError> {
    if parallel_size == 0 {
        return Err(TrainError::Config("no parallel data".into()));
    }
    if synthetic_shard_sizes.contains(&0) {
        return Err(TrainError::Config("empty synthetic shard".into()));
    }
    if selected_size == Some(0) {
        return Err(TrainError::Config("empty selected data".into()));
    }
    if config.max_parallel_epochs == 0 {
        return Err(TrainError::Config("max_parallel_epochs must be positive".into()));
    }
    let mut phases = vec![Phase::Parallel {
        max_epochs: config.max_parallel_epochs,
        decay_epochs: config.parallel_decay_epochs,
    }];
    if !synthetic_shard_sizes.is_empty() && config.synthetic_rounds > 0 {
        phases.push(Phase::Synthetic {
            shards: synthetic_shard_sizes.len(),
            rounds: config.synthetic_rounds,
        });
    }
    if selected_size.is_some() && config.selected_epochs > 0 {
        phases.push(Phase::Selected {
            epochs: config.selected_epochs,
        });
    }
    Ok(TrainingSchedule { phases })
}

/// Training data referenced by a schedule.
#[derive(Debug, Clone, Default)]
pub struct ScheduleData {
    pub parallel: Vec<Example>,
    pub synthetic: Vec<Vec<Example>>,
    pub selected: Vec<Example>,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub label: ShardLabel,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_ppl: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.1}",
            self.epoch, self.label, self.lr, self.train_loss, self.valid_ppl, self.seconds
        )
    }
}

fn train_one(
    state: &mut TrainState,
    label: ShardLabel,
    shard: &[Example],
    valid: &[Example],
    config: &TrainConfig,
) -> Result<EpochLog, TrainError> {
    let start = Instant::now();
    let lr = state.lr;
    let report = run_epoch(state, shard, config)?;
    let valid_ppl = evaluate_ppl(&state.params, valid, config.batch_size)?;
    Ok(EpochLog {
        epoch: state.epoch,
        label,
        lr,
        train_loss: report.train_loss,
        valid_ppl,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs (or resumes, via `state.cursor`) every phase of `schedule`, calling
/// `on_epoch` after each epoch with the log row and the updated state.
pub fn run_schedule<F>(
    state: &mut TrainState,
    schedule: &TrainingSchedule,
    data: &ScheduleData,
    valid: &[Example],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(), TrainError>
where
    F: FnMut(&EpochLog, &TrainState) -> Result<(), TrainError>,
{
    config.validate()?;
    while state.cursor.0 < schedule.phases.len() {
        let (phase_index, done) = state.cursor;
        match &schedule.phases[phase_index] {
            Phase::Parallel {
                max_epochs,
                decay_epochs,
            } => {
                if done >= *max_epochs || (state.decay_mode && state.decayed_epochs >= *decay_epochs) {
                    next_phase(state);
                    continue;
                }
                if state.decay_mode {
                    state.decayed_epochs += 1;
                }
                let log = train_one(state, ShardLabel::Parallel, &data.parallel, valid, config)?;
                update_lr(state, log.valid_ppl, config.threshold, config.decay);
                state.cursor.1 += 1;
                on_epoch(&log, state)?;
            }
            Phase::Synthetic { .. } | Phase::Selected { .. } => {
                let labels = schedule.phases[phase_index].labels().expect("fixed phase");
                if done == 0 {
                    let selected = matches!(schedule.phases[phase_index], Phase::Selected { .. });
                    state.decay_mode = selected;
                    state.lr = if selected {
                        config.initial_lr * config.decay
                    } else {
                        config.initial_lr
                    };
                }
                let Some(&label) = labels.get(done) else {
                    next_phase(state);
                    continue;
                };
                let log = match label {
                    ShardLabel::Synthetic(i) => {
                        let shard = data
                            .synthetic
                            .get(i - 1)
                            .ok_or_else(|| TrainError::Config(format!("missing synthetic shard {i}")))?;
                        let mut union = data.parallel.clone();
                        union.extend_from_slice(shard);
                        train_one(state, label, &union, valid, config)?
                    }
                    _ => train_one(state, label, &data.selected, valid, config)?,
                };
                if state.decay_mode {
                    state.lr *= config.decay;
                }
                state.ppl_history.push(log.valid_ppl);
                state.cursor.1 += 1;
                on_epoch(&log, state)?;
            }
        }
    }
    Ok(())
}

fn next_phase(state: &mut TrainState) {
    state.cursor = (state.cursor.0 + 1, 0);
    state.decayed_epochs = 0;
}

const META_PREFIX: &str = "train.";

/// Stores params and schedule state in one checkpoint.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), TrainError> {
    write_checkpoint(path, &state_to_checkpoint(state))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, TrainError> {
    state_from_checkpoint(read_checkpoint(path)?)
}

pub fn state_to_checkpoint(state: &TrainState) -> Checkpoint {
    let mut ck = Checkpoint::new(state.params.clone());
    let bits = |v: f64| format!("{:016x}", v.to_bits());
    let meta = [
        ("epoch", state.epoch.to_string()),
        ("lr", bits(state.lr)),
        ("decay_mode", state.decay_mode.to_string()),
        (
            "ppl_history",
            state.ppl_history.iter().map(|&v| bits(v)).collect::<Vec<_>>().join(","),
        ),
        ("seed", state.seed.to_string()),
        ("updates", state.updates.to_string()),
        ("phase", state.cursor.0.to_string()),
        ("phase_epoch", state.cursor.1.to_string()),
        ("decayed_epochs", state.decayed_epochs.to_string()),
    ];
    for (k, v) in meta {
        ck.metadata.insert(format!("{META_PREFIX}{k}"), v);
    }
    ck
}

pub fn state_from_checkpoint(ck: Checkpoint) -> Result<TrainState, TrainError> {
    let get = |k: &str| -> Result<&str, TrainError> {
        ck.metadata
            .get(&format!("{META_PREFIX}{k}"))
            .map(String::as_str)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing {META_PREFIX}{k}")).into())
    };
    let bad = |k: &str| TrainError::Model(ModelError::Checkpoint(format!("bad {META_PREFIX}{k}")));
    let num = |k: &str| -> Result<u64, TrainError> { get(k)?.parse().map_err(|_| bad(k)) };
    let float = |s: &str, k: &str| -> Result<f64, TrainError> {
        u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| bad(k))
    };
    let history = get("ppl_history")?;
    let ppl_history = if history.is_empty() {
        Vec::new()
    } else {
        history
            .split(',')
            .map(|s| float(s, "ppl_history"))
            .collect::<Result<_, _>>()?
    };
    Ok(TrainState {
        epoch: num("epoch")? as usize,
        lr: float(get("lr")?, "lr")?,
        decay_mode: get("decay_mode")?.parse().map_err(|_| bad("decay_mode"))?,
        ppl_history,
        seed: num("seed")?,
        updates: num("updates")?,
        cursor: (num("phase")? as usize, num("phase_epoch")? as usize),
        decayed_epochs: num("decayed_epochs")? as usize,
        params: ck.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            src_vocab: 10,
            tgt_vocab: 10,
            embedding: 6,
            case_embedding: 2,
            hidden: 8,
            layers: 1,
            ..ModelConfig::default()
        }
    }

    fn state(seed: u64) -> TrainState {
        let params = ModelParams::init(&tiny_config(), seed).unwrap();
        TrainState::new(params, &TrainConfig::default(), seed)
    }

    #[test]
    fn sgd_arithmetic() {
        let cfg = tiny_config();
        let mut p = ModelParams::zeros(&cfg);
        p.out_b[0] = 2.0;
        let mut g = ModelParams::zeros(&cfg);
        let before = p.clone();
        sgd_update(&mut p, &g, 1.0, None).unwrap();
        assert_eq!(p, before);
        g.out_b[0] = 0.5;
        sgd_update(&mut p, &g, 1.0, None).unwrap();
        assert_eq!(p.out_b[0], 1.5);
    }

    #[test]
    fn clipping_halves_a_norm_10_step() {
        let cfg = tiny_config();
        let mut g = ModelParams::zeros(&cfg);
        g.out_b[0] = 6.0;
        g.out_b[1] = 8.0;
        let mut p = ModelParams::zeros(&cfg);
        let norm = sgd_update(&mut p, &g, 1.0, Some(5.0)).unwrap();
        assert_eq!(norm, 10.0);
        assert_eq!((p.out_b[0], p.out_b[1]), (-3.0, -4.0));
        g.attn[[0, 0]] = f64::NAN;
        let before = p.clone();
        assert!(matches!(sgd_update(&mut p, &g, 1.0, None), Err(TrainError::NonFiniteGradient(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn batches_partition_the_shard() {
        let lengths: Vec<usize> = (0..130).map(|i| i % 7).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = make_batches(&lengths, 64, &mut rng);
        let mut sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 64, 64]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..130).collect::<Vec<_>>());
    }

    #[test]
    fn epoch_descends_and_is_deterministic() {
        let shard = vec![Example::uncased(vec![4, 5], vec![6, 7]); 64];
        let cfg = TrainConfig {
            dropout: 0.0,
            ..TrainConfig::default()
        };
        let mut a = state(3);
        let initial = evaluate_loss(&a.params, &shard, 64).unwrap().mean_nll();
        let report = run_epoch(&mut a, &shard, &cfg).unwrap();
        assert_eq!((report.batches, a.updates, a.epoch), (1, 1, 1));
        let after = evaluate_loss(&a.params, &shard, 64).unwrap().mean_nll();
        assert!(after < initial, "{after} !< {initial}");
        let mut b = state(3);
        run_epoch(&mut b, &shard, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(matches!(run_epoch(&mut b, &[], &cfg), Err(TrainError::EmptyShard)));
    }

    #[test]
    fn gradient_does_not_depend_on_chunking_order() {
        let st = state(4);
        let exs: Vec<Example> = (0..10)
            .map(|i| Example::uncased(vec![4 + i % 5; 1 + i % 3], vec![5 + i % 4; 2]))
            .collect();
        let refs: Vec<&Example> = exs.iter().collect();
        let (s1, g1) = batch_gradient(&st.params, &refs, 0.0, 0, 3).unwrap();
        let (s2, g2) = batch_gradient(&st.params, &refs, 0.0, 0, 10).unwrap();
        assert_eq!(s1.tokens, s2.tokens);
        let mut diff: f64 = 0.0;
        let mut g = g1.clone();
        g.zip_mut(&g2, |_, a, b| {
            for (x, y) in a.iter().zip(b.iter()) {
                diff = diff.max((x - y).abs());
            }
        });
        assert!(diff < 1e-12);
    }

    #[test]
    fn uniform_model_has_ppl_v() {
        let cfg = ModelConfig {
            init_scale: 0.0,
            ..tiny_config()
        };
        let params = ModelParams::init(&cfg, 0).unwrap();
        let corpus = vec![Example::uncased(vec![4], vec![5, 6])];
        let ppl = evaluate_ppl(&params, &corpus, 64).unwrap();
        assert!((ppl - 10.0).abs() < 1e-9);
        assert!(evaluate_ppl(&params, &[], 64).is_err());
    }

    #[test]
    fn decay_sequence() {
        let mut s = state(0);
        update_lr(&mut s, 13.29, 0.03, 0.7);
        assert_eq!((s.lr, s.decay_mode), (1.0, false));
        update_lr(&mut s, 13.00, 0.03, 0.7);
        assert!(s.decay_mode);
        let mut expected = 0.7;
        assert_eq!(s.lr, expected);
        for _ in 0..3 {
            update_lr(&mut s, 12.0, 0.03, 0.7);
            expected *= 0.7;
            assert_eq!(s.lr, expected);
        }
        let mut t = state(0);
        for ppl in [10.0, 9.0, 8.9, 8.8] {
            update_lr(&mut t, ppl, 0.0, 0.7);
        }
        assert!(!t.decay_mode);
    }

    #[test]
    fn schedule_shapes() {
        let cfg = ScheduleConfig::default();
        let s = build_schedule(10, &[], None, &cfg).unwrap();
        assert_eq!(s.phases.len(), 1);
        let s = build_schedule(10, &[4, 4, 4, 4, 2], Some(6), &cfg).unwrap();
        let labels: Vec<String> = s.phases[1].labels().unwrap().iter().map(|l| l.to_string()).collect();
        assert_eq!(labels, ["P+M1", "P+M2", "P+M3", "P+M4", "P+M5"]);
        assert_eq!(s.phases[2].labels().unwrap()[0].to_string(), "P'+M'");
        assert!(build_schedule(0, &[], None, &cfg).is_err());
        assert!(build_schedule(3, &[0], None, &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let mut s = state(9);
        s.epoch = 5;
        s.ppl_history = vec![12.5, 11.0 / 3.0];
        s.lr = 0.7 * 0.7;
        s.decay_mode = true;
        s.cursor = (1, 2);
        save_checkpoint(&s, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, s);
        let shard = vec![Example::uncased(vec![4], vec![5]); 3];
        let mut resumed = back;
        run_epoch(&mut resumed, &shard, &TrainConfig::default()).unwrap();
        assert_eq!(resumed.epoch, 6);
    }
}

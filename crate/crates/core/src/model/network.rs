//! Batched teacher-forced forward pass, its exact gradient, and the
//! single-sentence incremental interface used by decoders.

use std::borrow::Borrow;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{attention_backward, attention_forward, AttentionCache};
use super::lstm::{lstm_backward, lstm_forward, LstmCache, LstmLayer};
use super::{ModelConfig, ModelError, ModelParams};
use crate::textnorm::CaseFactor;

const NO_CASE: usize = CaseFactor::NoCase as usize;

/// One training pair as token ids plus case-factor ids, without `<eos>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub source: Vec<usize>,
    pub source_case: Vec<usize>,
    pub target: Vec<usize>,
    pub target_case: Vec<usize>,
}

impl Example {
    /// A pair whose tokens all carry the "no case" factor.
    pub fn uncased(source: Vec<usize>, target: Vec<usize>) -> Self {
        Self {
            source_case: vec![NO_CASE; source.len()],
            target_case: vec![NO_CASE; target.len()],
            source,
            target,
        }
    }
}

/// Right-padded, time-major batch.
#[derive(Debug, Clone)]
pub struct Batch {
    size: usize,
    src: Vec<Vec<usize>>,
    src_case: Vec<Vec<usize>>,
    src_step_mask: Vec<Array1<f64>>,
    /// `B × J`
    src_mask: Array2<f64>,
    tgt_in: Vec<Vec<usize>>,
    tgt_in_case: Vec<Vec<usize>>,
    tgt_out: Vec<Vec<usize>>,
    tgt_out_case: Vec<Vec<usize>>,
    tgt_mask: Vec<Array1<f64>>,
    tokens: usize,
}

impl Batch {
    /// Appends `<eos>` to every source, prefixes targets with `<s>` and
    /// shifts them to predict `t₁ … t_I <eos>`.
    pub fn new<E: Borrow<Example>>(examples: &[E], config: &ModelConfig) -> Result<Self, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for ex in examples {
            let ex = ex.borrow();
            for (ids, cases, vocab) in [
                (&ex.source, &ex.source_case, config.src_vocab),
                (&ex.target, &ex.target_case, config.tgt_vocab),
            ] {
                if ids.len() > config.max_len {
                    return Err(ModelError::TooLong {
                        len: ids.len(),
                        max: config.max_len,
                    });
                }
                if ids.len() != cases.len() {
                    return Err(ModelError::Shape(format!(
                        "{} tokens but {} case factors",
                        ids.len(),
                        cases.len()
                    )));
                }
                if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
                    return Err(ModelError::IdOutOfRange { id, vocab });
                }
                if let Some(&c) = cases.iter().find(|&&c| c >= CaseFactor::COUNT) {
                    return Err(ModelError::IdOutOfRange {
                        id: c,
                        vocab: CaseFactor::COUNT,
                    });
                }
            }
        }
        let size = examples.len();
        let src_len = examples.iter().map(|e| e.borrow().source.len() + 1).max().unwrap();
        let tgt_len = examples.iter().map(|e| e.borrow().target.len() + 1).max().unwrap();
        let pad = config.pad_id;

        let mut src = vec![vec![pad; size]; src_len];
        let mut src_case = vec![vec![NO_CASE; size]; src_len];
        let mut src_mask = Array2::zeros((size, src_len));
        let mut tgt_in = vec![vec![pad; size]; tgt_len];
        let mut tgt_in_case = vec![vec![NO_CASE; size]; tgt_len];
        let mut tgt_out = vec![vec![pad; size]; tgt_len];
        let mut tgt_out_case = vec![vec![NO_CASE; size]; tgt_len];
        let mut tgt_mask = vec![Array1::zeros(size); tgt_len];
        let mut tokens = 0;
        for (b, ex) in examples.iter().enumerate() {
            let ex = ex.borrow();
            for j in 0..=ex.source.len() {
                if j < ex.source.len() {
                    src[j][b] = ex.source[j];
                    src_case[j][b] = ex.source_case[j];
                } else {
                    src[j][b] = config.eos_id;
                }
                src_mask[[b, j]] = 1.0;
            }
            for t in 0..=ex.target.len() {
                if t == 0 {
                    tgt_in[t][b] = config.bos_id;
                } else {
                    tgt_in[t][b] = ex.target[t - 1];
                    tgt_in_case[t][b] = ex.target_case[t - 1];
                }
                if t < ex.target.len() {
                    tgt_out[t][b] = ex.target[t];
                    tgt_out_case[t][b] = ex.target_case[t];
                } else {
                    tgt_out[t][b] = config.eos_id;
                }
                tgt_mask[t][b] = 1.0;
                tokens += 1;
            }
        }
        let src_step_mask = (0..src_len).map(|j| src_mask.column(j).to_owned()).collect();
        Ok(Batch {
            size,
            src,
            src_case,
            src_step_mask,
            src_mask,
            tgt_in,
            tgt_in_case,
            tgt_out,
            tgt_out_case,
            tgt_mask,
            tokens,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Target tokens scored by the loss, `<eos>` included.
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn source_len(&self) -> usize {
        self.src.len()
    }

    pub fn target_len(&self) -> usize {
        self.tgt_in.len()
    }
}

/// Summed losses of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    /// Σ −ln p(word)
    pub word_nll: f64,
    /// Σ −ln p(case factor)
    pub case_nll: f64,
    pub tokens: usize,
}

impl LossStats {
    /// Mean word negative log-likelihood per target token (nats).
    pub fn mean_nll(&self) -> f64 {
        self.word_nll / self.tokens as f64
    }

    /// The training objective: mean word NLL plus mean case NLL.
    pub fn objective(&self) -> f64 {
        (self.word_nll + self.case_nll) / self.tokens as f64
    }

    pub fn merge(&mut self, other: &LossStats) {
        self.word_nll += other.word_nll;
        self.case_nll += other.case_nll;
        self.tokens += other.tokens;
    }
}

fn gather(
    table: &Array2<f64>,
    ids: &[usize],
    case_table: &Array2<f64>,
    cases: &[usize],
) -> Array2<f64> {
    let (we, ce) = (table.ncols(), case_table.ncols());
    let mut out = Array2::zeros((ids.len(), we + ce));
    for (b, (&id, &case)) in ids.iter().zip(cases).enumerate() {
        out.slice_mut(s![b, ..we]).assign(&table.row(id));
        out.slice_mut(s![b, we..]).assign(&case_table.row(case));
    }
    out
}

fn scatter(
    grad: &mut Array2<f64>,
    ids: &[usize],
    case_grad: &mut Array2<f64>,
    cases: &[usize],
    d: ArrayView2<'_, f64>,
) {
    let we = grad.ncols();
    for (b, (&id, &case)) in ids.iter().zip(cases).enumerate() {
        let mut row = grad.row_mut(id);
        row += &d.slice(s![b, ..we]);
        let mut row = case_grad.row_mut(case);
        row += &d.slice(s![b, we..]);
    }
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Inverted-dropout masks drawn in a fixed order from one seeded stream.
struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    fn new(p: f64, seed: u64) -> Option<Self> {
        (p > 0.0).then(|| Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn mask(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        Array2::from_shape_simple_fn((rows, cols), || {
            if self.rng.gen::<f64>() < p {
                0.0
            } else {
                keep
            }
        })
    }
}

struct StackRun {
    /// Top-layer output per source position.
    outputs: Vec<Array2<f64>>,
    finals: Vec<(Array2<f64>, Array2<f64>)>,
    /// `[layer][k]` in processing order.
    caches: Vec<Vec<LstmCache>>,
    /// `[layer][position]` masks applied to the input of layers ≥ 1.
    drops: Vec<Vec<Array2<f64>>>,
}

fn run_stack(
    stack: &[LstmLayer],
    inputs: &[Array2<f64>],
    step_mask: &[Array1<f64>],
    reverse: bool,
    dropout: &mut Option<Dropout>,
) -> StackRun {
    let len = inputs.len();
    let batch = inputs[0].nrows();
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    let mut run = StackRun {
        outputs: inputs.to_vec(),
        finals: Vec::with_capacity(stack.len()),
        caches: Vec::with_capacity(stack.len()),
        drops: Vec::with_capacity(stack.len()),
    };
    for (l, layer) in stack.iter().enumerate() {
        let mut drops = Vec::new();
        if l > 0 {
            if let Some(d) = dropout.as_mut() {
                for out in run.outputs.iter_mut() {
                    let m = d.mask(batch, out.ncols());
                    *out *= &m;
                    drops.push(m);
                }
            }
        }
        let hidden = layer.hidden();
        let mut h = Array2::zeros((batch, hidden));
        let mut c = Array2::zeros((batch, hidden));
        let mut caches = Vec::with_capacity(len);
        let mut outputs = vec![Array2::zeros((0, 0)); len];
        for &j in &order {
            let (h1, c1, cache) =
                lstm_forward(layer, run.outputs[j].view(), h.view(), c.view(), Some(&step_mask[j]));
            outputs[j] = h1.clone();
            h = h1;
            c = c1;
            caches.push(cache);
        }
        run.outputs = outputs;
        run.finals.push((h, c));
        run.caches.push(caches);
        run.drops.push(drops);
    }
    run
}

/// Recurrent decoder state for a batch: per-layer `(h, c)` plus the
/// attentional vector fed to the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
    pub feed: Array2<f64>,
}

struct StepCache {
    layers: Vec<LstmCache>,
    drops: Vec<Option<Array2<f64>>>,
    h_top: Array2<f64>,
    attn: AttentionCache,
    htilde: Array2<f64>,
    log_probs: Array2<f64>,
    case_log_probs: Array2<f64>,
}

fn decoder_step(
    params: &ModelParams,
    emb: Array2<f64>,
    state: &DecoderState,
    memory: &[Array2<f64>],
    src_mask: &Array2<f64>,
    dropout: &mut Option<Dropout>,
) -> (DecoderState, StepCache) {
    let cfg = &params.config;
    let hidden = cfg.hidden;
    let mut x = if cfg.input_feed {
        concatenate![Axis(1), emb, state.feed]
    } else {
        emb
    };
    let mut next = DecoderState {
        h: Vec::with_capacity(cfg.layers),
        c: Vec::with_capacity(cfg.layers),
        feed: Array2::zeros((0, 0)),
    };
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut drops = Vec::with_capacity(cfg.layers);
    for (l, layer) in params.dec.iter().enumerate() {
        let drop = match dropout.as_mut() {
            Some(d) if l > 0 => {
                let m = d.mask(x.nrows(), x.ncols());
                x *= &m;
                Some(m)
            }
            _ => None,
        };
        let (h, c, cache) = lstm_forward(layer, x.view(), state.h[l].view(), state.c[l].view(), None);
        x = h.clone();
        next.h.push(h);
        next.c.push(c);
        layers.push(cache);
        drops.push(drop);
    }
    let h_top = x;
    let attn = attention_forward(h_top.view(), memory, src_mask, &params.attn);
    let pre = attn.context.dot(&params.combine.slice(s![..hidden, ..]))
        + h_top.dot(&params.combine.slice(s![hidden.., ..]));
    let htilde = pre.mapv(f64::tanh);
    let log_probs = log_softmax_rows(&(htilde.dot(&params.out_w) + &params.out_b));
    let case_log_probs = log_softmax_rows(&(htilde.dot(&params.case_w) + &params.case_b));
    next.feed = htilde.clone();
    let cache = StepCache {
        layers,
        drops,
        h_top,
        attn,
        htilde,
        log_probs,
        case_log_probs,
    };
    (next, cache)
}

/// Intermediates kept by [`forward_loss`] for [`backward`].
pub struct ForwardCache {
    batch: Batch,
    fwd: StackRun,
    bwd: StackRun,
    memory: Vec<Array2<f64>>,
    steps: Vec<StepCache>,
    stats: LossStats,
}

impl ForwardCache {
    pub fn stats(&self) -> LossStats {
        self.stats
    }

    /// Attention weights of every decoder step, `B × J` each.
    pub fn alignments(&self) -> Vec<Array2<f64>> {
        self.steps.iter().map(|s| s.attn.align.clone()).collect()
    }
}

fn encode_batch(
    params: &ModelParams,
    batch: &Batch,
    dropout: &mut Option<Dropout>,
) -> (StackRun, StackRun, Vec<Array2<f64>>, DecoderState) {
    let inputs: Vec<Array2<f64>> = batch
        .src
        .iter()
        .zip(&batch.src_case)
        .map(|(ids, cases)| gather(&params.src_embed, ids, &params.src_case_embed, cases))
        .collect();
    let fwd = run_stack(&params.enc_fwd, &inputs, &batch.src_step_mask, false, dropout);
    let bwd = run_stack(&params.enc_bwd, &inputs, &batch.src_step_mask, true, dropout);
    let memory: Vec<Array2<f64>> = fwd
        .outputs
        .iter()
        .zip(&bwd.outputs)
        .map(|(f, b)| f + b)
        .collect();
    let init = DecoderState {
        h: fwd.finals.iter().zip(&bwd.finals).map(|(f, b)| &f.0 + &b.0).collect(),
        c: fwd.finals.iter().zip(&bwd.finals).map(|(f, b)| &f.1 + &b.1).collect(),
        feed: Array2::zeros((batch.size, params.config.hidden)),
    };
    (fwd, bwd, memory, init)
}

/// Teacher-forced loss over a batch. Dropout (`p > 0`) is applied to the
/// inputs of every stacked layer above the first, with masks drawn from
/// `seed`.
pub fn forward_loss(
    params: &ModelParams,
    batch: &Batch,
    dropout: f64,
    seed: u64,
) -> Result<(LossStats, ForwardCache), ModelError> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(ModelError::Config(format!("dropout {dropout} outside [0, 1)")));
    }
    let mut dropout = Dropout::new(dropout, seed);
    let (fwd, bwd, memory, mut state) = encode_batch(params, batch, &mut dropout);
    let mut steps = Vec::with_capacity(batch.target_len());
    let mut stats = LossStats {
        tokens: batch.tokens,
        ..LossStats::default()
    };
    for t in 0..batch.target_len() {
        let emb = gather(
            &params.tgt_embed,
            &batch.tgt_in[t],
            &params.tgt_case_embed,
            &batch.tgt_in_case[t],
        );
        let (next, cache) = decoder_step(params, emb, &state, &memory, &batch.src_mask, &mut dropout);
        for b in 0..batch.size {
            if batch.tgt_mask[t][b] != 0.0 {
                stats.word_nll -= cache.log_probs[[b, batch.tgt_out[t][b]]];
                stats.case_nll -= cache.case_log_probs[[b, batch.tgt_out_case[t][b]]];
            }
        }
        steps.push(cache);
        state = next;
    }
    if !(stats.word_nll.is_finite() && stats.case_nll.is_finite()) {
        return Err(ModelError::NonFinite("loss".into()));
    }
    let cache = ForwardCache {
        batch: batch.clone(),
        fwd,
        bwd,
        memory,
        steps,
        stats,
    };
    Ok((stats, cache))
}

// Softmax-minus-onehot, masked and scaled by 1/N.
fn output_grad(log_probs: &Array2<f64>, gold: &[usize], mask: &Array1<f64>, scale: f64) -> Array2<f64> {
    let mut d = log_probs.mapv(f64::exp);
    for (b, mut row) in d.outer_iter_mut().enumerate() {
        if mask[b] == 0.0 {
            row.fill(0.0);
        } else {
            row[gold[b]] -= 1.0;
            row *= scale;
        }
    }
    d
}

fn backward_stack(
    stack: &[LstmLayer],
    grads: &mut [LstmLayer],
    run: &StackRun,
    d_top: Vec<Array2<f64>>,
    d_final: Vec<(Array2<f64>, Array2<f64>)>,
    reverse: bool,
) -> Vec<Array2<f64>> {
    let len = d_top.len();
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    let mut d_out = d_top;
    for l in (0..stack.len()).rev() {
        let (mut dh, mut dc) = d_final[l].clone();
        let mut d_in = vec![Array2::zeros((0, 0)); len];
        for (k, &j) in order.iter().enumerate().rev() {
            let dh_total = &d_out[j] + &dh;
            let (dx, dhp, dcp) = lstm_backward(&stack[l], &mut grads[l], &run.caches[l][k], &dh_total, &dc);
            d_in[j] = dx;
            dh = dhp;
            dc = dcp;
        }
        if l > 0 {
            if let Some(masks) = (!run.drops[l].is_empty()).then_some(&run.drops[l]) {
                for (d, m) in d_in.iter_mut().zip(masks) {
                    *d *= m;
                }
            }
        }
        d_out = d_in;
    }
    d_out
}

/// Exact gradient of [`LossStats::objective`] with respect to every parameter.
pub fn backward(params: &ModelParams, cache: &ForwardCache) -> ModelParams {
    let cfg = &params.config;
    let hidden = cfg.hidden;
    let emb_width = cfg.embedding + cfg.case_embedding;
    let batch = &cache.batch;
    let scale = 1.0 / batch.tokens as f64;
    let mut grads = params.zeros_like();

    let mut dh: Vec<Array2<f64>> = (0..cfg.layers).map(|_| Array2::zeros((batch.size, hidden))).collect();
    let mut dc = dh.clone();
    let mut d_feed = Array2::<f64>::zeros((batch.size, hidden));
    let mut d_memory: Vec<Array2<f64>> = cache.memory.iter().map(|m| Array2::zeros(m.raw_dim())).collect();

    for t in (0..batch.target_len()).rev() {
        let step = &cache.steps[t];
        let d_logits = output_grad(&step.log_probs, &batch.tgt_out[t], &batch.tgt_mask[t], scale);
        let d_case = output_grad(&step.case_log_probs, &batch.tgt_out_case[t], &batch.tgt_mask[t], scale);
        grads.out_w += &step.htilde.t().dot(&d_logits);
        grads.out_b += &d_logits.sum_axis(Axis(0));
        grads.case_w += &step.htilde.t().dot(&d_case);
        grads.case_b += &d_case.sum_axis(Axis(0));

        let d_htilde = d_logits.dot(&params.out_w.t()) + d_case.dot(&params.case_w.t()) + &d_feed;
        let d_pre = d_htilde * &step.htilde.mapv(|v| 1.0 - v * v);
        {
            let mut g = grads.combine.slice_mut(s![..hidden, ..]);
            g += &step.attn.context.t().dot(&d_pre);
        }
        {
            let mut g = grads.combine.slice_mut(s![hidden.., ..]);
            g += &step.h_top.t().dot(&d_pre);
        }
        let d_context = d_pre.dot(&params.combine.slice(s![..hidden, ..]).t());
        let mut d_top = d_pre.dot(&params.combine.slice(s![hidden.., ..]).t());
        d_top += &attention_backward(
            &d_context,
            step.h_top.view(),
            &cache.memory,
            &step.attn,
            &params.attn,
            &mut grads.attn,
            &mut d_memory,
        );
        dh[cfg.layers - 1] += &d_top;

        for l in (0..cfg.layers).rev() {
            let (mut dx, dhp, dcp) = lstm_backward(&params.dec[l], &mut grads.dec[l], &step.layers[l], &dh[l], &dc[l]);
            dh[l] = dhp;
            dc[l] = dcp;
            if let Some(m) = &step.drops[l] {
                dx *= m;
            }
            if l > 0 {
                dh[l - 1] += &dx;
            } else {
                scatter(
                    &mut grads.tgt_embed,
                    &batch.tgt_in[t],
                    &mut grads.tgt_case_embed,
                    &batch.tgt_in_case[t],
                    dx.slice(s![.., ..emb_width]),
                );
                d_feed = if cfg.input_feed {
                    dx.slice(s![.., emb_width..]).to_owned()
                } else {
                    Array2::zeros((batch.size, hidden))
                };
            }
        }
    }

    let d_final: Vec<(Array2<f64>, Array2<f64>)> = dh.into_iter().zip(dc).collect();
    let d_fwd = backward_stack(&params.enc_fwd, &mut grads.enc_fwd, &cache.fwd, d_memory.clone(), d_final.clone(), false);
    let d_bwd = backward_stack(&params.enc_bwd, &mut grads.enc_bwd, &cache.bwd, d_memory, d_final, true);
    for (j, (df, db)) in d_fwd.iter().zip(&d_bwd).enumerate() {
        let d = df + db;
        scatter(
            &mut grads.src_embed,
            &batch.src[j],
            &mut grads.src_case_embed,
            &batch.src_case[j],
            d.view(),
        );
    }
    grads
}

/// Encoder memory and initial decoder state for one source sentence.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `h̄_j` per position (`<eos>` included), each `1 × H`.
    pub states: Vec<Array2<f64>>,
    pub mask: Array2<f64>,
    pub init: DecoderState,
}

/// Encodes one source sentence (without `<eos>`; it is appended here).
pub fn encode(params: &ModelParams, source: &[usize], source_case: &[usize]) -> Result<Encoded, ModelError> {
    let ex = Example {
        source: source.to_vec(),
        source_case: source_case.to_vec(),
        target: Vec::new(),
        target_case: Vec::new(),
    };
    let batch = Batch::new(&[ex], &params.config)?;
    let (_, _, states, init) = encode_batch(params, &batch, &mut None);
    Ok(Encoded {
        states,
        mask: batch.src_mask,
        init,
    })
}

/// Distributions produced by one decoder step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Natural-log word probabilities over the target vocabulary.
    pub log_probs: Array1<f64>,
    pub case_log_probs: Array1<f64>,
    pub alignment: Array1<f64>,
    pub state: DecoderState,
}

/// Advances the decoder by one token. Start from `encoded.init` with
/// `prev_token = bos_id`.
pub fn decode_step(
    params: &ModelParams,
    encoded: &Encoded,
    state: &DecoderState,
    prev_token: usize,
    prev_case: usize,
) -> Result<StepOutput, ModelError> {
    if prev_token >= params.config.tgt_vocab {
        return Err(ModelError::IdOutOfRange {
            id: prev_token,
            vocab: params.config.tgt_vocab,
        });
    }
    let emb = gather(&params.tgt_embed, &[prev_token], &params.tgt_case_embed, &[prev_case.min(NO_CASE)]);
    let (next, cache) = decoder_step(params, emb, state, &encoded.states, &encoded.mask, &mut None);
    let log_probs = cache.log_probs.row(0).to_owned();
    if !log_probs.iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY) {
        return Err(ModelError::NonFinite("decoder output".into()));
    }
    Ok(StepOutput {
        log_probs,
        case_log_probs: cache.case_log_probs.row(0).to_owned(),
        alignment: cache.attn.align.row(0).to_owned(),
        state: next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(layers: usize) -> ModelConfig {
        ModelConfig {
            src_vocab: 9,
            tgt_vocab: 8,
            embedding: 4,
            case_embedding: 2,
            hidden: 5,
            layers,
            init_scale: 0.3,
            ..ModelConfig::default()
        }
    }

    fn examples() -> Vec<Example> {
        vec![
            Example::uncased(vec![4, 5, 6], vec![5, 7]),
            Example::uncased(vec![7], vec![4, 4, 6, 5]),
            Example::uncased(vec![8, 8, 4, 5, 6], vec![]),
        ]
    }

    #[test]
    fn batch_layout() {
        let cfg = tiny(1);
        let b = Batch::new(&examples(), &cfg).unwrap();
        assert_eq!((b.size(), b.source_len(), b.target_len()), (3, 6, 5));
        assert_eq!(b.tokens(), 3 + 5 + 1);
        assert_eq!(b.src[3][0], cfg.eos_id);
        assert_eq!(b.src[3][1], cfg.pad_id);
        assert_eq!(b.tgt_in[0], vec![cfg.bos_id; 3]);
        assert_eq!(b.tgt_out[0][2], cfg.eos_id);
        assert!(matches!(Batch::new::<Example>(&[], &cfg), Err(ModelError::EmptyBatch)));
        let long = Example::uncased(vec![4; 81], vec![4]);
        assert!(matches!(Batch::new(&[long], &cfg), Err(ModelError::TooLong { .. })));
        let oov = Example::uncased(vec![40], vec![4]);
        assert!(matches!(Batch::new(&[oov], &cfg), Err(ModelError::IdOutOfRange { .. })));
    }

    #[test]
    fn uniform_output_costs_ln_v() {
        let cfg = ModelConfig {
            init_scale: 0.0,
            ..tiny(2)
        };
        let params = ModelParams::init(&cfg, 0).unwrap();
        let batch = Batch::new(&examples(), &cfg).unwrap();
        let (stats, _) = forward_loss(&params, &batch, 0.0, 0).unwrap();
        assert!((stats.mean_nll() - (cfg.tgt_vocab as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_seeded() {
        let cfg = tiny(3);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let batch = Batch::new(&examples(), &cfg).unwrap();
        let a = forward_loss(&params, &batch, 0.0, 1).unwrap().0;
        let b = forward_loss(&params, &batch, 0.0, 2).unwrap().0;
        assert_eq!(a, b);
        let c = forward_loss(&params, &batch, 0.3, 7).unwrap().0;
        let d = forward_loss(&params, &batch, 0.3, 7).unwrap().0;
        let e = forward_loss(&params, &batch, 0.3, 8).unwrap().0;
        assert_eq!(c, d);
        assert_ne!(c, e);
        assert!(forward_loss(&params, &batch, 1.0, 0).is_err());
    }

    #[test]
    fn batching_matches_single_examples() {
        let cfg = tiny(2);
        let params = ModelParams::init(&cfg, 3).unwrap();
        let exs = examples();
        let batch = Batch::new(&exs, &cfg).unwrap();
        let (joint, cache) = forward_loss(&params, &batch, 0.0, 0).unwrap();
        let g_joint = backward(&params, &cache);
        let mut sum = LossStats::default();
        let mut g_sum = params.zeros_like();
        for ex in &exs {
            let b = Batch::new(std::slice::from_ref(ex), &cfg).unwrap();
            let (s, c) = forward_loss(&params, &b, 0.0, 0).unwrap();
            sum.merge(&s);
            let g = backward(&params, &c);
            let w = s.tokens as f64;
            g_sum.zip_mut(&g, |_, mut acc, gi| acc.zip_mut_with(&gi, |a, b| *a += w * b));
        }
        assert!((joint.word_nll - sum.word_nll).abs() < 1e-12);
        assert!((joint.case_nll - sum.case_nll).abs() < 1e-12);
        let n = joint.tokens as f64;
        let mut max_diff: f64 = 0.0;
        let mut g_joint_scaled = g_joint.clone();
        g_joint_scaled.visit_mut(|_, mut t| t.mapv_inplace(|v| v * n));
        g_joint_scaled.zip_mut(&g_sum, |_, a, b| {
            for (x, y) in a.iter().zip(b.iter()) {
                max_diff = max_diff.max((x - y).abs());
            }
        });
        assert!(max_diff < 1e-12, "{max_diff}");
    }

    #[test]
    fn incremental_decoding_matches_teacher_forcing() {
        let cfg = tiny(2);
        let params = ModelParams::init(&cfg, 4).unwrap();
        let ex = Example::uncased(vec![4, 5, 6], vec![5, 7, 4]);
        let batch = Batch::new(&[ex.clone()], &cfg).unwrap();
        let (stats, _) = forward_loss(&params, &batch, 0.0, 0).unwrap();
        let enc = encode(&params, &ex.source, &ex.source_case).unwrap();
        let mut state = enc.init.clone();
        let mut prev = cfg.bos_id;
        let mut nll = 0.0;
        for &gold in ex.target.iter().chain(std::iter::once(&cfg.eos_id)) {
            let out = decode_step(&params, &enc, &state, prev, NO_CASE).unwrap();
            assert!((out.log_probs.mapv(f64::exp).sum() - 1.0).abs() < 1e-12);
            assert!((out.alignment.sum() - 1.0).abs() < 1e-12);
            nll -= out.log_probs[gold];
            state = out.state;
            prev = gold;
        }
        assert!((nll - stats.word_nll).abs() < 1e-12);
    }

    #[test]
    fn unused_embeddings_get_zero_gradient() {
        let cfg = tiny(2);
        let params = ModelParams::init(&cfg, 5).unwrap();
        let batch = Batch::new(&examples(), &cfg).unwrap();
        let (_, cache) = forward_loss(&params, &batch, 0.0, 0).unwrap();
        let g = backward(&params, &cache);
        // source id 0 (<unk>) never appears; target-input id 7 never appears
        // as an input and neither does the padding id on the target side.
        assert!(g.src_embed.row(0).iter().all(|&v| v == 0.0));
        assert!(g.tgt_embed.row(0).iter().all(|&v| v == 0.0));
        assert!(g.src_embed.row(4).iter().any(|&v| v != 0.0));
        let shapes_match = {
            let mut a = Vec::new();
            let mut b = Vec::new();
            params.visit(|_, t| a.push(t.shape().to_vec()));
            g.visit(|_, t| b.push(t.shape().to_vec()));
            a == b
        };
        assert!(shapes_match);
    }
}

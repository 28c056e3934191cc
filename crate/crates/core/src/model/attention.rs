//! Global "general" attention: `score(h_t, h̄_s) = h_tᵀ W_a h̄_s`, softmax over
//! source positions, context = alignment-weighted average of encoder states.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Softmax over the unmasked entries of `logits`; masked entries get exactly 0.
///
/// `mask` is `None` when every entry is valid.
pub fn masked_softmax(logits: ArrayView1<'_, f64>, mask: Option<ArrayView1<'_, f64>>) -> Array1<f64> {
    let valid = |j: usize| mask.is_none_or(|m| m[j] != 0.0);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| valid(*j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = Array1::zeros(logits.len());
    let mut sum = 0.0;
    for (j, &v) in logits.iter().enumerate() {
        if valid(j) {
            let e = (v - max).exp();
            out[j] = e;
            sum += e;
        }
    }
    out /= sum;
    out
}

/// Forward intermediates for one batched attention step.
#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    /// `h W_a`, `B × H`
    query: Array2<f64>,
    /// `B × J`
    pub(crate) align: Array2<f64>,
    /// `B × H`
    pub(crate) context: Array2<f64>,
}

/// Batched attention. `states[j]` is `B × H`; `mask` is `B × J`.
pub(crate) fn attention_forward(
    h: ArrayView2<'_, f64>,
    states: &[Array2<f64>],
    mask: &Array2<f64>,
    w_a: &Array2<f64>,
) -> AttentionCache {
    let query = h.dot(w_a);
    let (batch, len) = mask.dim();
    let mut scores = Array2::<f64>::zeros((batch, len));
    for (j, state) in states.iter().enumerate() {
        let col = (&query * state).sum_axis(Axis(1));
        scores.column_mut(j).assign(&col);
    }
    let mut align = Array2::<f64>::zeros((batch, len));
    for b in 0..batch {
        let a = masked_softmax(scores.row(b), Some(mask.row(b)));
        align.row_mut(b).assign(&a);
    }
    let mut context = Array2::<f64>::zeros(h.raw_dim());
    for (j, state) in states.iter().enumerate() {
        let weights = align.column(j).insert_axis(Axis(1));
        context += &(state * &weights);
    }
    AttentionCache {
        query,
        align,
        context,
    }
}

/// Backpropagates `d_context` into `d_states` (accumulated) and `grad_w_a`;
/// returns the gradient with respect to `h`.
pub(crate) fn attention_backward(
    d_context: &Array2<f64>,
    h: ArrayView2<'_, f64>,
    states: &[Array2<f64>],
    cache: &AttentionCache,
    w_a: &Array2<f64>,
    grad_w_a: &mut Array2<f64>,
    d_states: &mut [Array2<f64>],
) -> Array2<f64> {
    let (batch, len) = cache.align.dim();
    let mut d_align = Array2::<f64>::zeros((batch, len));
    for (j, state) in states.iter().enumerate() {
        d_align
            .column_mut(j)
            .assign(&(d_context * state).sum_axis(Axis(1)));
        let weights = cache.align.column(j).insert_axis(Axis(1));
        d_states[j] += &(d_context * &weights);
    }
    // softmax backward: ds_j = a_j (da_j - Σ_k a_k da_k)
    let dot = (&cache.align * &d_align).sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_scores = &cache.align * &(&d_align - &dot);

    let mut d_query = Array2::<f64>::zeros(h.raw_dim());
    for (j, state) in states.iter().enumerate() {
        let ds = d_scores.column(j).insert_axis(Axis(1));
        d_query += &(state * &ds);
        d_states[j] += &(&cache.query * &ds);
    }
    *grad_w_a += &h.t().dot(&d_query);
    d_query.dot(&w_a.t())
}

/// Attention for a single decoder state over `J × H` encoder states.
/// Returns `(alignment, context)`.
pub fn attention(
    h: ArrayView1<'_, f64>,
    states: ArrayView2<'_, f64>,
    w_a: &Array2<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let h = h.insert_axis(Axis(0));
    let batched: Vec<Array2<f64>> = states
        .outer_iter()
        .map(|row| row.insert_axis(Axis(0)).to_owned())
        .collect();
    let mask = Array2::ones((1, states.nrows()));
    let cache = attention_forward(h, &batched, &mask, w_a);
    (
        cache.align.row(0).to_owned(),
        cache.context.row(0).to_owned(),
    )
}

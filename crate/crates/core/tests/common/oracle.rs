//! Straight-line scalar re-implementation of the network, written with plain
//! loops over `Vec<f64>` and sharing no code with the library's forward pass.

#![allow(dead_code)]

use desknmt_core::model::{Example, LstmLayer, ModelParams};

const NO_CASE: usize = 4;

fn row(m: &ndarray::Array2<f64>, r: usize) -> Vec<f64> {
    (0..m.ncols()).map(|c| m[[r, c]]).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · W` for `W` of shape `len(x) × out`.
fn vecmat(x: &[f64], w: &ndarray::Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; w.ncols()];
    for (i, xi) in x.iter().enumerate() {
        for (k, o) in out.iter_mut().enumerate() {
            *o += xi * w[[i, k]];
        }
    }
    out
}

pub fn lstm(layer: &LstmLayer, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let zx = vecmat(x, &layer.w_x);
    let zh = vecmat(h, &layer.w_h);
    let mut h_new = vec![0.0; n];
    let mut c_new = vec![0.0; n];
    for k in 0..n {
        let z = |gate: usize| zx[gate * n + k] + zh[gate * n + k] + layer.bias[gate * n + k];
        let i = sigmoid(z(0));
        let f = sigmoid(z(1));
        let o = sigmoid(z(2));
        let g = z(3).tanh();
        c_new[k] = f * c[k] + i * g;
        h_new[k] = o * c_new[k].tanh();
    }
    (h_new, c_new)
}

fn embed(table: &ndarray::Array2<f64>, case_table: &ndarray::Array2<f64>, tok: usize, case: usize) -> Vec<f64> {
    let mut v = row(table, tok);
    v.extend(row(case_table, case));
    v
}

#[derive(Clone)]
pub struct OracleState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub feed: Vec<f64>,
}

pub struct OracleEncoding {
    pub states: Vec<Vec<f64>>,
    pub init: OracleState,
}

fn run_direction(stack: &[LstmLayer], inputs: &[Vec<f64>], reverse: bool) -> (Vec<Vec<f64>>, Vec<(Vec<f64>, Vec<f64>)>) {
    let mut layer_in = inputs.to_vec();
    let mut finals = Vec::new();
    let len = inputs.len();
    for layer in stack {
        let n = layer.w_h.nrows();
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut out = vec![Vec::new(); len];
        for step in 0..len {
            let j = if reverse { len - 1 - step } else { step };
            let (h2, c2) = lstm(layer, &layer_in[j], &h, &c);
            h = h2;
            c = c2;
            out[j] = h.clone();
        }
        finals.push((h, c));
        layer_in = out;
    }
    (layer_in, finals)
}

/// Encodes `source` (without `<eos>`; appended here with the "no case" factor).
pub fn encode(p: &ModelParams, source: &[usize], source_case: &[usize]) -> OracleEncoding {
    let mut inputs: Vec<Vec<f64>> = source
        .iter()
        .zip(source_case)
        .map(|(&t, &c)| embed(&p.src_embed, &p.src_case_embed, t, c))
        .collect();
    inputs.push(embed(&p.src_embed, &p.src_case_embed, p.config.eos_id, NO_CASE));
    let (fwd, fwd_final) = run_direction(&p.enc_fwd, &inputs, false);
    let (bwd, bwd_final) = run_direction(&p.enc_bwd, &inputs, true);
    let states = fwd
        .iter()
        .zip(&bwd)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    let init = OracleState {
        h: fwd_final.iter().zip(&bwd_final).map(|(f, b)| sum(&f.0, &b.0)).collect(),
        c: fwd_final.iter().zip(&bwd_final).map(|(f, b)| sum(&f.1, &b.1)).collect(),
        feed: vec![0.0; p.config.hidden],
    };
    OracleEncoding { states, init }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub struct OracleStep {
    pub log_probs: Vec<f64>,
    pub case_log_probs: Vec<f64>,
    pub align: Vec<f64>,
    pub state: OracleState,
}

pub fn step(p: &ModelParams, enc: &OracleEncoding, state: &OracleState, prev: usize, prev_case: usize) -> OracleStep {
    let hdim = p.config.hidden;
    let mut x = embed(&p.tgt_embed, &p.tgt_case_embed, prev, prev_case);
    if p.config.input_feed {
        x.extend_from_slice(&state.feed);
    }
    let mut hs = Vec::new();
    let mut cs = Vec::new();
    for (l, layer) in p.dec.iter().enumerate() {
        let (h, c) = lstm(layer, &x, &state.h[l], &state.c[l]);
        x = h.clone();
        hs.push(h);
        cs.push(c);
    }
    let h = x;
    // score_j = h^T W_a hbar_j
    let scores: Vec<f64> = enc
        .states
        .iter()
        .map(|s| {
            let mut acc = 0.0;
            for a in 0..hdim {
                for b in 0..hdim {
                    acc += h[a] * p.attn[[a, b]] * s[b];
                }
            }
            acc
        })
        .collect();
    let align: Vec<f64> = log_softmax(&scores).iter().map(|v| v.exp()).collect();
    let mut ctx = vec![0.0; hdim];
    for (a, s) in align.iter().zip(&enc.states) {
        for k in 0..hdim {
            ctx[k] += a * s[k];
        }
    }
    let mut cat = ctx.clone();
    cat.extend_from_slice(&h);
    let htilde: Vec<f64> = vecmat(&cat, &p.combine).iter().map(|v| v.tanh()).collect();
    let logits: Vec<f64> = vecmat(&htilde, &p.out_w).iter().zip(p.out_b.iter()).map(|(a, b)| a + b).collect();
    let case_logits: Vec<f64> = vecmat(&htilde, &p.case_w).iter().zip(p.case_b.iter()).map(|(a, b)| a + b).collect();
    OracleStep {
        log_probs: log_softmax(&logits),
        case_log_probs: log_softmax(&case_logits),
        align,
        state: OracleState { h: hs, c: cs, feed: htilde },
    }
}

/// Summed teacher-forced `(word NLL, case NLL)` of one pair, `<eos>` included.
pub fn loss(p: &ModelParams, ex: &Example) -> (f64, f64) {
    let enc = encode(p, &ex.source, &ex.source_case);
    let mut state = OracleState {
        h: enc.init.h.clone(),
        c: enc.init.c.clone(),
        feed: enc.init.feed.clone(),
    };
    let mut prev = (p.config.bos_id, NO_CASE);
    let (mut word, mut case) = (0.0, 0.0);
    let golds: Vec<(usize, usize)> = ex
        .target
        .iter()
        .copied()
        .zip(ex.target_case.iter().copied())
        .chain(std::iter::once((p.config.eos_id, NO_CASE)))
        .collect();
    for gold in golds {
        let out = step(p, &enc, &state, prev.0, prev.1);
        word -= out.log_probs[gold.0];
        case -= out.case_log_probs[gold.1];
        state = out.state;
        prev = gold;
    }
    (word, case)
}

//! Exhaustive decoding: score every output sequence up to a length bound
//! with the scalar reference model and keep the best.
#![allow(dead_code)]

use desknmt_core::model::ModelParams;

use super::oracle::{self, OracleEncoding, OracleState};

pub struct Best {
    pub tokens: Vec<usize>,
    pub score: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Best complete output: up to `max_len - 1` tokens followed by `<eos>`, or
/// exactly `max_len` tokens without it.
pub fn best(p: &ModelParams, source: &[usize], source_case: &[usize], max_len: usize, normalize: bool) -> Best {
    let enc = oracle::encode(p, source, source_case);
    let mut out = Best {
        tokens: Vec::new(),
        score: f64::NEG_INFINITY,
    };
    let init = enc.init.clone();
    walk(p, &enc, init, (p.config.bos_id, 4), Vec::new(), 0.0, max_len, normalize, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn walk(
    p: &ModelParams,
    enc: &OracleEncoding,
    state: OracleState,
    prev: (usize, usize),
    prefix: Vec<usize>,
    log_prob: f64,
    max_len: usize,
    normalize: bool,
    out: &mut Best,
) {
    let step = oracle::step(p, enc, &state, prev.0, prev.1);
    let case = argmax(&step.case_log_probs);
    for (tok, &lp) in step.log_probs.iter().enumerate() {
        let total = log_prob + lp;
        let mut tokens = prefix.clone();
        let done = tok == p.config.eos_id || prefix.len() + 1 == max_len;
        if tok != p.config.eos_id {
            tokens.push(tok);
        }
        if done {
            let steps = prefix.len() + 1;
            let score = if normalize { total / steps as f64 } else { total };
            if score > out.score {
                *out = Best { tokens, score };
            }
        } else {
            walk(p, enc, step.state.clone(), (tok, case), tokens, total, max_len, normalize, out);
        }
    }
}

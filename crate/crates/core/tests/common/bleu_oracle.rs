//! Straight-line corpus BLEU: quadratic n-gram matching with explicit
//! clipping, no hashing.
#![allow(dead_code)]

pub fn bleu(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hl, mut rl) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut used = vec![false; r.len().saturating_sub(n - 1)];
            for i in 0..=h.len() - n {
                total[n - 1] += 1;
                for j in 0..used.len() {
                    if !used[j] && h[i..i + n] == r[j..j + n] {
                        used[j] = true;
                        matched[n - 1] += 1;
                        break;
                    }
                }
            }
        }
    }
    if matched.iter().any(|&m| m == 0) || hl == 0 {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|n| (matched[n] as f64 / total[n] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if hl >= rl { 1.0 } else { (1.0 - rl as f64 / hl as f64).exp() };
    100.0 * bp * log_p.exp()
}

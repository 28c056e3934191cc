//! Brute-force BPE learner: recount every adjacent pair from scratch at each
//! step and take the most frequent one.
#![allow(dead_code)]

use std::collections::BTreeMap;

const EOW: &str = "</w>";

// End-of-word compares greater than any character.
fn key(s: &str) -> Vec<u32> {
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix(EOW) {
            out.push(u32::MAX);
            rest = r;
        } else {
            let c = rest.chars().next().unwrap();
            out.push(c as u32);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

pub fn learn(counts: &[(String, u64)], max_merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = counts
        .iter()
        .map(|(w, c)| {
            let mut s: Vec<String> = w.chars().map(String::from).collect();
            s.push(EOW.to_string());
            (s, *c)
        })
        .collect();
    let mut merges = Vec::new();
    while merges.len() < max_merges {
        let mut freq: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (s, c) in &words {
            for i in 0..s.len().saturating_sub(1) {
                *freq.entry((s[i].clone(), s[i + 1].clone())).or_insert(0) += c;
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &f) in &freq {
            best = match best {
                None => Some((pair, f)),
                Some((bp, bf)) => {
                    let smaller = (key(&pair.0), key(&pair.1)) < (key(&bp.0), key(&bp.1));
                    if f > bf || (f == bf && smaller) {
                        Some((pair, f))
                    } else {
                        Some((bp, bf))
                    }
                }
            };
        }
        let Some((pair, _)) = best else { break };
        let pair = pair.clone();
        for (s, _) in words.iter_mut() {
            let mut out = Vec::new();
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == pair.0 && s[i + 1] == pair.1 {
                    out.push(format!("{}{}", pair.0, pair.1));
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        merges.push(pair);
    }
    merges
}

/// A random corpus of at most `max_types` distinct words over a tiny alphabet,
/// so that frequency ties are common.
pub fn random_counts(rng: &mut impl rand::Rng, max_types: usize) -> Vec<(String, u64)> {
    let alphabet = ['a', 'b', 'c', 'd', 'é'];
    let n = rng.gen_range(1..=max_types);
    let mut map = BTreeMap::new();
    for _ in 0..n {
        let len = rng.gen_range(1..=6);
        let w: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        *map.entry(w).or_insert(0) += rng.gen_range(1..=4);
    }
    map.into_iter().collect()
}
